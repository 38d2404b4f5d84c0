"""Test the virtual clock and scheduler."""

import pytest

from neurotheremin.clock import Scheduler, StageQueue, VirtualClock
from neurotheremin.errors import StructuralError


def test_clock_moves_only_forward():
    clock = VirtualClock(100)
    assert clock.advance(50) == 150
    assert clock.advance_to(150) == 150
    with pytest.raises(StructuralError):
        clock.advance_to(149)
    with pytest.raises(StructuralError):
        clock.advance(-1)


def test_scheduler_order():
    """Test time, then priority, then submission order."""
    # Given
    scheduler = Scheduler()
    scheduler.schedule(20, 'b')
    scheduler.schedule(10, 'c', priority=1)
    scheduler.schedule(10, 'a')
    scheduler.schedule(10, 'd', priority=1)
    # When
    order = []
    while scheduler.pending():
        item = scheduler.pop()
        order.append((item.t_us, item.stage))
    # Then
    assert order == [(10, 'a'), (10, 'c'), (10, 'd'), (20, 'b')]
    assert scheduler.now == 20 and scheduler.pop() is None
    assert scheduler.popped == 4


def test_scheduler_run_with_followups():
    """Test handlers that schedule further work."""
    # Given
    seen = []

    def ping(scheduler, item):
        seen.append(('ping', scheduler.now))
        if item.payload < 3:
            scheduler.schedule(scheduler.now + 5, 'pong', item.payload + 1)

    def pong(scheduler, item):
        seen.append(('pong', scheduler.now))
        scheduler.schedule(scheduler.now + 5, 'ping', item.payload + 1)

    scheduler = Scheduler()
    scheduler.schedule(0, 'ping', 0)
    # When
    end = scheduler.run({'ping': ping, 'pong': pong})
    # Then
    assert seen == [('ping', 0), ('pong', 5), ('ping', 10), ('pong', 15),
                    ('ping', 20)]
    assert end == 20
    assert scheduler.popped == len(seen) == 5


def test_scheduler_run_until():
    scheduler = Scheduler()
    for t in (10, 20, 30):
        scheduler.schedule(t, 'tick')
    seen = []
    scheduler.run({'tick': lambda s, item: seen.append(item.t_us)},
                  until_us=25)
    assert seen == [10, 20] and scheduler.now == 25
    assert scheduler.peek_time() == 30


def test_scheduler_errors():
    scheduler = Scheduler(VirtualClock(100))
    with pytest.raises(StructuralError):
        scheduler.schedule(99, 'late')
    scheduler.schedule(100, 'nobody')
    with pytest.raises(StructuralError):
        scheduler.run({})


def test_stage_queue():
    # Given
    q = StageQueue('tracker->link', capacity=2)
    # When
    q.put(1)
    q.put(2)
    # Then
    with pytest.raises(StructuralError):
        q.put(3)
    assert [q.get(), q.get()] == [1, 2]
    assert q.high_water == 2 and len(q) == 0
    with pytest.raises(StructuralError):
        q.get()
