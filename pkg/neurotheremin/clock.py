"""Virtual time: a clock that only moves when told to and a deterministic
event scheduler on top of it."""

from __future__ import annotations

import collections
import heapq
import logging
from dataclasses import dataclass, field
from typing import Any

from neurotheremin.errors import StructuralError

logger = logging.getLogger(__name__)


class VirtualClock:
    """Microsecond clock decoupled from wall time.

    Parameters
    ----------
    start_us : int
        Initial time.

    """

    def __init__(self, start_us=0):
        if start_us < 0:
            raise StructuralError('clock cannot start before 0')
        self._now = int(start_us)

    @property
    def now(self):
        return self._now

    def advance(self, delta_us):
        if delta_us < 0:
            raise StructuralError('cannot advance by %r us' % delta_us)
        self._now += int(delta_us)
        return self._now

    def advance_to(self, t_us):
        """Move to ``t_us``; moving backwards is an error."""
        if t_us < self._now:
            raise StructuralError('clock at %d us cannot go back to %d us'
                                  % (self._now, t_us))
        self._now = int(t_us)
        return self._now


@dataclass(order=True)
class ScheduledItem:
    """Heap entry ordered by time, then priority, then submission order."""

    t_us: int
    priority: int
    seq_no: int
    stage: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class Scheduler:
    """Single authority advancing a :class:`VirtualClock`.

    Items scheduled for the same time pop in priority order (lower first)
    and then in the order they were submitted.
    """

    def __init__(self, clock=None):
        self.clock = VirtualClock() if clock is None else clock
        self._queue = []
        self._next_seq = 0
        self.popped = 0

    @property
    def now(self):
        return self.clock.now

    def schedule(self, t_us, stage, payload=None, priority=0):
        if t_us < self.clock.now:
            raise StructuralError('cannot schedule %s at %d us, clock is at '
                                  '%d us' % (stage, t_us, self.clock.now))
        item = ScheduledItem(int(t_us), int(priority), self._next_seq, stage,
                             payload)
        self._next_seq += 1
        heapq.heappush(self._queue, item)
        return item

    def pending(self):
        return len(self._queue)

    def peek_time(self):
        return self._queue[0].t_us if self._queue else None

    def pop(self):
        """Next item with the clock moved to its time, None when idle."""
        if not self._queue:
            return None
        item = heapq.heappop(self._queue)
        self.clock.advance_to(item.t_us)
        self.popped += 1
        return item

    def run(self, handlers, until_us=None):
        """Dispatch items to ``handlers[stage](scheduler, item)``.

        Handlers may schedule further items. Stops when the queue is empty
        or the next item lies after ``until_us``.
        """
        while self._queue:
            if until_us is not None and self._queue[0].t_us > until_us:
                break
            item = self.pop()
            try:
                handler = handlers[item.stage]
            except KeyError:
                raise StructuralError('no handler for stage %r' % item.stage)
            handler(self, item)
        if until_us is not None and until_us > self.clock.now:
            self.clock.advance_to(until_us)
        return self.clock.now


class StageQueue:
    """Ordered bounded channel between two pipeline stages."""

    def __init__(self, name, capacity=None):
        self.name = name
        self.capacity = capacity
        self._items = collections.deque()
        self.high_water = 0

    def put(self, item):
        if self.capacity is not None and len(self._items) >= self.capacity:
            raise StructuralError('stage queue %s full (%d items)'
                                  % (self.name, self.capacity))
        self._items.append(item)
        self.high_water = max(self.high_water, len(self._items))

    def get(self):
        if not self._items:
            raise StructuralError('stage queue %s is empty' % self.name)
        return self._items.popleft()

    def __len__(self):
        return len(self._items)
