"""Show controller in three layers.

Top: a finite-state machine over show modes driven by detected intentions.
Middle: per-module on/off gates derived from the mode.
Bottom: message routes between modules, open only when both ends are on.
"""

from __future__ import annotations

import collections
import enum
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple

from neurotheremin.errors import CodecError, StructuralError

logger = logging.getLogger(__name__)


class ShowState(enum.Enum):
    IDLE = 'Idle'
    CONVERSING = 'Conversing'
    CALIBRATING = 'Calibrating'
    SOLO = 'Solo'
    DUET = 'Duet'
    TEACHING = 'Teaching'


class Intention(enum.Enum):
    """Detected user intention; ``NONE`` when nothing was detected."""

    ASK_SOLO = 'AskSolo'
    ASK_DUET = 'AskDuet'
    ASK_TEACHING = 'AskTeaching'
    START_CONVERSATION = 'StartConversation'
    REQUEST_CALIBRATION = 'RequestCalibration'
    DONE = 'Done'
    NONE = 'None'


MODULES = ('tracker', 'theremin_synth', 'gui_duet', 'conversation')

TRANSITIONS = {
    (ShowState.IDLE, Intention.START_CONVERSATION): ShowState.CONVERSING,
    (ShowState.CONVERSING, Intention.ASK_SOLO): ShowState.SOLO,
    (ShowState.CONVERSING, Intention.ASK_DUET): ShowState.DUET,
    (ShowState.CONVERSING, Intention.ASK_TEACHING): ShowState.TEACHING,
    (ShowState.SOLO, Intention.DONE): ShowState.CONVERSING,
    (ShowState.DUET, Intention.DONE): ShowState.CONVERSING,
    (ShowState.TEACHING, Intention.DONE): ShowState.CONVERSING,
}

GATES = {
    ShowState.IDLE: (),
    ShowState.CONVERSING: ('conversation',),
    ShowState.CALIBRATING: ('tracker', 'theremin_synth'),
    ShowState.SOLO: ('theremin_synth',),
    ShowState.DUET: ('tracker', 'theremin_synth', 'gui_duet'),
    ShowState.TEACHING: ('tracker', 'gui_duet'),
}


def transition(state, intent, resume=None):
    """Next show state.

    Parameters
    ----------
    state : ShowState
    intent : Intention
    resume : ShowState or None
        State that requested the running calibration; Conversing if unknown.

    Returns
    -------
    ShowState
        Unlisted pairs leave the state unchanged.

    """
    if intent is Intention.REQUEST_CALIBRATION:
        return ShowState.CALIBRATING
    if state is ShowState.CALIBRATING and intent is Intention.DONE:
        return ShowState.CONVERSING if resume is None else resume
    return TRANSITIONS.get((state, intent), state)


@dataclass(frozen=True)
class ControlSignals:
    """On/off gate of every module."""

    gates: Dict[str, bool]

    def __post_init__(self):
        missing = set(MODULES) - set(self.gates)
        unknown = set(self.gates) - set(MODULES)
        if missing or unknown:
            raise StructuralError('gate map must cover exactly %s'
                                  % ', '.join(MODULES))

    def is_on(self, module):
        _check_module(module)
        return self.gates[module]

    def active(self):
        return tuple(m for m in MODULES if self.gates[m])


def _check_module(module):
    if module not in MODULES:
        raise StructuralError('unknown module %r' % (module,))


def control_signals(state):
    on = GATES[state]
    return ControlSignals({m: m in on for m in MODULES})


class Route(NamedTuple):
    source: str
    destination: str


class RouteState(NamedTuple):
    route: Route
    enabled: bool


DEFAULT_ROUTES = (
    Route('tracker', 'theremin_synth'),
    Route('tracker', 'gui_duet'),
    Route('gui_duet', 'theremin_synth'),
    Route('conversation', 'gui_duet'),
)


@dataclass(frozen=True)
class RoutingTable:
    routes: Tuple[RouteState, ...]

    def enabled(self, route):
        for state in self.routes:
            if state.route == route:
                return state.enabled
        raise StructuralError('route %s->%s is not in the table' % route)


def routing_table(signals, routes=DEFAULT_ROUTES):
    """Routes with enabled flags taken from ``signals``."""
    states = []
    for route in routes:
        route = Route(*route)
        _check_module(route.source)
        _check_module(route.destination)
        states.append(RouteState(route, signals.is_on(route.source)
                                 and signals.is_on(route.destination)))
    return RoutingTable(tuple(states))


class Routed(NamedTuple):
    delivered: List[Tuple[Route, object]]
    dropped: int


def route_messages(signals, table, inbox):
    """Deliver messages whose route the table enables.

    Parameters
    ----------
    signals : ControlSignals
        Current gates; an enabled route must have both ends on.
    table : RoutingTable
    inbox : sequence of (route, message)

    Returns
    -------
    Routed
        Delivered messages in inbox order and the number dropped.

    Raises
    ------
    StructuralError
        For unknown modules or routes, and for a table enabling a route
        whose gates are off (a table left over from another state).

    """
    delivered = []
    dropped = 0
    for route, message in inbox:
        route = Route(*route)
        _check_module(route.source)
        _check_module(route.destination)
        if not table.enabled(route):
            dropped += 1
            continue
        if not (signals.is_on(route.source)
                and signals.is_on(route.destination)):
            raise StructuralError('stale routing table: %s->%s enabled with '
                                  'a gate off' % route)
        delivered.append((route, message))
    return Routed(delivered, dropped)


# ---------------------------------------------------------------------------
# Controller and scenarios

class TraceEntry(NamedTuple):
    t_ms: float
    intent: Intention
    state: ShowState
    active: Tuple[str, ...]


@dataclass
class Controller:
    """Sequential consumer of intentions keeping the calibration resume
    state and a trace of every step."""

    state: ShowState = ShowState.IDLE
    resume: Optional[ShowState] = None
    trace: List[TraceEntry] = field(default_factory=list)

    def handle(self, intent, t_ms=0.0):
        previous = self.state
        if intent is Intention.REQUEST_CALIBRATION \
                and previous is not ShowState.CALIBRATING:
            self.resume = previous
        self.state = transition(previous, intent, self.resume)
        if previous is ShowState.CALIBRATING \
                and self.state is not ShowState.CALIBRATING:
            self.resume = None
        signals = control_signals(self.state)
        self.trace.append(TraceEntry(t_ms, intent, self.state,
                                     signals.active()))
        if self.state is not previous:
            logger.info('t=%g ms: %s + %s -> %s', t_ms, previous.value,
                        intent.value, self.state.value)
        return self.state

    @property
    def signals(self):
        return control_signals(self.state)

    def replay(self, scenario):
        for t_ms, intent in scenario:
            self.handle(intent, t_ms)
        return list(self.trace)


def parse_scenario(text):
    """Parse ``AT <t_ms> INTENT <name>`` lines into ``(t_ms, Intention)``."""
    names = {i.value: i for i in Intention}
    scenario = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != 'AT' or parts[2] != 'INTENT':
            raise CodecError('line %d: expected AT <t_ms> INTENT <name>'
                             % lineno)
        try:
            t_ms = float(parts[1])
        except ValueError:
            raise CodecError('line %d: bad time %r' % (lineno, parts[1]))
        if parts[3] not in names:
            raise CodecError('line %d: unknown intention %r'
                             % (lineno, parts[3]))
        if t_ms < 0 or (scenario and t_ms < scenario[-1][0]):
            raise CodecError('line %d: times must be non-negative and '
                             'non-decreasing' % lineno)
        scenario.append((t_ms, names[parts[3]]))
    return scenario


def format_scenario(scenario):
    return ''.join('AT %g INTENT %s\n' % (t, i.value) for t, i in scenario)


def read_scenario(path):
    with open(path) as fobj:
        return parse_scenario(fobj.read())


def reachable_states(start=ShowState.IDLE):
    """States reachable from ``start`` by any intention sequence."""
    seen = {(start, None)}
    queue = collections.deque(seen)
    while queue:
        state, resume = queue.popleft()
        for intent in Intention:
            nxt_resume = resume
            if intent is Intention.REQUEST_CALIBRATION \
                    and state is not ShowState.CALIBRATING:
                nxt_resume = state
            nxt = transition(state, intent, nxt_resume)
            if state is ShowState.CALIBRATING \
                    and nxt is not ShowState.CALIBRATING:
                nxt_resume = None
            if (nxt, nxt_resume) not in seen:
                seen.add((nxt, nxt_resume))
                queue.append((nxt, nxt_resume))
    return {state for state, _ in seen}
