"""Closed-loop show simulator.

A scenario of timed intentions drives the show controller. Every stretch of
time spent in one show state is a segment:

- Solo: the robot plays the score itself, no tracking in the path.
- Duet and Teaching: a synthetic performer plays the score, the event
  camera model turns the hand motion into events, the tracker follows the
  hands and the hand estimates travel over the SAFE link to the controller,
  which routes them to the synthesizer and the duet screen.
- Calibrating: the instrument is probed and the pitch map refitted.

Segments are independent once planned and may run on worker threads; the
report is identical to the single-threaded one.
"""

from __future__ import annotations, division

import contextlib
import dataclasses
import logging
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from neurotheremin.aer import (SAFE_SCALE, ChannelConfig, LinkStats,
                               Receiver, SafeSender, TimedSpike,
                               channel_transmit, raw_link, receiver_ingest,
                               safe_overhead)
from neurotheremin.clock import Scheduler, StageQueue, VirtualClock
from neurotheremin.config import from_dict, load_json
from neurotheremin.core import (HANDS, Trajectory, TrajectorySample,
                                US_PER_MS, inject_distractors,
                                synth_hand_events, trajectory_positions)
from neurotheremin.errors import (ConfigError, NeuroThereminError,
                                  StageError)
from neurotheremin.orchestrator import (Controller, Route, ShowState,
                                        control_signals, parse_scenario,
                                        read_scenario, route_messages,
                                        routing_table)
from neurotheremin.theremin import (PITCH_SIDE, HandGeometry,
                                    PitchCalibration, c_major_scale, cents,
                                    cents_per_pixel, drifted,
                                    hands_to_control, in_ramp, note_targets,
                                    read_score, recalibrate,
                                    score_to_trajectory,
                                    trajectory_to_control)
from neurotheremin.tracker import (LABELS, PITCH_HAND, Hand, HandEstimate,
                                   TrackerConfig, track_stream)

logger = logging.getLogger(__name__)

DEFAULT_SCENARIO = ('AT 0 INTENT StartConversation\n'
                    'AT 500 INTENT AskDuet\n'
                    'AT 2500 INTENT Done\n')
CALIBRATION_DISTANCES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
PROBE_US = 100000
SOLO_STEP_US = 5000
STAGES = ('sensor', 'chip', 'network', 'control', 'synth')
TRACK_TO_SYNTH = Route('tracker', 'theremin_synth')
TRACK_TO_GUI = Route('tracker', 'gui_duet')
HAND_FIELDS = ('x', 'y', 'confidence')


@dataclass(frozen=True)
class EnergyConstants:
    """Power figures of record used for declared energy estimates.

    Ranges are ``(low, high)`` tuples.
    """

    edge_tracker_w: float = 0.004
    gpu_alt_w: Tuple[float, float] = (5.0, 10.0)
    cluster_kw: float = 6.5
    board_w: Tuple[float, float] = (48.0, 120.0)
    boards: int = 10

    def __post_init__(self):
        for name in ('gpu_alt_w', 'board_w'):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError('%s must be a positive (low, high) range'
                                  % name)
        if min(self.edge_tracker_w, self.cluster_kw, self.boards) <= 0:
            raise ConfigError('energy constants must be positive')


@dataclass(frozen=True)
class LatencyBudget:
    """Fixed virtual latencies of the stages around the link (µs)."""

    sensor_us: int = 220
    chip_us: int = 1000
    control_us: int = 100
    synth_us: int = 500

    def __post_init__(self):
        if min(self.sensor_us, self.chip_us, self.control_us,
               self.synth_us) < 0:
            raise ConfigError('stage latencies must be non-negative')


@dataclass(frozen=True)
class PerformerConfig:
    """Synthetic human partner and the physical instrument.

    The performer plays ``score_path`` (the C major scale at ``note_ms``
    per note when unset) with a circular hand tremor of ``tremor_px``.
    The instrument deviates from the nominal calibration by
    ``drift_cents`` and ``octave_scale`` until it is recalibrated.
    """

    score_path: Optional[str] = None
    note_ms: float = 250.0
    tempo: float = 1.0
    tremor_px: float = 3.0
    tremor_period_us: int = 200000
    blob_radius: float = 8.0
    contrast_threshold: float = 0.15
    rate_scale: float = 1.0
    distractors: float = 0.0
    drift_cents: float = 0.0
    octave_scale: float = 1.0

    def __post_init__(self):
        if self.note_ms <= 0 or self.tempo <= 0:
            raise ConfigError('note_ms and tempo must be positive')
        if self.tremor_px < 0 or self.tremor_period_us <= 0:
            raise ConfigError('invalid tremor')
        if self.distractors < 0 or self.octave_scale <= 0:
            raise ConfigError('invalid distractor fraction or octave scale')


@dataclass(frozen=True)
class SimConfig:
    """Everything a show run depends on. ``seed`` is mandatory."""

    seed: Optional[int] = None
    scenario_path: Optional[str] = None
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    calibration: PitchCalibration = field(default_factory=PitchCalibration)
    geometry: HandGeometry = field(default_factory=HandGeometry)
    performer: PerformerConfig = field(default_factory=PerformerConfig)
    energy: EnergyConstants = field(default_factory=EnergyConstants)
    latency: LatencyBudget = field(default_factory=LatencyBudget)
    reorder_window: int = 8
    queue_capacity: int = 1024
    workers: int = 0

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError('a seed is mandatory for simulations')
        if self.seed < 0:
            raise ConfigError('seed must be non-negative')
        if self.reorder_window < 1 or self.workers < 0:
            raise ConfigError('reorder_window must be >= 1, workers >= 0')
        if self.queue_capacity < 1:
            raise ConfigError('queue_capacity must be >= 1')


def load_sim_config(path=None, **overrides):
    """SimConfig from an optional JSON file with keyword overrides."""
    data = load_json(path) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return from_dict(SimConfig, data)


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except StageError:
        raise
    except (NeuroThereminError, ValueError, OSError) as err:
        logger.error('stage %s failed: %s', name, err)
        raise StageError(name, err) from err


# ---------------------------------------------------------------------------
# Planning

class Segment(NamedTuple):
    index: int
    state: ShowState
    t0_us: int
    t1_us: int
    calibration: PitchCalibration


class SegmentSeeds(NamedTuple):
    sensor: int
    distractors: int
    channel: int


def segment_seeds(seed, n):
    """Independent seeds per segment, fixed by ``seed`` alone."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [SegmentSeeds(*(int(v) for v in child.generate_state(3)))
            for child in children]


def score_span_us(score, tempo=1.0):
    return int(round(score.duration_ms * US_PER_MS / tempo))


def plan_segments(scenario, cfg, score_us):
    """Replay the scenario and cut it into segments.

    A segment lasts until the next state change. The last one lasts as
    long as its activity: the score for performing states, the probes for
    calibration, nothing otherwise.

    """
    controller = Controller()
    trace = controller.replay(scenario)
    instrument = instrument_of(cfg)
    calibration = cfg.calibration
    starts = []
    for entry in trace:
        if not starts or starts[-1][1] is not entry.state:
            starts.append((int(round(entry.t_ms * US_PER_MS)), entry.state))
    segments = []
    for i, (t0, state) in enumerate(starts):
        if i + 1 < len(starts):
            t1 = starts[i + 1][0]
        elif state in (ShowState.SOLO, ShowState.DUET, ShowState.TEACHING):
            t1 = t0 + score_us
        elif state is ShowState.CALIBRATING:
            t1 = t0 + PROBE_US * len(CALIBRATION_DISTANCES)
        else:
            t1 = t0
        segments.append(Segment(i, state, t0, t1, calibration))
        if state is ShowState.CALIBRATING:
            with _stage('calibration'):
                calibration = recalibrate(instrument, CALIBRATION_DISTANCES,
                                          cfg.calibration.d_ref)
            logger.info('recalibrated: f_ref=%.4f Hz, octave %.4f m',
                        calibration.f_ref, calibration.octave_dist)
    return segments


def instrument_of(cfg):
    """The physical pitch map, possibly drifted from the nominal one."""
    perf = cfg.performer
    return drifted(cfg.calibration, perf.drift_cents, perf.octave_scale)


# ---------------------------------------------------------------------------
# Performer

def add_tremor(trajectory, amplitude_px, period_us, step_us=5000):
    """Superimpose a circular tremor on every hand of ``trajectory``."""
    if amplitude_px == 0:
        return trajectory
    samples = []
    for k, hand in enumerate(HANDS):
        t, _, _ = trajectory.track(hand)
        if t.size == 0:
            continue
        grid = np.unique(np.concatenate(
            [np.arange(t[0], t[-1], step_us), [t[-1]]]))
        x, y, _ = trajectory_positions(trajectory, hand, grid)
        angle = 2 * np.pi * (grid - t[0]) / period_us + k * np.pi / 2
        x = x + amplitude_px * (np.cos(angle) - 1)
        y = y + amplitude_px * np.sin(angle)
        samples.extend(TrajectorySample(int(ti), hand, float(xi), float(yi))
                       for ti, xi, yi in zip(grid, x, y))
    samples.sort(key=lambda s: (s.t, s.hand))
    return Trajectory(tuple(samples), trajectory.unit)


# ---------------------------------------------------------------------------
# Link payload: one graded spike per hand coordinate

def estimate_spikes(estimates):
    """``(times, addresses, values)`` carrying the hands of each estimate."""
    times, addresses, values = [], [], []
    for est in estimates:
        for hand in est.hands:
            base = LABELS.index(hand.label) * len(HAND_FIELDS)
            for k, name in enumerate(HAND_FIELDS):
                times.append(est.t)
                addresses.append(base + k)
                values.append(getattr(hand, name))
    return times, addresses, values


def spikes_to_estimates(spikes):
    """Regroup received spikes into hand estimates by timestamp."""
    grouped = {}
    for spike in spikes:
        label = LABELS[spike.address // len(HAND_FIELDS)]
        name = HAND_FIELDS[spike.address % len(HAND_FIELDS)]
        grouped.setdefault(spike.t, {}).setdefault(label, {})[name] = \
            spike.value
    estimates = []
    for t in sorted(grouped):
        hands = tuple(Hand(label, v['x'], v['y'],
                           float(np.clip(v['confidence'], 0.0, 1.0)))
                      for label, v in sorted(grouped[t].items())
                      if len(v) == len(HAND_FIELDS))
        estimates.append(HandEstimate(int(t), hands))
    return estimates


# ---------------------------------------------------------------------------
# Segment execution

@dataclass
class SegmentResult:
    index: int
    state: ShowState
    t0_us: int
    t1_us: int
    events: int = 0
    estimates: int = 0
    sd_spikes: int = 0
    link: LinkStats = field(default_factory=LinkStats)
    latencies: Dict[str, List[float]] = field(
        default_factory=lambda: {s: [] for s in STAGES + ('end_to_end',)})
    pitch_errors: List[float] = field(default_factory=list)
    tracking_errors: List[float] = field(default_factory=list)
    solo_errors: List[float] = field(default_factory=list)
    gui_messages: int = 0
    dropped_messages: int = 0
    points: List = field(default_factory=list)


def _run_solo(segment, cfg, score, result):
    perf = cfg.performer
    with _stage('performer'):
        trajectory = score_to_trajectory(score, segment.calibration,
                                         perf.tempo, cfg.geometry,
                                         t_start=segment.t0_us)
    end = min(segment.t1_us, trajectory.span()[1])
    times = np.arange(segment.t0_us, end + 1, SOLO_STEP_US)
    with _stage('theremin'):
        points = trajectory_to_control(trajectory, instrument_of(cfg), times,
                                       cfg.geometry)
    rel = np.array([p.t for p in points], dtype=float) - segment.t0_us
    keep = ~in_ramp(score, rel, perf.tempo) \
        & (rel < score_span_us(score, perf.tempo))
    errors = np.abs(cents([p.freq for p in points],
                          note_targets(score, rel, perf.tempo)))
    result.solo_errors = [float(e) for e in errors[keep]]
    result.points = points


def _run_tracked(segment, cfg, score, seeds, result):
    perf = cfg.performer
    tcfg = cfg.tracker
    budget = cfg.latency
    geometry = cfg.geometry
    w = tcfg.window_us
    with _stage('performer'):
        played = score_to_trajectory(score, segment.calibration, perf.tempo,
                                     geometry, t_start=segment.t0_us)
        truth = add_tremor(played, perf.tremor_px, perf.tremor_period_us)
    t_end = min(segment.t1_us, played.span()[1])
    with _stage('sensor'):
        events = synth_hand_events(truth, perf.blob_radius,
                                   perf.contrast_threshold, perf.rate_scale,
                                   tcfg.input_res, seeds.sensor,
                                   t_start=segment.t0_us, t_end=t_end)
        if perf.distractors and events.size:
            events = inject_distractors(events, perf.distractors,
                                        tcfg.input_res, seeds.distractors,
                                        segment.t0_us, t_end)
    result.events = int(events.size)
    with _stage('tracker'):
        estimates, state = track_stream(events, tcfg, segment.t0_us, t_end)
    result.estimates = len(estimates)
    result.sd_spikes = int(sum(getattr(state.detector, 'spike_counts', ())))
    if not estimates:
        return

    with _stage('link'):
        sender = SafeSender(frame_us=w, scale=SAFE_SCALE, heartbeat=True)
        times, addresses, values = estimate_spikes(estimates)
        frames = sender.send_stream(times, addresses, values,
                                    estimates[0].t, estimates[-1].t + w)
        send_times = [ts + budget.sensor_us + budget.chip_us
                      for ts, _ in frames]
        channel = replace(cfg.channel, seed=seeds.channel)
        deliveries = channel_transmit([data for _, data in frames], channel,
                                      send_times)
    receiver = Receiver(max(cfg.reorder_window, channel.reorder_window),
                        SAFE_SCALE)
    signals = control_signals(segment.state)
    table = routing_table(signals)
    instrument = instrument_of(cfg)
    synthesized = []
    to_control = StageQueue('link->control', cfg.queue_capacity)
    to_synth = StageQueue('control->synth', cfg.queue_capacity)

    def release(scheduler, spikes):
        for est in spikes_to_estimates(spikes):
            sent = est.t + budget.sensor_us + budget.chip_us
            to_control.put((est, scheduler.now - sent))
            scheduler.schedule(scheduler.now + budget.control_us, 'control')

    def on_link(scheduler, item):
        with _stage('link'):
            release(scheduler, receiver.ingest_bytes(item.payload.data))

    def on_control(scheduler, item):
        est, network = to_control.get()
        inbox = [(TRACK_TO_SYNTH, est), (TRACK_TO_GUI, est)]
        routed = route_messages(signals, table, inbox)
        result.dropped_messages += routed.dropped
        for route, message in routed.delivered:
            if route == TRACK_TO_GUI:
                result.gui_messages += 1
            elif message.get(PITCH_HAND) is not None:
                to_synth.put((message, network))
                scheduler.schedule(scheduler.now + budget.synth_us, 'synth')

    def on_synth(scheduler, item):
        est, network = to_synth.get()
        with _stage('theremin'):
            point = hands_to_control(est, instrument, geometry=geometry)
        synthesized.append((est, point))
        lat = result.latencies
        lat['sensor'].append(budget.sensor_us)
        lat['chip'].append(budget.chip_us)
        lat['network'].append(network)
        lat['control'].append(budget.control_us)
        lat['synth'].append(budget.synth_us)
        lat['end_to_end'].append(scheduler.now - est.t)

    handlers = {'link': on_link, 'control': on_control, 'synth': on_synth}
    scheduler = Scheduler(VirtualClock(segment.t0_us))
    for delivery in deliveries:
        scheduler.schedule(int(np.ceil(delivery.t)), 'link', delivery)
    scheduler.run(handlers)
    with _stage('link'):
        release(scheduler, receiver.finish(sender.seq))
    scheduler.run(handlers)
    result.link = receiver.stats.merge_sender(sender.stats)
    logger.debug('segment %d: %d scheduled items, queue high water %d/%d',
                 segment.index, scheduler.popped, to_control.high_water,
                 to_synth.high_water)

    span = score_span_us(score, perf.tempo)
    for est, point in synthesized:
        t_seen = est.t - w / 2.0
        rel = t_seen - segment.t0_us
        if rel < 0 or rel >= span or in_ramp(score, [rel], perf.tempo)[0]:
            continue
        x, y, active = trajectory_positions(played, PITCH_SIDE, [t_seen])
        if not active[0]:
            continue
        hand = est.get(PITCH_HAND)
        target = note_targets(score, [rel], perf.tempo)[0]
        result.tracking_errors.append(float(np.hypot(hand.x - x[0],
                                                     hand.y - y[0])))
        result.pitch_errors.append(abs(float(cents(point.freq, target))))
    result.points = [point for _, point in synthesized]


def run_segment(segment, cfg, score, seeds):
    """Execute one planned segment."""
    result = SegmentResult(segment.index, segment.state, segment.t0_us,
                           segment.t1_us)
    logger.info('segment %d: %s [%d, %d) us', segment.index,
                segment.state.value, segment.t0_us, segment.t1_us)
    if segment.state is ShowState.SOLO:
        _run_solo(segment, cfg, score, result)
    elif segment.state in (ShowState.DUET, ShowState.TEACHING):
        _run_tracked(segment, cfg, score, seeds, result)
    return result


def _run_segments(segments, cfg, score, seeds):
    if cfg.workers <= 1:
        return [run_segment(s, cfg, score, seeds[s.index]) for s in segments]
    jobs = queue.Queue()
    for segment in segments:
        jobs.put(segment)
    results = [None] * len(segments)
    failures = []

    def work():
        while True:
            try:
                segment = jobs.get_nowait()
            except queue.Empty:
                return
            try:
                results[segment.index] = run_segment(
                    segment, cfg, score, seeds[segment.index])
            except Exception as err:
                failures.append((segment.index, err))

    threads = [threading.Thread(target=work, name='segment-worker-%d' % i)
               for i in range(cfg.workers)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    if failures:
        raise min(failures, key=lambda f: f[0])[1]
    return results


# ---------------------------------------------------------------------------
# Report

@dataclass
class RunReport:
    """Outcome of a show run.

    ``wall_s`` is the only field that depends on the machine; ``control``
    holds the synthesizer trace and is not part of the text report.
    """

    seed: int
    simulated_us: int
    states: Tuple[str, ...]
    dvs_events: int
    estimates: int
    sd_spikes: int
    link: LinkStats
    latency_mean_us: Dict[str, float]
    latency_max_us: Dict[str, float]
    pitch_error_cents: Optional[float]
    pitch_error_max_cents: Optional[float]
    tracking_error_px: Optional[float]
    pitch_error_bound_cents: Optional[float]
    solo_error_max_cents: Optional[float]
    gui_messages: int
    dropped_messages: int
    tracker_active_us: int
    energy: Dict[str, float]
    wall_s: Optional[float] = None
    control: List = field(default_factory=list, compare=False, repr=False)

    @property
    def real_time_factor(self):
        if self.wall_s is None:
            return None
        return real_time_factor(self.simulated_us, self.wall_s)


def _mean(values):
    return float(np.mean(values)) if len(values) else None


def energy_estimates(constants, tracker_active_us):
    """Declared estimates: configured power times active tracker time."""
    seconds = tracker_active_us / 1e6
    lo, hi = constants.gpu_alt_w
    board_lo, board_hi = constants.board_w
    return {
        'edge_tracker_j': constants.edge_tracker_w * seconds,
        'gpu_alt_min_j': lo * seconds,
        'gpu_alt_max_j': hi * seconds,
        'cluster_ratio_min': power_ratio(constants.cluster_kw, board_hi,
                                         constants.boards),
        'cluster_ratio_max': power_ratio(constants.cluster_kw, board_lo,
                                         constants.boards),
    }


def _aggregate(cfg, segments, results, wall_s):
    link = LinkStats()
    for r in results:
        for name in dataclasses.fields(LinkStats):
            setattr(link, name.name, getattr(link, name.name)
                    + getattr(r.link, name.name))
    latencies = {s: [v for r in results for v in r.latencies[s]]
                 for s in STAGES + ('end_to_end',)}
    pitch = [e for r in results for e in r.pitch_errors]
    track = [e for r in results for e in r.tracking_errors]
    solo = [e for r in results for e in r.solo_errors]
    tracker_active = sum(s.t1_us - s.t0_us for s in segments
                         if control_signals(s.state).is_on('tracker'))
    bound = None
    if track:
        cpp = cents_per_pixel(instrument_of(cfg), cfg.geometry)
        bound = cpp * float(np.mean(track)) + 1.0
    control = sorted((p for r in results for p in r.points),
                     key=lambda p: p.t)
    return RunReport(
        seed=cfg.seed,
        simulated_us=max([s.t1_us for s in segments] or [0]),
        states=tuple(s.state.value for s in segments),
        dvs_events=sum(r.events for r in results),
        estimates=sum(r.estimates for r in results),
        sd_spikes=sum(r.sd_spikes for r in results),
        link=link,
        latency_mean_us={k: float(np.mean(v)) for k, v in latencies.items()
                         if v},
        latency_max_us={k: float(np.max(v)) for k, v in latencies.items()
                        if v},
        pitch_error_cents=_mean(pitch),
        pitch_error_max_cents=float(np.max(pitch)) if pitch else None,
        tracking_error_px=_mean(track),
        pitch_error_bound_cents=bound,
        solo_error_max_cents=float(np.max(solo)) if solo else None,
        gui_messages=sum(r.gui_messages for r in results),
        dropped_messages=sum(r.dropped_messages for r in results),
        tracker_active_us=int(tracker_active),
        energy=energy_estimates(cfg.energy, tracker_active),
        wall_s=wall_s,
        control=control)


def run_show(cfg):
    """Run the scenario of ``cfg`` on the virtual clock.

    Parameters
    ----------
    cfg : SimConfig

    Returns
    -------
    report : RunReport

    Raises
    ------
    StageError
        When any stage fails; ``stage`` names it.

    """
    started = time.perf_counter()
    with _stage('scenario'):
        scenario = read_scenario(cfg.scenario_path) if cfg.scenario_path \
            else parse_scenario(DEFAULT_SCENARIO)
    with _stage('score'):
        perf = cfg.performer
        score = read_score(perf.score_path) if perf.score_path \
            else c_major_scale(perf.note_ms)
    segments = plan_segments(scenario, cfg, score_span_us(score, perf.tempo))
    seeds = segment_seeds(cfg.seed, len(segments))
    results = _run_segments(segments, cfg, score, seeds)
    wall_s = time.perf_counter() - started
    report = _aggregate(cfg, segments, results, wall_s)
    logger.info('show: %d segments, %d us simulated in %.3f s',
                len(segments), report.simulated_us, wall_s)
    return report


def _fmt(value):
    if value is None:
        return 'none'
    if isinstance(value, float):
        return '%.6f' % value
    return str(value)


def report_lines(report, include_wall=True):
    """Machine readable ``key=value`` lines in a fixed order."""
    items = [('seed', report.seed),
             ('simulated_us', report.simulated_us),
             ('states', ','.join(report.states)),
             ('dvs_events', report.dvs_events),
             ('estimates', report.estimates),
             ('sd_spikes', report.sd_spikes)]
    for f in dataclasses.fields(LinkStats):
        items.append(('link.' + f.name, getattr(report.link, f.name)))
    items.append(('link.overhead', float(report.link.overhead)))
    for stage in STAGES + ('end_to_end',):
        if stage in report.latency_mean_us:
            items.append(('latency.%s.mean_us' % stage,
                          report.latency_mean_us[stage]))
            items.append(('latency.%s.max_us' % stage,
                          report.latency_max_us[stage]))
    items += [('pitch_error.mean_cents', report.pitch_error_cents),
              ('pitch_error.max_cents', report.pitch_error_max_cents),
              ('pitch_error.bound_cents', report.pitch_error_bound_cents),
              ('tracking_error.mean_px', report.tracking_error_px),
              ('solo_error.max_cents', report.solo_error_max_cents),
              ('gui_messages', report.gui_messages),
              ('dropped_messages', report.dropped_messages),
              ('tracker_active_us', report.tracker_active_us)]
    for key in sorted(report.energy):
        items.append(('energy.' + key, report.energy[key]))
    if include_wall and report.wall_s is not None:
        rtf = report.real_time_factor if report.wall_s > 0 else None
        items += [('wall_s', report.wall_s), ('rtf', rtf)]
    return ['%s=%s' % (key, _fmt(value)) for key, value in items]


def format_report(report, include_wall=True):
    return '\n'.join(report_lines(report, include_wall)) + '\n'


def parse_report(text):
    """``key=value`` lines back into an ordered dict of strings."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        if not sep or not key:
            raise ConfigError('report line %d is not key=value' % lineno)
        values[key] = value
    return values


def rtf_flag(rtf):
    return 'sub-real-time' if rtf < 1.0 else 'real-time'


def real_time_factor(simulated_us, wall_s):
    """Simulated time over wall time; zero or negative wall time is an
    error."""
    if wall_s <= 0:
        raise ConfigError('wall time must be positive, got %r' % wall_s)
    return simulated_us / 1e6 / wall_s


def render_report(values):
    """Human readable text of a parsed report."""
    width = max(len(k) for k in values) if values else 0
    lines = ['%-*s  %s' % (width, k, v) for k, v in values.items()]
    rtf = values.get('rtf')
    if rtf not in (None, 'none'):
        lines.append('%-*s  %s' % (width, 'rtf_flag', rtf_flag(float(rtf))))
    return '\n'.join(lines) + '\n'


def metrics_report(report):
    """Text report of a completed run, RTF flagged when below real time."""
    return render_report(parse_report(format_report(report)))


# ---------------------------------------------------------------------------
# Protocol bench and power arithmetic

class BenchRow(NamedTuple):
    profile: str
    count: int
    frames: int
    bytes: int
    events: int
    bytes_per_event: float
    predicted: float


def protocol_bench(counts=(1, 10, 100, 1000), channel=None, seed=0,
                   batches=20, reorder_window=8):
    """Measured wire overhead of both profiles per batch size.

    Parameters
    ----------
    counts : sequence of int
        SAFE records per frame.
    channel : ChannelConfig or None
        When given, the SAFE traffic of the last count crosses the channel.
    seed : int
        Seed of the random traffic.
    batches : int
        Frames per count.

    Returns
    -------
    rows : list of BenchRow
    stats : LinkStats or None

    """
    rng = np.random.default_rng(seed)
    rows = []
    frames, sender = [], None
    for count in counts:
        if count < 1:
            raise ConfigError('batch sizes must be positive')
        n = count * batches
        addresses = rng.integers(0, 240 * 180, size=n)
        values = rng.integers(1, 128, size=n) * rng.choice([-1, 1], size=n)
        _, raw_stats = raw_link(addresses, values)
        rows.append(BenchRow('raw', count, raw_stats.sent,
                             raw_stats.bytes_sent, raw_stats.events_sent,
                             raw_stats.overhead, 4.0))
        sender = SafeSender()
        frames = [sender.encode_batch(
            [TimedSpike(int(a), float(v)) for a, v in
             zip(addresses[i:i + count], values[i:i + count])],
            timestamp=(i // count) * sender.frame_us)
            for i in range(0, n, count)]
        rows.append(BenchRow('safe', count, sender.stats.sent,
                             sender.stats.bytes_sent,
                             sender.stats.events_sent,
                             sender.stats.overhead, safe_overhead(count)))
    stats = None
    if channel is not None and sender is not None:
        send_times = [i * sender.frame_us for i in range(len(frames))]
        deliveries = channel_transmit(frames, channel, send_times)
        _, stats = receiver_ingest(
            [d.data for d in deliveries],
            max(reorder_window, channel.reorder_window), sender.seq)
        stats = stats.merge_sender(sender.stats)
    return rows, stats


def format_bench(rows, stats=None):
    lines = ['profile  count  frames      bytes   events  bytes/event  '
             'predicted']
    for r in rows:
        lines.append('%-7s %6d %7d %10d %8d %12.2f %10.2f'
                     % (r.profile, r.count, r.frames, r.bytes, r.events,
                        r.bytes_per_event, r.predicted))
    if stats is not None:
        lines.append('channel: sent=%d delivered=%d lost=%d corrupted=%d '
                     'duplicates=%d reordered=%d'
                     % (stats.sent, stats.delivered, stats.lost,
                        stats.corrupted_dropped, stats.duplicate_dropped,
                        stats.reordered))
    return '\n'.join(lines) + '\n'


def power_ratio(cluster_kw, board_w, boards):
    """How many times less power ``boards`` boards draw than the cluster.

    Examples
    --------
    >>> round(power_ratio(6.5, 120, 10), 2)
    5.42

    """
    if cluster_kw <= 0 or board_w <= 0 or boards <= 0:
        raise ConfigError('power_ratio needs positive inputs')
    return cluster_kw * 1000.0 / (board_w * boards)
