"""Core event-stream functions: frames, downsampling, depth masking,
synthetic hand events and the EVT1 file codec."""

from __future__ import annotations, division

import logging
import struct
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from neurotheremin.errors import CodecError, ConfigError, StructuralError

logger = logging.getLogger(__name__)

EVENT_DTYPE = np.dtype([('t', '<u8'), ('x', '<u2'), ('y', '<u2'),
                        ('p', 'i1')])

US_PER_MS = 1000
DEFAULT_FAR_MAX = 3.0  # meters, range of the depth sensor of record
HANDS = ('left', 'right')
UNITS = ('px', 'm')


class Event(NamedTuple):
    """Single polarity change event."""

    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class Resolution:
    """Sensor or grid size in pixels."""

    width: int
    height: int

    def __post_init__(self):
        if not (1 <= int(self.width) <= 0xFFFF
                and 1 <= int(self.height) <= 0xFFFF):
            raise StructuralError('invalid resolution %dx%d'
                                  % (self.width, self.height))

    @property
    def shape(self):
        """Numpy shape ``(height, width)`` of a grid at this resolution."""
        return (int(self.height), int(self.width))

    @property
    def size(self):
        return int(self.width) * int(self.height)

    def __str__(self):
        return '%dx%d' % (self.width, self.height)


SENSOR_RESOLUTION = Resolution(1280, 720)
INPUT_RESOLUTION = Resolution(240, 180)
CHIP_RESOLUTION = Resolution(86, 65)


@dataclass(frozen=True, eq=False)
class Frame:
    """Event counts accumulated over ``[t_start, t_end)``.

    ``cells`` is indexed ``[y, x]``.
    """

    resolution: Resolution
    cells: np.ndarray
    t_start: int = 0
    t_end: int = 0

    def __post_init__(self):
        if self.cells.shape != self.resolution.shape:
            raise StructuralError('frame cells %r do not match %s'
                                  % (self.cells.shape, self.resolution))
        if self.t_start > self.t_end:
            raise StructuralError('frame window [%d, %d) is reversed'
                                  % (self.t_start, self.t_end))

    def total(self):
        return int(np.sum(self.cells))


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Depth in meters registered to the event grid; NaN means no reading."""

    resolution: Resolution
    depth: np.ndarray
    far_max: float = DEFAULT_FAR_MAX

    def __post_init__(self):
        if self.depth.shape != self.resolution.shape:
            raise StructuralError('depth grid %r does not match %s'
                                  % (self.depth.shape, self.resolution))

    def valid(self, near, far):
        """Boolean grid of cells whose reading lies in ``[near, far]``."""
        d = self.depth
        with np.errstate(invalid='ignore'):
            return np.isfinite(d) & (d > 0) & (d >= near) & (d <= far)


class TrajectorySample(NamedTuple):
    t: int
    hand: str
    x: float
    y: float


@dataclass(frozen=True)
class Trajectory:
    """Ground-truth hand positions; timestamps strictly increase per hand."""

    samples: Tuple[TrajectorySample, ...]
    unit: str = 'px'

    def __post_init__(self):
        object.__setattr__(self, 'samples',
                           tuple(TrajectorySample(*s) for s in self.samples))
        if self.unit not in UNITS:
            raise StructuralError('unknown trajectory unit %r' % self.unit)
        last = {}
        for s in self.samples:
            if s.hand not in HANDS:
                raise StructuralError('unknown hand %r' % (s.hand,))
            if s.hand in last and s.t <= last[s.hand]:
                raise StructuralError(
                    'trajectory timestamps of %s hand not increasing at t=%d'
                    % (s.hand, s.t))
            last[s.hand] = s.t

    def hands(self):
        return tuple(h for h in HANDS if any(s.hand == h for s in self.samples))

    def track(self, hand):
        """Arrays ``(t, x, y)`` of one hand's samples."""
        rows = [(s.t, s.x, s.y) for s in self.samples if s.hand == hand]
        if not rows:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        arr = np.array(rows, dtype=float)
        return arr[:, 0], arr[:, 1], arr[:, 2]

    def span(self):
        """``(t_first, t_last)`` over all hands."""
        if not self.samples:
            return 0, 0
        ts = [s.t for s in self.samples]
        return min(ts), max(ts)

    def in_pixels(self, pixel_to_meter):
        """Same trajectory in pixels, ``pixel_to_meter`` meters per pixel."""
        if self.unit == 'px':
            return self
        if not pixel_to_meter > 0:
            raise ConfigError('pixel_to_meter must be positive')
        return Trajectory(tuple(
            TrajectorySample(s.t, s.hand, s.x / pixel_to_meter,
                             s.y / pixel_to_meter) for s in self.samples))


def trajectory_positions(trajectory, hand, times):
    """Linearly interpolated positions of ``hand`` at ``times``.

    Returns
    -------
    x, y : 1d numpy arrays
    active : 1d bool array
        True where ``times`` lies within the hand's first and last sample.

    """
    times = np.asarray(times, dtype=float)
    t, x, y = trajectory.track(hand)
    if t.size == 0:
        zeros = np.zeros(times.shape)
        return zeros, zeros, np.zeros(times.shape, dtype=bool)
    active = (times >= t[0]) & (times <= t[-1])
    return np.interp(times, t, x), np.interp(times, t, y), active


# ---------------------------------------------------------------------------
# Event streams

def make_events(t=(), x=(), y=(), p=()):
    """Build an event stream (structured array with fields t, x, y, p)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    n = t.size
    out = np.zeros(n, dtype=EVENT_DTYPE)
    if np.any(t < 0):
        raise StructuralError('negative event timestamp')
    out['t'] = t
    out['x'] = np.broadcast_to(np.asarray(x, dtype=np.int64), (n,))
    out['y'] = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    out['p'] = np.broadcast_to(np.asarray(p, dtype=np.int64), (n,))
    return out


def events_from_list(events):
    """Event stream from a list of :class:`Event`."""
    rows = list(events)
    if not rows:
        return np.zeros(0, dtype=EVENT_DTYPE)
    t, x, y, p = zip(*rows)
    return make_events(t, x, y, p)


def events_to_list(events):
    return [Event(int(e['t']), int(e['x']), int(e['y']), int(e['p']))
            for e in events]


def concatenate_events(*streams):
    """Merge streams into one, stably ordered by time."""
    merged = np.concatenate([np.asarray(s, dtype=EVENT_DTYPE)
                             for s in streams])
    return merged[np.argsort(merged['t'], kind='stable')]


def events_in_window(events, t0, t1):
    """Events with ``t0 <= t < t1``."""
    t = events['t']
    return events[(t >= t0) & (t < t1)]


def validate_events(events, resolution):
    """Raise StructuralError naming the first event outside ``resolution``
    or with an invalid polarity."""
    bad = ((events['x'] >= resolution.width)
           | (events['y'] >= resolution.height)
           | ((events['p'] != 1) & (events['p'] != -1)))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        e = events[i]
        raise StructuralError(
            'event #%d (t=%d, x=%d, y=%d, p=%d) invalid for %s'
            % (i, e['t'], e['x'], e['y'], e['p'], resolution))


def frame_accumulate(events, t0, t1, resolution, signed=False):
    """Accumulate events in ``[t0, t1)`` into a frame.

    Parameters
    ----------
    events : structured numpy array, EVENT_DTYPE
    t0, t1 : int
        Window bounds in microseconds, ``t0 < t1``.
    resolution : Resolution
    signed : bool
        Sum polarities instead of counting events.

    Returns
    -------
    frame : Frame

    """
    if not t0 < t1:
        raise StructuralError('empty accumulation window [%d, %d)' % (t0, t1))
    validate_events(events, resolution)
    sel = events[(events['t'] >= t0) & (events['t'] < t1)]
    index = sel['y'].astype(np.int64) * resolution.width + sel['x']
    weights = sel['p'].astype(float) if signed else None
    counts = np.bincount(index, weights=weights, minlength=resolution.size)
    cells = np.rint(counts).astype(np.int64).reshape(resolution.shape)
    return Frame(resolution, cells, int(t0), int(t1))


def downsample_index(source, target):
    """Target column and row of every source column and row."""
    xmap = (np.arange(source.width) * target.width) // source.width
    ymap = (np.arange(source.height) * target.height) // source.height
    return xmap, ymap


def frame_downsample(frame, target):
    """Downsample by floor index mapping with count accumulation.

    Source cell (x, y) adds its count to target cell
    (floor(x * tw / sw), floor(y * th / sh)), so totals are preserved for
    any ratio.
    """
    source = frame.resolution
    if target.width > source.width or target.height > source.height:
        raise StructuralError('cannot downsample %s to larger %s'
                              % (source, target))
    xmap, ymap = downsample_index(source, target)
    index = (ymap[:, None] * target.width + xmap[None, :]).ravel()
    counts = np.bincount(index, weights=frame.cells.ravel().astype(float),
                         minlength=target.size)
    cells = np.rint(counts).astype(frame.cells.dtype).reshape(target.shape)
    return Frame(target, cells, frame.t_start, frame.t_end)


def depth_mask(data, depth, near=0.0, far=None):
    """Remove events or frame cells whose depth is outside ``[near, far]``.

    Cells without a depth reading count as background and are removed.

    Parameters
    ----------
    data : Frame or event stream
    depth : DepthFrame
    near, far : float
        Kept depth range in meters; ``far`` defaults to ``depth.far_max``.

    Returns
    -------
    Same type as ``data``.

    """
    far = depth.far_max if far is None else far
    if not 0 <= near < far:
        raise ConfigError('invalid depth range [%r, %r]' % (near, far))
    valid = depth.valid(near, far)
    if isinstance(data, Frame):
        if data.resolution != depth.resolution:
            raise StructuralError('frame %s and depth %s are not registered'
                                  % (data.resolution, depth.resolution))
        return Frame(data.resolution, np.where(valid, data.cells, 0),
                     data.t_start, data.t_end)
    validate_events(data, depth.resolution)
    return data[valid[data['y'], data['x']]]


# ---------------------------------------------------------------------------
# Synthetic events

def _render(xx, yy, centers, radius):
    """Anti-aliased disks of unit luminance on a dark background."""
    image = np.zeros(xx.shape)
    for cx, cy in centers:
        dist = np.hypot(xx - cx, yy - cy)
        np.maximum(image, np.clip(radius + 0.5 - dist, 0.0, 1.0), out=image)
    return image


def _centers_at(tracks, t):
    centers = []
    for ts, xs, ys in tracks:
        if ts[0] <= t <= ts[-1]:
            centers.append((np.interp(t, ts, xs), np.interp(t, ts, ys)))
    return centers


def synth_hand_events(trajectory, blob_radius=8.0, contrast_threshold=0.15,
                      rate_scale=1.0, resolution=INPUT_RESOLUTION, seed=0,
                      micro_step_us=US_PER_MS, t_start=None, t_end=None):
    """Synthesize DVS events from moving hand disks.

    Each hand is rendered as an anti-aliased disk of unit luminance. Every
    micro-step a pixel emits one event per ``contrast_threshold`` its
    luminance moved away from its last reference level; the polarity is the
    sign of the change.

    Parameters
    ----------
    trajectory : Trajectory
        Hand positions in pixels.
    blob_radius : float
        Disk radius in pixels.
    contrast_threshold : float
        Luminance change that triggers one event.
    rate_scale : float, (0, 1]
        Probability that a threshold crossing is reported.
    resolution : Resolution
    seed : int
        Seed of the generator for timestamp jitter and thinning.
    micro_step_us : int
        Rendering period.
    t_start, t_end : int or None
        Generated span, defaults to the trajectory span.

    Returns
    -------
    events : structured numpy array, sorted by time

    """
    if trajectory.unit != 'px':
        raise StructuralError('synthesis needs a trajectory in pixels')
    if not 0 < rate_scale <= 1:
        raise ConfigError('rate_scale must lie in (0, 1], got %r' % rate_scale)
    if contrast_threshold <= 0 or micro_step_us <= 0 or blob_radius <= 0:
        raise ConfigError('blob radius, contrast threshold and micro step '
                          'must be positive')
    for s in trajectory.samples:
        if not (0 <= s.x < resolution.width and 0 <= s.y < resolution.height):
            raise StructuralError('trajectory sample %r outside %s'
                                  % (s, resolution))
    first, last = trajectory.span()
    t_start = first if t_start is None else int(t_start)
    t_end = last if t_end is None else int(t_end)
    tracks = [trajectory.track(hand) for hand in trajectory.hands()]
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:resolution.height, 0:resolution.width].astype(float)
    reference = _render(xx, yy, _centers_at(tracks, t_start), blob_radius)
    margin = int(np.ceil(blob_radius)) + 2
    chunks = []
    t_prev = t_start
    prev_centers = _centers_at(tracks, t_start)
    while t_prev + micro_step_us <= t_end:
        t_now = t_prev + micro_step_us
        centers = _centers_at(tracks, t_now)
        moving = prev_centers + centers
        if moving:
            pts = np.array(moving)
            x0 = max(int(np.floor(pts[:, 0].min())) - margin, 0)
            x1 = min(int(np.ceil(pts[:, 0].max())) + margin + 1,
                     resolution.width)
            y0 = max(int(np.floor(pts[:, 1].min())) - margin, 0)
            y1 = min(int(np.ceil(pts[:, 1].max())) + margin + 1,
                     resolution.height)
            box = (slice(y0, y1), slice(x0, x1))
            image = _render(xx[box], yy[box], centers, blob_radius)
            diff = image - reference[box]
            n = np.floor(np.abs(diff) / contrast_threshold + 1e-9)
            n = n.astype(np.int64)
            rows, cols = np.nonzero(n)
            if rows.size:
                counts = n[rows, cols]
                signs = np.sign(diff[rows, cols]).astype(np.int64)
                reference[box][rows, cols] += (signs * counts
                                               * contrast_threshold)
                if rate_scale < 1:
                    counts = rng.binomial(counts, rate_scale)
                ex = np.repeat(cols + x0, counts)
                ey = np.repeat(rows + y0, counts)
                ep = np.repeat(signs, counts)
                et = t_prev + rng.integers(0, micro_step_us, size=ex.size)
                chunks.append(make_events(et, ex, ey, ep))
        prev_centers = centers
        t_prev = t_now
    if not chunks:
        return np.zeros(0, dtype=EVENT_DTYPE)
    events = np.concatenate(chunks)
    events = events[np.argsort(events['t'], kind='stable')]
    logger.debug('synthesized %d events over [%d, %d] us', events.size,
                 t_start, t_end)
    return events


def circle_samples(hand, cx, cy, radius, period_us, duration_us,
                   step_us=5000, phase=0.0, t_start=0):
    """Samples of a hand circling ``(cx, cy)`` counter-clockwise."""
    t = np.arange(0, int(duration_us) + 1, int(step_us))
    angle = phase + 2 * np.pi * t / period_us
    return [TrajectorySample(int(t_start + ti), hand, float(x), float(y))
            for ti, x, y in zip(t, cx + radius * np.cos(angle),
                                cy + radius * np.sin(angle))]


def waving_hands(duration_us, radius=20.0, period_us=1000000,
                 centers=((70.0, 90.0), (170.0, 90.0)), step_us=5000):
    """Both hands circling, the performer's right hand on the image left."""
    (rx, ry), (lx, ly) = centers
    samples = (circle_samples('right', rx, ry, radius, period_us,
                              duration_us, step_us)
               + circle_samples('left', lx, ly, radius, period_us,
                                duration_us, step_us, phase=np.pi))
    return Trajectory(sorted(samples, key=lambda s: (s.t, s.hand)))


def inject_distractors(events, fraction, resolution, seed, t0=None, t1=None):
    """Add uniformly scattered random events.

    ``round(fraction * len(events))`` distractors with uniform positions,
    timestamps in ``[t0, t1)`` and random polarity are merged in.
    """
    n = int(round(fraction * events.size))
    if n == 0:
        return events.copy()
    t0 = int(events['t'].min()) if t0 is None else int(t0)
    t1 = int(events['t'].max()) + 1 if t1 is None else int(t1)
    rng = np.random.default_rng(seed)
    noise = make_events(rng.integers(t0, t1, size=n),
                        rng.integers(0, resolution.width, size=n),
                        rng.integers(0, resolution.height, size=n),
                        rng.choice(np.array([-1, 1]), size=n))
    return concatenate_events(events, noise)


# ---------------------------------------------------------------------------
# EVT1 codec

EVT_MAGIC = b'EVT1'
EVT_HEADER = struct.Struct('<4sHHI')
EVT_RECORD = np.dtype([('t', '<u8'), ('x', '<u2'), ('y', '<u2'),
                       ('p', 'i1'), ('pad', 'V3')])


def encode_events(events, resolution):
    """Serialize an event stream as EVT1 bytes.

    Layout (little-endian): magic ``EVT1``, u16 width, u16 height,
    u32 reserved = 0, then 16-byte records u64 t, u16 x, u16 y, i8 polarity
    and three zero padding bytes.
    """
    validate_events(events, resolution)
    records = np.zeros(events.size, dtype=EVT_RECORD)
    for name in ('t', 'x', 'y', 'p'):
        records[name] = events[name]
    header = EVT_HEADER.pack(EVT_MAGIC, resolution.width, resolution.height, 0)
    return header + records.tobytes()


def decode_events(data):
    """Parse EVT1 bytes.

    Returns
    -------
    events : structured numpy array, EVENT_DTYPE
    resolution : Resolution

    Raises
    ------
    CodecError
        Bad magic, nonzero reserved fields, truncated records, invalid
        polarity or coordinates outside the declared resolution.

    """
    data = bytes(data)
    if len(data) < EVT_HEADER.size:
        raise CodecError('truncated EVT1 header (%d bytes)' % len(data))
    magic, width, height, reserved = EVT_HEADER.unpack_from(data)
    if magic != EVT_MAGIC:
        raise CodecError('bad magic %r' % magic)
    if reserved != 0:
        raise CodecError('reserved header field is %d' % reserved)
    try:
        resolution = Resolution(width, height)
    except StructuralError as err:
        raise CodecError(str(err))
    body = len(data) - EVT_HEADER.size
    if body % EVT_RECORD.itemsize:
        raise CodecError('truncated EVT1 record (%d trailing bytes)'
                         % (body % EVT_RECORD.itemsize))
    raw = np.frombuffer(data, dtype=np.uint8, offset=EVT_HEADER.size)
    if np.any(raw.reshape(-1, EVT_RECORD.itemsize)[:, 13:]):
        raise CodecError('nonzero EVT1 padding')
    records = np.frombuffer(data, dtype=EVT_RECORD, offset=EVT_HEADER.size)
    events = np.zeros(records.size, dtype=EVENT_DTYPE)
    for name in ('t', 'x', 'y', 'p'):
        events[name] = records[name]
    try:
        validate_events(events, resolution)
    except StructuralError as err:
        raise CodecError(str(err))
    return events, resolution


def write_events(path, events, resolution):
    with open(path, 'wb') as fobj:
        fobj.write(encode_events(events, resolution))
    logger.info('wrote %d events to %s', events.size, path)


def read_events(path):
    with open(path, 'rb') as fobj:
        return decode_events(fobj.read())
