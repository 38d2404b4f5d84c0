"""Hand tracking: event frame, chip-size heatmap, field stabilization and
labelled hand estimates in input coordinates."""

from __future__ import annotations, division

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from neurotheremin import dnf
from neurotheremin.core import (CHIP_RESOLUTION, INPUT_RESOLUTION,
                                Resolution, depth_mask, events_in_window,
                                frame_accumulate, frame_downsample)
from neurotheremin.errors import CodecError, ConfigError, StructuralError
from neurotheremin.sigma_delta import (DenseNet, Layer, SdRunner,
                                       conv2d_as_dense, load_net)
from neurotheremin.utils import mark_points, pgm_bytes, to_graymap

logger = logging.getLogger(__name__)

PITCH_HAND = 'pitch_hand'
VOLUME_HAND = 'volume_hand'
LABELS = (PITCH_HAND, VOLUME_HAND)
DETECTORS = ('blob', 'sd_net')


def _tracking_field():
    return dnf.FieldParams(tau=2.0, h=-5.0, beta=4.0, dt=1.0)


def _tracking_kernel():
    return dnf.KernelParams(c_exc=0.6, sigma_exc=2.0, c_inh=0.3,
                            sigma_inh=5.0, g_inh=0.0)


@dataclass(frozen=True)
class TrackerConfig:
    """Tracking pipeline settings.

    The field runs at ``chip_res`` with a fast time constant so that it
    follows the hands within a few windows. Heatmaps are scaled by
    ``input_gain`` before entering the field. Peaks lighter than
    ``min_peak_mass`` are ignored, estimates without a peak keep their
    position and lose ``confidence_decay`` of their confidence per step.
    """

    input_res: Resolution = field(default_factory=lambda: INPUT_RESOLUTION)
    chip_res: Resolution = field(default_factory=lambda: CHIP_RESOLUTION)
    window_us: int = 10000
    detector: str = 'blob'
    field_params: dnf.FieldParams = field(default_factory=_tracking_field)
    kernel: dnf.KernelParams = field(default_factory=_tracking_kernel)
    kernel_radius: int = 15
    input_gain: float = 8.0
    blob_sigma: float = 1.5
    density_floor: float = 2.0
    peak_threshold: float = 0.0
    min_separation: float = 8.0
    min_peak_mass: float = 0.0
    confidence_decay: float = 0.5
    mirror: bool = True
    depth_near: Optional[float] = None
    depth_far: Optional[float] = None
    sd_threshold: float = 0.05
    weights_path: Optional[str] = None

    def __post_init__(self):
        if (self.chip_res.width > self.input_res.width
                or self.chip_res.height > self.input_res.height):
            raise ConfigError('chip resolution %s exceeds input %s'
                              % (self.chip_res, self.input_res))
        if self.window_us <= 0:
            raise ConfigError('window_us must be positive')
        if self.detector not in DETECTORS:
            raise ConfigError('unknown detector %r' % self.detector)
        if not 0 <= self.confidence_decay <= 1:
            raise ConfigError('confidence_decay must lie in [0, 1]')
        if self.blob_sigma <= 0 or self.density_floor <= 0:
            raise ConfigError('blob_sigma and density_floor must be positive')
        if self.sd_threshold < 0 or self.input_gain <= 0:
            raise ConfigError('invalid detector gain or threshold')


@dataclass(frozen=True)
class Hand:
    label: str
    x: float
    y: float
    confidence: float


@dataclass(frozen=True)
class HandEstimate:
    """Up to two labelled hands at time ``t`` (window end, microseconds)."""

    t: int
    hands: Tuple[Hand, ...] = ()

    def __post_init__(self):
        labels = [h.label for h in self.hands]
        if len(set(labels)) != len(labels) or len(labels) > 2:
            raise StructuralError('hand labels must be unique: %r' % labels)
        for h in self.hands:
            if h.label not in LABELS:
                raise StructuralError('unknown hand label %r' % h.label)
            if not 0 <= h.confidence <= 1:
                raise StructuralError('confidence %r outside [0, 1]'
                                      % h.confidence)

    def get(self, label):
        for h in self.hands:
            if h.label == label:
                return h
        return None

    def decayed(self, t, factor):
        """Same positions at time ``t`` with confidences scaled."""
        return HandEstimate(t, tuple(Hand(h.label, h.x, h.y,
                                          h.confidence * factor)
                                     for h in self.hands))


# ---------------------------------------------------------------------------
# Detectors

def gaussian_kernel(sigma):
    """Normalized 2D Gaussian with odd side ``2 * ceil(3 sigma) + 1``."""
    r = int(np.ceil(3 * sigma))
    d = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-(d[None, :] ** 2 + d[:, None] ** 2) / (2 * sigma ** 2))
    return k / k.sum()


class BlobDetector:
    """Local event density, normalized to at most one."""

    name = 'blob'

    def __init__(self, config):
        self.sigma = config.blob_sigma
        self.floor = config.density_floor
        self.resolution = config.chip_res

    def __call__(self, frame):
        density = ndimage.gaussian_filter(frame.cells.astype(float),
                                          self.sigma, mode='constant')
        return density / max(density.max(), self.floor)


class SdNetDetector:
    """Heatmap from a sigma-delta network fed with the flattened frame.

    Without a weight file the network is one Gaussian convolution layer,
    so both detectors see the same density up to spike quantization.
    """

    name = 'sd_net'

    def __init__(self, config, net=None):
        self.resolution = config.chip_res
        self.floor = config.density_floor
        if net is None and config.weights_path:
            net = load_net(config.weights_path)
        if net is None:
            size = self.resolution.size
            net = DenseNet([Layer(conv2d_as_dense(
                gaussian_kernel(config.blob_sigma), self.resolution.shape),
                np.zeros(size), 'relu')])
        if net.n_in != self.resolution.size or net.n_out != self.resolution.size:
            raise StructuralError('detector network must map %s to %s'
                                  % (self.resolution, self.resolution))
        self.runner = SdRunner(net, config.sd_threshold)

    def __call__(self, frame):
        out = self.runner.step(frame.cells.astype(float).ravel())
        heat = np.clip(out, 0, None).reshape(self.resolution.shape)
        return heat / max(heat.max(), self.floor)

    @property
    def spike_counts(self):
        return list(self.runner.spike_counts)


def make_detector(config):
    if config.detector == 'sd_net':
        return SdNetDetector(config)
    return BlobDetector(config)


def detect_heatmap(frame, detector):
    """Non-negative heatmap at the detector's chip resolution."""
    if frame.resolution != detector.resolution:
        raise StructuralError('detector expects %s, got frame at %s'
                              % (detector.resolution, frame.resolution))
    return detector(frame)


def local_maxima(heatmap, size=3):
    """``(x, y)`` cells that are positive local maxima."""
    peaks = (heatmap == ndimage.maximum_filter(heatmap, size=size,
                                               mode='constant')) & (heatmap > 0)
    ys, xs = np.nonzero(peaks)
    return list(zip(xs.tolist(), ys.tolist()))


# ---------------------------------------------------------------------------
# Geometry and labels

def upscale(x, y, chip_res, input_res):
    """Chip cell coordinates to input pixel coordinates (cell centers)."""
    sx = input_res.width / chip_res.width
    sy = input_res.height / chip_res.height
    xi = (x + 0.5) * sx - 0.5
    yi = (y + 0.5) * sy - 0.5
    return (float(np.clip(xi, 0, input_res.width - 1)),
            float(np.clip(yi, 0, input_res.height - 1)))


def assign_hands(peaks, mirror=True):
    """Label at most two peaks.

    With ``mirror`` (camera facing the performer) the image-left peak is the
    pitch hand. A single peak is always the pitch hand.

    Returns
    -------
    list of (label, peak), image-left first.

    """
    if len(peaks) > 2:
        raise StructuralError('cannot label %d peaks' % len(peaks))
    if len(peaks) == 1:
        return [(PITCH_HAND, peaks[0])]
    ordered = sorted(peaks, key=lambda p: p.x)
    first, second = (PITCH_HAND, VOLUME_HAND) if mirror \
        else (VOLUME_HAND, PITCH_HAND)
    return [(first, ordered[0]), (second, ordered[1])][:len(ordered)]


def _nearest_label(x, y, previous):
    best = min(previous.hands, key=lambda h: np.hypot(h.x - x, h.y - y))
    return best.label


# ---------------------------------------------------------------------------
# Pipeline

class TrackerState:
    """Sequential tracker: field, detector and last estimate.

    Parameters
    ----------
    config : TrackerConfig
    last_estimate : HandEstimate or None
        Estimate held when no peak is found.
    depth : DepthFrame or None
        Registered depth at ``input_res`` used with the configured range.

    """

    def __init__(self, config=None, last_estimate=None, depth=None,
                 detector=None):
        self.config = TrackerConfig() if config is None else config
        self.field = dnf.Field.at_rest(self.config.chip_res,
                                       self.config.field_params)
        self.kernel = dnf.make_kernel(self.config.kernel,
                                      self.config.kernel_radius)
        self.detector = make_detector(self.config) if detector is None \
            else detector
        self.last_estimate = last_estimate
        self.depth = depth
        self.raw_track = []
        self.steps = 0

    def _mask(self, frame):
        cfg = self.config
        if self.depth is None or (cfg.depth_near is None
                                  and cfg.depth_far is None):
            return frame
        near = 0.0 if cfg.depth_near is None else cfg.depth_near
        return depth_mask(frame, self.depth, near, cfg.depth_far)


def track_step(state, events, t0):
    """Process the window ``[t0, t0 + window_us)``.

    Returns
    -------
    estimate : HandEstimate
        Stamped with the window end.

    """
    cfg = state.config
    t1 = int(t0) + cfg.window_us
    frame = frame_accumulate(events_in_window(events, t0, t1), t0, t1,
                             cfg.input_res)
    frame = state._mask(frame)
    chip = frame_downsample(frame, cfg.chip_res)
    heatmap = detect_heatmap(chip, state.detector)
    state.field = dnf.field_step(state.field, cfg.input_gain * heatmap,
                                 state.kernel)
    state.steps += 1
    _record_raw(state, t1, heatmap)

    peaks = [p for p in dnf.detect_peaks(state.field, cfg.peak_threshold,
                                         cfg.min_separation)
             if p.mass >= cfg.min_peak_mass][:2]
    if not peaks:
        if state.last_estimate is None:
            estimate = HandEstimate(t1)
        else:
            estimate = state.last_estimate.decayed(t1, cfg.confidence_decay)
        logger.debug('t=%d: no peak, holding %d hands', t1,
                     len(estimate.hands))
        state.last_estimate = estimate
        return estimate

    previous = state.last_estimate
    if len(peaks) == 1 and previous is not None and len(previous.hands) == 2:
        x, y = upscale(peaks[0].x, peaks[0].y, cfg.chip_res, cfg.input_res)
        labelled = [(_nearest_label(x, y, previous), peaks[0])]
    else:
        labelled = assign_hands(peaks, cfg.mirror)
    hands = []
    for label, peak in labelled:
        x, y = upscale(peak.x, peak.y, cfg.chip_res, cfg.input_res)
        confidence = float(expit(cfg.field_params.beta * peak.height))
        hands.append(Hand(label, x, y, confidence))
    estimate = HandEstimate(t1, tuple(sorted(hands, key=lambda h: h.label)))
    state.last_estimate = estimate
    return estimate


def _record_raw(state, t, heatmap):
    if not np.any(heatmap > 0):
        return
    y, x = np.unravel_index(int(np.argmax(heatmap)), heatmap.shape)
    xi, yi = upscale(x, y, state.config.chip_res, state.config.input_res)
    state.raw_track.append((t, xi, yi))


def track_stream(events, config=None, t_start=None, t_end=None, depth=None,
                 state=None, on_step=None):
    """Track consecutive windows covering ``[t_start, t_end)``.

    ``on_step(state, estimate)`` is called after every window.

    Returns
    -------
    estimates : list of HandEstimate
    state : TrackerState

    """
    state = TrackerState(config, depth=depth) if state is None else state
    w = state.config.window_us
    if t_start is None:
        t_start = int(events['t'].min()) if events.size else 0
    if t_end is None:
        t_end = int(events['t'].max()) + 1 if events.size else t_start
    estimates = []
    t0 = int(t_start)
    while t0 + w <= t_end:
        estimate = track_step(state, events, t0)
        estimates.append(estimate)
        if on_step is not None:
            on_step(state, estimate)
        t0 += w
    logger.info('tracked %d windows of %d us', len(estimates), w)
    return estimates, state


def track_jitter(points):
    """Summed variance of the step-to-step displacement of a track."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    steps = np.diff(pts, axis=0)
    return float(np.var(steps[:, 0]) + np.var(steps[:, 1]))


# ---------------------------------------------------------------------------
# Records and overlays

def format_estimates(estimates):
    """Line records ``t_us,label,x,y,confidence``."""
    lines = []
    for est in estimates:
        for h in est.hands:
            lines.append('%d,%s,%.3f,%.3f,%.6f' % (est.t, h.label, h.x, h.y,
                                                   h.confidence))
    return '\n'.join(lines) + ('\n' if lines else '')


def parse_estimates(text):
    """Inverse of :func:`format_estimates` (windows without hands vanish)."""
    grouped = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        parts = line.split(',')
        if len(parts) != 5:
            raise CodecError('line %d: expected 5 fields' % lineno)
        try:
            t = int(parts[0])
            hand = Hand(parts[1], float(parts[2]), float(parts[3]),
                        float(parts[4]))
        except ValueError:
            raise CodecError('line %d: bad number' % lineno)
        grouped.setdefault(t, []).append(hand)
    try:
        return [HandEstimate(t, tuple(hands))
                for t, hands in sorted(grouped.items())]
    except StructuralError as err:
        raise CodecError(str(err))


def overlay_pgm(frame, estimate, input_res=INPUT_RESOLUTION):
    """Event frame as 16-bit PGM with hand crosses.

    Hand coordinates are in ``input_res`` pixels and are rescaled to the
    frame.
    """
    gray = to_graymap(frame.cells)
    points = [(h.x, h.y) for h in estimate.hands]
    if frame.resolution != input_res and points:
        sx = frame.resolution.width / input_res.width
        sy = frame.resolution.height / input_res.height
        points = [(x * sx, y * sy) for x, y in points]
    gray = mark_points(gray, points, radius=3)
    return pgm_bytes(gray, comment='t=%d %s' % (
        estimate.t, ' '.join(h.label for h in estimate.hands)))


def overlay_frame(events, estimate, config):
    """Input-resolution frame of the window that produced ``estimate``."""
    t1 = estimate.t
    t0 = t1 - config.window_us
    return frame_accumulate(events_in_window(events, t0, t1), max(t0, 0),
                            t1, config.input_res)

