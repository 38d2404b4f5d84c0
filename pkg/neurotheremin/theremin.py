"""Theremin control model.

The pitch hand's distance ``d`` to the pitch antenna sets the frequency,

    f(d) = f_ref * 2 ** ((d_ref - d) / s),

so moving ``s`` meters closer raises the pitch by one octave. The volume
hand's height above the volume antenna sets the amplitude linearly between
two calibrated heights.
"""

from __future__ import annotations, division

import io
import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Tuple

import numpy as np
from scipy.io import wavfile

from neurotheremin.core import Trajectory, TrajectorySample, \
    trajectory_positions
from neurotheremin.errors import CodecError, ConfigError, StructuralError
from neurotheremin.tracker import PITCH_HAND, VOLUME_HAND, Hand, HandEstimate

logger = logging.getLogger(__name__)

A4_MIDI = 69
A4_FREQ = 440.0
MIN_SAMPLE_RATE = 8000
DEFAULT_RAMP_MS = 30.0
C_MAJOR = (60, 62, 64, 65, 67, 69, 71, 72)

# Trajectory hands: the performer's right hand plays pitch.
PITCH_SIDE = 'right'
VOLUME_SIDE = 'left'


def note_freq(midi):
    """Equal-temperament frequency of a MIDI note, A4 = 440 Hz."""
    if not 0 <= midi <= 127 or int(midi) != midi:
        raise StructuralError('MIDI note %r outside 0..127' % (midi,))
    return A4_FREQ * 2.0 ** ((midi - A4_MIDI) / 12.0)


def cents(freq, reference):
    """Interval from ``reference`` to ``freq`` in cents."""
    return 1200.0 * np.log2(np.asarray(freq, dtype=float) / reference)


@dataclass(frozen=True)
class Note:
    midi: int
    duration_ms: float

    def __post_init__(self):
        if not 0 <= self.midi <= 127:
            raise StructuralError('MIDI note %r outside 0..127' % self.midi)
        if not self.duration_ms > 0:
            raise StructuralError('note duration must be positive')


@dataclass(frozen=True)
class Score:
    """Notes for the pitch hand and ``(t_ms, level)`` for the volume hand."""

    notes: Tuple[Note, ...]
    volumes: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'notes', tuple(self.notes))
        object.__setattr__(self, 'volumes',
                           tuple((float(t), float(v)) for t, v in self.volumes))
        times = [t for t, _ in self.volumes]
        if any(b < a for a, b in zip(times[:-1], times[1:])):
            raise StructuralError('volume times must be non-decreasing')
        if any(not 0 <= v <= 1 for _, v in self.volumes):
            raise StructuralError('volume levels must lie in [0, 1]')

    @property
    def duration_ms(self):
        return float(sum(n.duration_ms for n in self.notes))


@dataclass(frozen=True)
class PitchCalibration:
    """Distance ``d_ref`` (m) playing ``f_ref`` (Hz), ``octave_dist`` m per
    octave."""

    d_ref: float = 0.40
    f_ref: float = 261.6255653005986
    octave_dist: float = 0.24

    def __post_init__(self):
        if not (self.f_ref > 0 and self.octave_dist > 0):
            raise ConfigError('f_ref and octave_dist must be positive')

    def freq(self, d):
        return self.f_ref * 2.0 ** ((self.d_ref - np.asarray(d, dtype=float))
                                    / self.octave_dist)

    def distance(self, f):
        return self.d_ref - self.octave_dist * np.log2(
            np.asarray(f, dtype=float) / self.f_ref)


@dataclass(frozen=True)
class HandGeometry:
    """Pixel to meter mapping of the instrument in the camera image.

    The pitch antenna is the vertical line ``x = pitch_antenna_x``; pitch
    distance is horizontal. Volume height is measured upwards from
    ``volume_base_y`` and spans ``[h_min, h_max]`` meters.
    """

    pixel_to_meter: float = 0.004
    pitch_antenna_x: float = 20.0
    pitch_hand_y: float = 80.0
    volume_hand_x: float = 190.0
    volume_base_y: float = 150.0
    h_min: float = 0.0
    h_max: float = 0.4

    def __post_init__(self):
        if self.pixel_to_meter <= 0:
            raise ConfigError('pixel_to_meter must be positive')
        if not self.h_max > self.h_min:
            raise ConfigError('need h_max > h_min')

    def pitch_distance(self, x):
        return abs(x - self.pitch_antenna_x) * self.pixel_to_meter

    def pitch_x(self, d):
        return self.pitch_antenna_x + np.asarray(d) / self.pixel_to_meter

    def volume_height(self, y):
        return (self.volume_base_y - y) * self.pixel_to_meter

    def volume_y(self, h):
        return self.volume_base_y - np.asarray(h) / self.pixel_to_meter


class ControlPoint(NamedTuple):
    t: int
    freq: float
    amp: float


def cents_per_pixel(calibration, geometry):
    """Pitch change caused by one pixel of pitch hand error."""
    return 1200.0 * geometry.pixel_to_meter / calibration.octave_dist


def hands_to_control(estimate, calibration, vol_range=None, geometry=None):
    """Instrument control from one hand estimate.

    Parameters
    ----------
    estimate : HandEstimate
        Must contain the pitch hand.
    calibration : PitchCalibration
    vol_range : (h_min, h_max) or None
        Volume heights in meters, defaults to the geometry's.
    geometry : HandGeometry or None

    Returns
    -------
    point : ControlPoint
        Amplitude 1 when the volume hand is missing.

    """
    geometry = HandGeometry() if geometry is None else geometry
    h_min, h_max = (geometry.h_min, geometry.h_max) if vol_range is None \
        else vol_range
    if not h_max > h_min:
        raise ConfigError('volume range must be increasing')
    pitch = estimate.get(PITCH_HAND)
    if pitch is None:
        raise StructuralError('estimate at t=%d has no pitch hand'
                              % estimate.t)
    freq = float(calibration.freq(geometry.pitch_distance(pitch.x)))
    volume = estimate.get(VOLUME_HAND)
    if volume is None:
        amp = 1.0
    else:
        h = geometry.volume_height(volume.y)
        amp = float(np.clip((h - h_min) / (h_max - h_min), 0.0, 1.0))
    return ControlPoint(int(estimate.t), freq, amp)


# ---------------------------------------------------------------------------
# Scores

def c_major_scale(duration_ms=500, volume=1.0):
    """The eight notes from C4 to C5 at constant volume."""
    return Score(tuple(Note(m, duration_ms) for m in C_MAJOR),
                 ((0.0, volume),))


def parse_score(text):
    """Parse ``NOTE <midi> <duration_ms>`` and ``VOL <t_ms> <level>`` lines."""
    notes, volumes = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] not in ('NOTE', 'VOL') or len(parts) != 3:
            raise CodecError('line %d: expected NOTE or VOL record' % lineno)
        try:
            if parts[0] == 'NOTE':
                notes.append(Note(int(parts[1]), float(parts[2])))
            else:
                volumes.append((float(parts[1]), float(parts[2])))
        except ValueError as err:
            raise CodecError('line %d: %s' % (lineno, err))
    try:
        return Score(tuple(notes), tuple(volumes))
    except StructuralError as err:
        raise CodecError(str(err))


def format_score(score):
    lines = ['NOTE %d %g' % (n.midi, n.duration_ms) for n in score.notes]
    lines += ['VOL %g %g' % (t, v) for t, v in score.volumes]
    return '\n'.join(lines) + '\n'


def read_score(path):
    with open(path) as fobj:
        return parse_score(fobj.read())


def _volume_samples(score, end_us, tempo):
    volumes = score.volumes or ((0.0, 1.0),)
    samples = []
    last_t = None
    for t_ms, level in volumes:
        t = int(round(t_ms * 1000.0 / tempo))
        if last_t is not None and t <= last_t:
            t = last_t + 1
        samples.append((t, level))
        last_t = t
    if samples[0][0] > 0:
        samples.insert(0, (0, samples[0][1]))
    if samples[-1][0] < end_us:
        samples.append((end_us, samples[-1][1]))
    return samples


def score_to_trajectory(score, calibration, tempo=1.0, geometry=None,
                        ramp_ms=DEFAULT_RAMP_MS, t_start=0):
    """Hand trajectories (pixels) that play ``score``.

    Each note holds the pitch hand at the distance of its frequency; a new
    note is reached through a linear ramp of ``ramp_ms`` starting at its
    onset. The volume hand height follows the volume list linearly.

    Raises
    ------
    StructuralError
        If a note needs a negative antenna distance.
    ConfigError
        If a note is not longer than the ramp.

    """
    geometry = HandGeometry() if geometry is None else geometry
    if tempo <= 0 or ramp_ms <= 0:
        raise ConfigError('tempo and ramp_ms must be positive')
    if not score.notes:
        raise StructuralError('score has no notes')
    ramp_us = int(round(ramp_ms * 1000.0 / tempo))
    onsets = np.round(np.cumsum([0.0] + [n.duration_ms for n in score.notes])
                      * 1000.0 / tempo).astype(np.int64)
    samples = []
    previous_x = None
    for note, t0, t1 in zip(score.notes, onsets[:-1], onsets[1:]):
        if t1 - t0 <= ramp_us:
            raise ConfigError('note of %g ms is not longer than the %g ms '
                              'ramp' % (note.duration_ms, ramp_ms))
        d = float(calibration.distance(note_freq(note.midi)))
        if d < 0:
            raise StructuralError('MIDI note %d needs distance %.3f m'
                                  % (note.midi, d))
        x = float(geometry.pitch_x(d))
        if previous_x is None:
            samples.append((t0, x))
        else:
            samples.append((t0, previous_x))
            samples.append((t0 + ramp_us, x))
        previous_x = x
    end_us = int(onsets[-1])
    samples.append((end_us, previous_x))
    trajectory = [TrajectorySample(int(t_start + t), PITCH_SIDE, x,
                                   geometry.pitch_hand_y)
                  for t, x in samples]
    h_span = geometry.h_max - geometry.h_min
    for t, level in _volume_samples(score, end_us, tempo):
        y = float(geometry.volume_y(geometry.h_min + level * h_span))
        trajectory.append(TrajectorySample(int(t_start + t), VOLUME_SIDE,
                                           geometry.volume_hand_x, y))
    trajectory.sort(key=lambda s: (s.t, s.hand))
    logger.debug('score of %d notes -> %d trajectory samples over %d us',
                 len(score.notes), len(trajectory), end_us)
    return Trajectory(tuple(trajectory))


def trajectory_to_control(trajectory, calibration, times, geometry=None):
    """Control points an ideal tracker would produce at ``times``."""
    geometry = HandGeometry() if geometry is None else geometry
    px, py, p_on = trajectory_positions(trajectory, PITCH_SIDE, times)
    vx, vy, v_on = trajectory_positions(trajectory, VOLUME_SIDE, times)
    points = []
    for t, x, y, on, xv, yv, von in zip(times, px, py, p_on, vx, vy, v_on):
        if not on:
            continue
        hands = [Hand(PITCH_HAND, float(x), float(y), 1.0)]
        if von:
            hands.append(Hand(VOLUME_HAND, float(xv), float(yv), 1.0))
        points.append(hands_to_control(HandEstimate(int(t), tuple(hands)),
                                       calibration, geometry=geometry))
    return points


def score_to_control(score, calibration, tempo=1.0, geometry=None,
                     step_us=10000, ramp_ms=DEFAULT_RAMP_MS):
    """Solo playback: control points sampled from the score trajectory."""
    trajectory = score_to_trajectory(score, calibration, tempo, geometry,
                                     ramp_ms)
    _, end = trajectory.span()
    times = np.arange(0, end + 1, int(step_us))
    return trajectory_to_control(trajectory, calibration, times, geometry)


def note_targets(score, times, tempo=1.0):
    """Frequency of the note sounding at each time (µs)."""
    onsets = np.cumsum([0.0] + [n.duration_ms for n in score.notes]) \
        * 1000.0 / tempo
    freqs = np.array([note_freq(n.midi) for n in score.notes])
    index = np.clip(np.searchsorted(onsets, times, side='right') - 1, 0,
                    len(freqs) - 1)
    return freqs[index]


def in_ramp(score, times, tempo=1.0, ramp_ms=DEFAULT_RAMP_MS):
    """True where ``times`` fall inside a note transition ramp."""
    onsets = np.cumsum([0.0] + [n.duration_ms for n in score.notes])[1:-1] \
        * 1000.0 / tempo
    ramp_us = ramp_ms * 1000.0 / tempo
    times = np.asarray(times, dtype=float)
    since = times[:, None] - onsets[None, :]
    return np.any((since >= 0) & (since <= ramp_us), axis=1)


# ---------------------------------------------------------------------------
# Calibration

def calibrate_pitch(samples, d_ref=0.40):
    """Least-squares pitch calibration.

    Fits ``log2 f = a + b d`` and reports it as the frequency at the
    reference distance ``d_ref`` and the octave distance ``-1 / b``.

    Parameters
    ----------
    samples : sequence of (d, f)
        Distances in meters and measured frequencies in Hz.
    d_ref : float
        Reference distance of the returned calibration.

    Returns
    -------
    calibration : PitchCalibration

    """
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    d, f = data[:, 0], data[:, 1]
    if np.unique(d).size < 2:
        raise ConfigError('calibration needs at least two distinct '
                          'distances')
    if np.any(f <= 0):
        raise ConfigError('calibration frequencies must be positive')
    design = np.column_stack([np.ones_like(d), d])
    (a, b), _, _, _ = np.linalg.lstsq(design, np.log2(f), rcond=None)
    if not b < 0:
        raise ConfigError('pitch does not rise as the hand approaches '
                          '(slope %.4g)' % b)
    calibration = PitchCalibration(d_ref, float(2.0 ** (a + b * d_ref)),
                                   float(-1.0 / b))
    logger.info('calibrated f_ref=%.4f Hz at %.3f m, %.4f m per octave',
                calibration.f_ref, d_ref, calibration.octave_dist)
    return calibration


def calibration_residual(calibration, samples):
    """Sum of squared log2-frequency residuals."""
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    r = np.log2(calibration.freq(data[:, 0])) - np.log2(data[:, 1])
    return float(np.sum(r ** 2))


def probe_instrument(instrument, distances, noise_cents=0.0, seed=0):
    """Frequencies an instrument plays at ``distances``, optional noise."""
    distances = np.asarray(distances, dtype=float)
    f = instrument.freq(distances)
    if noise_cents:
        rng = np.random.default_rng(seed)
        f = f * 2.0 ** (rng.normal(0.0, noise_cents, size=f.shape) / 1200.0)
    return list(zip(distances.tolist(), np.atleast_1d(f).tolist()))


def drifted(calibration, drift_cents=0.0, octave_scale=1.0):
    """The instrument after warming up: shifted and stretched pitch map."""
    return replace(calibration,
                   f_ref=calibration.f_ref * 2.0 ** (drift_cents / 1200.0),
                   octave_dist=calibration.octave_dist * octave_scale)


def recalibrate(instrument, distances=None, d_ref=0.40):
    """Probe the instrument across the playing range and refit."""
    if distances is None:
        distances = np.linspace(0.1, 0.5, 9)
    return calibrate_pitch(probe_instrument(instrument, distances), d_ref)


# ---------------------------------------------------------------------------
# Rendering

def render_trace(points, sample_rate=MIN_SAMPLE_RATE, vibrato=None):
    """Phase-continuous sine synthesis of a control trace.

    Parameters
    ----------
    points : sequence of ControlPoint
        Frequency and amplitude are interpolated linearly between points.
    sample_rate : int
        At least 8000 samples per second.
    vibrato : (depth_cents, rate_hz) or None

    Returns
    -------
    pcm : 1d int16 numpy array

    """
    if sample_rate < MIN_SAMPLE_RATE:
        raise ConfigError('sample_rate must be at least %d' % MIN_SAMPLE_RATE)
    points = list(points)
    if len(points) < 2:
        return np.zeros(0, dtype=np.int16)
    t = np.array([p.t for p in points], dtype=float)
    if np.any(np.diff(t) < 0):
        raise StructuralError('control points are not time-ordered')
    n = int(round((t[-1] - t[0]) * sample_rate / 1e6))
    times = np.arange(n) / sample_rate
    ts = t[0] + times * 1e6
    freq = np.interp(ts, t, [p.freq for p in points])
    amp = np.interp(ts, t, [p.amp for p in points])
    if vibrato is not None:
        depth, rate = vibrato
        freq = freq * 2.0 ** ((depth / 1200.0) * np.sin(2 * np.pi * rate
                                                         * times))
    phase = 2 * np.pi * (np.cumsum(freq) - freq) / sample_rate
    pcm = np.rint(np.clip(amp, 0, 1) * np.sin(phase) * 32767)
    return pcm.astype(np.int16)


def wav_bytes(pcm, sample_rate=MIN_SAMPLE_RATE):
    """RIFF PCM 16-bit mono."""
    buf = io.BytesIO()
    wavfile.write(buf, int(sample_rate), np.asarray(pcm, dtype=np.int16))
    return buf.getvalue()


def write_wav(path, pcm, sample_rate=MIN_SAMPLE_RATE):
    wavfile.write(path, int(sample_rate), np.asarray(pcm, dtype=np.int16))
    logger.info('wrote %d samples to %s', len(pcm), path)
