"""Two-dimensional dynamic neural field.

Euler integration of the field equation

    tau du/dt = -u + h + s + (k * f(u)) - g_inh * sum(f(u)),  f = expit(beta u)

with a difference-of-Gaussians kernel ``k`` convolved with zero padding.
"""

from __future__ import annotations, division

import logging
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve
from scipy.special import expit

from neurotheremin.core import Resolution
from neurotheremin.errors import ConfigError, StructuralError
from neurotheremin.utils import mark_points, pgm_bytes, to_graymap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldParams:
    """Field time constant, resting level, sigmoid steepness and step."""

    tau: float = 10.0
    h: float = -5.0
    beta: float = 2.0
    dt: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and self.dt > 0 and self.beta > 0):
            raise ConfigError('tau, dt and beta must be positive')
        if self.dt > self.tau:
            raise ConfigError('dt=%r exceeds tau=%r' % (self.dt, self.tau))
        if not self.h < 0:
            raise ConfigError('resting level h must be negative')


@dataclass(frozen=True)
class KernelParams:
    """Lateral interaction parameters, widths in cells.

    The defaults keep the interaction weak next to the input so that a
    peak stays centred on its input between lattice cells.
    ``tie_tilt`` lowers the resting level by ``tie_tilt * i / N`` at
    row-major index ``i`` so that the earlier of two equal inputs wins.
    """

    c_exc: float = 1.5
    sigma_exc: float = 3.0
    c_inh: float = 0.75
    sigma_inh: float = 6.0
    g_inh: float = 0.0
    tie_tilt: float = 0.0

    def __post_init__(self):
        if not self.sigma_inh > self.sigma_exc > 0:
            raise ConfigError('need sigma_inh > sigma_exc > 0')
        if min(self.c_exc, self.c_inh, self.g_inh, self.tie_tilt) < 0:
            raise ConfigError('kernel amplitudes must be non-negative')


SELECTIVE = KernelParams(c_exc=15.0, c_inh=10.0, g_inh=3.0, tie_tilt=1e-3)
MULTI_PEAK = KernelParams()


@dataclass(frozen=True, eq=False)
class Kernel:
    weights: np.ndarray
    g_inh: float = 0.0
    tie_tilt: float = 0.0

    @property
    def radius(self):
        return self.weights.shape[0] // 2


@dataclass(frozen=True, eq=False)
class Field:
    """Field activation ``u`` indexed ``[y, x]``."""

    u: np.ndarray
    resolution: Resolution
    params: FieldParams = dc_field(default_factory=FieldParams)

    def __post_init__(self):
        if self.u.shape != self.resolution.shape:
            raise StructuralError('field of shape %r does not match %s'
                                  % (self.u.shape, self.resolution))
        if not np.all(np.isfinite(self.u)):
            raise StructuralError('field activation is not finite')

    @classmethod
    def at_rest(cls, resolution, params=None):
        params = FieldParams() if params is None else params
        return cls(np.full(resolution.shape, float(params.h)), resolution,
                   params)

    def output(self):
        """Sigmoid rate ``f(u)``."""
        return expit(self.params.beta * self.u)


class Peak:
    """Supra-threshold blob of the field.

    Parameters
    ----------
    x, y : float
        Activation-weighted centroid in cells.
    mass : float
        Summed supra-threshold activation.
    height : float
        Largest activation inside the region.

    """

    __slots__ = ('x', 'y', 'mass', 'height')

    def __init__(self, x, y, mass, height=0.0):
        self.x = float(x)
        self.y = float(y)
        self.mass = float(mass)
        self.height = float(height)

    @property
    def centroid(self):
        return (self.x, self.y)

    def __repr__(self):
        return 'Peak(x=%.3f, y=%.3f, mass=%.3f)' % (self.x, self.y, self.mass)


def make_kernel(kp, radius=None):
    """Difference-of-Gaussians interaction kernel.

    Parameters
    ----------
    kp : KernelParams
    radius : int or None
        Half width in cells, defaults to ``ceil(3 * sigma_inh)``.

    Returns
    -------
    kernel : Kernel
        ``weights[radius + dy, radius + dx]`` holds k(dx, dy).

    """
    if radius is None:
        radius = int(np.ceil(3 * kp.sigma_inh))
    if radius < 0:
        raise ConfigError('kernel radius must be non-negative')
    if radius < 3 * kp.sigma_inh:
        logger.debug('kernel radius %d truncates inhibition (sigma %.2f)',
                     radius, kp.sigma_inh)
    d = np.arange(-radius, radius + 1, dtype=float)
    r2 = d[None, :] ** 2 + d[:, None] ** 2
    weights = (kp.c_exc * np.exp(-r2 / (2 * kp.sigma_exc ** 2))
               - kp.c_inh * np.exp(-r2 / (2 * kp.sigma_inh ** 2)))
    return Kernel(weights, kp.g_inh, kp.tie_tilt)


def _resting_level(field, kernel):
    h = field.params.h
    if kernel.tie_tilt == 0:
        return h
    n = field.resolution.size
    order = np.arange(n, dtype=float).reshape(field.resolution.shape)
    return h - kernel.tie_tilt * order / n


def lateral_input(field, kernel):
    """Interaction term ``k * f(u) - g_inh * sum(f(u))``."""
    f = field.output()
    lateral = fftconvolve(f, kernel.weights, mode='same')
    if kernel.g_inh:
        lateral = lateral - kernel.g_inh * f.sum()
    return lateral


def field_step(field, s, kernel):
    """One Euler step; returns a new Field.

    Parameters
    ----------
    field : Field
    s : 2d numpy array
        External input at the field resolution.
    kernel : Kernel

    """
    s = np.asarray(s, dtype=float)
    if s.shape != field.u.shape:
        raise StructuralError('input of shape %r does not match field %r'
                              % (s.shape, field.u.shape))
    p = field.params
    du = -field.u + _resting_level(field, kernel) + s \
        + lateral_input(field, kernel)
    return replace(field, u=field.u + (p.dt / p.tau) * du)


def relax(field, s, kernel, steps):
    """Apply ``steps`` Euler steps with constant input."""
    for _ in range(int(steps)):
        field = field_step(field, s, kernel)
    return field


def detect_peaks(field, threshold=0.0, min_separation=0.0):
    """Connected supra-threshold regions, heaviest first.

    Parameters
    ----------
    field : Field
    threshold : float
        Must exceed the resting level.
    min_separation : float
        Peaks whose centroids lie closer than this (cells) are merged.

    Returns
    -------
    peaks : list of Peak

    """
    if not threshold > field.params.h:
        raise ConfigError('peak threshold %r must exceed resting level %r'
                          % (threshold, field.params.h))
    above = field.u > threshold
    labels, count = ndimage.label(above, structure=np.ones((3, 3)))
    if count == 0:
        return []
    index = np.arange(1, count + 1)
    weights = np.where(above, field.u - threshold, 0.0)
    masses = ndimage.sum_labels(weights, labels, index)
    centers = ndimage.center_of_mass(weights, labels, index)
    heights = ndimage.maximum(field.u, labels, index)
    raw = sorted((Peak(cx, cy, m, top) for (cy, cx), m, top
                  in zip(centers, masses, heights)),
                 key=lambda p: -p.mass)
    merged = []
    for peak in raw:
        for kept in merged:
            if np.hypot(kept.x - peak.x, kept.y - peak.y) < min_separation:
                total = kept.mass + peak.mass
                kept.x = (kept.x * kept.mass + peak.x * peak.mass) / total
                kept.y = (kept.y * kept.mass + peak.y * peak.mass) / total
                kept.mass = total
                kept.height = max(kept.height, peak.height)
                break
        else:
            merged.append(peak)
    merged.sort(key=lambda p: -p.mass)
    return merged


def gaussian_bump(resolution, x, y, sigma, amplitude=1.0):
    """Gaussian input centered at cell ``(x, y)``."""
    yy, xx = np.mgrid[0:resolution.height, 0:resolution.width]
    return amplitude * np.exp(-((xx - x) ** 2 + (yy - y) ** 2)
                              / (2.0 * sigma ** 2))


def field_pgm(field, peaks=None):
    """16-bit PGM snapshot of the activation, peaks marked.

    Activations outside the 0.25 and 99.75 percentiles are clipped before
    scaling.
    """
    gray = to_graymap(field.u, truncate=True)
    if peaks:
        gray = mark_points(gray, [p.centroid for p in peaks], level=0)
    return pgm_bytes(gray, comment='dnf field %s' % field.resolution)


def write_field_pgm(path, field, peaks=None):
    with open(path, 'wb') as fobj:
        fobj.write(field_pgm(field, peaks))
