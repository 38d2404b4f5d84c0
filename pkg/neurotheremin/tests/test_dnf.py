"""Test dynamic neural field functions."""

import numpy as np
import pytest

from neurotheremin.core import CHIP_RESOLUTION
from neurotheremin.dnf import (
    SELECTIVE, Field, FieldParams, KernelParams, detect_peaks, field_pgm,
    field_step, gaussian_bump, make_kernel, relax)
from neurotheremin.errors import ConfigError, StructuralError
from neurotheremin.utils import read_pgm

ZERO_KERNEL = KernelParams(c_exc=0.0, c_inh=0.0)


def _count_peaks(field):
    return len(detect_peaks(field, threshold=0.0, min_separation=3.0))


def test_field_params_validation():
    """Test the parameter invariants."""
    with pytest.raises(ConfigError):
        FieldParams(tau=1.0, dt=2.0)
    with pytest.raises(ConfigError):
        FieldParams(h=0.5)
    with pytest.raises(ConfigError):
        KernelParams(sigma_exc=6.0, sigma_inh=3.0)
    with pytest.raises(ConfigError):
        KernelParams(g_inh=-1.0)


def test_kernel_single_gaussian_non_negative():
    """Test that no inhibition gives a non-negative kernel."""
    # Given
    kp = KernelParams(c_inh=0.0, g_inh=0.0)
    # When
    kernel = make_kernel(kp, radius=10)
    # Then
    assert np.all(kernel.weights >= 0)


def test_kernel_center_and_symmetry():
    """Test k(0) and radial symmetry."""
    # Given
    kp = KernelParams()
    # When
    k = make_kernel(kp).weights
    c = k.shape[0] // 2
    # Then
    assert k.shape == (37, 37)
    assert k[c, c] == pytest.approx(kp.c_exc - kp.c_inh)
    assert k[c + 4, c + 3] == pytest.approx(k[c + 3, c + 4])
    assert k[c + 4, c + 3] == pytest.approx(k[c + 4, c - 3])


def test_field_step_fixed_point():
    """Test that the resting level is an exact fixed point."""
    # Given
    field = Field.at_rest(CHIP_RESOLUTION)
    kernel = make_kernel(ZERO_KERNEL)
    # When
    out = field_step(field, np.zeros(CHIP_RESOLUTION.shape), kernel)
    # Then
    np.testing.assert_array_equal(out.u, field.u)


def test_field_step_geometric_decay():
    """Test decay towards h with ratio 1 - dt/tau."""
    # Given
    params = FieldParams()
    rng = np.random.default_rng(0)
    u = params.h + rng.uniform(-3, 3, size=CHIP_RESOLUTION.shape)
    field = Field(u, CHIP_RESOLUTION, params)
    kernel = make_kernel(ZERO_KERNEL)
    s = np.zeros(CHIP_RESOLUTION.shape)
    distances = [np.max(np.abs(field.u - params.h))]
    for _ in range(20):
        # When
        new = field_step(field, s, kernel)
        # Then
        np.testing.assert_allclose(new.u - params.h,
                                   0.9 * (field.u - params.h),
                                   rtol=1e-9, atol=1e-12)
        field = new
        distances.append(np.max(np.abs(field.u - params.h)))
    assert all(b < a for a, b in zip(distances[:-1], distances[1:]))


def test_field_step_shape_mismatch():
    """Test rejection of a wrongly sized input."""
    field = Field.at_rest(CHIP_RESOLUTION)
    with pytest.raises(StructuralError):
        field_step(field, np.zeros((10, 10)), make_kernel(KernelParams()))


@pytest.mark.parametrize('kind', ['bump', 'noise'])
def test_single_step_impulse_rejected(kind):
    """Test that a one-step input never forms a peak."""
    # Given
    params = FieldParams()
    kernel = make_kernel(KernelParams())
    if kind == 'bump':
        s = gaussian_bump(CHIP_RESOLUTION, 43, 32, 3.0, amplitude=6.0)
    else:
        s = np.random.default_rng(1).uniform(0, 6, size=CHIP_RESOLUTION.shape)
    zero = np.zeros(CHIP_RESOLUTION.shape)
    # When
    field = field_step(Field.at_rest(CHIP_RESOLUTION, params), s, kernel)
    counts = [_count_peaks(field)]
    for _ in range(int(5 * params.tau / params.dt)):
        field = field_step(field, zero, kernel)
        counts.append(_count_peaks(field))
    # Then
    assert max(counts) == 0


def test_peak_persists_on_weak_input():
    """Test a self-sustained peak after the input drops to 20%."""
    # Given
    kernel = make_kernel(KernelParams())
    s = gaussian_bump(CHIP_RESOLUTION, 43, 32, 3.0, amplitude=6.0)
    field = relax(Field.at_rest(CHIP_RESOLUTION), s, kernel, 200)
    assert _count_peaks(field) == 1
    # When
    counts = []
    for _ in range(100):
        field = field_step(field, 0.2 * s, kernel)
        counts.append(_count_peaks(field))
    # Then
    assert min(counts) == 1
    peak = detect_peaks(field)[0]
    assert peak.x == pytest.approx(43, abs=0.5)
    assert peak.y == pytest.approx(32, abs=0.5)


def test_two_peaks_coexist_without_global_inhibition():
    """Test the multi-peak regime at separation > 4 sigma_inh."""
    # Given
    kp = KernelParams()
    kernel = make_kernel(kp)
    s = (gaussian_bump(CHIP_RESOLUTION, 22, 32, 3.0, amplitude=6.0)
         + gaussian_bump(CHIP_RESOLUTION, 62, 32, 3.0, amplitude=6.0))
    assert 62 - 22 > 4 * kp.sigma_inh
    # When
    field = relax(Field.at_rest(CHIP_RESOLUTION), s, kernel, 300)
    early = detect_peaks(field)
    field = relax(field, s, kernel, 200)
    late = detect_peaks(field)
    # Then
    assert len(early) == 2 and len(late) == 2
    xs = sorted(p.x for p in late)
    assert xs[0] == pytest.approx(22, abs=1.0)
    assert xs[1] == pytest.approx(62, abs=1.0)


def test_selective_mode_single_winner():
    """Test that global inhibition leaves exactly one peak."""
    # Given
    kernel = make_kernel(SELECTIVE)
    s = (gaussian_bump(CHIP_RESOLUTION, 22, 32, 3.0, amplitude=6.0)
         + gaussian_bump(CHIP_RESOLUTION, 62, 32, 3.0, amplitude=6.0))
    # When
    start = Field.at_rest(CHIP_RESOLUTION, FieldParams(beta=4.0))
    field = relax(start, s, kernel, 600)
    peaks = detect_peaks(field)
    # Then
    assert len(peaks) == 1
    assert peaks[0].x == pytest.approx(22, abs=2.0)  # earlier in scan order


def test_symmetric_input_gives_centred_peak():
    """Test that a peak settles on the centre of a symmetric input."""
    # Given
    kernel = make_kernel(KernelParams())
    s = gaussian_bump(CHIP_RESOLUTION, 40, 30, 3.0, amplitude=6.0)
    # When
    field = relax(Field.at_rest(CHIP_RESOLUTION), s, kernel, 300)
    peaks = detect_peaks(field)
    # Then
    assert len(peaks) == 1
    assert peaks[0].centroid == pytest.approx((40.0, 30.0), abs=1e-6)
    np.testing.assert_allclose(field.u[30, 36:40], field.u[30, 44:40:-1],
                               atol=1e-6)
    np.testing.assert_allclose(field.u[26:30, 40], field.u[34:30:-1, 40],
                               atol=1e-6)


def test_translation_equivariance():
    """Test that shifting the input shifts the steady-state peak."""
    # Given
    kernel = make_kernel(KernelParams())
    s1 = gaussian_bump(CHIP_RESOLUTION, 40, 30, 3.0, amplitude=6.0)
    s2 = gaussian_bump(CHIP_RESOLUTION, 45, 33, 3.0, amplitude=6.0)
    # When
    f1 = relax(Field.at_rest(CHIP_RESOLUTION), s1, kernel, 300)
    f2 = relax(Field.at_rest(CHIP_RESOLUTION), s2, kernel, 300)
    p1, p2 = detect_peaks(f1), detect_peaks(f2)
    # Then
    assert len(p1) == 1 and len(p2) == 1
    assert p2[0].x - p1[0].x == pytest.approx(5.0, abs=1e-6)
    assert p2[0].y - p1[0].y == pytest.approx(3.0, abs=1e-6)
    np.testing.assert_allclose(f2.u[23:43, 35:55], f1.u[20:40, 30:50],
                               atol=1e-6)


def test_detect_peaks_below_threshold():
    """Test that a resting field has no peaks."""
    assert detect_peaks(Field.at_rest(CHIP_RESOLUTION)) == []


def test_detect_peaks_constructed_bumps():
    """Test centroids and ordering of two constructed bumps."""
    # Given
    u = (-5.0 + gaussian_bump(CHIP_RESOLUTION, 10, 10, 2.0, amplitude=10.0)
         + gaussian_bump(CHIP_RESOLUTION, 60, 40, 3.0, amplitude=10.0))
    field = Field(u, CHIP_RESOLUTION)
    # When
    peaks = detect_peaks(field, threshold=0.0, min_separation=5.0)
    # Then
    assert len(peaks) == 2
    assert peaks[0].mass > peaks[1].mass > 0
    assert peaks[0].centroid == pytest.approx((60.0, 40.0), abs=0.5)
    assert peaks[1].centroid == pytest.approx((10.0, 10.0), abs=0.5)


def test_detect_peaks_single_bump_symmetric():
    """Test that a symmetric bump has its centroid at the center."""
    # Given
    u = -5.0 + gaussian_bump(CHIP_RESOLUTION, 30, 20, 2.5, amplitude=12.0)
    # When
    peaks = detect_peaks(Field(u, CHIP_RESOLUTION))
    # Then
    assert len(peaks) == 1
    assert peaks[0].centroid == pytest.approx((30.0, 20.0), abs=1e-9)


def test_detect_peaks_merges_close_regions():
    """Test merging of regions closer than min_separation."""
    # Given
    u = np.full(CHIP_RESOLUTION.shape, -5.0)
    u[10, 10] = 1.0
    u[10, 14] = 3.0
    field = Field(u, CHIP_RESOLUTION)
    # When
    apart = detect_peaks(field, min_separation=2.0)
    merged = detect_peaks(field, min_separation=6.0)
    # Then
    assert len(apart) == 2
    assert len(merged) == 1
    assert merged[0].mass == pytest.approx(4.0)
    assert merged[0].x == pytest.approx(13.0)


def test_detect_peaks_threshold_above_rest():
    """Test that the threshold must exceed the resting level."""
    with pytest.raises(ConfigError):
        detect_peaks(Field.at_rest(CHIP_RESOLUTION), threshold=-6.0)


def test_field_pgm_snapshot():
    """Test the 16-bit graymap export."""
    # Given
    u = -5.0 + gaussian_bump(CHIP_RESOLUTION, 30, 20, 2.5, amplitude=12.0)
    field = Field(u, CHIP_RESOLUTION)
    # When
    gray = read_pgm(field_pgm(field))
    # Then
    assert gray.shape == (65, 86)
    assert gray[20, 30] == 65535
    assert gray.min() == 0


def test_field_pgm_clips_outliers():
    """Test that one runaway cell does not wash out the peak."""
    # Given
    u = -5.0 + gaussian_bump(CHIP_RESOLUTION, 30, 20, 2.5, amplitude=4.0)
    u[5, 5] = 1000.0
    field = Field(u, CHIP_RESOLUTION)
    # When
    gray = read_pgm(field_pgm(field))
    # Then
    assert gray[5, 5] == 65535
    assert gray[20, 30] == 65535
    assert gray.min() == 0
