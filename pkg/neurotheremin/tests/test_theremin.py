"""Test the theremin control model."""

import io

import numpy as np
import pytest
from scipy.io import wavfile

from neurotheremin.core import trajectory_positions
from neurotheremin.errors import CodecError, ConfigError, StructuralError
from neurotheremin.theremin import (
    ControlPoint, HandGeometry, Note, PitchCalibration, Score, c_major_scale,
    calibrate_pitch, calibration_residual, cents, cents_per_pixel, drifted,
    format_score, hands_to_control, in_ramp, note_freq, note_targets,
    parse_score, probe_instrument, read_score, recalibrate, render_trace,
    score_to_control, score_to_trajectory, wav_bytes, write_wav)
from neurotheremin.tracker import PITCH_HAND, VOLUME_HAND, Hand, HandEstimate

GEOMETRY = HandGeometry()


def _estimate(d_pitch, h_volume=None, t=0):
    hands = [Hand(PITCH_HAND, GEOMETRY.pitch_antenna_x
                  + d_pitch / GEOMETRY.pixel_to_meter, 80.0, 1.0)]
    if h_volume is not None:
        hands.append(Hand(VOLUME_HAND, 190.0, GEOMETRY.volume_base_y
                          - h_volume / GEOMETRY.pixel_to_meter, 1.0))
    return HandEstimate(t, tuple(hands))


@pytest.mark.parametrize('midi, freq', [
    (69, 440.0), (60, 261.6256), (72, 523.2511)])
def test_note_freq(midi, freq):
    """Test equal-temperament frequencies."""
    assert note_freq(midi) == pytest.approx(freq, abs=1e-4)


def test_note_freq_octave():
    assert note_freq(72) == pytest.approx(2 * note_freq(60), rel=1e-12)


@pytest.mark.parametrize('midi', [-1, 128, 60.5])
def test_note_freq_out_of_range(midi):
    with pytest.raises(ValueError):
        note_freq(midi)


def test_hands_to_control_octave_above():
    """Test the closed-form example one octave above the reference."""
    # Given
    cal = PitchCalibration(0.40, 261.6256, 0.24)
    # When
    point = hands_to_control(_estimate(0.16), cal)
    # Then
    assert point.freq == pytest.approx(523.2512, rel=1e-9)
    assert point.amp == 1.0


def test_hands_to_control_reference_distance():
    cal = PitchCalibration()
    point = hands_to_control(_estimate(cal.d_ref), cal)
    assert point.freq == pytest.approx(cal.f_ref, rel=1e-12)


def test_hands_to_control_volume():
    """Test the volume boundaries and clamping."""
    cal = PitchCalibration()
    assert hands_to_control(_estimate(0.3, 0.0), cal).amp == 0.0
    assert hands_to_control(_estimate(0.3, 0.2), cal).amp == pytest.approx(0.5)
    assert hands_to_control(_estimate(0.3, 0.6), cal).amp == 1.0
    assert hands_to_control(_estimate(0.3, 0.1), cal,
                            vol_range=(0.1, 0.3)).amp == pytest.approx(
        0.0, abs=1e-12)


def test_hands_to_control_needs_pitch_hand():
    estimate = HandEstimate(0, (Hand(VOLUME_HAND, 190.0, 100.0, 1.0),))
    with pytest.raises(StructuralError):
        hands_to_control(estimate, PitchCalibration())


def test_pitch_map_monotone_and_octave_law():
    """Test that pitch falls with distance, one octave per octave_dist."""
    # Given
    cal = PitchCalibration()
    d = np.linspace(0.05, 0.6, 200)
    # When
    f = cal.freq(d)
    # Then
    assert np.all(np.diff(f) < 0)
    np.testing.assert_allclose(cal.freq(d - cal.octave_dist), 2 * f,
                               rtol=1e-12)


def test_cents_per_pixel():
    assert cents_per_pixel(PitchCalibration(), GEOMETRY) == pytest.approx(20.0)


def test_scale_roundtrip_within_one_cent():
    """Test score to trajectory to control on the C4-C5 scale."""
    # Given
    score = c_major_scale(duration_ms=400)
    cal = PitchCalibration()
    # When
    points = score_to_control(score, cal, step_us=5000)
    times = np.array([p.t for p in points])
    keep = ~in_ramp(score, times) & (times < score.duration_ms * 1000)
    error = cents([p.freq for p in points], note_targets(score, times))
    # Then
    assert len(points) == 641
    assert keep.sum() > 500
    assert np.max(np.abs(error[keep])) < 1.0


def test_single_note_holds_reference_distance():
    """Test that C4 sits at d_ref for its whole duration."""
    # Given
    score = Score((Note(60, 1000),))
    cal = PitchCalibration()
    # When
    traj = score_to_trajectory(score, cal)
    x, _, active = trajectory_positions(traj, 'right',
                                        np.linspace(0, 1e6, 11))
    # Then
    assert active.all()
    np.testing.assert_allclose(GEOMETRY.pitch_distance(x), cal.d_ref,
                               rtol=1e-12)


def test_volume_ramp():
    """Test a linear volume ramp from h_min to h_max."""
    # Given
    score = Score((Note(60, 1000),), ((0, 0.0), (1000, 1.0)))
    # When
    traj = score_to_trajectory(score, PitchCalibration())
    _, y, _ = trajectory_positions(traj, 'left', [0, 500000, 1000000])
    # Then
    np.testing.assert_allclose(GEOMETRY.volume_height(y),
                               [0.0, 0.2, 0.4], atol=1e-12)


def test_ramp_reaches_next_note():
    """Test the transition ramp between two notes."""
    # Given
    score = Score((Note(60, 500), Note(72, 500)))
    cal = PitchCalibration()
    traj = score_to_trajectory(score, cal, ramp_ms=30)
    # When
    x, _, _ = trajectory_positions(traj, 'right', [500000, 515000, 530000])
    # Then
    d = GEOMETRY.pitch_distance(x)
    np.testing.assert_allclose(d, [0.40, 0.28, 0.16], rtol=1e-9)


def test_tempo_scales_durations():
    score = c_major_scale(duration_ms=400)
    traj = score_to_trajectory(score, PitchCalibration(), tempo=2.0)
    assert traj.span() == (0, 1600000)


def test_unrepresentable_note():
    """Test a note that would need a negative distance."""
    with pytest.raises(StructuralError):
        score_to_trajectory(Score((Note(100, 500),)), PitchCalibration())


def test_note_shorter_than_ramp():
    with pytest.raises(ConfigError):
        score_to_trajectory(Score((Note(60, 500), Note(62, 20))),
                            PitchCalibration())


def test_score_text_roundtrip(tmp_path):
    """Test the line-oriented score format."""
    # Given
    text = '# scale\nNOTE 60 500\nNOTE 62 250.5\nVOL 0 0.5\nVOL 750 1\n'
    path = tmp_path / 'duet.score'
    path.write_text(text)
    # When
    score = read_score(str(path))
    # Then
    assert score.notes == (Note(60, 500), Note(62, 250.5))
    assert score.volumes == ((0.0, 0.5), (750.0, 1.0))
    assert parse_score(format_score(score)) == score


@pytest.mark.parametrize('text', [
    'NOTE 60\n',
    'NOTE sixty 500\n',
    'NOTE 60 -5\n',
    'PLAY 60 500\n',
    'VOL 10 0.5\nVOL 5 0.5\n',
    'VOL 0 1.5\n',
])
def test_score_malformed(text):
    with pytest.raises(CodecError):
        parse_score(text)


def test_calibration_recovers_model():
    """Test noiseless recovery of the calibration."""
    # Given
    truth = PitchCalibration(0.40, 250.0, 0.3)
    samples = probe_instrument(truth, np.linspace(0.1, 0.6, 7))
    # When
    fit = calibrate_pitch(samples)
    # Then
    assert fit.f_ref == pytest.approx(truth.f_ref, rel=1e-9)
    assert fit.octave_dist == pytest.approx(truth.octave_dist, rel=1e-9)
    refit = calibrate_pitch(probe_instrument(fit, [0.2, 0.5]))
    assert refit.f_ref == pytest.approx(fit.f_ref, rel=1e-9)
    assert refit.octave_dist == pytest.approx(fit.octave_dist, rel=1e-9)


def test_calibration_two_points_exact():
    samples = [(0.2, 300.0), (0.5, 200.0)]
    fit = calibrate_pitch(samples)
    assert calibration_residual(fit, samples) == pytest.approx(0.0, abs=1e-20)
    assert fit.freq(0.2) == pytest.approx(300.0, rel=1e-12)


def test_calibration_beats_grid():
    """Test the fit against a brute-force parameter grid."""
    # Given
    truth = PitchCalibration()
    samples = probe_instrument(truth, np.linspace(0.1, 0.5, 15),
                               noise_cents=10.0, seed=3)
    # When
    fit = calibrate_pitch(samples)
    best = calibration_residual(fit, samples)
    # Then
    for f_ref in np.linspace(240.0, 285.0, 100):
        for s in np.linspace(0.18, 0.30, 100):
            candidate = PitchCalibration(0.40, f_ref, s)
            assert best <= calibration_residual(candidate, samples) + 1e-15


def test_calibration_errors():
    with pytest.raises(ConfigError):
        calibrate_pitch([(0.2, 300.0), (0.2, 310.0)])
    with pytest.raises(ConfigError):
        calibrate_pitch([(0.2, 200.0), (0.4, 300.0)])


def test_recalibration_follows_drift():
    """Test that probing a drifted instrument restores the pitch map."""
    # Given
    nominal = PitchCalibration()
    instrument = drifted(nominal, drift_cents=35.0, octave_scale=1.05)
    # When
    fit = recalibrate(instrument)
    # Then
    d = np.linspace(0.1, 0.5, 5)
    np.testing.assert_allclose(fit.freq(d), instrument.freq(d), rtol=1e-9)
    assert np.all(np.abs(cents(nominal.freq(d), instrument.freq(d))) > 1)


def test_render_wav_size():
    """Test the data chunk of one second at 8 kHz."""
    # Given
    points = [ControlPoint(0, 440.0, 1.0), ControlPoint(1000000, 440.0, 1.0)]
    # When
    data = wav_bytes(render_trace(points, 8000), 8000)
    # Then
    index = data.index(b'data')
    assert int.from_bytes(data[index + 4:index + 8], 'little') == 16000
    rate, pcm = wavfile.read(io.BytesIO(data))
    assert rate == 8000 and pcm.dtype == np.int16 and pcm.size == 8000


def test_render_pitch():
    """Test that the rendered tone has the requested frequency."""
    points = [ControlPoint(0, 440.0, 1.0), ControlPoint(1000000, 440.0, 1.0)]
    pcm = render_trace(points, 8000).astype(float)
    spectrum = np.abs(np.fft.rfft(pcm))
    assert np.argmax(spectrum) == 440


def test_render_silence():
    points = [ControlPoint(0, 440.0, 0.0), ControlPoint(500000, 880.0, 0.0)]
    assert not np.any(render_trace(points, 8000))


def test_render_zero_vibrato_is_identity():
    points = [ControlPoint(0, 300.0, 0.8), ControlPoint(250000, 500.0, 0.4)]
    np.testing.assert_array_equal(render_trace(points, 16000),
                                  render_trace(points, 16000, (0.0, 5.0)))


def test_render_vibrato_changes_output():
    points = [ControlPoint(0, 300.0, 0.8), ControlPoint(250000, 300.0, 0.8)]
    assert np.any(render_trace(points, 8000)
                  != render_trace(points, 8000, (50.0, 6.0)))


def test_render_sample_rate_floor():
    with pytest.raises(ConfigError):
        render_trace([ControlPoint(0, 440.0, 1.0)], 4000)


def test_write_wav(tmp_path):
    path = str(tmp_path / 'tone.wav')
    write_wav(path, np.zeros(800, dtype=np.int16), 8000)
    rate, pcm = wavfile.read(path)
    assert rate == 8000 and pcm.size == 800
