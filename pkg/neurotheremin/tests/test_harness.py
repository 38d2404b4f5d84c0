"""Test the show simulator, reports, bench and power arithmetic."""

import dataclasses
import json

import numpy as np
import pytest

from neurotheremin.aer import ChannelConfig, ReceivedSpike
from neurotheremin.config import to_dict
from neurotheremin.errors import ConfigError, StageError
from neurotheremin.harness import (
    STAGES, EnergyConstants, PerformerConfig, SimConfig, add_tremor,
    energy_estimates, estimate_spikes, format_report, load_sim_config,
    metrics_report, parse_report, power_ratio, protocol_bench,
    real_time_factor, render_report, rtf_flag, run_show, segment_seeds,
    spikes_to_estimates)
from neurotheremin.core import waving_hands
from neurotheremin.orchestrator import ShowState
from neurotheremin.tracker import PITCH_HAND, VOLUME_HAND, Hand, HandEstimate

DUET_TEACHING = ('AT 0 INTENT StartConversation\n'
                 'AT 100 INTENT AskDuet\n'
                 'AT 900 INTENT Done\n'
                 'AT 1000 INTENT AskTeaching\n')
SOLO = 'AT 0 INTENT StartConversation\nAT 100 INTENT AskSolo\n'
CALIBRATED_SOLO = ('AT 0 INTENT StartConversation\n'
                   'AT 100 INTENT RequestCalibration\n'
                   'AT 800 INTENT Done\n'
                   'AT 900 INTENT AskSolo\n')


def _config(tmp_path, scenario, **kwargs):
    path = tmp_path / 'show.scn'
    path.write_text(scenario)
    performer = kwargs.pop('performer', PerformerConfig(note_ms=100.0))
    return SimConfig(seed=kwargs.pop('seed', 7), scenario_path=str(path),
                     performer=performer, **kwargs)


@pytest.fixture(scope='module')
def duet_run(tmp_path_factory):
    cfg = _config(tmp_path_factory.mktemp('duet'), DUET_TEACHING)
    return cfg, run_show(cfg)


@pytest.mark.parametrize('cluster_kw, board_w, boards, ratio', [
    (6.5, 120, 10, 5.42), (6.5, 48, 10, 13.54), (6.5, 650, 1, 10.0)])
def test_power_ratio(cluster_kw, board_w, boards, ratio):
    assert round(power_ratio(cluster_kw, board_w, boards), 2) == ratio


@pytest.mark.parametrize('args', [(6.5, 0, 10), (6.5, 120, 0), (0, 48, 10)])
def test_power_ratio_rejects_zero(args):
    with pytest.raises(ValueError):
        power_ratio(*args)


def test_real_time_factor():
    """Test the sub-real-time flag of 4.5 s simulated in 10 s."""
    rtf = real_time_factor(4500000, 10.0)
    assert rtf == pytest.approx(0.45)
    assert rtf_flag(rtf) == 'sub-real-time'
    assert real_time_factor(10000000, 5.0) == pytest.approx(2.0)
    assert rtf_flag(2.0) == 'real-time'
    with pytest.raises(ConfigError):
        real_time_factor(1000, 0.0)


def test_render_report_flags_rtf():
    text = render_report(parse_report('simulated_us=4500000\nrtf=0.45\n'))
    assert text.splitlines()[-1].split() == ['rtf_flag', 'sub-real-time']


def test_protocol_bench_overheads():
    """Test measured bytes per event against the closed forms."""
    # When
    rows, stats = protocol_bench()
    # Then
    assert stats is None
    raw = [r for r in rows if r.profile == 'raw']
    safe = {r.count: r for r in rows if r.profile == 'safe'}
    assert all(r.bytes_per_event == 4.0 for r in raw)
    for count, row in safe.items():
        assert row.bytes_per_event == pytest.approx(22.0 / count + 8,
                                                    abs=0.01)
        assert row.bytes_per_event == pytest.approx(row.predicted)
    assert safe[1].bytes_per_event == 30.0
    assert safe[100].bytes_per_event == pytest.approx(8.22)


def test_protocol_bench_lossless_channel():
    _, stats = protocol_bench(counts=(10,), channel=ChannelConfig())
    assert stats.sent == stats.delivered == 20
    assert stats.lost == stats.corrupted_dropped == 0


def test_protocol_bench_lossy_channel_accounting():
    """Test that every sent frame is delivered, lost or dropped."""
    # Given
    channel = ChannelConfig(loss_p=0.1, bitflip_p=0.0005, seed=11)
    # When
    _, stats = protocol_bench(counts=(10,), channel=channel, batches=300)
    # Then
    assert stats.lost > 0
    assert stats.delivered + stats.lost + stats.corrupted_dropped \
        == stats.sent == 300


def test_sim_config_needs_seed():
    with pytest.raises(ConfigError):
        SimConfig()
    with pytest.raises(ConfigError):
        SimConfig(seed=-1)


def test_load_sim_config(tmp_path):
    # Given
    path = tmp_path / 'sim.json'
    path.write_text(json.dumps({
        'channel': {'loss_p': 0.1, 'seed': 3},
        'energy': {'board_w': [50, 100]},
        'performer': {'note_ms': 120}}))
    # When
    cfg = load_sim_config(str(path), seed=5)
    # Then
    assert cfg.seed == 5
    assert cfg.channel.loss_p == 0.1
    assert cfg.energy.board_w == (50, 100)
    assert cfg.performer.note_ms == 120
    assert cfg.tracker.window_us == 10000


def test_sim_config_json_roundtrip(tmp_path):
    # Given
    cfg = SimConfig(seed=3, channel=ChannelConfig(loss_p=0.2, seed=4),
                    performer=PerformerConfig(note_ms=90.0),
                    queue_capacity=64)
    path = tmp_path / 'saved.json'
    # When
    path.write_text(json.dumps(to_dict(cfg)))
    # Then
    assert load_sim_config(str(path)) == cfg


def test_sim_config_rejects_empty_queues():
    with pytest.raises(ConfigError):
        SimConfig(seed=1, queue_capacity=0)


def test_load_sim_config_unknown_key(tmp_path):
    path = tmp_path / 'sim.json'
    path.write_text(json.dumps({'seed': 1, 'speed': 2}))
    with pytest.raises(ConfigError):
        load_sim_config(str(path))


def test_energy_is_linear():
    """Test energy estimates against hand arithmetic."""
    energy = energy_estimates(EnergyConstants(), 2000000)
    assert energy['edge_tracker_j'] == pytest.approx(0.008)
    assert energy['gpu_alt_min_j'] == pytest.approx(10.0)
    assert energy['gpu_alt_max_j'] == pytest.approx(20.0)
    assert round(energy['cluster_ratio_min'], 2) == 5.42
    assert round(energy['cluster_ratio_max'], 2) == 13.54
    with pytest.raises(ConfigError):
        EnergyConstants(board_w=(120.0, 48.0))


def test_segment_seeds_are_fixed_by_seed():
    assert segment_seeds(3, 4) == segment_seeds(3, 4)
    assert segment_seeds(3, 4) != segment_seeds(4, 4)
    assert len(set(segment_seeds(3, 4))) == 4


def test_estimate_link_payload():
    """Test hand estimates regrouped from their coordinate spikes."""
    # Given
    estimates = [HandEstimate(10000, (Hand(PITCH_HAND, 70.5, 90.25, 0.5),
                                      Hand(VOLUME_HAND, 170.0, 88.0, 1.0))),
                 HandEstimate(20000, (Hand(PITCH_HAND, 71.0, 91.0, 0.25),))]
    # When
    times, addresses, values = estimate_spikes(estimates)
    back = spikes_to_estimates([ReceivedSpike(t, a, v) for t, a, v
                                in zip(times, addresses, values)])
    # Then
    assert len(times) == 9
    assert back == estimates


def test_add_tremor_keeps_hands_close():
    trajectory = waving_hands(200000)
    shaken = add_tremor(trajectory, 3.0, 100000)
    assert shaken.hands() == trajectory.hands()
    assert shaken.span() == trajectory.span()
    for hand in trajectory.hands():
        _, x0, y0 = trajectory.track(hand)
        _, x1, y1 = shaken.track(hand)
        assert np.max(np.hypot(x1 - x0, y1 - y0)) <= 6.0 + 1e-9
    assert add_tremor(trajectory, 0.0, 100000) is trajectory


def test_solo_matches_score(tmp_path):
    """Test that solo playback stays within one cent of the score."""
    # When
    report = run_show(_config(tmp_path, SOLO))
    # Then
    assert report.states == ('Conversing', 'Solo')
    assert report.solo_error_max_cents < 1.0
    assert report.dvs_events == 0 and report.pitch_error_cents is None
    assert report.simulated_us == 100000 + 800000
    assert report.control


def test_drifted_instrument_needs_calibration(tmp_path):
    """Test that calibration brings a drifted instrument back in tune."""
    # Given
    performer = PerformerConfig(note_ms=100.0, drift_cents=30.0)
    # When
    detuned = run_show(_config(tmp_path, SOLO, performer=performer))
    tuned = run_show(_config(tmp_path, CALIBRATED_SOLO, performer=performer))
    # Then
    assert detuned.solo_error_max_cents > 1.0
    assert tuned.states == ('Conversing', 'Calibrating', 'Conversing',
                            'Solo')
    assert tuned.solo_error_max_cents < 1.0


def test_duet_error_within_tracking_bound(duet_run):
    """Test the pitch error propagated from the tracking error."""
    _, report = duet_run
    assert report.states == ('Conversing', 'Duet', 'Conversing', 'Teaching')
    assert report.dvs_events > 0 and report.estimates > 0
    assert report.pitch_error_cents is not None
    assert report.pitch_error_cents <= report.pitch_error_bound_cents


def test_duet_error_sees_instrument_drift(tmp_path):
    """Test that a detuned instrument shows up in the duet pitch error."""
    # Given
    scenario = ('AT 0 INTENT StartConversation\n'
                'AT 100 INTENT AskDuet\n'
                'AT 900 INTENT Done\n')
    performer = PerformerConfig(note_ms=100.0, drift_cents=600.0)
    # When
    report = run_show(_config(tmp_path, scenario, performer=performer))
    # Then
    assert report.states == ('Conversing', 'Duet', 'Conversing')
    assert report.pitch_error_cents > report.pitch_error_bound_cents
    assert report.pitch_error_cents > 300


def test_duet_lossless_link(duet_run):
    _, report = duet_run
    link = report.link
    assert link.sent == link.delivered > 0
    assert link.lost == link.corrupted_dropped == link.reordered == 0
    assert link.overhead > 0


def test_teaching_routes_to_screen_only(duet_run):
    _, report = duet_run
    assert report.gui_messages > 0
    assert report.dropped_messages > 0


def test_latency_budget_closes(duet_run):
    """Test that stage latencies add up to the end-to-end latency."""
    cfg, report = duet_run
    mean = report.latency_mean_us
    assert mean['sensor'] == 220
    assert mean['end_to_end'] == pytest.approx(
        sum(mean[s] for s in STAGES))
    assert mean['network'] >= 0
    assert report.tracker_active_us == 800000 + 800000
    assert report.energy['edge_tracker_j'] == pytest.approx(0.004 * 1.6)


def test_report_is_deterministic(duet_run):
    """Test byte-identical reports across reruns and worker threads."""
    # Given
    cfg, report = duet_run
    # When
    again = run_show(cfg)
    threaded = run_show(dataclasses.replace(cfg, workers=2))
    # Then
    expected = format_report(report, include_wall=False)
    assert format_report(again, include_wall=False) == expected
    assert format_report(threaded, include_wall=False) == expected
    assert 'wall_s' not in expected
    assert 'rtf' in format_report(report)


def test_report_roundtrip(duet_run):
    _, report = duet_run
    values = parse_report(format_report(report))
    assert values['seed'] == '7'
    assert values['states'] == 'Conversing,Duet,Conversing,Teaching'
    assert 'link.sent' in metrics_report(report)


def test_stage_errors(tmp_path):
    """Test that failures name their stage."""
    with pytest.raises(StageError) as info:
        run_show(SimConfig(seed=1, scenario_path=str(tmp_path / 'none')))
    assert info.value.stage == 'scenario'

    score = tmp_path / 'high.score'
    score.write_text('NOTE 100 500\n')
    with pytest.raises(StageError) as info:
        run_show(_config(tmp_path, SOLO, performer=PerformerConfig(
            score_path=str(score))))
    assert info.value.stage == 'performer'

    score.write_text('NOTE 60\n')
    with pytest.raises(StageError) as info:
        run_show(_config(tmp_path, SOLO, performer=PerformerConfig(
            score_path=str(score))))
    assert info.value.stage == 'score'


def test_idle_scenario(tmp_path):
    report = run_show(_config(tmp_path, 'AT 0 INTENT None\n'))
    assert report.states == (ShowState.IDLE.value,)
    assert report.simulated_us == 0 and report.estimates == 0
