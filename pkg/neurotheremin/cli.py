"""Command line entry point.

    neurotheremin synth  --seed 1 --out hands.evt
    neurotheremin track  hands.evt --out hands.csv --field-dir fields
    neurotheremin show   --seed 1 --report run.txt --wav run.wav
    neurotheremin proto  --seed 1 --loss 0.05 --fuzz
    neurotheremin power  --cluster-kw 6.5 --board-w 120 --boards 10
    neurotheremin report run.txt
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from neurotheremin import __version__, dnf
from neurotheremin.aer import (ChannelConfig, SafeSender, TimedSpike,
                               describe_frame, single_bit_fuzz)
from neurotheremin.config import from_dict, load_json, to_dict
from neurotheremin.core import (INPUT_RESOLUTION, inject_distractors,
                                read_events, synth_hand_events,
                                waving_hands, write_events)
from neurotheremin.errors import NeuroThereminError, StructuralError
from neurotheremin.harness import (add_tremor, format_bench, format_report,
                                   load_sim_config, metrics_report,
                                   parse_report, power_ratio, protocol_bench,
                                   render_report, run_show)
from neurotheremin.theremin import (PitchCalibration, read_score,
                                    render_trace, score_to_trajectory,
                                    write_wav)
from neurotheremin.tracker import (TrackerConfig, format_estimates,
                                   overlay_frame, overlay_pgm, track_stream)

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'


def _cmd_synth(args):
    if args.score:
        trajectory = score_to_trajectory(read_score(args.score),
                                         PitchCalibration(), args.tempo)
        trajectory = add_tremor(trajectory, args.tremor, 200000)
    else:
        trajectory = waving_hands(int(args.duration_ms * 1000))
    events = synth_hand_events(trajectory, args.blob_radius,
                               args.contrast_threshold, args.rate_scale,
                               INPUT_RESOLUTION, args.seed)
    if args.distractors and events.size:
        events = inject_distractors(events, args.distractors,
                                    INPUT_RESOLUTION, args.seed + 1)
    write_events(args.out, events, INPUT_RESOLUTION)
    print('%d events written to %s' % (events.size, args.out))
    return 0


def _field_writer(directory, every):
    """``on_step`` callback writing every ``every``-th field snapshot."""
    os.makedirs(directory, exist_ok=True)

    def on_step(state, estimate):
        if (state.steps - 1) % every:
            return
        cfg = state.config
        peaks = dnf.detect_peaks(state.field, cfg.peak_threshold,
                                 cfg.min_separation)
        dnf.write_field_pgm(os.path.join(directory,
                                         'field_%010d.pgm' % estimate.t),
                            state.field, peaks)

    return on_step


def _cmd_track(args):
    data = load_json(args.config) if args.config else {}
    if args.detector:
        data['detector'] = args.detector
    config = from_dict(TrackerConfig, data)
    events, resolution = read_events(args.events)
    if resolution != config.input_res:
        raise StructuralError('events at %s, tracker expects %s'
                              % (resolution, config.input_res))
    on_step = None
    if args.field_dir:
        on_step = _field_writer(args.field_dir, args.overlay_every)
    estimates, _ = track_stream(events, config, on_step=on_step)
    text = format_estimates(estimates)
    if args.out:
        with open(args.out, 'w') as fobj:
            fobj.write(text)
    else:
        sys.stdout.write(text)
    if args.overlay_dir:
        os.makedirs(args.overlay_dir, exist_ok=True)
        for est in estimates[::args.overlay_every]:
            path = os.path.join(args.overlay_dir, 'frame_%010d.pgm' % est.t)
            with open(path, 'wb') as fobj:
                fobj.write(overlay_pgm(overlay_frame(events, est, config),
                                       est, config.input_res))
    return 0


def _cmd_show(args):
    cfg = load_sim_config(args.config, seed=args.seed,
                          scenario_path=args.scenario, workers=args.workers)
    if args.score:
        cfg = replace(cfg, performer=replace(cfg.performer,
                                             score_path=args.score))
    if args.save_config:
        with open(args.save_config, 'w') as fobj:
            json.dump(to_dict(cfg), fobj, indent=2, sort_keys=True)
    report = run_show(cfg)
    if args.report:
        with open(args.report, 'w') as fobj:
            fobj.write(format_report(report))
    if args.wav and report.control:
        write_wav(args.wav, render_trace(report.control, args.sample_rate),
                  args.sample_rate)
    sys.stdout.write(metrics_report(report))
    return 0


def _cmd_proto(args):
    counts = tuple(int(c) for c in args.counts.split(','))
    channel = ChannelConfig(args.loss, args.bitflip, args.delay, args.jitter,
                            args.reorder, args.seed)
    rows, stats = protocol_bench(counts, channel, args.seed)
    sys.stdout.write(format_bench(rows, stats))
    if args.fuzz or args.describe:
        rng = np.random.default_rng(args.seed)
        spikes = [TimedSpike(int(a), float(v), 0) for a, v in zip(
            rng.integers(0, INPUT_RESOLUTION.size, 100),
            rng.integers(-2000, 2000, 100) / 16.0)]
        frame = SafeSender().encode_batch(spikes, 0)
        if args.describe:
            print(describe_frame(frame))
        if args.fuzz:
            outcomes = single_bit_fuzz(frame)
            total = sum(outcomes.values())
            print('single-bit fuzz over %d flips: %s' % (total, ', '.join(
                '%s=%d' % kv for kv in sorted(outcomes.items()))))
            if outcomes['accepted']:
                return 1
    return 0


def _cmd_power(args):
    print('%.2f' % power_ratio(args.cluster_kw, args.board_w, args.boards))
    return 0


def _cmd_report(args):
    with open(args.path) as fobj:
        values = parse_report(fobj.read())
    sys.stdout.write(render_report(values))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog='neurotheremin',
        description='Event-based theremin duet simulator.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help='synthesize an EVT1 event file')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--score', help='play this score instead of waving')
    p.add_argument('--tempo', type=float, default=1.0)
    p.add_argument('--tremor', type=float, default=3.0)
    p.add_argument('--duration-ms', type=float, default=5000.0)
    p.add_argument('--blob-radius', type=float, default=8.0)
    p.add_argument('--contrast-threshold', type=float, default=0.15)
    p.add_argument('--rate-scale', type=float, default=1.0)
    p.add_argument('--distractors', type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser('track', help='track hands in an EVT1 file')
    p.add_argument('events')
    p.add_argument('--out')
    p.add_argument('--config', help='JSON tracker configuration')
    p.add_argument('--detector', choices=('blob', 'sd_net'))
    p.add_argument('--overlay-dir')
    p.add_argument('--field-dir', help='write DNF field snapshots here')
    p.add_argument('--overlay-every', type=int, default=10)
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser('show', help='run a show scenario')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--config', help='JSON simulation configuration')
    p.add_argument('--scenario')
    p.add_argument('--score')
    p.add_argument('--workers', type=int)
    p.add_argument('--report', help='write key=value report here')
    p.add_argument('--save-config',
                   help='write the effective configuration as JSON')
    p.add_argument('--wav', help='render the synthesizer trace')
    p.add_argument('--sample-rate', type=int, default=8000)
    p.set_defaults(func=_cmd_show)

    p = sub.add_parser('proto', help='wire overhead bench and fuzzing')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--counts', default='1,10,100,1000')
    p.add_argument('--loss', type=float, default=0.0)
    p.add_argument('--bitflip', type=float, default=0.0)
    p.add_argument('--delay', type=float, default=0.0)
    p.add_argument('--jitter', type=float, default=0.0)
    p.add_argument('--reorder', type=int, default=0)
    p.add_argument('--fuzz', action='store_true')
    p.add_argument('--describe', action='store_true')
    p.set_defaults(func=_cmd_proto)

    p = sub.add_parser('power', help='cluster to board power ratio')
    p.add_argument('--cluster-kw', type=float, default=6.5)
    p.add_argument('--board-w', type=float, default=120.0)
    p.add_argument('--boards', type=int, default=10)
    p.set_defaults(func=_cmd_power)

    p = sub.add_parser('report', help='render a key=value run report')
    p.add_argument('path')
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose
                        else logging.WARNING, format=LOG_FORMAT)
    try:
        return args.func(args)
    except (NeuroThereminError, OSError) as err:
        logger.error('%s failed: %s', args.command, err)
        return 1


if __name__ == '__main__':
    sys.exit(main())
