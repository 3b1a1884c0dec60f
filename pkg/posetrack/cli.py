"""
Command-line interface: synth-gen, train, track, eval and plot

Exit codes are 0 on success, 2 for usage and configuration errors and 3
when tracking is lost or training diverges.
"""
import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import (MetricsConfig, SynthConfig, TrackConfig, TrainConfig,
                     config_to_dict, data_root, load_config)
from .datasets import read_sequence, sequence_dirs
from .errors import (ConfigError, DatasetError, DomainError,
                     NonFiniteLossError, PoseTrackError, TrackingLostError)
from .geometry import CameraIntrinsics
from .metrics import MetricReport, error_accumulation, evaluate_trajectory, \
    format_table
from .models.predictors import (OraclePredictor, build_predictor,
                                load_predictor)
from .models.predictors.training import build_windows
from .segmask import OracleFlowProvider, OracleMaskRefiner, ZeroFlowProvider
from .synth import generate_dataset, make_specs
from .tracker import Trajectory, Tracker, TrackerInit
from .visualization import plot_altair, save_error_plots

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


def cmd_synth_gen(args):
    config = load_config(SynthConfig, args.config,
                         {'seed': args.seed, 'count': args.count,
                          'workers': args.workers})
    specs = make_specs(config.protocol, config.count, config.seed,
                       length=config.length,
                       image_size=config.image_size,
                       intrinsics=CameraIntrinsics(**config.intrinsics),
                       n_points=config.n_points,
                       splat_radius=config.splat_radius,
                       object_size=config.object_size,
                       randomize=config.randomize)
    out = Path(args.out) if args.out else data_root()
    generate_dataset(specs, out, master_seed=config.seed,
                     config=config_to_dict(config), workers=config.workers)
    print(out / 'manifest.json')
    return EXIT_OK


def load_windows(data_dir, config):
    samples = []
    for i, directory in enumerate(sequence_dirs(data_dir)):
        sequence = read_sequence(directory)
        samples += build_windows(sequence, config.window,
                                 config.encoder.input_size,
                                 config.regressor.rotation_rep,
                                 pad_fraction=config.pad_fraction,
                                 margin=config.margin, sequence_id=i)
    logger.info('built %d training windows from %s', len(samples), data_dir)
    return samples


def cmd_train(args):
    config = load_config(TrainConfig, args.config,
                         {'model': args.model, 'window': args.window,
                          'steps': args.steps, 'seed': args.seed,
                          'batch_size': args.batch_size,
                          'learning_rate': args.lr})
    data_dir = Path(args.data) if args.data else data_root()
    samples = load_windows(data_dir, config)

    predictor = build_predictor(config)
    curve = predictor.fit(samples)
    predictor.save(args.out)

    loss_log = Path(args.loss_log) if args.loss_log else \
        Path(args.out).with_suffix('.csv')
    curve.to_frame().to_csv(loss_log, index=False)
    print(f'{args.out} (final loss {curve.final:.6f})')
    return EXIT_OK


def _rotation_arg(values):
    if values is None:
        return None
    return np.array(values, dtype=float).reshape(3, 3)


def cmd_track(args):
    config = load_config(TrackConfig, args.config,
                         {'reinit_every': args.reinit_every, 'z0': args.z0,
                          'init': args.init})
    sequence = read_sequence(args.sequence)
    if sequence.masks is None:
        raise DatasetError(args.sequence, 'tracking needs instance masks')
    K = sequence.intrinsics

    if args.oracle_predictor:
        predictor = OraclePredictor(K, sequence.poses, window_size=args.window)
    elif args.checkpoint:
        predictor = load_predictor(args.checkpoint)
    else:
        raise ConfigError('checkpoint', 'give a checkpoint or ' +
                          '--oracle-predictor')

    mask0 = sequence.masks[0]
    if config.init == 'gt':
        init = TrackerInit.from_ground_truth(K, sequence.poses[0], mask0,
                                             config.pad_fraction)
    else:
        init = TrackerInit.gauge(mask0, Z0=config.z0,
                                 R0=_rotation_arg(args.r0),
                                 center=args.center,
                                 pad_fraction=config.pad_fraction)

    flows = OracleFlowProvider(sequence.flows) if sequence.flows \
        else ZeroFlowProvider()
    tracker = Tracker(K, predictor, flows, OracleMaskRefiner(sequence.masks),
                      config)
    meta = {'sequence': str(args.sequence),
            'predictor': 'oracle' if args.oracle_predictor
            else str(args.checkpoint),
            'config': config_to_dict(config)}
    try:
        trajectory = tracker.run(sequence.images, init,
                                 gt_poses=sequence.poses,
                                 gt_masks=sequence.masks)
    except TrackingLostError as e:
        partial = e.trajectory or Trajectory()
        partial.meta = dict(meta, lost_at=e.frame_index)
        partial.save(args.out)
        raise
    trajectory.meta = meta
    trajectory.save(args.out)
    print(args.out)
    return EXIT_OK


def cmd_eval(args):
    config = load_config(MetricsConfig, args.config)
    trajectory = Trajectory.load(args.trajectory)
    sequence = read_sequence(args.sequence)
    if len(trajectory) != len(sequence):
        raise DomainError(f'trajectory has {len(trajectory)} frames, ' +
                          f'sequence has {len(sequence)}')
    if sequence.model_points is None:
        raise DatasetError(args.sequence, 'no model_points.npy')

    name = args.name or Path(args.trajectory).stem
    report = evaluate_trajectory(trajectory.poses, sequence.poses,
                                 sequence.model_points, sequence.intrinsics,
                                 config, name=name)
    out = Path(args.out) if args.out else \
        Path(args.trajectory).with_suffix('.report.json')
    report.save(out)
    print(format_table({name: report}))
    return EXIT_OK


def cmd_plot(args):
    by_name = defaultdict(list)
    for path in args.reports:
        report = MetricReport.load(path)
        by_name[report.name].append(report)
    curves = {name: error_accumulation(reports)
              for name, reports in by_name.items()}
    for path in save_error_plots(curves, args.out):
        print(path)
    if args.html:
        for kind in ('rotation', 'translation'):
            path = Path(args.out) / f'{kind}_error.html'
            plot_altair(curves, kind=kind).save(str(path))
            print(path)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog='posetrack',
        description='Model-free 6-DoF object tracking from images')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for progress, -vv for debug output')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('synth-gen', help='generate synthetic sequences')
    p.add_argument('config', help='JSON with protocol, count, seed, ...')
    p.add_argument('--out', help='output directory (default: data root)')
    p.add_argument('--seed', type=int)
    p.add_argument('--count', type=int)
    p.add_argument('--workers', type=int)
    p.set_defaults(func=cmd_synth_gen)

    p = commands.add_parser('train', help='train a motion predictor')
    p.add_argument('--config', help='TrainConfig JSON')
    p.add_argument('--data', help='dataset directory (default: data root)')
    p.add_argument('--out', required=True, help='checkpoint path')
    p.add_argument('--loss-log', help='CSV loss curve path')
    p.add_argument('--model', choices=('two_frame', 'multi_frame'))
    p.add_argument('--window', type=int)
    p.add_argument('--steps', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--batch-size', type=int)
    p.add_argument('--lr', type=float)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser('track', help='track an object in a sequence')
    p.add_argument('sequence', help='sequence directory')
    p.add_argument('--checkpoint')
    p.add_argument('--oracle-predictor', action='store_true',
                   help='use ground-truth motion codes')
    p.add_argument('--window', type=int, default=2,
                   help='oracle predictor window')
    p.add_argument('--out', required=True, help='trajectory JSON path')
    p.add_argument('--config', help='TrackConfig JSON')
    p.add_argument('--init', choices=('gt', 'gauge'))
    p.add_argument('--reinit-every', type=int)
    p.add_argument('--z0', type=float, help='gauge depth in mm')
    p.add_argument('--r0', type=float, nargs=9, metavar='R',
                   help='gauge rotation, row-major')
    p.add_argument('--center', type=float, nargs=2, metavar=('U', 'V'))
    p.set_defaults(func=cmd_track)

    p = commands.add_parser('eval', help='score a trajectory')
    p.add_argument('trajectory')
    p.add_argument('sequence')
    p.add_argument('--config', help='MetricsConfig JSON')
    p.add_argument('--out', help='MetricReport JSON path')
    p.add_argument('--name', help='model label in tables and plots')
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser('plot', help='plot error accumulation')
    p.add_argument('reports', nargs='+')
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--html', action='store_true',
                   help='also write interactive charts')
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code

    level = max(logging.DEBUG, logging.WARNING - 10 * args.verbose)
    logging.basicConfig(level=level,
                        format='%(asctime)s %(name)s %(levelname)s: ' +
                        '%(message)s')
    try:
        return args.func(args)
    except (TrackingLostError, NonFiniteLossError) as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, DatasetError, DomainError) as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_USAGE
    except PoseTrackError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
