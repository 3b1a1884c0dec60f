"""
Pose accuracy metrics: (k deg, k cm) correctness, ADD, ADD-S, Proj2D, AUC
and per-segment drift.
"""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .config import MetricsConfig, config_to_dict
from .errors import DatasetError, DomainError
from .geometry import euler_xyz_errors, geodesic_angle, project

AXES = ('x', 'y', 'z')


def _points(points):
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DomainError(f'points must be M x 3 (got {points.shape})')
    if len(points) == 0:
        raise DomainError('point set is empty')
    return points


def _finite_mean(values):
    """ mean over finite entries, None when there are none """
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(values.mean()) if len(values) else None


def _json_column(column):
    return [None if isinstance(v, float) and not np.isfinite(v) else v
            for v in column.tolist()]


def rotation_error(pred, gt):
    """ Geodesic rotation error in degrees """
    return float(np.rad2deg(geodesic_angle(pred.R, gt.R)))


def translation_error(pred, gt):
    """ Euclidean translation error in mm """
    return float(np.linalg.norm(pred.T - gt.T))


def pose_correct(pred, gt, k_deg=5., k_cm=5.):
    """ True when rotation error <= k_deg and translation error <= k_cm """
    return rotation_error(pred, gt) <= k_deg and \
        translation_error(pred, gt) <= 10. * k_cm


def add(pred, gt, points):
    """ Average distance between model points under both poses (mm) """
    points = _points(points)
    distances = np.linalg.norm(pred.transform(points) - gt.transform(points),
                               axis=1)
    return float(distances.mean())


def add_s(pred, gt, points):
    """ Average distance from each ground-truth point to the closest
    predicted point (mm) """
    points = _points(points)
    tree = cKDTree(pred.transform(points))
    distances, _ = tree.query(gt.transform(points), k=1)
    return float(distances.mean())


def proj2d(pred, gt, points, K):
    """ Average pixel distance between the projected model points

    Raises
    ------
    DomainError
        if a point is behind the camera under either pose
    """
    points = _points(points)
    U_p, V_p, _ = project(K, pred.transform(points))
    U_g, V_g, _ = project(K, gt.transform(points))
    return float(np.hypot(U_p - U_g, V_p - V_g).mean())


def object_diameter(points):
    """ Largest distance between two model points """
    points = _points(points)
    if len(points) < 2:
        raise DomainError('diameter needs at least 2 points')
    return float(pdist(points).max())


def add_correct(pred, gt, points, fraction=0.1, diameter=None):
    """ ADD within `fraction` of the object diameter """
    if diameter is None:
        diameter = object_diameter(points)
    return add(pred, gt, points) <= fraction * diameter


def proj2d_correct(pred, gt, points, K, threshold=5.):
    return proj2d(pred, gt, points, K) <= threshold


def auc(values, threshold_max=100.):
    """ Normalized area under the accuracy-threshold curve

    Accuracy at threshold x is the fraction of values <= x. The curve is a
    staircase over the sorted values, integrated exactly from 0 to
    `threshold_max` and divided by `threshold_max`.

    Parameters
    ----------
    values : array-like
        non-negative errors
    threshold_max : float

    Returns
    -------
    float in [0, 1]
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise DomainError('AUC of an empty set')
    if np.any(values < 0):
        raise DomainError('AUC needs non-negative values')
    if not threshold_max > 0:
        raise DomainError(f'threshold_max must be > 0 (got {threshold_max})')

    steps = np.sort(np.minimum(values, threshold_max))
    n = steps.size
    # each step appears twice so trapezoids reproduce the staircase
    x = np.concatenate([[0.], np.repeat(steps, 2), [threshold_max]])
    y = np.repeat(np.arange(n + 1) / n, 2)
    return float(trapezoid(y, x) / threshold_max)


@dataclass
class SegmentError:
    start: int
    end: int
    rotation_deg: float
    translation_mm: float
    motion_rotation_deg: float
    motion_translation_mm: float


def segment_errors(poses, gt_poses, segment_len=15):
    """ Errors at the end of consecutive segments of `segment_len` frames

    The trajectory is expected to restart from ground truth at each segment
    start. Alongside each error the ground-truth motion over the segment is
    reported; its mean is the average-signed-motion baseline.

    Returns
    -------
    list of SegmentError
    """
    if len(poses) != len(gt_poses):
        raise DomainError(f'trajectory has {len(poses)} frames, ground ' +
                          f'truth has {len(gt_poses)}')
    if segment_len < 1:
        raise DomainError('segment_len must be >= 1')
    segments = []
    for start in range(0, len(poses) - 1, segment_len):
        end = min(start + segment_len, len(poses) - 1)
        segments.append(SegmentError(
            start, end,
            rotation_error(poses[end], gt_poses[end]),
            translation_error(poses[end], gt_poses[end]),
            rotation_error(gt_poses[start], gt_poses[end]),
            translation_error(gt_poses[start], gt_poses[end])))
    return segments


def average_signed_motion(segment_lists):
    """ Mean ground-truth segment motion over every segment of every
    sequence

    Returns
    -------
    (rotation_deg, translation_mm)
    """
    segments = [s for segs in segment_lists for s in segs]
    if not segments:
        raise DomainError('no segments')
    return (float(np.mean([s.motion_rotation_deg for s in segments])),
            float(np.mean([s.motion_translation_mm for s in segments])))


@dataclass(eq=False)
class MetricReport:
    """ Per-frame and aggregate metrics of one trajectory

    Parameters
    ----------
    per_frame : pandas.DataFrame
        one row per evaluated frame
    aggregate : dict
    segments : list of SegmentError
    config : dict
    name : str
    """
    per_frame: pd.DataFrame
    aggregate: dict
    segments: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    name: str = 'model'

    def to_dict(self):
        return {'name': self.name,
                'config': self.config,
                'aggregate': self.aggregate,
                'per_frame': {column: _json_column(self.per_frame[column])
                              for column in self.per_frame},
                'segments': [vars(s) for s in self.segments]}

    @classmethod
    def from_dict(cls, data):
        for key in ('aggregate', 'per_frame'):
            if key not in data:
                raise DomainError(f'metric report is missing "{key}"')
        per_frame = pd.DataFrame(data['per_frame'])
        for column in ('frame', 'rotation_deg', 'translation_mm', 'add',
                       'add_s'):
            if column not in per_frame:
                raise DomainError(f'metric report lacks "{column}"')
        if (per_frame['add_s'] > per_frame['add'] + 1e-9).any():
            raise DomainError('metric report has ADD-S > ADD')
        return cls(per_frame, data['aggregate'],
                   [SegmentError(**s) for s in data.get('segments', [])],
                   data.get('config', {}), data.get('name', 'model'))

    def save(self, filepath):
        from .datasets import write_json

        write_json(self.to_dict(), filepath)

    @classmethod
    def load(cls, filepath):
        from .datasets import read_json

        try:
            return cls.from_dict(read_json(filepath))
        except (DomainError, TypeError, ValueError) as e:
            raise DatasetError(filepath, f'invalid metric report ({e})')


def per_frame_errors(poses, gt_poses, points, K, config=None, diameter=None):
    """ Table of every metric for each frame after the first

    The first frame is the initialization and is not evaluated.

    Returns
    -------
    pandas.DataFrame
    """
    config = MetricsConfig() if config is None else config
    if len(poses) != len(gt_poses):
        raise DomainError(f'trajectory has {len(poses)} frames, ground ' +
                          f'truth has {len(gt_poses)}')
    points = _points(points)
    if diameter is None:
        diameter = object_diameter(points)

    rows = []
    for t in range(1, len(poses)):
        pred, gt = poses[t], gt_poses[t]
        try:
            p2d = proj2d(pred, gt, points, K)
        except DomainError:
            # model points behind the camera have no projection
            p2d = np.nan
        rot, trans = rotation_error(pred, gt), translation_error(pred, gt)
        add_t, add_s_t = add(pred, gt, points), add_s(pred, gt, points)
        row = {'frame': t, 'rotation_deg': rot, 'translation_mm': trans,
               'add': add_t, 'add_s': add_s_t, 'proj2d': p2d,
               'correct_k': rot <= config.k_deg and
               trans <= 10. * config.k_cm,
               'add_correct': add_t <= config.add_fraction * diameter,
               'add_s_correct': add_s_t <= config.add_fraction * diameter,
               'proj2d_correct': bool(p2d <= config.proj2d_px)}
        euler = np.rad2deg(euler_xyz_errors(pred.R, gt.R))
        delta = np.abs(pred.T - gt.T)
        for i, axis in enumerate(AXES):
            row[f'rotation_{axis}_deg'] = euler[i]
            row[f'translation_{axis}_mm'] = delta[i]
        rows.append(row)
    return pd.DataFrame(rows)


def evaluate_trajectory(poses, gt_poses, points, K, config=None,
                        name='model'):
    """ Computes every metric of a trajectory against ground truth

    Parameters
    ----------
    poses, gt_poses : list of Pose
    points : np.ndarray (M, 3)
        model points in mm
    K : CameraIntrinsics
    config : MetricsConfig, optional
    name : str
        label used in tables and plots

    Returns
    -------
    MetricReport
    """
    config = MetricsConfig() if config is None else config
    if len(poses) < 2:
        raise DomainError('need at least 2 frames to evaluate')
    diameter = object_diameter(points)
    frame = per_frame_errors(poses, gt_poses, points, K, config, diameter)
    segments = segment_errors(poses, gt_poses, config.segment_len)
    motion_rot, motion_trans = average_signed_motion([segments])

    aggregate = {
        'frames': len(frame),
        'diameter_mm': diameter,
        'rotation_deg': float(frame['rotation_deg'].mean()),
        'translation_mm': float(frame['translation_mm'].mean()),
        'add_mm': float(frame['add'].mean()),
        'add_s_mm': float(frame['add_s'].mean()),
        'proj2d_px': _finite_mean(frame['proj2d']),
        'proj2d_behind_camera': int(frame['proj2d'].isna().sum()),
        'correct_k': float(frame['correct_k'].mean()),
        'add_correct': float(frame['add_correct'].mean()),
        'add_s_correct': float(frame['add_s_correct'].mean()),
        'proj2d_correct': float(frame['proj2d_correct'].mean()),
        'auc_add': auc(frame['add'], config.auc_max),
        'auc_add_s': auc(frame['add_s'], config.auc_max),
        'segment_rotation_deg': float(np.mean(
            [s.rotation_deg for s in segments])),
        'segment_translation_mm': float(np.mean(
            [s.translation_mm for s in segments])),
        'motion_rotation_deg': motion_rot,
        'motion_translation_mm': motion_trans,
    }
    return MetricReport(frame, aggregate, segments, config_to_dict(config),
                        name)


def error_accumulation(reports):
    """ Per-axis errors averaged over reports at each frame index

    Reports of different lengths are averaged over the ones reaching each
    frame.

    Returns
    -------
    pandas.DataFrame
        indexed by frame, one column per axis error
    """
    if not reports:
        raise DomainError('no reports to accumulate')
    columns = [f'rotation_{a}_deg' for a in AXES] + \
        [f'translation_{a}_mm' for a in AXES]
    frames = pd.concat([r.per_frame[['frame'] + columns] for r in reports])
    return frames.groupby('frame')[columns].mean()


def format_table(reports, baseline=True):
    """ Text table with one row per report

    Parameters
    ----------
    reports : dict of str to MetricReport, or list of MetricReport
    baseline : bool
        append the average-signed-motion row

    Returns
    -------
    str
    """
    if not isinstance(reports, dict):
        reports = {r.name: r for r in reports}
    if not reports:
        raise DomainError('no reports to tabulate')

    first = next(iter(reports.values()))
    k_deg = first.config.get('k_deg', 5.)
    k_cm = first.config.get('k_cm', 5.)
    fraction = first.config.get('add_fraction', .1)
    px = first.config.get('proj2d_px', 5.)
    columns = {
        'correct_k': f'({k_deg:g}deg, {k_cm:g}cm)',
        'add_correct': f'ADD ({fraction:g}d)',
        'add_s_correct': f'ADD-S ({fraction:g}d)',
        'proj2d_correct': f'Proj2D ({px:g}px)',
        'auc_add': 'AUC ADD',
        'auc_add_s': 'AUC ADD-S',
    }
    rows = {}
    for name, report in reports.items():
        row = {label: 100. * report.aggregate[key]
               for key, label in columns.items()}
        row['Seg. rot (deg)'] = report.aggregate['segment_rotation_deg']
        row['Seg. trans (mm)'] = report.aggregate['segment_translation_mm']
        rows[name] = row

    if baseline:
        motion = average_signed_motion([r.segments for r in
                                        reports.values()])
        rows['Avg signed motion'] = {'Seg. rot (deg)': motion[0],
                                     'Seg. trans (mm)': motion[1]}

    table = pd.DataFrame.from_dict(rows, orient='index')
    return table.to_string(float_format=lambda v: f'{v:.1f}', na_rep='-')
