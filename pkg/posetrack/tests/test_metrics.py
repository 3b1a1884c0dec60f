import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from posetrack.config import MetricsConfig
from posetrack.errors import DatasetError, DomainError
from posetrack.geometry import CameraIntrinsics, Pose
from posetrack.metrics import (MetricReport, add, add_correct, add_s, auc,
                               average_signed_motion, error_accumulation,
                               evaluate_trajectory, format_table,
                               object_diameter, pose_correct, proj2d,
                               proj2d_correct, rotation_error, segment_errors,
                               translation_error)

K = CameraIntrinsics(100, 100, 64, 64)


def rotated(angle_deg, axis='z', T=(0, 0, 500)):
    return Pose(Rotation.from_euler(axis, angle_deg, degrees=True)
                .as_matrix(), T)


def cube_points(half=50.):
    corners = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).T
    return half * corners.reshape(-1, 3).astype(float)


def drifting_trajectory(n, seed=0):
    """ ground truth and a prediction drifting away from it """
    rng = np.random.default_rng(seed)
    gt, pred = [], []
    for t in range(n):
        R = Rotation.from_rotvec([0, .02 * t, 0]).as_matrix()
        T = np.array([5. * t, 0, 600])
        gt.append(Pose(R, T))
        noise = Rotation.from_rotvec(rng.normal(0, .01 * t, 3)).as_matrix()
        pred.append(Pose(noise @ R, T + rng.normal(0, t, 3)))
    pred[0] = gt[0]
    return pred, gt


def test_pose_errors():
    gt = Pose.identity([0, 0, 500])
    assert np.isclose(rotation_error(rotated(4), gt), 4)
    assert translation_error(Pose.identity([30, 40, 500]), gt) == 50

    assert pose_correct(rotated(4, T=(0, 0, 540)), gt)
    assert not pose_correct(rotated(6), gt)
    assert not pose_correct(Pose.identity([0, 0, 551]), gt)
    assert pose_correct(rotated(6), gt, k_deg=10)


def test_add():
    points = np.random.default_rng(0).normal(0, 30, (200, 3))
    gt = Pose.identity([0, 0, 500])
    d = np.array([3., -4., 12.])
    assert np.isclose(add(Pose.identity(gt.T + d), gt, points), 13)
    assert add_s(Pose.identity(gt.T + d), gt, points) <= 13 + 1e-9
    assert add(gt, gt, points) == 0

    with pytest.raises(DomainError):
        add(gt, gt, np.zeros((0, 3)))
    with pytest.raises(DomainError):
        add(gt, gt, np.zeros((4, 2)))


def test_add_s_symmetry():
    points = np.array([[1., 0., 0.], [-1., 0., 0.]])
    gt = Pose.identity([0, 0, 500])
    pred = rotated(180)
    assert np.isclose(add(pred, gt, points), 2)
    assert np.isclose(add_s(pred, gt, points), 0)


def test_add_s_below_add():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        points = rng.normal(0, 40, (20, 3))
        gt = Pose(Rotation.random(random_state=rng).as_matrix(),
                  rng.normal([0, 0, 800], 50))
        pred = Pose(Rotation.random(random_state=rng).as_matrix(),
                    rng.normal([0, 0, 800], 50))
        assert add_s(pred, gt, points) <= add(pred, gt, points) + 1e-9


def test_proj2d():
    gt = Pose.identity([0, 0, 500])
    pred = Pose.identity([10, 0, 500])
    points = np.zeros((1, 3))
    assert np.isclose(proj2d(pred, gt, points, K), 2)
    assert proj2d_correct(pred, gt, points, K)
    assert not proj2d_correct(pred, gt, points, K, threshold=1.)

    # brute force against a per-point loop
    rng = np.random.default_rng(2)
    points = rng.normal(0, 20, (30, 3))
    pred = rotated(10, 'x', T=(5, -5, 480))
    expected = []
    for p in points:
        a, b = pred.transform(p[None])[0], gt.transform(p[None])[0]
        ua = 100 * a[:2] / a[2] + 64
        ub = 100 * b[:2] / b[2] + 64
        expected.append(np.linalg.norm(ua - ub))
    assert np.isclose(proj2d(pred, gt, points, K), np.mean(expected))

    with pytest.raises(DomainError):
        proj2d(Pose.identity([0, 0, -500]), gt, points, K)


def test_object_diameter():
    assert np.isclose(object_diameter(cube_points()), 100 * np.sqrt(3))
    with pytest.raises(DomainError):
        object_diameter(np.zeros((1, 3)))

    points = cube_points()
    gt = Pose.identity([0, 0, 500])
    assert add_correct(Pose.identity([0, 0, 510]), gt, points)
    assert not add_correct(Pose.identity([0, 0, 520]), gt, points)


def test_auc():
    assert auc(np.zeros(10)) == 1
    assert auc(np.full(10, 150.)) == 0
    assert np.isclose(auc([0, 100]), .5)
    assert np.isclose(auc([50.]), .5)
    assert np.isclose(auc([10., 30.], threshold_max=40.), .5)

    with pytest.raises(DomainError):
        auc([])
    with pytest.raises(DomainError):
        auc([-1.])
    with pytest.raises(DomainError):
        auc([1.], threshold_max=0)


@given(st.lists(st.floats(0, 200), min_size=1, max_size=50))
@settings(max_examples=200, deadline=None)
def test_auc_bounds(values):
    area = auc(values)
    assert 0 <= area <= 1
    # the area equals the mean clipped margin below the maximum
    expected = np.mean(1 - np.minimum(values, 100.) / 100.)
    assert np.isclose(area, expected)


def test_segment_errors():
    gt = [Pose.identity([0, 0, 500 + 10 * t]) for t in range(31)]
    frozen = [gt[0]] * 31
    segments = segment_errors(frozen, gt, segment_len=15)
    assert [(s.start, s.end) for s in segments] == [(0, 15), (15, 30)]
    # a trajectory that never moves is off by exactly the true motion
    for s in segments:
        assert np.isclose(s.translation_mm, 10 * s.end)
    assert np.isclose(segments[0].motion_translation_mm, 150)

    rotation, translation = average_signed_motion([segments, segments[:1]])
    assert rotation == 0
    assert np.isclose(translation, 150)

    short = segment_errors(gt[:20], gt[:20], segment_len=15)
    assert [(s.start, s.end) for s in short] == [(0, 15), (15, 19)]
    assert short[1].translation_mm == 0

    with pytest.raises(DomainError):
        segment_errors(gt, gt[:3])
    with pytest.raises(DomainError):
        average_signed_motion([[]])


def test_evaluate_trajectory():
    pred, gt = drifting_trajectory(20)
    report = evaluate_trajectory(pred, gt, cube_points(), K,
                                 MetricsConfig(segment_len=5), name='drift')
    assert report.name == 'drift'
    assert len(report.per_frame) == 19
    assert report.per_frame['frame'].tolist() == list(range(1, 20))
    assert (report.per_frame['add_s'] <= report.per_frame['add']).all()
    assert len(report.segments) == 4
    assert 0 <= report.aggregate['auc_add'] <= 1
    assert report.aggregate['frames'] == 19
    assert report.config['segment_len'] == 5

    # errors grow along the drift
    frame = report.per_frame
    assert frame['rotation_deg'].iloc[-5:].mean() > \
        frame['rotation_deg'].iloc[:5].mean()

    exact = evaluate_trajectory(gt, gt, cube_points(), K)
    assert exact.aggregate['correct_k'] == 1
    assert exact.aggregate['add_mm'] == 0
    assert exact.aggregate['auc_add'] == 1

    with pytest.raises(DomainError):
        evaluate_trajectory(gt[:1], gt[:1], cube_points(), K)


def test_report_save_load(tmp_path):
    pred, gt = drifting_trajectory(10)
    report = evaluate_trajectory(pred, gt, cube_points(), K)
    report.save(tmp_path / 'report.json')
    loaded = MetricReport.load(tmp_path / 'report.json')
    assert loaded.aggregate == report.aggregate
    assert loaded.segments == report.segments
    np.testing.assert_allclose(loaded.per_frame['add'],
                               report.per_frame['add'])

    data = report.to_dict()
    data['per_frame']['add_s'] = [a + 1 for a in data['per_frame']['add']]
    with pytest.raises(DomainError):
        MetricReport.from_dict(data)
    del data['per_frame']['add_s']
    with pytest.raises(DomainError):
        MetricReport.from_dict(data)

    (tmp_path / 'bad.json').write_text('{"aggregate": {}}')
    with pytest.raises(DatasetError):
        MetricReport.load(tmp_path / 'bad.json')


def test_report_behind_camera(tmp_path):
    pred, gt = drifting_trajectory(6)
    pred[2] = Pose.identity([0, 0, -500])
    report = evaluate_trajectory(pred, gt, cube_points(), K)

    frame = report.per_frame.set_index('frame')
    assert np.isnan(frame.loc[2, 'proj2d'])
    assert not frame.loc[2, 'proj2d_correct']
    assert report.aggregate['proj2d_behind_camera'] == 1
    finite = frame['proj2d'].drop(index=2)
    assert np.isclose(report.aggregate['proj2d_px'], finite.mean())
    assert report.aggregate['proj2d_correct'] <= 4 / 5

    report.save(tmp_path / 'report.json')

    def reject(token):
        raise ValueError(token)

    text = (tmp_path / 'report.json').read_text()
    data = json.loads(text, parse_constant=reject)
    assert data['per_frame']['proj2d'][1] is None
    loaded = MetricReport.load(tmp_path / 'report.json')
    assert np.isnan(loaded.per_frame['proj2d'][1])


def test_report_all_behind_camera():
    pred, gt = drifting_trajectory(3)
    pred[1] = pred[2] = Pose.identity([0, 0, -500])
    report = evaluate_trajectory(pred, gt, cube_points(), K)
    assert report.aggregate['proj2d_px'] is None
    assert report.aggregate['proj2d_behind_camera'] == 2
    assert report.aggregate['proj2d_correct'] == 0


def test_error_accumulation():
    reports = [evaluate_trajectory(*drifting_trajectory(n, seed=n),
                                   cube_points(), K) for n in (8, 12)]
    curve = error_accumulation(reports)
    assert list(curve.index) == list(range(1, 12))
    assert 'rotation_y_deg' in curve.columns
    frame = reports[1].per_frame.set_index('frame')
    assert np.isclose(curve.loc[10, 'translation_x_mm'],
                      frame.loc[10, 'translation_x_mm'])
    mean = (reports[0].per_frame['translation_z_mm'].iloc[2] +
            reports[1].per_frame['translation_z_mm'].iloc[2]) / 2
    assert np.isclose(curve.loc[3, 'translation_z_mm'], mean)

    with pytest.raises(DomainError):
        error_accumulation([])


def test_format_table():
    pred, gt = drifting_trajectory(16)
    reports = {name: evaluate_trajectory(p, gt, cube_points(), K, name=name)
               for name, p in (('two-frame', pred), ('oracle', gt))}
    table = format_table(reports)
    assert 'two-frame' in table and 'oracle' in table
    assert 'Avg signed motion' in table
    assert '(5deg, 5cm)' in table
    assert 'Avg signed motion' not in format_table(reports, baseline=False)
    assert 'oracle' in format_table(list(reports.values()))
