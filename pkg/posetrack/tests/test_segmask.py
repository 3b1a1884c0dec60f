import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from posetrack.errors import DomainError, TrackingLostError
from posetrack.geometry import Pose
from posetrack.segmask import (BBox, FlowField, Mask, NoisyFlowProvider,
                               NoisyMaskRefiner, OracleFlowProvider,
                               OracleMaskRefiner, ZeroFlowProvider, box_iou,
                               diagonal_pad, mask_background, mask_to_bbox,
                               prepare_network_inputs, propagate_sequence,
                               propagate_step, resample_crop, warp_mask)
from posetrack.synth import (DEFAULT_INTRINSICS, SceneObject, SequenceSpec,
                             compute_gt_flow, generate_sequence, render_frame)


def smooth_sequence(n_frames=100, seed=0):
    """ slowly rotating sphere at 600 mm, with ground-truth flows """
    rng = np.random.default_rng(seed)
    points = rng.standard_normal((1500, 3))
    points = 120 * points / np.linalg.norm(points, axis=1, keepdims=True)
    obj = SceneObject(points - points.mean(axis=0),
                      rng.uniform(.2, 1, (1500, 3)))
    R0 = Rotation.random(random_state=seed).as_matrix()
    poses = []
    for t in range(n_frames):
        dR = Rotation.from_rotvec(np.deg2rad(1.5) * t *
                                  np.array([1., 1., 0.]) / np.sqrt(2))
        T = [60 * np.sin(t / 15), 30 * np.sin(t / 25),
             600 + 40 * np.sin(t / 30)]
        poses.append(Pose(dR.as_matrix() @ R0, T))
    K = DEFAULT_INTRINSICS
    frames = [render_frame(obj, p, K, frame_index=t)
              for t, p in enumerate(poses)]
    flows = [compute_gt_flow(obj, poses[t], poses[t + 1], K, frame_index=t)
             for t in range(n_frames - 1)] + [None]
    images = [f.image for f in frames]
    masks = [Mask(f.instance_mask, t) for t, f in enumerate(frames)]
    return images, masks, flows


def padded_box(mask, fraction=0.1):
    return mask_to_bbox(mask, diagonal_pad(mask, fraction))


def test_Mask():
    mask = Mask(np.eye(4), 3)
    assert mask.grid.dtype == bool
    assert mask.count == 4
    assert mask.is_valid()
    assert not mask.is_valid(min_pixels=5)
    assert not Mask(np.zeros((4, 4)), 0).is_valid()

    with pytest.raises(DomainError):
        Mask(np.zeros((4, 4, 3)), 0)


def test_FlowField():
    flow = FlowField.zeros((5, 6), 0, 1)
    assert flow.shape == (5, 6)
    assert flow.grid.shape == (5, 6, 2)

    with pytest.raises(DomainError):
        FlowField(np.zeros((5, 6, 3)), 0, 1)
    grid = np.zeros((5, 6, 2))
    grid[1, 1, 0] = np.inf
    with pytest.raises(DomainError):
        FlowField(grid, 0, 1)


def test_BBox():
    box = BBox(2, 3, 10, 20)
    assert (box.right, box.bottom) == (12, 23)
    assert box.center == (7, 13)
    assert box.shift(1, -1).as_tuple() == (3, 2, 10, 20)
    assert box.expand(2).as_tuple() == (0, 1, 14, 24)
    assert box.expand(5, image_size=(25, 14)).as_tuple() == (0, 0, 14, 25)
    assert box.contains(BBox(2, 3, 10, 20))
    assert not box.contains(BBox(1, 3, 10, 20))
    assert box.contains_pixels([2, 11], [3, 22])
    assert not box.contains_pixels([12], [3])
    assert box.to_mask((30, 30)).sum() == 200

    assert box_iou(box, box) == 1
    assert box_iou(BBox(0, 0, 10, 10), BBox(5, 0, 10, 10)) == 50 / 150
    assert box_iou(BBox(0, 0, 10, 10), BBox(20, 20, 5, 5)) == 0

    with pytest.raises(DomainError):
        BBox(0, 0, 0, 5)


def test_warp_mask():
    grid = np.zeros((20, 20), dtype=bool)
    grid[5:10, 4:12] = True
    mask = Mask(grid, 0)

    # zero flow is the identity
    warped = warp_mask(mask, FlowField.zeros((20, 20), 0, 1))
    np.testing.assert_array_equal(warped.grid, grid)
    assert warped.frame_index == 1

    # uniform flow shifts the mask
    flow = np.zeros((20, 20, 2))
    flow[..., 0] = 5
    warped = warp_mask(mask, FlowField(flow, 0, 1))
    np.testing.assert_array_equal(warped.grid, np.roll(grid, 5, axis=1))

    # targets outside the image are dropped
    flow[..., 0] = 15
    warped = warp_mask(mask, FlowField(flow, 0, 1))
    assert warped.count == 5
    assert warped.grid[5:10, 19].all()

    with pytest.raises(DomainError):
        warp_mask(mask, FlowField.zeros((10, 20), 0, 1))
    with pytest.raises(DomainError):
        warp_mask(mask, FlowField.zeros((20, 20), 1, 2))


def test_warp_mask_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        grid = rng.random((16, 16)) < .3
        flow = rng.integers(-4, 5, (16, 16, 2)).astype(float)

        expected = np.zeros_like(grid)
        for y in range(16):
            for x in range(16):
                if not grid[y, x]:
                    continue
                tx, ty = x + int(flow[y, x, 0]), y + int(flow[y, x, 1])
                if 0 <= tx < 16 and 0 <= ty < 16:
                    expected[ty, tx] = True

        warped = warp_mask(Mask(grid, 0), FlowField(flow, 0, 1))
        np.testing.assert_array_equal(warped.grid, expected)


def test_mask_to_bbox():
    grid = np.zeros((32, 32), dtype=bool)
    grid[3, 7] = True
    assert mask_to_bbox(Mask(grid, 0), pad=2).as_tuple() == (5, 1, 5, 5)

    full = Mask(np.ones((24, 32)), 0)
    assert mask_to_bbox(full).as_tuple() == (0, 0, 32, 24)

    with pytest.raises(TrackingLostError) as e:
        mask_to_bbox(Mask(np.zeros((8, 8)), 4))
    assert e.value.frame_index == 4

    rng = np.random.default_rng(1)
    for _ in range(1000):
        grid = rng.random((20, 24)) < rng.uniform(.01, .2)
        if not grid.any():
            continue
        box = mask_to_bbox(Mask(grid, 0), pad=rng.integers(0, 4))
        ys, xs = np.nonzero(grid)
        assert box.contains_pixels(xs, ys)
        assert box.left >= 0 and box.top >= 0
        assert box.right <= 24 and box.bottom <= 20


def test_diagonal_pad():
    grid = np.zeros((40, 40), dtype=bool)
    grid[0:30, 0:40] = True
    assert diagonal_pad(Mask(grid, 0), .1) == 5
    assert diagonal_pad(Mask(grid, 0), 0) == 0
    assert diagonal_pad(Mask(np.zeros((4, 4)), 0), .1) == 0


def test_providers():
    rng = np.random.default_rng(2)
    grid = np.zeros((10, 10), dtype=bool)
    grid[2:6, 2:6] = True

    refiner = OracleMaskRefiner([grid, Mask(grid, 1)])
    mask = refiner(None, BBox(0, 0, 4, 4), 1)
    assert mask.frame_index == 1
    assert mask.count == 4

    dilated = NoisyMaskRefiner(refiner, 1)(None, BBox(0, 0, 10, 10), 0)
    assert dilated.count > 16
    assert dilated.grid[grid].all()
    eroded = NoisyMaskRefiner(refiner, -1)(None, BBox(0, 0, 10, 10), 0)
    assert eroded.count == 4

    flows = OracleFlowProvider([np.ones((10, 10, 2)), None])
    assert flows(None, None, 0).to_index == 1
    with pytest.raises(DomainError):
        flows(None, None, 1)

    zero = ZeroFlowProvider()(np.zeros((10, 10, 3)), None, 3)
    assert (zero.from_index, zero.to_index) == (3, 4)
    assert not zero.grid.any()

    noisy = NoisyFlowProvider(ZeroFlowProvider(), 2., rng)
    flow = noisy(np.zeros((100, 100, 3)), None, 0)
    assert np.isclose(flow.grid.std(), 2., rtol=.05)


def test_propagate_step():
    # static object with identity flow keeps its box
    grid = np.zeros((40, 40), dtype=bool)
    grid[10:20, 12:30] = True
    mask = Mask(grid, 0)
    box = padded_box(mask)
    images = (np.zeros((40, 40, 3)), np.zeros((40, 40, 3)))
    box1, mask1 = propagate_step(box, images, ZeroFlowProvider(),
                                 OracleMaskRefiner([grid, grid]), 0)
    assert box1 == box
    np.testing.assert_array_equal(mask1.grid, grid)
    assert mask1.frame_index == 1

    # the object leaves the image
    flow = np.zeros((40, 40, 2))
    flow[..., 0] = 50
    with pytest.raises(TrackingLostError) as e:
        propagate_step(box, images, OracleFlowProvider([flow]),
                       OracleMaskRefiner([grid, grid]), 0)
    assert e.value.frame_index == 1
    assert e.value.last_valid_index == 0

    # the refiner finds nothing in the new box
    with pytest.raises(TrackingLostError):
        propagate_step(box, images, ZeroFlowProvider(),
                       OracleMaskRefiner([grid, np.zeros((40, 40))]), 0)


def test_propagate_sequence():
    images, masks, flows = smooth_sequence()
    box0 = padded_box(masks[0])
    boxes, refined = propagate_sequence(images, box0,
                                        OracleFlowProvider(flows),
                                        OracleMaskRefiner(masks))
    assert len(boxes) == len(refined) == 100
    for t, (box, mask) in enumerate(zip(boxes, masks)):
        assert box_iou(box, padded_box(mask)) >= .9, t
        assert refined[t].frame_index == t


def test_propagate_sequence_dilated_refiner():
    images, masks, flows = smooth_sequence(n_frames=30, seed=1)
    refiner = NoisyMaskRefiner(OracleMaskRefiner(masks), dilation=1)
    boxes, _ = propagate_sequence(images, padded_box(masks[0]),
                                  OracleFlowProvider(flows), refiner)
    for box, mask in zip(boxes, masks):
        ys, xs = np.nonzero(mask.grid)
        assert box.contains_pixels(xs, ys)


def test_propagate_generated_video():
    sequence = generate_sequence(SequenceSpec('shapenet_video', length=8,
                                              seed=3))
    masks = [Mask(m, t) for t, m in enumerate(sequence.masks)]
    boxes, _ = propagate_sequence(sequence.images, padded_box(masks[0]),
                                  OracleFlowProvider(sequence.flows),
                                  OracleMaskRefiner(masks))
    assert len(boxes) == 8
    for box, mask in zip(boxes, masks):
        assert box_iou(box, padded_box(mask)) > 0


def test_mask_background():
    rng = np.random.default_rng(4)
    image = rng.uniform(.1, 1, (12, 12, 3))
    grid = rng.random((12, 12)) < .5
    masked = mask_background(image, Mask(grid, 0))
    assert (masked[~grid] == 0).all()
    np.testing.assert_array_equal(masked[grid], image[grid])

    with pytest.raises(DomainError):
        mask_background(image, np.ones((10, 12)))


def test_resample_crop():
    from posetrack.geometry import CropSpec

    # unit scale is an exact copy of the crop region
    image = np.arange(10 * 10 * 3, dtype=float).reshape(10, 10, 3)
    out = resample_crop(image, CropSpec((2, 3, 4, 5), 4, 5))
    np.testing.assert_allclose(out, image[3:8, 2:6])

    # a constant image stays constant inside
    out = resample_crop(np.ones((10, 10)), CropSpec((0, 0, 10, 10), 20, 20))
    assert out.shape == (20, 20, 1)
    np.testing.assert_allclose(out[1:-1, 1:-1], 1)


def test_prepare_network_inputs():
    rng = np.random.default_rng(5)
    image = rng.random((40, 40, 3))
    grid = np.zeros((40, 40), dtype=bool)
    grid[5:20, 8:30] = True
    box = BBox(8, 5, 22, 15)

    crops, crop = prepare_network_inputs([image, image], [grid, grid],
                                         [box, box], 32, 16)
    assert crops.shape == (2, 16, 32, 3)
    np.testing.assert_array_equal(crops[0], crops[1])
    assert crop.box == (8, 5, 22, 15)

    _, crop = prepare_network_inputs([image, image], [grid, grid],
                                     [(0, 0, 10, 10), (20, 20, 10, 10)],
                                     30, 30)
    assert crop.box == (0, 0, 30, 30)

    # the masked background is zero in every crop
    crops, crop = prepare_network_inputs([image, image], [grid, grid],
                                         [(0, 0, 40, 40), (0, 0, 40, 40)],
                                         40, 40)
    assert (crops[:, ~grid] == 0).all()

    with pytest.raises(DomainError):
        prepare_network_inputs([image], [grid], [box], 32, 32)
    with pytest.raises(DomainError):
        prepare_network_inputs([image, image], [grid], [box, box], 32, 32)


def test_prepare_network_inputs_translation():
    rng = np.random.default_rng(6)
    patches = rng.random((2, 12, 16, 3))

    def scene(dx, dy):
        frames, masks, boxes = [], [], []
        for k, (x, y) in enumerate([(10, 12), (14, 15)]):
            image = np.zeros((60, 60, 3))
            image[y + dy:y + dy + 12, x + dx:x + dx + 16] = patches[k]
            grid = image.any(axis=2)
            frames.append(image)
            masks.append(grid)
            boxes.append(BBox(x + dx, y + dy, 16, 12))
        return prepare_network_inputs(frames, masks, boxes, 24, 24,
                                      margin=.1)

    crops, crop = scene(0, 0)
    shifted_crops, shifted = scene(7, 4)
    np.testing.assert_allclose(np.subtract(shifted.box, crop.box),
                               [7, 4, 0, 0])
    np.testing.assert_allclose(shifted_crops, crops, atol=1e-12)
