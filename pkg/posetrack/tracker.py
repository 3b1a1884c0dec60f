"""
Chaining of predicted relative motions into a 6-DoF trajectory
"""
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import TrackConfig
from .errors import DatasetError, DomainError, TrackingLostError
from .geometry import (CropSpec, MotionCode, Pose, axis_angle_to_matrix,
                       backproject, check_rotation, decode_translation,
                       encode_translation, geodesic_angle,
                       matrix_to_axis_angle, project, relative_rotation)
from .models.predictors import Window
from .models.predictors.training import window_indices
from .segmask import (BBox, Mask, diagonal_pad, mask_to_bbox,
                      prepare_network_inputs, propagate_step)

logger = logging.getLogger(__name__)


def _as_mask(mask, frame_index):
    return mask if isinstance(mask, Mask) else Mask(mask, frame_index)


@dataclass
class TrackerInit:
    """ What the tracker knows about the first frame

    Parameters
    ----------
    center0 : tuple
        (U, V) image position of the object center, px
    box0 : BBox
        object box in the first frame
    R0 : np.ndarray (3, 3)
        reference rotation; identity when unknown
    Z0 : float
        depth in mm; any positive value when unknown
    """
    center0: tuple
    box0: BBox
    R0: np.ndarray = field(default_factory=lambda: np.eye(3))
    Z0: float = 1000.

    def __post_init__(self):
        if not self.Z0 > 0:
            raise DomainError(f'Z0 must be positive (got {self.Z0})')
        self.R0 = check_rotation(self.R0, name='R0')
        self.center0 = tuple(float(c) for c in self.center0)

    @classmethod
    def from_ground_truth(cls, K, pose, mask, pad_fraction=0.1):
        """ Exact initialization from a known first pose and mask """
        mask = _as_mask(mask, 0)
        U, V, Z = project(K, pose.T)
        box = mask_to_bbox(mask, diagonal_pad(mask, pad_fraction))
        return cls((U, V), box, pose.R, Z)

    @classmethod
    def gauge(cls, mask, Z0=1000., R0=None, center=None, pad_fraction=0.1):
        """ Initialization from a first-frame mask only

        The center defaults to the center of the mask's box, R0 to the
        identity.
        """
        mask = _as_mask(mask, 0)
        box = mask_to_bbox(mask, diagonal_pad(mask, pad_fraction))
        if center is None:
            center = mask_to_bbox(mask).center
        return cls(center, box, np.eye(3) if R0 is None else R0, Z0)


@dataclass(eq=False)
class TrajectoryFrame:
    pose: Pose
    center: tuple
    Z: float
    code: MotionCode = None
    crop: CropSpec = None
    reinitialized: bool = False

    def to_dict(self, frame):
        from .datasets import pose_to_record

        record = pose_to_record(self.pose, frame)
        record.update({
            'center': [float(c) for c in self.center],
            'Z': float(self.Z),
            'code': None if self.code is None else self.code.to_dict(),
            'crop': None if self.crop is None else self.crop.to_dict(),
            'reinitialized': self.reinitialized})
        return record

    @classmethod
    def from_dict(cls, record):
        from .datasets import record_to_pose

        code = record.get('code')
        if code is not None:
            code = MotionCode(code['du'], code['dv'], code['s'],
                              code['omega'])
        crop = record.get('crop')
        if crop is not None:
            crop = CropSpec(tuple(crop['box']), crop['input_w'],
                            crop['input_h'])
        return cls(record_to_pose(record), tuple(record['center']),
                   record['Z'], code, crop,
                   record.get('reinitialized', False))


class Trajectory:
    """ Per-frame poses, centers, depths and the codes that produced them """

    def __init__(self, frames=None, meta=None):
        self.frames = [] if frames is None else list(frames)
        self.meta = {} if meta is None else dict(meta)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, index):
        return self.frames[index]

    def __eq__(self, other):
        if self.__class__ != other.__class__ or len(self) != len(other):
            return False
        return all(a.pose == b.pose for a, b in zip(self.frames,
                                                    other.frames))

    def append(self, frame):
        self.frames.append(frame)

    @property
    def poses(self):
        return [f.pose for f in self.frames]

    def to_dict(self):
        return {'meta': self.meta,
                'frames': [f.to_dict(i) for i, f in enumerate(self.frames)]}

    def save(self, filepath):
        """ Exports the trajectory to JSON """
        from .datasets import write_json

        write_json(self.to_dict(), filepath)

    @classmethod
    def load(cls, filepath):
        """ Imports a trajectory written by `save` """
        from .datasets import read_json

        data = read_json(filepath)
        try:
            records = sorted(data['frames'], key=lambda r: r['frame'])
            frames = [TrajectoryFrame.from_dict(r) for r in records]
        except (KeyError, TypeError, DomainError) as e:
            raise DatasetError(filepath, f'invalid trajectory ({e})')
        return cls(frames, data.get('meta', {}))


@dataclass(eq=False)
class _Observed:
    index: int
    image: np.ndarray
    box: BBox
    mask: object


class Tracker:
    """ Frame-by-frame tracker

    Each step propagates the object box with optical flow, crops the last
    K frames with one shared box, predicts the MotionCode between the last
    two and composes it onto the current pose:
    :code:`R_t = dR R_{t-1}`, :code:`T_t = T_{t-1} + dT`.

    Parameters
    ----------
    K : CameraIntrinsics
    predictor : BasePredictor
    flow_provider : FlowProvider
    mask_refiner : MaskRefiner
    config : TrackConfig, optional
    """

    def __init__(self, K, predictor, flow_provider, mask_refiner,
                 config=None):
        self.K = K
        self.predictor = predictor
        self.flow_provider = flow_provider
        self.mask_refiner = mask_refiner
        self.config = TrackConfig() if config is None else config
        self.history = deque(maxlen=predictor.window_size)
        self.trajectory = None

    @property
    def index(self):
        return self.history[-1].index

    def start(self, image, init):
        """ Sets the state from the first frame """
        size = np.shape(image)[:2]
        box = init.box0.expand(int(self.config.initial_pad), image_size=size)
        mask = self.mask_refiner(image, box, 0)
        if not mask.is_valid():
            raise TrackingLostError('initial mask is empty', 0,
                                    last_valid_index=-1)

        U, V = init.center0
        self.pose = Pose(init.R0, backproject(self.K, U, V, init.Z0))
        self.center, self.Z = (U, V), float(init.Z0)
        self.history.clear()
        self.history.append(_Observed(0, image, box, mask))
        self.trajectory = Trajectory()
        self.trajectory.append(TrajectoryFrame(self.pose, self.center,
                                               self.Z))
        return self.trajectory[0]

    def _window(self):
        observed = list(self.history)
        first = observed[0].index
        by_index = {o.index: o for o in observed}
        indices = window_indices(self.index - first,
                                 self.predictor.window_size)
        chosen = [by_index[first + i] for i in indices]
        size = self.predictor.input_size
        crops, crop = prepare_network_inputs(
            [o.image for o in chosen], [o.mask for o in chosen],
            [o.box for o in chosen], size, size, margin=self.config.margin)
        return Window(crops, crop, tuple(o.index for o in chosen))

    def step(self, image):
        """ Tracks the next frame

        Returns
        -------
        TrajectoryFrame
        """
        prev = self.history[-1]
        t = prev.index + 1
        box, mask = propagate_step(prev.box, (prev.image, image),
                                   self.flow_provider, self.mask_refiner,
                                   prev.index,
                                   pad_fraction=self.config.pad_fraction,
                                   erode=self.config.erode)
        self.history.append(_Observed(t, image, box, mask))

        window = self._window()
        code = self.predictor.predict(window)
        try:
            delta_T, center, Z = decode_translation(self.K, self.center,
                                                    self.Z, code,
                                                    window.crop)
            delta_R = axis_angle_to_matrix(code.omega)
        except DomainError as e:
            raise DomainError(str(e), frame_index=t) from e

        self.pose = self.pose.compose(delta_R, delta_T)
        self.center, self.Z = center, Z
        frame = TrajectoryFrame(self.pose, center, Z, code, window.crop)
        self.trajectory.append(frame)
        return frame

    def reinitialize(self, pose, mask=None):
        """ Resets pose, center, depth and optionally the box at the
        current frame """
        U, V, Z = project(self.K, pose.T)
        self.pose, self.center, self.Z = pose, (U, V), Z
        if mask is not None:
            current = self.history[-1]
            mask = _as_mask(mask, current.index)
            current.box = mask_to_bbox(
                mask, diagonal_pad(mask, self.config.pad_fraction))
            current.mask = self.mask_refiner(current.image, current.box,
                                             current.index)
        self.trajectory[-1].reinitialized = True
        logger.info('re-initialized at frame %d', self.index)

    def run(self, images, init, gt_poses=None, gt_masks=None):
        """ Tracks a whole sequence

        Parameters
        ----------
        images : list of np.ndarray
        init : TrackerInit
        gt_poses : list of Pose, optional
            needed when `config.reinit_every` is set
        gt_masks : list, optional
            masks used to reset the box on re-initialization

        Returns
        -------
        Trajectory

        Raises
        ------
        TrackingLostError
            with the partial trajectory attached
        """
        if len(images) < 2:
            raise DomainError(f'need at least 2 frames (got {len(images)})')
        every = self.config.reinit_every
        if every and gt_poses is None:
            raise DomainError('re-initialization needs ground-truth poses')

        try:
            self.start(images[0], init)
            for t in range(1, len(images)):
                self.step(images[t])
                if every and t % every == 0 and t < len(images) - 1:
                    self.reinitialize(gt_poses[t], None if gt_masks is None
                                      else gt_masks[t])
        except TrackingLostError as e:
            e.trajectory = self.trajectory
            logger.warning('tracking lost at frame %d', e.frame_index)
            raise
        return self.trajectory


def track_sequence(images, init, predictor, K, flow_provider, mask_refiner,
                   config=None, gt_poses=None, gt_masks=None):
    """ Runs a fresh Tracker over `images` """
    tracker = Tracker(K, predictor, flow_provider, mask_refiner, config)
    return tracker.run(images, init, gt_poses=gt_poses, gt_masks=gt_masks)


@dataclass
class ChainingStudy:
    """ Pose errors of noisy chaining runs, shape (runs, frames) """
    rotation_errors: np.ndarray
    translation_errors: np.ndarray

    @property
    def mean_rotation(self):
        return self.rotation_errors.mean(axis=0)

    @property
    def mean_translation(self):
        return self.translation_errors.mean(axis=0)


def simulate_noisy_chaining(gt_poses, K, sigma, runs, rng, crop=None,
                            reinit_every=None):
    """ Chains ground-truth codes perturbed by i.i.d. Gaussian noise

    The crop is held fixed, so the only error source is the injected
    noise and its accumulation through composition.

    Parameters
    ----------
    gt_poses : list of Pose
    K : CameraIntrinsics
    sigma : float or array-like (6,)
        noise std on (du, dv, s, wx, wy, wz)
    runs : int
    rng : numpy.random.Generator
    crop : CropSpec, optional
        defaults to a 128 px box around the image center at 64 px input
    reinit_every : int, optional
        reset to ground truth every N frames

    Returns
    -------
    ChainingStudy
        geodesic errors in degrees and translation errors in mm
    """
    if crop is None:
        crop = CropSpec((K.cx - 64., K.cy - 64., 128., 128.), 64, 64)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (6,))
    n = len(gt_poses)

    codes = []
    for prev, cur in zip(gt_poses[:-1], gt_poses[1:]):
        omega = matrix_to_axis_angle(relative_rotation(prev.R, cur.R))
        codes.append(np.concatenate([encode_translation(K, prev, cur, crop),
                                     omega]))

    rotation = np.zeros((runs, n))
    translation = np.zeros((runs, n))
    for run in range(runs):
        pose = gt_poses[0]
        U, V, Z = project(K, pose.T)
        center = (U, V)
        for t in range(1, n):
            code = MotionCode.from_array(codes[t - 1] +
                                         rng.normal(0., sigma))
            delta_T, center, Z = decode_translation(K, center, Z, code, crop)
            pose = pose.compose(axis_angle_to_matrix(code.omega), delta_T)
            rotation[run, t] = np.rad2deg(geodesic_angle(pose.R,
                                                         gt_poses[t].R))
            translation[run, t] = np.linalg.norm(pose.T - gt_poses[t].T)
            if reinit_every and t % reinit_every == 0:
                pose = gt_poses[t]
                U, V, Z = project(K, pose.T)
                center = (U, V)
    return ChainingStudy(rotation, translation)
