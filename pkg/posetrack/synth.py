"""
Procedural synthetic sequences: pose samplers for the pair and video
protocols, a depth-buffered point-splat renderer and ground-truth flow.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import DomainError, SamplingError
from .geometry import CameraIntrinsics, Pose, geodesic_angle, project
from .segmask import FlowField

logger = logging.getLogger(__name__)

PROTOCOLS = ('modelnet_pair', 'shapenet_video')
OBJECT_KINDS = ('box', 'ellipsoid', 'cylinder', 'composite')
BACKGROUND_KINDS = ('solid', 'gradient', 'noise')

DEFAULT_IMAGE_SIZE = (128, 128)
DEFAULT_INTRINSICS = CameraIntrinsics(160., 160., 64., 64.)

# pair protocol
PAIR_TRANSLATION = (0., 0., 500.)
PAIR_ROTATION_STD = np.deg2rad(15.)
PAIR_TRANSLATION_STD = (10., 10., 50.)
PAIR_MAX_ANGLE = np.deg2rad(45.)

# video protocol
VIDEO_DEPTH_RANGE = (400., 2000.)
VIDEO_ROTATION_STD = np.deg2rad(20.)
VIDEO_TRANSLATION_STD = 20.
VIDEO_LENGTH = 100

# perturbations must stay in the axis-angle domain of the predictors
MAX_PERTURBATION_ANGLE = np.pi - 1e-3


@dataclass(eq=False)
class SceneObject:
    """ Colored point cloud standing in for a CAD model

    Parameters
    ----------
    points : np.ndarray (N, 3)
        object-frame coordinates in mm, centered on the origin
    colors : np.ndarray (N, 3)
        RGB in [0, 1]
    splat_radius : int
        radius in pixels of the disk each point is drawn as
    object_id : int
    """
    points: np.ndarray
    colors: np.ndarray
    splat_radius: int = 2
    object_id: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.colors = np.asarray(self.colors, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise DomainError('points must be N x 3 ' +
                              f'(got {self.points.shape})')
        if len(self.points) < 50:
            raise DomainError(f'an object needs >= 50 points ' +
                              f'(got {len(self.points)})')
        if self.colors.shape != self.points.shape:
            raise DomainError('colors must match points')
        if np.abs(self.points.mean(axis=0)).max() > 1e-6:
            raise DomainError('object points must be centered on the origin')

    @property
    def radius(self):
        return float(np.linalg.norm(self.points, axis=1).max())


@dataclass(eq=False)
class RenderedFrame:
    image: np.ndarray
    depth: np.ndarray
    instance_mask: np.ndarray
    gt_pose: Pose
    gt_flow_to_next: FlowField = None
    frame_index: int = 0

    @property
    def empty(self):
        """ True when no object pixel landed in the image """
        return not self.instance_mask.any()


@dataclass
class SequenceSpec:
    """ Recipe for one synthetic sequence

    Parameters
    ----------
    protocol : {'modelnet_pair', 'shapenet_video'}
    length : int, optional
        2 for pairs, 100 by default for videos
    seed : int
        seed of the sequence's own random generator
    image_size : tuple
        (height, width)
    intrinsics : CameraIntrinsics
    """
    protocol: str
    length: int = None
    seed: int = 0
    image_size: tuple = DEFAULT_IMAGE_SIZE
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    sequence_id: int = 0
    n_points: int = 400
    splat_radius: int = 2
    object_size: float = 100.
    randomize: bool = True

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise DomainError(f'unknown protocol {self.protocol} ' +
                              f'(choose from {PROTOCOLS})')
        if self.length is None:
            self.length = 2 if self.protocol == 'modelnet_pair' \
                else VIDEO_LENGTH
        if self.protocol == 'modelnet_pair' and self.length != 2:
            raise DomainError('modelnet_pair sequences have 2 frames')
        if self.length < 2:
            raise DomainError(f'length must be >= 2 (got {self.length})')
        self.image_size = tuple(int(s) for s in self.image_size)

    def to_dict(self):
        return {'protocol': self.protocol, 'length': self.length,
                'seed': int(self.seed), 'sequence_id': self.sequence_id,
                'image_size': list(self.image_size),
                'intrinsics': self.intrinsics.to_dict(),
                'n_points': self.n_points,
                'splat_radius': self.splat_radius,
                'object_size': self.object_size,
                'randomize': self.randomize}


@dataclass(eq=False)
class SyntheticSequence:
    spec: SequenceSpec
    obj: SceneObject
    frames: list = field(default_factory=list)

    @property
    def intrinsics(self):
        return self.spec.intrinsics

    @property
    def poses(self):
        return [f.gt_pose for f in self.frames]

    @property
    def images(self):
        return [f.image for f in self.frames]

    @property
    def masks(self):
        return [f.instance_mask for f in self.frames]

    @property
    def flows(self):
        return [f.gt_flow_to_next for f in self.frames]

    def __len__(self):
        return len(self.frames)


# -- pose sampling ------------------------------------------------------------

def random_rotation(rng):
    """ Uniform rotation from a normalized Gaussian quaternion """
    q = rng.standard_normal(4)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()


def perturbation_matrix(betas):
    """ Rx(bx) Ry(by) Rz(bz) """
    return Rotation.from_euler('XYZ', betas).as_matrix()


def sample_modelnet_pair(rng, max_tries=1000):
    """ Samples a reference pose and its perturbation (pair protocol)

    The reference pose has T = (0, 0, 500) mm and a uniform rotation. The
    second pose is perturbed by per-axis angles ~ N(0, 15 deg) applied as
    R' = Rx Ry Rz R, resampled until the perturbation is below 45 deg, and a
    camera-frame offset with std (10, 10, 50) mm.

    Parameters
    ----------
    rng : numpy.random.Generator
    max_tries : int

    Returns
    -------
    (Pose, Pose)
    """
    R0 = random_rotation(rng)
    for _ in range(max_tries):
        P = perturbation_matrix(rng.normal(0., PAIR_ROTATION_STD, 3))
        if geodesic_angle(P) < PAIR_MAX_ANGLE:
            break
    else:
        raise SamplingError(f'no perturbation below 45 deg in {max_tries} ' +
                            'tries')
    delta = rng.normal(0., PAIR_TRANSLATION_STD)
    T0 = np.array(PAIR_TRANSLATION)
    return Pose(R0, T0), Pose(P @ R0, T0 + delta)


def sample_shapenet_video(rng, length=VIDEO_LENGTH, accept=None,
                          max_tries=1000):
    """ Samples a random-walk pose sequence (video protocol)

    Parameters
    ----------
    rng : numpy.random.Generator
    length : int
        number of poses, >= 2
    accept : callable, optional
        `accept(pose, index) -> bool`; rejected steps are redrawn
    max_tries : int
        redraws allowed per step

    Returns
    -------
    list of Pose

    Notes
    -----
    The first pose has T = (0, 0, Z) with Z ~ U[400, 2000] mm. Each step
    applies per-axis rotations ~ N(0, 20 deg) as R' = Rx Ry Rz R and a
    camera-frame offset ~ N(0, 20 mm) per axis. Steps giving Z <= 0 are
    redrawn, as are perturbations whose angle reaches the axis-angle limit.
    """
    if length < 2:
        raise DomainError(f'length must be >= 2 (got {length})')

    for _ in range(max_tries):
        Z = rng.uniform(*VIDEO_DEPTH_RANGE)
        pose = Pose(random_rotation(rng), (0., 0., Z))
        if accept is None or accept(pose, 0):
            break
    else:
        raise SamplingError('no acceptable first pose')

    poses = [pose]
    while len(poses) < length:
        prev = poses[-1]
        for _ in range(max_tries):
            P = perturbation_matrix(rng.normal(0., VIDEO_ROTATION_STD, 3))
            T = prev.T + rng.normal(0., VIDEO_TRANSLATION_STD, 3)
            if T[2] <= 0 or geodesic_angle(P) >= MAX_PERTURBATION_ANGLE:
                continue
            candidate = Pose(P @ prev.R, T)
            if accept is None or accept(candidate, len(poses)):
                poses.append(candidate)
                break
        else:
            raise SamplingError(f'no acceptable pose for frame {len(poses)}')
    return poses


def in_view(K, image_size, margin=0.15, min_depth=300.):
    """ Predicate keeping the projected center inside the image """
    height, width = image_size

    def accept(pose, index):
        if pose.T[2] < min_depth:
            return False
        U, V, _ = project(K, pose.T)
        return (margin * width <= U <= (1 - margin) * width and
                margin * height <= V <= (1 - margin) * height)

    return accept


# -- objects and backgrounds --------------------------------------------------

def _surface_points(rng, kind, n, size):
    if kind == 'box':
        extents = size * rng.uniform(0.4, 1.0, 3)
        p = rng.uniform(-1., 1., (n, 3))
        axis = rng.integers(0, 3, n)
        p[np.arange(n), axis] = np.sign(p[np.arange(n), axis])
        return p * extents
    if kind == 'ellipsoid':
        radii = size * rng.uniform(0.4, 1.0, 3)
        p = rng.standard_normal((n, 3))
        return p / np.linalg.norm(p, axis=1, keepdims=True) * radii
    if kind == 'cylinder':
        radius, half = size * rng.uniform(0.3, 0.8), size * rng.uniform(0.5, 1)
        theta = rng.uniform(0, 2 * np.pi, n)
        r = np.where(rng.random(n) < 0.75, radius,
                     radius * np.sqrt(rng.random(n)))
        z = np.where(r == radius, rng.uniform(-half, half, n),
                     np.sign(rng.uniform(-1, 1, n)) * half)
        return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    raise DomainError(f'unknown object kind {kind}')


def make_object(rng, n_points=400, size=100., splat_radius=2, kind=None,
                object_id=0):
    """ Random point-sampled primitive with a patchy color palette

    Parameters
    ----------
    rng : numpy.random.Generator
    n_points : int
    size : float
        rough half extent in mm
    splat_radius : int
    kind : {'box', 'ellipsoid', 'cylinder', 'composite'}, optional
        random if None

    Returns
    -------
    SceneObject
    """
    if kind is None:
        kind = OBJECT_KINDS[rng.integers(len(OBJECT_KINDS))]
    if kind == 'composite':
        first, second = rng.choice(OBJECT_KINDS[:3], 2)
        half = n_points // 2
        points = np.concatenate([
            _surface_points(rng, first, half, size * 0.7),
            _surface_points(rng, second, n_points - half, size * 0.5) +
            rng.normal(0, size * 0.4, 3)])
    else:
        points = _surface_points(rng, kind, n_points, size)
    points = points - points.mean(axis=0)

    # Voronoi patches around random anchors make rotations visible
    n_colors = rng.integers(3, 6)
    palette = rng.uniform(0.15, 1.0, (n_colors, 3))
    anchors = points[rng.choice(len(points), n_colors, replace=False)]
    owner = np.argmin(np.linalg.norm(points[:, None] - anchors[None], axis=2),
                      axis=1)
    colors = np.clip(palette[owner] + rng.normal(0, 0.03, points.shape), 0, 1)
    return SceneObject(points, colors, splat_radius, object_id)


def make_background(rng, image_size, kind=None):
    """ Solid, gradient or smoothed-noise RGB background in [0, 1] """
    height, width = image_size
    if kind is None:
        kind = BACKGROUND_KINDS[rng.integers(len(BACKGROUND_KINDS))]
    if kind == 'solid':
        return np.ones((height, width, 3)) * rng.random(3)
    if kind == 'gradient':
        a, b = rng.random(3), rng.random(3)
        angle = rng.uniform(0, 2 * np.pi)
        ys, xs = np.mgrid[0:height, 0:width]
        t = np.cos(angle) * xs / width + np.sin(angle) * ys / height
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
        return a + t[..., None] * (b - a)
    if kind == 'noise':
        noise = ndimage.gaussian_filter(rng.random((height, width, 3)),
                                        sigma=(2, 2, 0))
        return (noise - noise.min()) / max(noise.max() - noise.min(), 1e-12)
    raise DomainError(f'unknown background kind {kind}')


# -- rendering ----------------------------------------------------------------

def _disk_offsets(radius):
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    inside = dx ** 2 + dy ** 2 <= radius ** 2
    return dx[inside], dy[inside]


def _rasterize(obj, pose, K, image_size):
    """ Depth-tested splatting

    Returns
    -------
    depth : np.ndarray (H, W)
        mm, 0 where empty
    owner : np.ndarray (H, W) of int
        index of the point drawn at each pixel, -1 where empty
    """
    height, width = image_size
    cam = pose.transform(obj.points)
    z = cam[:, 2]
    if np.all(z <= 0):
        raise DomainError('object is fully behind the camera')
    front = np.nonzero(z > 0)[0]
    U, V, Z = project(K, cam[front])

    dx, dy = _disk_offsets(obj.splat_radius)
    px = (np.rint(U)[:, None] + dx[None, :]).astype(int).ravel()
    py = (np.rint(V)[:, None] + dy[None, :]).astype(int).ravel()
    points = np.repeat(front, len(dx))
    depths = np.repeat(Z, len(dx))

    inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    px, py, points, depths = px[inside], py[inside], points[inside], \
        depths[inside]

    depth = np.zeros(image_size)
    owner = -np.ones(image_size, dtype=int)
    if px.size:
        pixel = py * width + px
        # nearest depth first within each pixel
        order = np.lexsort((depths, pixel))
        _, first = np.unique(pixel[order], return_index=True)
        winners = order[first]
        depth.flat[pixel[winners]] = depths[winners]
        owner.flat[pixel[winners]] = points[winners]
    return depth, owner


def render_frame(obj, pose, K, image_size=DEFAULT_IMAGE_SIZE,
                 background=None, brightness=1., frame_index=0):
    """ Renders an object as depth-tested disks

    Parameters
    ----------
    obj : SceneObject
    pose : Pose
    K : CameraIntrinsics
    image_size : tuple
        (height, width)
    background : np.ndarray (H, W, 3), optional
        black if None
    brightness : float
        light-like scaling of the object colors

    Returns
    -------
    RenderedFrame
        with `empty` set when the object is outside the frame
    """
    depth, owner = _rasterize(obj, pose, K, image_size)
    mask = owner >= 0
    if background is None:
        image = np.zeros(tuple(image_size) + (3,))
    else:
        image = np.array(background, dtype=float, copy=True)
    image[mask] = np.clip(obj.colors[owner[mask]] * brightness, 0., 1.)
    return RenderedFrame(image, depth, mask, pose, frame_index=frame_index)


def compute_gt_flow(obj, pose_t, pose_t1, K, image_size=DEFAULT_IMAGE_SIZE,
                    frame_index=0):
    """ Ground-truth optical flow of the object from pose_t to pose_t1

    Each visible pixel of frame t receives the image motion of the point
    drawn there; background flow is zero, as is the flow of points that
    end up behind the camera at t + 1.

    Returns
    -------
    FlowField
    """
    _, owner = _rasterize(obj, pose_t, K, image_size)
    grid = np.zeros(tuple(image_size) + (2,))
    mask = owner >= 0
    drawn = np.unique(owner[mask])
    if drawn.size == 0:
        return FlowField(grid, frame_index, frame_index + 1)

    cam_t = pose_t.transform(obj.points[drawn])
    cam_t1 = pose_t1.transform(obj.points[drawn])
    motion = np.zeros((len(obj.points), 2))
    ahead = cam_t1[:, 2] > 0
    U0, V0, _ = project(K, cam_t[ahead])
    U1, V1, _ = project(K, cam_t1[ahead])
    motion[drawn[ahead]] = np.stack([U1 - U0, V1 - V0], axis=-1)
    grid[mask] = motion[owner[mask]]
    return FlowField(grid, frame_index, frame_index + 1)


def generate_sequence(spec):
    """ Renders the sequence described by a SequenceSpec

    Returns
    -------
    SyntheticSequence
    """
    rng = np.random.default_rng(spec.seed)
    K, image_size = spec.intrinsics, spec.image_size
    obj = make_object(rng, spec.n_points, spec.object_size,
                      spec.splat_radius, object_id=spec.sequence_id)
    if spec.randomize:
        background = make_background(rng, image_size)
        brightness = rng.uniform(0.6, 1.2)
    else:
        background, brightness = None, 1.

    if spec.protocol == 'modelnet_pair':
        poses = list(sample_modelnet_pair(rng))
    else:
        min_depth = max(3 * spec.object_size, 1.5 * obj.radius)
        accept = in_view(K, image_size, min_depth=min_depth)
        poses = sample_shapenet_video(rng, spec.length, accept=accept)

    frames = [render_frame(obj, pose, K, image_size, background, brightness,
                           frame_index=t) for t, pose in enumerate(poses)]
    for t in range(len(frames) - 1):
        frames[t].gt_flow_to_next = compute_gt_flow(obj, poses[t],
                                                    poses[t + 1], K,
                                                    image_size, t)
    return SyntheticSequence(spec, obj, frames)


def derive_seed(master_seed, sequence_id):
    """ Independent 64-bit seed of a sequence """
    seq = np.random.SeedSequence([int(master_seed), int(sequence_id)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_specs(protocol, count, master_seed, **kwargs):
    """ SequenceSpecs with seeds derived from a master seed """
    return [SequenceSpec(protocol, seed=derive_seed(master_seed, i),
                         sequence_id=i, **kwargs) for i in range(count)]


def sequence_dirname(sequence_id):
    return f'seq_{sequence_id:06d}'


def _generate_and_write(spec, output_dir):
    from .datasets import write_sequence

    sequence = generate_sequence(spec)
    write_sequence(sequence, Path(output_dir) / sequence_dirname(
        spec.sequence_id))
    return spec.sequence_id


def generate_dataset(specs, output_dir, master_seed=None, config=None,
                     workers=1):
    """ Generates and writes a list of sequences plus a manifest

    Parameters
    ----------
    specs : list of SequenceSpec
    output_dir : str or Path
    master_seed : int, optional
        recorded in the manifest
    config : dict, optional
        effective configuration echoed into the manifest
    workers : int
        number of worker processes; output does not depend on it

    Returns
    -------
    manifest : dict
    """
    from .datasets import write_json

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for sequence_id in pool.map(_generate_and_write, specs,
                                        [output_dir] * len(specs)):
                logger.info('wrote sequence %d', sequence_id)
    else:
        for spec in specs:
            _generate_and_write(spec, output_dir)
            logger.info('wrote sequence %d', spec.sequence_id)

    manifest = {
        'master_seed': master_seed,
        'config': config if config is not None else {},
        'sequences': [{'id': spec.sequence_id,
                       'seed': int(spec.seed),
                       'protocol': spec.protocol,
                       'length': spec.length,
                       'path': sequence_dirname(spec.sequence_id)}
                      for spec in specs],
    }
    write_json(manifest, output_dir / 'manifest.json')
    return manifest
