"""
Methods for reading and writing sequences, poses and manifests on disk

A sequence directory holds::

    frames/NNNNNN.png   8-bit RGB
    depth/NNNNNN.png    16-bit grayscale, mm (optional)
    masks/NNNNNN.png    binary (optional)
    flow/NNNNNN.npy     H x W x 2 flow to the next frame (optional)
    model_points.npy    object points, mm (optional)
    poses.json          list of PoseRecords
    meta.json           intrinsics, image size, protocol, seed
"""
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError, DomainError
from .geometry import CameraIntrinsics, Pose, check_rotation
from .segmask import FlowField, Mask

logger = logging.getLogger(__name__)

META_FIELDS = ('intrinsics', 'image_size', 'protocol', 'seed')


def write_json(data, filepath):
    """ Writes JSON through a temporary file and an atomic rename

    Floats keep their full repr so poses reload exactly. NaN and infinity
    are not valid JSON and raise DatasetError.
    """
    filepath = Path(filepath)
    try:
        text = json.dumps(data, indent=2, sort_keys=True, allow_nan=False)
    except ValueError as e:
        raise DatasetError(filepath, str(e))
    tmp = filepath.with_name(f'.{filepath.name}.tmp-{os.getpid()}')
    with open(tmp, 'w') as f:
        f.write(text + '\n')
    os.replace(tmp, filepath)


def read_json(filepath):
    filepath = Path(filepath)
    try:
        with open(filepath, 'r') as f:
            return json.load(f)
    except FileNotFoundError:
        raise DatasetError(filepath, 'file not found')
    except json.JSONDecodeError as e:
        raise DatasetError(filepath, f'invalid JSON ({e})')


def pose_to_record(pose, frame):
    """ PoseRecord: row-major R, T in mm and the frame index """
    return {'frame': int(frame),
            'R': [float(r) for r in np.asarray(pose.R).ravel()],
            'T': [float(t) for t in pose.T]}


def record_to_pose(record):
    """ Inverse of `pose_to_record`

    Raises
    ------
    DomainError
        if R is not orthonormal within 1e-6
    """
    for key in ('frame', 'R', 'T'):
        if key not in record:
            raise DomainError(f'pose record is missing "{key}"')
    if len(record['R']) != 9 or len(record['T']) != 3:
        raise DomainError('pose record needs 9 rotation and 3 translation ' +
                          'values')
    R = np.array(record['R'], dtype=float).reshape(3, 3)
    check_rotation(R, name=f'R of frame {record["frame"]}')
    return Pose(R, np.array(record['T'], dtype=float))


def write_poses(poses, filepath):
    write_json([pose_to_record(p, i) for i, p in enumerate(poses)], filepath)


def read_poses(filepath):
    records = read_json(filepath)
    if not isinstance(records, list):
        raise DatasetError(filepath, 'expected a list of pose records')
    try:
        records = sorted(records, key=lambda r: r['frame'])
        return [record_to_pose(r) for r in records]
    except (DomainError, KeyError, TypeError) as e:
        raise DatasetError(filepath, str(e))


def _frame_name(index, suffix='.png'):
    return f'{index:06d}{suffix}'


def _save_rgb(image, filepath):
    pixels = np.rint(np.clip(image, 0., 1.) * 255).astype(np.uint8)
    Image.fromarray(pixels).save(filepath)


def _save_depth(depth, filepath):
    if np.any(depth > np.iinfo(np.uint16).max):
        logger.warning('clipping depth beyond 65535 mm in %s', filepath)
    pixels = np.rint(np.clip(depth, 0, np.iinfo(np.uint16).max))
    Image.fromarray(pixels.astype(np.uint16)).save(filepath)


def _save_mask(mask, filepath):
    pixels = np.asarray(mask, bool).astype(np.uint8) * 255
    Image.fromarray(pixels).save(filepath)


def write_sequence(sequence, directory):
    """ Writes a SyntheticSequence to `directory`

    Files go to a sibling temporary directory first, which is renamed into
    place once complete.

    Parameters
    ----------
    sequence : SyntheticSequence
    directory : str or Path

    Returns
    -------
    Path
    """
    directory = Path(directory)
    tmp = directory.with_name(f'.{directory.name}.tmp-{os.getpid()}')
    if tmp.exists():
        shutil.rmtree(tmp)
    for sub in ('frames', 'depth', 'masks', 'flow'):
        (tmp / sub).mkdir(parents=True)

    for t, frame in enumerate(sequence.frames):
        _save_rgb(frame.image, tmp / 'frames' / _frame_name(t))
        _save_depth(frame.depth, tmp / 'depth' / _frame_name(t))
        _save_mask(frame.instance_mask, tmp / 'masks' / _frame_name(t))
        if frame.gt_flow_to_next is not None:
            np.save(tmp / 'flow' / _frame_name(t, '.npy'),
                    frame.gt_flow_to_next.grid)

    np.save(tmp / 'model_points.npy', sequence.obj.points)
    write_poses(sequence.poses, tmp / 'poses.json')

    spec = sequence.spec
    write_json({'intrinsics': spec.intrinsics.to_dict(),
                'image_size': list(spec.image_size),
                'protocol': spec.protocol,
                'seed': int(spec.seed),
                'length': len(sequence),
                'sequence_id': spec.sequence_id}, tmp / 'meta.json')

    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)
    return directory


@dataclass(eq=False)
class SequenceOnDisk:
    """ A sequence loaded back from its directory

    Optional parts (depths, masks, flows, model_points) are None when the
    directory does not provide them.
    """
    path: Path
    intrinsics: CameraIntrinsics
    image_size: tuple
    protocol: str
    seed: int
    poses: list
    images: list
    depths: list = None
    masks: list = None
    flows: list = None
    model_points: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)


def read_meta(directory):
    filepath = Path(directory) / 'meta.json'
    meta = read_json(filepath)
    missing = [k for k in META_FIELDS if k not in meta]
    if missing:
        raise DatasetError(filepath, f'missing fields {missing}')
    try:
        meta['intrinsics'] = CameraIntrinsics(**meta['intrinsics'])
    except (TypeError, DomainError) as e:
        raise DatasetError(filepath, f'invalid intrinsics ({e})')
    return meta


def _read_images(directory, n):
    files = [directory / _frame_name(t) for t in range(n)]
    if not all(f.exists() for f in files):
        return None
    return [np.array(Image.open(f)) for f in files]


def read_sequence(directory):
    """ Reads a sequence directory

    Parameters
    ----------
    directory : str or Path

    Returns
    -------
    SequenceOnDisk

    Raises
    ------
    DatasetError
        if files are missing or poses and frames disagree in length
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(directory, 'not a sequence directory')
    meta = read_meta(directory)
    poses = read_poses(directory / 'poses.json')
    n = len(poses)

    rgb = _read_images(directory / 'frames', n)
    if rgb is None or len(list((directory / 'frames').glob('*.png'))) != n:
        raise DatasetError(directory, f'expected {n} frames matching ' +
                           'poses.json')
    images = [im[..., :3].astype(float) / 255. for im in rgb]

    depths = _read_images(directory / 'depth', n)
    if depths is not None:
        depths = [d.astype(float) for d in depths]
    masks = _read_images(directory / 'masks', n)
    if masks is not None:
        masks = [Mask(m > 127, t) for t, m in enumerate(masks)]

    flows = None
    flow_files = [directory / 'flow' / _frame_name(t, '.npy')
                  for t in range(n - 1)]
    if n > 1 and all(f.exists() for f in flow_files):
        flows = [FlowField(np.load(f), t, t + 1)
                 for t, f in enumerate(flow_files)]

    points_file = directory / 'model_points.npy'
    model_points = np.load(points_file) if points_file.exists() else None

    image_size = tuple(meta['image_size'])
    if images[0].shape[:2] != image_size:
        raise DatasetError(directory, f'frames are {images[0].shape[:2]}, ' +
                           f'meta.json says {image_size}')

    return SequenceOnDisk(directory, meta['intrinsics'], image_size,
                          meta['protocol'], meta['seed'], poses, images,
                          depths, masks, flows, model_points, meta)


def read_manifest(data_dir):
    filepath = Path(data_dir) / 'manifest.json'
    manifest = read_json(filepath)
    if 'sequences' not in manifest:
        raise DatasetError(filepath, 'missing "sequences"')
    return manifest


def sequence_dirs(data_dir):
    """ Sequence directories of a dataset, in manifest order

    A single sequence directory (holding meta.json) is returned alone.
    """
    data_dir = Path(data_dir)
    if (data_dir / 'meta.json').exists():
        return [data_dir]
    manifest = read_manifest(data_dir)
    return [data_dir / s['path'] for s in manifest['sequences']]
