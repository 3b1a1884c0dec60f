import json
import logging
import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ...config import TrainConfig, config_from_dict, config_to_dict
from ...errors import DatasetError, DomainError
from ...geometry import (MotionCode, RotationRep, encode_translation,
                         matrix_to_axis_angle, relative_rotation,
                         rotation_convert)
from .layers import MotionNet

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'posetrack-checkpoint'
CHECKPOINT_VERSION = 1

_DTYPES = {torch.float32: '<f4', torch.float64: '<f8', torch.int64: '<i8'}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}

__all__ = ['Window', 'BasePredictor', 'LearnedPredictor',
           'TwoFramePredictor', 'MultiFramePredictor', 'OraclePredictor',
           'NoisyOraclePredictor', 'build_predictor', 'load_predictor',
           'save_checkpoint', 'load_checkpoint', 'images_to_tensor']


@dataclass(eq=False)
class Window:
    """ Network input of one tracking step

    Parameters
    ----------
    images : np.ndarray (K, S, S, 3)
        masked crops, oldest first; the last two are frames t-1 and t
    crop : CropSpec
        the crop shared by the K frames
    frame_indices : tuple of int
        source frame of each crop (repeated at sequence start)
    """
    images: np.ndarray
    crop: object
    frame_indices: tuple


def images_to_tensor(images):
    """ (..., S, S, 3) float images to a (..., 3, S, S) float32 tensor """
    x = torch.as_tensor(np.asarray(images, dtype=np.float32))
    return x.movedim(-1, -3).contiguous()


class BasePredictor:
    """ Base class for motion predictors

    A predictor consumes a Window of `window_size` crops and returns the
    MotionCode between its last two frames.
    """
    window_size = 2
    input_size = 64

    def predict(self, window):
        raise NotImplementedError

    def check_window(self, window):
        if len(window.images) != self.window_size:
            raise DomainError(f'{type(self).__name__} takes ' +
                              f'{self.window_size} frames ' +
                              f'(got {len(window.images)})')


class LearnedPredictor(BasePredictor):
    """ Predictor backed by a MotionNet

    Parameters
    ----------
    config : TrainConfig
    seed : int, optional
        seeds parameter initialization; defaults to `config.seed`
    """

    def __init__(self, config=None, seed=None):
        if config is None:
            config = TrainConfig(model=self.model_name,
                                 window=self.default_window)
        if config.model != self.model_name:
            raise DomainError(f'{type(self).__name__} needs model ' +
                              f'"{self.model_name}" (got "{config.model}")')
        self.config = config
        self.window_size = config.window
        self.input_size = config.encoder.input_size
        self.rotation_rep = config.regressor.rotation_rep
        self.steps_ = 0

        torch.manual_seed(config.seed if seed is None else seed)
        transformer = config.transformer if self.model_name == \
            'multi_frame' else None
        self.net = MotionNet(config.encoder, config.regressor, transformer)

    def __eq__(self, other):
        if self.__class__ != other.__class__ or \
                config_to_dict(self.config) != config_to_dict(other.config):
            return False
        mine, theirs = self.net.state_dict(), other.net.state_dict()
        return mine.keys() == theirs.keys() and \
            all(torch.equal(mine[k], theirs[k]) for k in mine)

    def __str__(self):
        n_params = sum(p.numel() for p in self.net.parameters())
        to_print = f'\n{type(self).__name__}: {self.model_name}, ' + \
            f'window {self.window_size}, {self.rotation_rep} rotations\n'
        to_print += f'   Parameters: {n_params}\n'
        to_print += f'   Trained steps: {self.steps_}\n'
        return to_print

    def fit(self, samples, config=None):
        """ Trains the network on a list of WindowSamples

        Returns
        -------
        LossCurve
        """
        from .training import train

        config = self.config if config is None else config
        curve = train(self.net, samples, config)
        self.steps_ += len(curve)
        return curve

    def forward(self, images):
        """ Raw network outputs for a (B, K, S, S, 3) array or tensor """
        if not torch.is_tensor(images):
            images = images_to_tensor(images)
        return self.net(images)

    def _to_axis_angle(self, values):
        if self.rotation_rep == 'axis_angle':
            return values
        if self.rotation_rep == 'quaternion':
            values = values / np.linalg.norm(values)
        rep = rotation_convert(RotationRep(self.rotation_rep, values),
                               'axis_angle')
        return rep.values

    def predict(self, window):
        """ MotionCode between the last two frames of a window """
        self.check_window(window)
        if not self.steps_:
            warnings.warn('predicting with an untrained network')
        self.net.eval()
        with torch.no_grad():
            rotation, translation = self.forward(window.images[None])
        rotation = rotation[0].double().numpy()
        du, dv, s = translation[0].double().numpy()
        return MotionCode(du, dv, s, self._to_axis_angle(rotation))

    def save(self, filepath):
        """ Writes the network and its configuration to a checkpoint """
        header = {'model': self.model_name,
                  'config': config_to_dict(self.config),
                  'seed': self.config.seed,
                  'steps': self.steps_}
        save_checkpoint(filepath, self.net.state_dict(), header)

    @classmethod
    def load(cls, filepath):
        return load_predictor(filepath)


class TwoFramePredictor(LearnedPredictor):
    """ Embeds frames t-1 and t and regresses their motion directly """
    model_name = 'two_frame'
    default_window = 2


class MultiFramePredictor(LearnedPredictor):
    """ Correlates K frame embeddings with self-attention before regressing
    the motion between the last two """
    model_name = 'multi_frame'
    default_window = 5


def build_predictor(config, seed=None):
    """ Predictor class matching `config.model` """
    classes = {'two_frame': TwoFramePredictor,
               'multi_frame': MultiFramePredictor}
    return classes[config.model](config, seed=seed)


class OraclePredictor(BasePredictor):
    """ Returns the ground-truth MotionCode of each window

    Parameters
    ----------
    K : CameraIntrinsics
    poses : list of Pose
        ground-truth poses indexed by frame
    window_size : int
    input_size : int
        crop resolution the tracker prepares
    """

    def __init__(self, K, poses, window_size=2, input_size=64):
        self.K = K
        self.poses = list(poses)
        self.window_size = window_size
        self.input_size = input_size

    def code(self, prev_index, cur_index, crop):
        prev, cur = self.poses[prev_index], self.poses[cur_index]
        du, dv, s = encode_translation(self.K, prev, cur, crop)
        omega = matrix_to_axis_angle(relative_rotation(prev.R, cur.R))
        return MotionCode(du, dv, s, omega)

    def predict(self, window):
        self.check_window(window)
        return self.code(window.frame_indices[-2], window.frame_indices[-1],
                         window.crop)


class NoisyOraclePredictor(BasePredictor):
    """ Adds i.i.d. Gaussian noise to another predictor's codes

    Parameters
    ----------
    predictor : BasePredictor
    sigma : float or array-like (6,)
        noise std on (du, dv, s, wx, wy, wz)
    rng : numpy.random.Generator
    """

    def __init__(self, predictor, sigma, rng):
        self.predictor = predictor
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (6,))
        self.rng = rng

    @property
    def window_size(self):
        return self.predictor.window_size

    @property
    def input_size(self):
        return self.predictor.input_size

    def predict(self, window):
        code = self.predictor.predict(window)
        noisy = code.as_array() + self.rng.normal(0., self.sigma)
        return MotionCode.from_array(noisy)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(filepath, state_dict, header):
    """ Writes named tensors after a JSON header

    Layout: 8-byte little-endian header length, the UTF-8 JSON header,
    then the raw little-endian bytes of each tensor in header order.
    """
    tensors, blobs, offset = [], [], 0
    for name, tensor in state_dict.items():
        tensor = tensor.detach().cpu().contiguous()
        if tensor.dtype not in _DTYPES:
            raise DomainError(f'cannot store {name} of dtype {tensor.dtype}')
        blob = tensor.numpy().astype(_DTYPES[tensor.dtype]).tobytes()
        tensors.append({'name': name, 'shape': list(tensor.shape),
                        'dtype': _DTYPES[tensor.dtype], 'offset': offset,
                        'nbytes': len(blob)})
        blobs.append(blob)
        offset += len(blob)

    header = dict(header, format=CHECKPOINT_FORMAT,
                  version=CHECKPOINT_VERSION, tensors=tensors)
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')

    filepath = Path(filepath)
    tmp = filepath.with_name(f'.{filepath.name}.tmp-{os.getpid()}')
    with open(tmp, 'wb') as f:
        f.write(struct.pack('<Q', len(encoded)))
        f.write(encoded)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, filepath)


def load_checkpoint(filepath):
    """ Reads a checkpoint written by `save_checkpoint`

    Returns
    -------
    header : dict
    state_dict : dict of torch.Tensor
    """
    filepath = Path(filepath)
    try:
        data = filepath.read_bytes()
    except FileNotFoundError:
        raise DatasetError(filepath, 'checkpoint not found')
    if len(data) < 8:
        raise DatasetError(filepath, 'truncated checkpoint')
    (length,) = struct.unpack('<Q', data[:8])
    try:
        header = json.loads(data[8:8 + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DatasetError(filepath, 'unreadable checkpoint header')
    if header.get('format') != CHECKPOINT_FORMAT:
        raise DatasetError(filepath, 'not a posetrack checkpoint')

    body = data[8 + length:]
    state_dict = {}
    for entry in header['tensors']:
        start, stop = entry['offset'], entry['offset'] + entry['nbytes']
        if stop > len(body):
            raise DatasetError(filepath, f'tensor {entry["name"]} is ' +
                               'truncated')
        array = np.frombuffer(body[start:stop], dtype=entry['dtype'])
        tensor = torch.from_numpy(array.reshape(entry['shape']).copy())
        state_dict[entry['name']] = tensor.to(_TORCH_DTYPES[entry['dtype']])
    return header, state_dict


def load_predictor(filepath):
    """ Rebuilds a trained predictor from a checkpoint

    Returns
    -------
    TwoFramePredictor or MultiFramePredictor
    """
    header, state_dict = load_checkpoint(filepath)
    config = config_from_dict(TrainConfig, header['config'])
    predictor = build_predictor(config)
    predictor.net.load_state_dict(state_dict)
    predictor.steps_ = header.get('steps', 0)
    logger.info('loaded %s predictor trained for %d steps', config.model,
                predictor.steps_)
    return predictor

