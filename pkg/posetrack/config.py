"""
Configuration dataclasses and their JSON loading

Effective values come from built-in defaults, then a JSON file, then
command-line overrides, in increasing precedence.
"""
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DatasetError

DATA_ROOT_ENV = 'POSETRACK_DATA_ROOT'

MODELS = ('two_frame', 'multi_frame')
ROTATION_REPS = ('axis_angle', 'quaternion', 'euler_xyz', 'sixd')
INIT_MODES = ('gt', 'gauge')

logger = logging.getLogger(__name__)


def data_root():
    """ Default data directory, overridable through POSETRACK_DATA_ROOT """
    return Path(os.environ.get(DATA_ROOT_ENV, 'data'))


def _require(condition, name, message):
    if not condition:
        raise ConfigError(name, message)


@dataclass
class SynthConfig:
    protocol: str
    count: int
    seed: int
    image_size: tuple = (128, 128)
    intrinsics: dict = field(default_factory=lambda: {
        'fx': 160., 'fy': 160., 'cx': 64., 'cy': 64.})
    length: int = None
    n_points: int = 400
    splat_radius: int = 2
    object_size: float = 100.
    randomize: bool = True
    workers: int = 1

    def __post_init__(self):
        _require(self.protocol in ('modelnet_pair', 'shapenet_video'),
                 'protocol', f'unknown protocol {self.protocol}')
        _require(isinstance(self.count, int) and self.count >= 1, 'count',
                 f'must be a positive integer (got {self.count})')
        _require(isinstance(self.seed, int) and self.seed >= 0, 'seed',
                 f'must be a non-negative integer (got {self.seed})')
        self.image_size = tuple(self.image_size)
        _require(len(self.image_size) == 2 and min(self.image_size) >= 8,
                 'image_size', 'must be (height, width) >= 8')
        _require(set(self.intrinsics) == {'fx', 'fy', 'cx', 'cy'},
                 'intrinsics', 'needs exactly fx, fy, cx, cy')
        _require(self.length is None or self.length >= 2, 'length',
                 'must be >= 2')
        _require(self.n_points >= 50, 'n_points', 'must be >= 50')
        _require(self.workers >= 1, 'workers', 'must be >= 1')


@dataclass
class EncoderConfig:
    """ Image embedding network

    `full` restores an 18-layer residual layout at 224 px; otherwise
    `input_size`, `scale` and `blocks_per_stage` shrink it.
    """
    input_size: int = 64
    embed_dim: int = 256
    scale: float = 0.25
    blocks_per_stage: int = 1
    full: bool = False

    def __post_init__(self):
        if self.full:
            self.input_size, self.scale, self.blocks_per_stage = 224, 1., 2
        _require(self.input_size >= 16, 'input_size', 'must be >= 16')
        _require(self.embed_dim >= 8, 'embed_dim', 'must be >= 8')
        _require(0 < self.scale <= 1, 'scale', 'must be in (0, 1]')
        _require(self.blocks_per_stage >= 1, 'blocks_per_stage',
                 'must be >= 1')


@dataclass
class TransformerConfig:
    layers: int = 1
    heads: int = 12
    ff_dim: int = 512
    dropout: float = 0.
    max_len: int = 16

    def __post_init__(self):
        _require(self.layers >= 1, 'layers', 'must be >= 1')
        _require(self.heads >= 1, 'heads', 'must be >= 1')
        _require(self.ff_dim >= 1, 'ff_dim', 'must be >= 1')
        _require(self.dropout == 0, 'dropout', 'dropout is fixed at 0')
        _require(self.max_len >= 2, 'max_len', 'must be >= 2')


@dataclass
class RegressorConfig:
    hidden: tuple = (800, 400, 200)
    rotation_rep: str = 'axis_angle'

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        _require(len(self.hidden) >= 1, 'hidden', 'needs >= 1 hidden layer')
        _require(min(self.hidden) >= 1, 'hidden', 'sizes must be positive')
        _require(self.rotation_rep in ROTATION_REPS, 'rotation_rep',
                 f'must be one of {ROTATION_REPS}')


@dataclass
class TrainConfig:
    model: str = 'two_frame'
    window: int = 2
    batch_size: int = 16
    learning_rate: float = 1e-4
    steps: int = 200
    seed: int = 0
    loss_weight: float = 1.
    log_every: int = 10
    pad_fraction: float = 0.1
    margin: float = 0.1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    regressor: RegressorConfig = field(default_factory=RegressorConfig)

    def __post_init__(self):
        _require(self.model in MODELS, 'model', f'must be one of {MODELS}')
        _require(self.window >= 2, 'window', 'must be >= 2')
        _require(self.model == 'multi_frame' or self.window == 2, 'window',
                 'two_frame models use a window of 2')
        _require(self.window <= self.transformer.max_len, 'window',
                 'exceeds transformer.max_len')
        _require(self.batch_size >= 2, 'batch_size',
                 'must be >= 2 for batch normalization')
        _require(self.learning_rate > 0, 'learning_rate', 'must be > 0')
        _require(self.steps >= 1, 'steps', 'must be >= 1')
        _require(self.loss_weight > 0, 'loss_weight', 'must be > 0')
        _require(self.log_every >= 1, 'log_every', 'must be >= 1')
        if self.model == 'multi_frame' and \
                self.transformer_width != self.encoder.embed_dim:
            logger.info('transformer width padded from %d to %d for %d heads',
                        self.encoder.embed_dim, self.transformer_width,
                        self.transformer.heads)

    @property
    def transformer_width(self):
        """ embedding width rounded up to a multiple of the head count """
        heads = self.transformer.heads
        return int(math.ceil(self.encoder.embed_dim / heads)) * heads


@dataclass
class TrackConfig:
    reinit_every: int = None
    z0: float = 1000.
    init: str = 'gauge'
    pad_fraction: float = 0.1
    initial_pad: int = 0
    margin: float = 0.1
    erode: int = 0

    def __post_init__(self):
        _require(self.reinit_every is None or self.reinit_every >= 1,
                 'reinit_every', 'must be >= 1')
        _require(self.z0 > 0, 'z0', 'must be > 0')
        _require(self.init in INIT_MODES, 'init',
                 f'must be one of {INIT_MODES}')
        _require(self.pad_fraction >= 0, 'pad_fraction', 'must be >= 0')
        _require(self.margin >= 0, 'margin', 'must be >= 0')


@dataclass
class MetricsConfig:
    k_deg: float = 5.
    k_cm: float = 5.
    add_fraction: float = 0.1
    proj2d_px: float = 5.
    auc_max: float = 100.
    segment_len: int = 15

    def __post_init__(self):
        for name in ('k_deg', 'k_cm', 'add_fraction', 'proj2d_px',
                     'auc_max'):
            _require(getattr(self, name) > 0, name, 'must be > 0')
        _require(self.segment_len >= 2, 'segment_len', 'must be >= 2')


def _build(cls, values, prefix=''):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(prefix + unknown[0], 'unknown field')

    kwargs = {}
    for name, f in fields.items():
        if name not in values:
            if f.default is dataclasses.MISSING and \
                    f.default_factory is dataclasses.MISSING:
                raise ConfigError(prefix + name, 'missing required field')
            continue
        value = values[name]
        nested = f.default_factory
        if dataclasses.is_dataclass(nested) and isinstance(value, dict):
            value = _build(nested, value, prefix=f'{prefix}{name}.')
        kwargs[name] = value

    try:
        return cls(**kwargs)
    except ConfigError as e:
        if prefix and not e.field.startswith(prefix):
            raise ConfigError(prefix + e.field, e.message)
        raise


def _merge(base, overrides):
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(cls, path=None, overrides=None):
    """ Builds a config from defaults, a JSON file and overrides

    Parameters
    ----------
    cls : type
        one of the config dataclasses
    path : str or Path, optional
        JSON file with a (possibly nested) object of field values
    overrides : dict, optional
        values taking precedence over the file; None values are ignored

    Returns
    -------
    config : instance of `cls`

    Raises
    ------
    ConfigError
        naming the first offending field
    """
    from .datasets import read_json

    values = {}
    if path is not None:
        try:
            values = read_json(path)
        except DatasetError as e:
            raise ConfigError('config', str(e))
        if not isinstance(values, dict):
            raise ConfigError('config', f'{path} must hold a JSON object')
    values = _merge(values, overrides or {})
    return _build(cls, values)


def config_to_dict(config):
    """ JSON-ready dict of a config, nested configs included """
    return dataclasses.asdict(config)


def config_from_dict(cls, values):
    """ Rebuilds a config from `config_to_dict` output """
    return _build(cls, values)
