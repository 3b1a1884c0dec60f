"""
Network blocks of the motion predictors: a residual image encoder, a
frame-sequence transformer and the two-headed pose regressor.
"""
import math

import torch
import torch.nn as nn

from ...errors import DomainError
from ...geometry import get_representation


class BasicBlock(nn.Module):
    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride, 1,
                               bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, 1, 1,
                               bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)

        self.shortcut = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride, bias=False),
                nn.BatchNorm2d(out_channels))

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class FrameEncoder(nn.Module):
    """ Residual encoder mapping each masked crop to one embedding

    Four stages of basic blocks, global average pooling and a linear
    projection to `embed_dim`. With `config.full` the layout is the
    18-layer one (64 base channels, two blocks per stage, 7x7 stem).

    Parameters
    ----------
    config : EncoderConfig
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        width = max(8, int(round(64 * config.scale)))
        widths = [width, 2 * width, 4 * width, 8 * width]

        if config.full:
            self.stem = nn.Sequential(
                nn.Conv2d(3, width, 7, 2, 3, bias=False),
                nn.BatchNorm2d(width), nn.ReLU(inplace=True),
                nn.MaxPool2d(3, 2, 1))
        else:
            self.stem = nn.Sequential(
                nn.Conv2d(3, width, 3, 2, 1, bias=False),
                nn.BatchNorm2d(width), nn.ReLU(inplace=True))

        blocks, in_channels = [], width
        for i, out_channels in enumerate(widths):
            for j in range(config.blocks_per_stage):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(BasicBlock(in_channels, out_channels, stride))
                in_channels = out_channels
        self.stages = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.project = nn.Linear(in_channels, config.embed_dim)

    @property
    def embed_dim(self):
        return self.config.embed_dim

    def forward(self, images):
        """
        Parameters
        ----------
        images : torch.Tensor (B, K, 3, S, S)

        Returns
        -------
        torch.Tensor (B, K, embed_dim)
        """
        size = self.config.input_size
        if images.dim() != 5 or images.shape[2:] != (3, size, size):
            raise DomainError(f'expected (B, K, 3, {size}, {size}) images ' +
                              f'(got {tuple(images.shape)})')
        B, K = images.shape[:2]
        x = self.stages(self.stem(images.reshape(B * K, 3, size, size)))
        x = self.project(torch.flatten(self.pool(x), 1))
        return x.reshape(B, K, -1)


class FrameTransformer(nn.Module):
    """ Self-attention across the K frame embeddings of a window

    Learned per-index positional embeddings are added before attention.
    When the embedding width is not a multiple of the number of heads the
    features are zero-padded to the next multiple and truncated on output.

    Parameters
    ----------
    embed_dim : int
    config : TransformerConfig
    """

    def __init__(self, embed_dim, config):
        super().__init__()
        self.config = config
        self.embed_dim = embed_dim
        self.model_dim = int(math.ceil(embed_dim / config.heads)) * \
            config.heads
        self.positions = nn.Parameter(torch.zeros(config.max_len, embed_dim))
        nn.init.normal_(self.positions, std=0.02)

        layer = nn.TransformerEncoderLayer(
            d_model=self.model_dim, nhead=config.heads,
            dim_feedforward=config.ff_dim, dropout=config.dropout,
            batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(layer, config.layers,
                                             enable_nested_tensor=False)

    def forward(self, features):
        """
        Parameters
        ----------
        features : torch.Tensor (B, K, embed_dim)

        Returns
        -------
        torch.Tensor (B, K, embed_dim)
        """
        K = features.shape[1]
        if K < 2:
            raise DomainError(f'a window needs at least 2 frames (got {K})')
        if K > self.config.max_len:
            raise DomainError(f'window of {K} frames exceeds the ' +
                              f'positional capacity {self.config.max_len}')
        if features.shape[2] != self.embed_dim:
            raise DomainError(f'expected {self.embed_dim}-dim features ' +
                              f'(got {features.shape[2]})')
        x = features + self.positions[:K]
        pad = self.model_dim - self.embed_dim
        if pad:
            x = nn.functional.pad(x, (0, pad))
        return self.encoder(x)[..., :self.embed_dim]


def _mlp(in_dim, hidden, out_dim):
    layers = []
    for width in hidden:
        layers += [nn.Linear(in_dim, width), nn.BatchNorm1d(width),
                   nn.ReLU(inplace=True)]
        in_dim = width
    layers.append(nn.Linear(in_dim, out_dim))
    return nn.Sequential(*layers)


class PoseRegressor(nn.Module):
    """ Rotation and translation heads on concatenated frame features

    Parameters
    ----------
    embed_dim : int
    config : RegressorConfig

    Notes
    -----
    The rotation head emits the values of `config.rotation_rep` (three for
    axis-angle); the translation head emits (du, dv, s).
    """

    def __init__(self, embed_dim, config):
        super().__init__()
        self.config = config
        self.embed_dim = embed_dim
        self.rotation_values = get_representation(
            config.rotation_rep).num_values
        self.rotation_head = _mlp(2 * embed_dim, config.hidden,
                                  self.rotation_values)
        self.translation_head = _mlp(2 * embed_dim, config.hidden, 3)

    def forward(self, f_prev, f_cur):
        if f_prev.shape[-1] != self.embed_dim or \
                f_cur.shape[-1] != self.embed_dim:
            raise DomainError(f'expected {self.embed_dim}-dim features ' +
                              f'(got {f_prev.shape[-1]}, {f_cur.shape[-1]})')
        x = torch.cat([f_prev, f_cur], dim=-1)
        return self.rotation_head(x), self.translation_head(x)


class MotionNet(nn.Module):
    """ Encoder, optional transformer and regressor chained together

    Only the embeddings of the last two frames reach the regressor. Without
    a transformer config the network is the two-frame model.
    """

    def __init__(self, encoder_config, regressor_config,
                 transformer_config=None):
        super().__init__()
        self.encoder = FrameEncoder(encoder_config)
        self.transformer = None
        if transformer_config is not None:
            self.transformer = FrameTransformer(encoder_config.embed_dim,
                                                transformer_config)
        self.regressor = PoseRegressor(encoder_config.embed_dim,
                                       regressor_config)

    def forward(self, images):
        features = self.encoder(images)
        if self.transformer is not None:
            features = self.transformer(features)
        return self.regressor(features[:, -2], features[:, -1])
