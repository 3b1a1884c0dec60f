"""
Losses, training windows and the training loop of the motion predictors
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from ...errors import (AmbiguityError, DomainError, NonFiniteLossError,
                       TrackingLostError)
from ...geometry import encode_translation, matrix_to_rotation, \
    relative_rotation
from ...segmask import (Mask, OracleFlowProvider, OracleMaskRefiner,
                        diagonal_pad, mask_to_bbox, prepare_network_inputs,
                        propagate_sequence)
from .predictors import images_to_tensor

logger = logging.getLogger(__name__)


def loss_translation(pred, target, weight=1.):
    """ Smooth-L1 loss on (du, dv) plus `weight` times smooth-L1 on s

    Parameters
    ----------
    pred, target : torch.Tensor (..., 3)
        (du, dv, s)
    weight : float
        lambda, the weight of the depth term

    Returns
    -------
    torch.Tensor
        mean over the batch of the per-sample sum
    """
    per_axis = F.smooth_l1_loss(pred, target, reduction='none', beta=1.)
    weights = per_axis.new_tensor([1., 1., weight])
    return (per_axis * weights).sum(dim=-1).mean()


def loss_rotation(omega, omega_star):
    """ Squared Euclidean distance between rotation values, batch mean """
    return ((omega - omega_star) ** 2).sum(dim=-1).mean()


@dataclass(eq=False)
class WindowSample:
    """ One training window and its ground-truth MotionCode

    Parameters
    ----------
    images : np.ndarray (K, S, S, 3)
    translation : np.ndarray (3,)
        (du, dv, s) between the last two frames
    rotation : np.ndarray
        relative rotation in the predictor's representation
    frame_indices : tuple of int
    crop : CropSpec
    """
    images: np.ndarray
    translation: np.ndarray
    rotation: np.ndarray
    frame_indices: tuple
    crop: object = None
    sequence_id: int = 0


def window_indices(t, window):
    """ Frames feeding the window ending at t; repeats frame 0 early on """
    return tuple(max(0, i) for i in range(t - window + 1, t + 1))


def build_windows(sequence, window, input_size, rotation_rep='axis_angle',
                  pad_fraction=0.1, margin=0.1, sequence_id=0):
    """ Training windows of a sequence with ground-truth targets

    Boxes come from propagating the first ground-truth box with the
    sequence's own flow and masks, and each target is encoded with the
    CropSpec the crops were cut with.

    Parameters
    ----------
    sequence : SyntheticSequence or SequenceOnDisk
        needs images, masks, flows, poses and intrinsics
    window : int
        frames per window, >= 2
    input_size : int
        crop resolution
    rotation_rep : str
    pad_fraction, margin : float
        box padding and crop margin, as in tracking

    Returns
    -------
    list of WindowSample
        empty when the object is lost during propagation
    """
    if window < 2:
        raise DomainError(f'window must be >= 2 (got {window})')
    if sequence.masks is None or sequence.flows is None:
        raise DomainError('building windows needs masks and flows')

    masks = [Mask(getattr(m, 'grid', m), t)
             for t, m in enumerate(sequence.masks)]
    refiner = OracleMaskRefiner(masks)
    provider = OracleFlowProvider(sequence.flows)
    try:
        box0 = mask_to_bbox(masks[0], diagonal_pad(masks[0], pad_fraction))
        boxes, masks = propagate_sequence(sequence.images, box0, provider,
                                          refiner,
                                          pad_fraction=pad_fraction)
    except TrackingLostError as e:
        logger.warning('skipping sequence %d: %s', sequence_id, e)
        return []

    K, poses, samples = sequence.intrinsics, sequence.poses, []
    for t in range(1, len(sequence.images)):
        indices = window_indices(t, window)
        crops, crop = prepare_network_inputs(
            [sequence.images[i] for i in indices], [masks[i] for i in indices],
            [boxes[i] for i in indices], input_size, input_size,
            margin=margin)
        translation = np.array(encode_translation(K, poses[t - 1], poses[t],
                                                  crop))
        try:
            rotation = matrix_to_rotation(
                relative_rotation(poses[t - 1].R, poses[t].R),
                rotation_rep).values
        except AmbiguityError:
            logger.debug('skipping ambiguous rotation at frame %d', t)
            continue
        samples.append(WindowSample(crops, translation, rotation, indices,
                                    crop, sequence_id))
    return samples


class WindowDataset(Dataset):
    def __init__(self, samples):
        self.samples = list(samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index):
        sample = self.samples[index]
        return (images_to_tensor(sample.images),
                torch.as_tensor(sample.rotation, dtype=torch.float32),
                torch.as_tensor(sample.translation, dtype=torch.float32))


@dataclass
class LossCurve:
    """ Per-step training losses """
    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    loss_translation: list = field(default_factory=list)
    loss_rotation: list = field(default_factory=list)

    def __len__(self):
        return len(self.step)

    def append(self, step, translation, rotation):
        self.step.append(step)
        self.loss_translation.append(translation)
        self.loss_rotation.append(rotation)
        self.loss.append(translation + rotation)

    @property
    def final(self):
        return self.loss[-1] if self.loss else None

    def to_frame(self):
        return pd.DataFrame({'step': self.step, 'loss': self.loss,
                             'loss_translation': self.loss_translation,
                             'loss_rotation': self.loss_rotation})


def train(net, samples, config):
    """ Minimizes translation plus rotation loss with Adam

    Parameters
    ----------
    net : MotionNet
    samples : list of WindowSample
    config : TrainConfig

    Returns
    -------
    LossCurve

    Raises
    ------
    NonFiniteLossError
        with the index of the step whose loss is not finite
    """
    if len(samples) < config.batch_size:
        raise DomainError(f'{len(samples)} samples cannot fill a batch of ' +
                          f'{config.batch_size}')
    sizes = {len(s.images) for s in samples}
    if sizes != {config.window}:
        raise DomainError(f'samples hold windows of {sorted(sizes)} frames, ' +
                          f'config expects {config.window}')

    torch.manual_seed(config.seed)
    loader = DataLoader(WindowDataset(samples), batch_size=config.batch_size,
                        shuffle=True, drop_last=True, num_workers=0,
                        generator=torch.Generator().manual_seed(config.seed))
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    curve = LossCurve()
    net.train()
    while len(curve) < config.steps:
        for images, rotation_target, translation_target in loader:
            step = len(curve)
            rotation, translation = net(images)
            loss_t = loss_translation(translation, translation_target,
                                      config.loss_weight)
            loss_r = loss_rotation(rotation, rotation_target)
            loss = loss_t + loss_r
            if not torch.isfinite(loss):
                raise NonFiniteLossError(step, loss.item())

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            curve.append(step, loss_t.item(), loss_r.item())
            if (step + 1) % config.log_every == 0:
                logger.info('step %d: loss %.5f (translation %.5f, ' +
                            'rotation %.5f)', step + 1, loss.item(),
                            loss_t.item(), loss_r.item())
            if len(curve) >= config.steps:
                break
    return curve
