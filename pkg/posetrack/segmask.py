"""
2D object tracking by mask propagation and preparation of the masked,
aligned crops fed to the motion predictors.

A box :math:`B_t` is refined into a mask :math:`M_t`, the mask is warped to
the next frame with optical flow, the warped mask gives the next box
:math:`B_{t+1}` and the refiner is run again inside it. Masks and flow come
from pluggable providers; ground-truth and noisy oracles are shipped here.
"""
import logging
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .errors import DomainError, TrackingLostError
from .geometry import crop_union

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Mask:
    """ Binary H x W occupancy of the object in frame `frame_index` """
    grid: np.ndarray
    frame_index: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise DomainError(f'mask must be 2D (got {self.grid.shape})')
        self.frame_index = int(self.frame_index)

    @property
    def shape(self):
        return self.grid.shape

    @property
    def count(self):
        return int(self.grid.sum())

    def is_valid(self, min_pixels=1):
        return self.count >= min_pixels


@dataclass(eq=False)
class FlowField:
    """ H x W x 2 displacement (dx, dy) in pixels from one frame to another """
    grid: np.ndarray
    from_index: int
    to_index: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 3 or self.grid.shape[2] != 2:
            raise DomainError('flow must be H x W x 2 ' +
                              f'(got {self.grid.shape})')
        if not np.all(np.isfinite(self.grid)):
            raise DomainError('flow has non-finite values')

    @property
    def shape(self):
        return self.grid.shape[:2]

    @classmethod
    def zeros(cls, shape, from_index, to_index):
        return cls(np.zeros(tuple(shape) + (2,)), from_index, to_index)


@dataclass(frozen=True)
class BBox:
    """ Integer pixel box (left, top, width, height) """
    left: int
    top: int
    width: int
    height: int

    def __post_init__(self):
        for name in ('left', 'top', 'width', 'height'):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.width < 1 or self.height < 1:
            raise DomainError(f'degenerate box {self.as_tuple()}')

    @property
    def right(self):
        """ exclusive right edge """
        return self.left + self.width

    @property
    def bottom(self):
        """ exclusive bottom edge """
        return self.top + self.height

    @property
    def center(self):
        return (self.left + self.width / 2, self.top + self.height / 2)

    def as_tuple(self):
        return (self.left, self.top, self.width, self.height)

    def clamp(self, image_size):
        height, width = image_size
        left, top = max(self.left, 0), max(self.top, 0)
        right, bottom = min(self.right, width), min(self.bottom, height)
        return BBox(left, top, right - left, bottom - top)

    def expand(self, pad, image_size=None):
        box = BBox(self.left - pad, self.top - pad,
                   self.width + 2 * pad, self.height + 2 * pad)
        if image_size is not None:
            box = box.clamp(image_size)
        return box

    def shift(self, dx, dy):
        return BBox(self.left + dx, self.top + dy, self.width, self.height)

    def contains(self, other):
        return (self.left <= other.left and self.top <= other.top and
                self.right >= other.right and self.bottom >= other.bottom)

    def contains_pixels(self, xs, ys):
        xs, ys = np.asarray(xs), np.asarray(ys)
        return bool(np.all((xs >= self.left) & (xs < self.right) &
                           (ys >= self.top) & (ys < self.bottom)))

    def to_mask(self, image_size):
        grid = np.zeros(image_size, dtype=bool)
        grid[self.top:self.bottom, self.left:self.right] = True
        return grid


def box_iou(a, b):
    """ Intersection over union of two BBoxes """
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    inter = max(iw, 0) * max(ih, 0)
    union = a.width * a.height + b.width * b.height - inter
    return inter / union


class MaskRefiner(Protocol):
    def __call__(self, image, box, frame_index) -> Mask:
        ...


class FlowProvider(Protocol):
    def __call__(self, image_t, image_t1, frame_index) -> FlowField:
        """ flow from frame `frame_index` to `frame_index + 1` """
        ...


class OracleMaskRefiner:
    """ Returns the ground-truth instance mask restricted to the box """

    def __init__(self, instance_masks):
        self.instance_masks = [_as_grid(m) for m in instance_masks]

    def __call__(self, image, box, frame_index):
        grid = self.instance_masks[frame_index] & box.to_mask(
            self.instance_masks[frame_index].shape)
        return Mask(grid, frame_index)


class NoisyMaskRefiner:
    """ Wraps a refiner and dilates (> 0) or erodes (< 0) its masks

    Parameters
    ----------
    refiner : MaskRefiner
    dilation : int
        number of binary dilation (positive) or erosion (negative)
        iterations applied to every mask
    """

    def __init__(self, refiner, dilation=0):
        self.refiner = refiner
        self.dilation = int(dilation)

    def __call__(self, image, box, frame_index):
        mask = self.refiner(image, box, frame_index)
        if self.dilation > 0:
            grid = ndimage.binary_dilation(mask.grid,
                                           iterations=self.dilation)
        elif self.dilation < 0:
            grid = ndimage.binary_erosion(mask.grid,
                                          iterations=-self.dilation)
        else:
            grid = mask.grid
        return Mask(grid, frame_index)


class OracleFlowProvider:
    """ Serves precomputed ground-truth flows indexed by source frame """

    def __init__(self, flows):
        self.flows = list(flows)

    def __call__(self, image_t, image_t1, frame_index):
        flow = self.flows[frame_index]
        if flow is None:
            raise DomainError('no flow stored after the last frame',
                              frame_index=frame_index)
        if isinstance(flow, FlowField):
            return flow
        return FlowField(flow, frame_index, frame_index + 1)


class ZeroFlowProvider:
    """ Static-scene flow, used when no flow is available """

    def __call__(self, image_t, image_t1, frame_index):
        return FlowField.zeros(np.shape(image_t)[:2], frame_index,
                               frame_index + 1)


class NoisyFlowProvider:
    """ Adds i.i.d. Gaussian noise of std `sigma` px to a provider's flow """

    def __init__(self, provider, sigma, rng):
        self.provider = provider
        self.sigma = float(sigma)
        self.rng = rng

    def __call__(self, image_t, image_t1, frame_index):
        flow = self.provider(image_t, image_t1, frame_index)
        noise = self.rng.normal(0, self.sigma, size=flow.grid.shape)
        return FlowField(flow.grid + noise, flow.from_index, flow.to_index)


def warp_mask(mask, flow):
    """ Forward-splats a mask with optical flow

    Each foreground pixel p moves to round(p + flow(p)); targets outside the
    image are dropped. Holes left by the splat are kept.

    Parameters
    ----------
    mask : Mask
    flow : FlowField
        flow starting at `mask.frame_index`

    Returns
    -------
    Mask
        estimate of the mask in frame `flow.to_index`
    """
    if mask.shape != flow.shape:
        raise DomainError(f'mask shape {mask.shape} does not match ' +
                          f'flow shape {flow.shape}')
    if mask.frame_index != flow.from_index:
        raise DomainError(f'flow starts at frame {flow.from_index}, ' +
                          f'mask is for frame {mask.frame_index}')

    height, width = mask.shape
    ys, xs = np.nonzero(mask.grid)
    tx = np.rint(xs + flow.grid[ys, xs, 0]).astype(int)
    ty = np.rint(ys + flow.grid[ys, xs, 1]).astype(int)
    inside = (tx >= 0) & (tx < width) & (ty >= 0) & (ty < height)

    grid = np.zeros_like(mask.grid)
    grid[ty[inside], tx[inside]] = True
    return Mask(grid, flow.to_index)


def mask_to_bbox(mask, pad=0):
    """ Tight box around the foreground, padded by `pad` px and clamped

    Raises
    ------
    TrackingLostError
        if the mask is empty
    """
    ys, xs = np.nonzero(mask.grid)
    if xs.size == 0:
        raise TrackingLostError('object mask is empty', mask.frame_index)
    box = BBox(xs.min(), ys.min(), xs.max() - xs.min() + 1,
               ys.max() - ys.min() + 1)
    return box.expand(int(pad), image_size=mask.shape)


def diagonal_pad(mask, fraction):
    """ Padding of `fraction` times the diagonal of the mask's tight box """
    if not fraction:
        return 0
    ys, xs = np.nonzero(mask.grid)
    if xs.size == 0:
        return 0
    diagonal = math.hypot(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
    return int(math.ceil(fraction * diagonal))


def propagate_step(bbox_t, frames, flow_provider, mask_refiner, frame_index,
                   pad_fraction=0.1, erode=0):
    """ Propagates the object box from frame t to frame t+1

    Parameters
    ----------
    bbox_t : BBox
        box in frame t
    frames : tuple
        (image_t, image_t1)
    flow_provider : FlowProvider
    mask_refiner : MaskRefiner
    frame_index : int
        index t of the first frame
    pad_fraction : float
        box padding as a fraction of the warped mask's box diagonal
    erode : int
        erosion iterations applied to M_t before warping

    Returns
    -------
    bbox_t1 : BBox
    mask_t1 : Mask

    Raises
    ------
    TrackingLostError
        if M_t, the warped mask or M_{t+1} is empty
    """
    image_t, image_t1 = frames
    mask_t = mask_refiner(image_t, bbox_t, frame_index)
    if not mask_t.is_valid():
        raise TrackingLostError('refined mask is empty', frame_index)
    if erode:
        eroded = ndimage.binary_erosion(mask_t.grid, iterations=erode)
        if eroded.any():
            mask_t = Mask(eroded, frame_index)

    flow = flow_provider(image_t, image_t1, frame_index)
    warped = warp_mask(mask_t, flow)
    if not warped.is_valid():
        raise TrackingLostError('warped mask is empty', frame_index + 1,
                                last_valid_index=frame_index)

    bbox_t1 = mask_to_bbox(warped, diagonal_pad(warped, pad_fraction))
    mask_t1 = mask_refiner(image_t1, bbox_t1, frame_index + 1)
    if not mask_t1.is_valid():
        raise TrackingLostError('refined mask is empty', frame_index + 1,
                                last_valid_index=frame_index)
    return bbox_t1, mask_t1


def propagate_sequence(images, box0, flow_provider, mask_refiner,
                       pad_fraction=0.1, initial_pad=0, erode=0):
    """ Runs `propagate_step` over a whole sequence

    Returns
    -------
    boxes : list of BBox
    masks : list of Mask
    """
    image_size = np.shape(images[0])[:2]
    box = box0.expand(int(initial_pad), image_size=image_size)
    mask = mask_refiner(images[0], box, 0)
    if not mask.is_valid():
        raise TrackingLostError('initial mask is empty', 0)

    boxes, masks = [box], [mask]
    for t in range(len(images) - 1):
        box, mask = propagate_step(box, (images[t], images[t + 1]),
                                   flow_provider, mask_refiner, t,
                                   pad_fraction=pad_fraction, erode=erode)
        boxes.append(box)
        masks.append(mask)
    logger.debug('propagated %d boxes', len(boxes))
    return boxes, masks


def _as_grid(mask):
    return mask.grid if isinstance(mask, Mask) else np.asarray(mask, bool)


def _as_tuple(box):
    return box.as_tuple() if isinstance(box, BBox) else tuple(box)


def mask_background(image, mask):
    """ Zeroes every pixel outside the mask """
    grid = _as_grid(mask)
    if grid.shape != np.shape(image)[:2]:
        raise DomainError(f'mask shape {grid.shape} does not match ' +
                          f'frame shape {np.shape(image)[:2]}')
    image = np.asarray(image, dtype=float)
    return image * (grid[..., None] if image.ndim == 3 else grid)


def resample_crop(image, crop):
    """ Bilinearly resamples the crop region of an H x W x C image

    Output pixel (i, j) samples the source at the center of its footprint,
    :math:`x = left + (j + 0.5) \\alpha_u - 0.5`. Samples outside the image
    are zero.
    """
    left, top, _, _ = crop.box
    xs = left + (np.arange(crop.input_w) + 0.5) * crop.alpha_u - 0.5
    ys = top + (np.arange(crop.input_h) + 0.5) * crop.alpha_v - 0.5
    rows, cols = np.meshgrid(ys, xs, indexing='ij')
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[..., None]
    channels = [ndimage.map_coordinates(image[..., c], [rows, cols],
                                        order=1, mode='constant', cval=0.)
                for c in range(image.shape[2])]
    return np.stack(channels, axis=-1)


def prepare_network_inputs(frames, masks, boxes, input_w, input_h, margin=0.):
    """ Masks, crops and resamples the K frames of a window

    Parameters
    ----------
    frames : list of np.ndarray (H, W, 3)
    masks : list of Mask or np.ndarray (H, W)
    boxes : list of BBox or (left, top, width, height)
    input_w, input_h : int
        network input size
    margin : float
        crop margin as a fraction of the union box size

    Returns
    -------
    crops : np.ndarray (K, input_h, input_w, 3)
        masked crops; background is zero
    crop : CropSpec
        the crop shared by all K frames
    """
    if len(frames) < 2:
        raise DomainError('a window needs at least 2 frames ' +
                          f'(got {len(frames)})')
    if not (len(frames) == len(masks) == len(boxes)):
        raise DomainError('frames, masks and boxes must have equal length')

    image_size = np.shape(frames[0])[:2]
    crop = crop_union([_as_tuple(b) for b in boxes], input_w, input_h,
                      margin=margin, image_size=image_size)

    crops = []
    for image, mask in zip(frames, masks):
        crops.append(resample_crop(mask_background(image, mask), crop))
    return np.stack(crops), crop
