"""
Closed-form pose mathematics: pinhole projection, the relative translation
and rotation parameterizations used by the motion predictors, rotation
representations and crop geometry.

All lengths are millimeters and all angles radians. Everything here works in
float64.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (AmbiguityError, DomainError, OverwriteError,
                     RepresentationError)

ROTATION_TOL = 1e-6
AMBIGUITY_MARGIN = 1e-6
GIMBAL_MARGIN = 1e-3


@dataclass(frozen=True)
class CameraIntrinsics:
    """ Pinhole intrinsics (fx, fy, cx, cy) in pixels """
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ('fx', 'fy', 'cx', 'cy'):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise DomainError(f'{name} must be finite (got {value})')
            object.__setattr__(self, name, value)
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError('focal lengths must be positive ' +
                              f'(got fx={self.fx}, fy={self.fy})')

    @property
    def matrix(self):
        return intrinsics_matrix(self)

    @classmethod
    def from_matrix(cls, K):
        K = np.asarray(K, dtype=float)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2])

    def to_dict(self):
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy}


def intrinsics_matrix(K):
    """ 3x3 intrinsic matrix built from a CameraIntrinsics """
    return np.array([[K.fx, 0., K.cx],
                     [0., K.fy, K.cy],
                     [0., 0., 1.]])


def check_rotation(R, tol=ROTATION_TOL, name='R'):
    """ Validates a rotation matrix and returns it as a float64 array

    Raises
    ------
    DomainError
        if R is not 3x3, not orthonormal within `tol` or has det != +1
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise DomainError(f'{name} must be 3x3 (got shape {R.shape})')
    if not np.all(np.isfinite(R)):
        raise DomainError(f'{name} has non-finite entries')
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise DomainError(f'{name} is not orthonormal within {tol}')
    if abs(np.linalg.det(R) - 1) > tol:
        raise DomainError(f'{name} has determinant != +1')
    return R


@dataclass(frozen=True)
class Pose:
    """ Rigid transform of an object in the camera frame

    Parameters
    ----------
    R : array-like (3, 3)
        rotation matrix
    T : array-like (3,)
        translation in mm
    """
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'R', check_rotation(self.R))
        T = np.asarray(self.T, dtype=float).reshape(-1)
        if T.shape != (3,) or not np.all(np.isfinite(T)):
            raise DomainError(f'T must be a finite 3-vector (got {T})')
        object.__setattr__(self, 'T', T)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool((self.R == other.R).all() and (self.T == other.T).all())

    @classmethod
    def identity(cls, T=(0., 0., 1000.)):
        return cls(np.eye(3), T)

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.T
        return M

    def inverse(self):
        return Pose(self.R.T, -self.R.T @ self.T)

    def compose(self, delta_R, delta_T):
        """ Applies a camera-frame motion: R <- dR R and T <- T + dT """
        return Pose(np.asarray(delta_R) @ self.R, self.T + delta_T)

    def transform(self, points):
        """ Maps (N, 3) object-frame points to the camera frame """
        return np.asarray(points, dtype=float) @ self.R.T + self.T


@dataclass(frozen=True)
class PixelMotion:
    """ Object-center displacement (px) and normalized depth offset """
    dU: float
    dV: float
    S: float

    def __post_init__(self):
        if not self.S > -1:
            raise DomainError(f'S must be > -1 (got {self.S})')


@dataclass(frozen=True, eq=False)
class MotionCode:
    """ Network-space relative motion

    Parameters
    ----------
    du, dv : float
        center displacement as a fraction of the crop width / height
    s : float
        crop-space depth offset
    omega : array-like (3,)
        relative rotation as an axis-angle vector (rad)
    """
    du: float
    dv: float
    s: float
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ('du', 'dv', 's'):
            object.__setattr__(self, name, float(getattr(self, name)))
        omega = np.asarray(self.omega, dtype=float).reshape(-1)
        if omega.shape != (3,):
            raise DomainError(f'omega must be a 3-vector (got {omega})')
        object.__setattr__(self, 'omega', omega)

    @classmethod
    def zero(cls):
        return cls(0., 0., 0., np.zeros(3))

    @property
    def translation(self):
        return np.array([self.du, self.dv, self.s])

    def as_array(self):
        """ (du, dv, s, wx, wy, wz) """
        return np.concatenate([self.translation, self.omega])

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(values[0], values[1], values[2], values[3:6])

    def to_dict(self):
        return {'du': self.du, 'dv': self.dv, 's': self.s,
                'omega': self.omega.tolist()}


@dataclass(frozen=True)
class CropSpec:
    """ Crop shared by the frames of a window

    Parameters
    ----------
    box : tuple
        (left, top, width, height) in original-image pixels
    input_w, input_h : int
        size of the network input the crop is resampled to

    Notes
    -----
    :code:`alpha_u = W_crop / input_w` and :code:`alpha_v = H_crop / input_h`
    map network-input pixels to original pixels.
    """
    box: tuple
    input_w: int
    input_h: int
    alpha_u: float = field(init=False)
    alpha_v: float = field(init=False)

    def __post_init__(self):
        left, top, width, height = (float(b) for b in self.box)
        if not (width >= 1 and height >= 1):
            raise DomainError(f'degenerate crop box {self.box}')
        if self.input_w < 1 or self.input_h < 1:
            raise DomainError('network input size must be positive ' +
                              f'(got {self.input_w}x{self.input_h})')
        object.__setattr__(self, 'box', (left, top, width, height))
        object.__setattr__(self, 'input_w', int(self.input_w))
        object.__setattr__(self, 'input_h', int(self.input_h))
        object.__setattr__(self, 'alpha_u', width / self.input_w)
        object.__setattr__(self, 'alpha_v', height / self.input_h)

    @property
    def width(self):
        return self.box[2]

    @property
    def height(self):
        return self.box[3]

    def to_dict(self):
        return {'box': list(self.box), 'input_w': self.input_w,
                'input_h': self.input_h}


def project(K, T):
    """ Projects camera-frame points with a pinhole model

    Parameters
    ----------
    K : CameraIntrinsics
    T : array-like (3,) or (N, 3)
        points in mm

    Returns
    -------
    U, V, Z : float or np.ndarray
        pixel coordinates and depth (mm)

    Raises
    ------
    DomainError
        if any depth is not positive
    """
    T = np.asarray(T, dtype=float)
    X, Y, Z = T[..., 0], T[..., 1], T[..., 2]
    if np.any(Z <= 0):
        raise DomainError('cannot project a point with non-positive depth')
    U = K.fx * X / Z + K.cx
    V = K.fy * Y / Z + K.cy
    if T.ndim == 1:
        return float(U), float(V), float(Z)
    return U, V, Z


def backproject(K, U, V, Z):
    """ Returns Z K^-1 (U, V, 1)^T, the inverse of `project` """
    Z = np.asarray(Z, dtype=float)
    if np.any(Z <= 0):
        raise DomainError(f'depth must be positive (got {Z})')
    X = (np.asarray(U, dtype=float) - K.cx) * Z / K.fx
    Y = (np.asarray(V, dtype=float) - K.cy) * Z / K.fy
    return np.stack([X, Y, Z * np.ones_like(X)], axis=-1)


def _translation_of(pose):
    if isinstance(pose, Pose):
        return pose.T
    return np.asarray(pose, dtype=float)


def pixel_motion(K, pose_prev, pose_cur):
    """ Center displacement and normalized depth offset between two poses

    .. math::

        \\Delta U = U_t - U_{t-1}, \\quad
        S = \\frac{Z_t}{Z_{t-1}} - 1
    """
    U0, V0, Z0 = project(K, _translation_of(pose_prev))
    U1, V1, Z1 = project(K, _translation_of(pose_cur))
    return PixelMotion(U1 - U0, V1 - V0, Z1 / Z0 - 1)


def encode_translation(K, pose_prev, pose_cur, crop):
    """ Encodes the translation between two poses in crop coordinates

    Parameters
    ----------
    K : CameraIntrinsics
    pose_prev, pose_cur : Pose or array-like (3,)
    crop : CropSpec

    Returns
    -------
    du, dv, s : float

    Notes
    -----
    The displacement is expressed as a fraction of the crop size,
    :math:`\\Delta U = \\alpha_u W_{in} \\Delta u = W_{crop} \\Delta u`, and
    the depth offset is rescaled with the mean crop scale,
    :math:`S = \\frac{\\alpha_u + \\alpha_v}{2} s`.
    """
    motion = pixel_motion(K, pose_prev, pose_cur)
    du = motion.dU / (crop.alpha_u * crop.input_w)
    dv = motion.dV / (crop.alpha_v * crop.input_h)
    s = 2 * motion.S / (crop.alpha_u + crop.alpha_v)
    return du, dv, s


def decode_translation(K, center_prev, Z_prev, code, crop):
    """ Recovers the 3D translation change from a crop-space code

    Parameters
    ----------
    K : CameraIntrinsics
    center_prev : tuple
        (U, V) of the object center in the previous frame (px)
    Z_prev : float
        depth of the object center in the previous frame (mm)
    code : MotionCode or tuple
        (du, dv, s)
    crop : CropSpec

    Returns
    -------
    deltaT : np.ndarray (3,)
        translation change in mm
    center_cur : tuple
        (U, V) in the current frame
    Z_cur : float

    Raises
    ------
    DomainError
        if the decoded depth is not positive
    """
    if isinstance(code, MotionCode):
        du, dv, s = code.du, code.dv, code.s
    else:
        du, dv, s = (float(c) for c in code[:3])
    if Z_prev <= 0:
        raise DomainError(f'previous depth must be positive (got {Z_prev})')

    U0, V0 = (float(c) for c in center_prev)
    U1 = U0 + crop.alpha_u * crop.input_w * du
    V1 = V0 + crop.alpha_v * crop.input_h * dv
    S = (crop.alpha_u + crop.alpha_v) / 2 * s
    Z1 = Z_prev * (1 + S)
    if not Z1 > 0:
        raise DomainError(f'depth code s={s} gives non-positive depth {Z1}')

    deltaT = backproject(K, U1, V1, Z1) - backproject(K, U0, V0, Z_prev)
    return deltaT, (U1, V1), Z1


def relative_rotation(R_prev, R_cur):
    """ Relative rotation R_cur R_prev^T in the camera frame """
    R_prev = check_rotation(R_prev, name='R_prev')
    R_cur = check_rotation(R_cur, name='R_cur')
    return R_cur @ R_prev.T


def geodesic_angle(R_a, R_b=None):
    """ Angle (rad) of the rotation taking R_b to R_a

    The arccos argument is clamped to [-1, 1].
    """
    R_a = np.asarray(R_a, dtype=float)
    delta = R_a if R_b is None else R_a @ np.asarray(R_b, dtype=float).T
    cos = (np.trace(delta) - 1) / 2
    return float(np.arccos(np.clip(cos, -1., 1.)))


def axis_angle_to_matrix(omega):
    """ Rodrigues formula for an axis-angle vector with norm < pi

    Raises
    ------
    DomainError
        if :math:`\\|\\omega\\| \\ge \\pi`
    """
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.shape != (3,) or not np.all(np.isfinite(omega)):
        raise DomainError(f'omega must be a finite 3-vector (got {omega})')
    if np.linalg.norm(omega) >= np.pi:
        raise DomainError('axis-angle norm must be < pi ' +
                          f'(got {np.linalg.norm(omega)})')
    return Rotation.from_rotvec(omega).as_matrix()


def matrix_to_axis_angle(R):
    """ Axis-angle vector of a rotation whose angle is below pi

    Raises
    ------
    AmbiguityError
        if the rotation angle is within 1e-6 of pi
    """
    R = check_rotation(R)
    if geodesic_angle(R) > np.pi - AMBIGUITY_MARGIN:
        raise AmbiguityError('rotation angle is too close to pi for a ' +
                             'unique axis-angle vector')
    return Rotation.from_matrix(R).as_rotvec()


def euler_xyz_errors(R_pred, R_gt):
    """ Absolute extrinsic x-y-z Euler angles (rad) of R_pred R_gt^T """
    delta = np.asarray(R_pred) @ np.asarray(R_gt).T
    return np.abs(Rotation.from_matrix(delta).as_euler('xyz'))


# -- rotation representations ------------------------------------------------

def representation(num_values, overwrite=False):
    """decorator registering a rotation representation

    The decorated function maps representation values to a rotation matrix.
    The inverse (matrix to values) is attached with :code:`@name.inverse`.

    Parameters
    ----------
    num_values : int
        number of values of the representation
    overwrite : bool (default False)
        if true, overwrites an existing representation; if false,
        raises OverwriteError if the name already exists.
    """

    def decorator(func):
        def wrapper(values):
            values = np.asarray(values, dtype=float).reshape(-1)
            if values.shape != (num_values,):
                raise DomainError(f'{func.__name__} takes {num_values} ' +
                                  f'values (got {values.size})')
            if not np.all(np.isfinite(values)):
                raise DomainError(f'{func.__name__} values must be finite')
            return func(values)

        def inverse(inv_func):
            def from_matrix(R):
                return np.asarray(inv_func(check_rotation(R)), dtype=float)
            wrapper.from_matrix = from_matrix
            return from_matrix

        wrapper.num_values = num_values
        wrapper.inverse = inverse
        wrapper.from_matrix = None
        wrapper.__name__ = func.__name__
        wrapper.__doc__ = func.__doc__

        if func.__name__ in rotation_representations and not overwrite:
            raise OverwriteError(
                f"representation {func.__name__} already exists. " +
                "If you want to overwrite the existing representation, " +
                "use `overwrite=True`."
            )
        rotation_representations[func.__name__] = wrapper
        return wrapper

    return decorator


rotation_representations = {}


@representation(num_values=3)
def axis_angle(values):
    """ rotation of angle |w| about w/|w| """
    return axis_angle_to_matrix(values)


@axis_angle.inverse
def _(R):
    return matrix_to_axis_angle(R)


@representation(num_values=4)
def quaternion(values):
    """ unit quaternion (w, x, y, z), scalar part first """
    if abs(np.linalg.norm(values) - 1) > 1e-9:
        raise DomainError('quaternion must have unit norm ' +
                          f'(got {np.linalg.norm(values)})')
    w, x, y, z = values
    return Rotation.from_quat([x, y, z, w]).as_matrix()


@quaternion.inverse
def _(R):
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    # canonical sign: non-negative scalar part
    return -q if w < 0 else q


def _near_gimbal_lock(pitch):
    return abs(abs(pitch) - np.pi / 2) < GIMBAL_MARGIN


@representation(num_values=3)
def euler_xyz(values):
    """ extrinsic x-y-z Euler angles, R = Rz(c) Ry(b) Rx(a) """
    if _near_gimbal_lock(values[1]):
        raise AmbiguityError('Euler angles are within ' +
                             f'{GIMBAL_MARGIN} rad of gimbal lock')
    return Rotation.from_euler('xyz', values).as_matrix()


@euler_xyz.inverse
def _(R):
    pitch = -np.arcsin(np.clip(R[2, 0], -1., 1.))
    if _near_gimbal_lock(pitch):
        raise AmbiguityError('rotation is within ' +
                             f'{GIMBAL_MARGIN} rad of gimbal lock')
    return Rotation.from_matrix(R).as_euler('xyz')


@representation(num_values=6)
def sixd(values):
    """ first two matrix columns, orthonormalized by Gram-Schmidt """
    a1, a2 = values[:3], values[3:]
    n1 = np.linalg.norm(a1)
    if n1 == 0:
        raise DomainError('6D representation has a zero first column')
    b1 = a1 / n1
    b2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(b2)
    if n2 < 1e-12:
        raise DomainError('6D representation has parallel columns')
    b2 = b2 / n2
    return np.stack([b1, b2, np.cross(b1, b2)], axis=1)


@sixd.inverse
def _(R):
    return np.concatenate([R[:, 0], R[:, 1]])


def get_representation(tag):
    if tag not in rotation_representations:
        raise RepresentationError(f'{tag} not in allowed representations ' +
                                  f'({list(rotation_representations)})')
    return rotation_representations[tag]


@dataclass(frozen=True, eq=False)
class RotationRep:
    """ A rotation in one of the registered representations """
    tag: str
    values: np.ndarray

    def __post_init__(self):
        rep = get_representation(self.tag)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape != (rep.num_values,):
            raise DomainError(f'{self.tag} takes {rep.num_values} values ' +
                              f'(got {values.size})')
        object.__setattr__(self, 'values', values)

    def to_matrix(self):
        return rotation_to_matrix(self)


def rotation_to_matrix(rep):
    return get_representation(rep.tag)(rep.values)


def matrix_to_rotation(R, tag):
    return RotationRep(tag, get_representation(tag).from_matrix(R))


def rotation_convert(rep_in, tag_out):
    """ Converts a rotation between representations through its matrix

    Parameters
    ----------
    rep_in : RotationRep
    tag_out : str
        one of 'axis_angle', 'quaternion', 'euler_xyz', 'sixd'

    Returns
    -------
    RotationRep
    """
    return matrix_to_rotation(rotation_to_matrix(rep_in), tag_out)


# -- crop geometry ------------------------------------------------------------

def crop_union(boxes, input_w, input_h, margin=0., image_size=None):
    """ Smallest box containing all boxes, shared by every frame of a window

    Parameters
    ----------
    boxes : list
        (left, top, width, height) boxes in pixels
    input_w, input_h : int
        network input size
    margin : float
        fraction of the union width/height added on each side
    image_size : tuple, optional
        (height, width) to clamp the expanded box to

    Returns
    -------
    CropSpec
    """
    boxes = [tuple(float(v) for v in b) for b in boxes]
    if len(boxes) == 0:
        raise DomainError('crop_union needs at least one box')
    for b in boxes:
        if b[2] < 1 or b[3] < 1:
            raise DomainError(f'degenerate box {b}')

    left = min(b[0] for b in boxes)
    top = min(b[1] for b in boxes)
    right = max(b[0] + b[2] for b in boxes)
    bottom = max(b[1] + b[3] for b in boxes)

    if margin:
        pad_u, pad_v = margin * (right - left), margin * (bottom - top)
        left, right = left - pad_u, right + pad_u
        top, bottom = top - pad_v, bottom + pad_v
        left, top = np.floor(left), np.floor(top)
        right, bottom = np.ceil(right), np.ceil(bottom)

    if image_size is not None:
        height, width = image_size
        left, top = max(left, 0.), max(top, 0.)
        right, bottom = min(right, float(width)), min(bottom, float(height))

    return CropSpec((left, top, right - left, bottom - top), input_w, input_h)
