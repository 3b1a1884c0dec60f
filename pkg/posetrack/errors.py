""" Exceptions raised by posetrack """


class PoseTrackError(Exception):
    ...


class DomainError(PoseTrackError, ValueError):
    """ an input lies outside the numeric domain of an operation """

    def __init__(self, message, frame_index=None):
        if frame_index is not None:
            message = f'frame {frame_index}: {message}'
        super().__init__(message)
        self.frame_index = frame_index


class AmbiguityError(DomainError):
    """ a rotation has no unique value in the requested representation """


class SamplingError(PoseTrackError, RuntimeError):
    ...


class RepresentationError(PoseTrackError):
    ...


class OverwriteError(RepresentationError):
    ...


class TrackingLostError(PoseTrackError):
    """ the object mask vanished during propagation

    Parameters
    ----------
    frame_index : int
        index of the frame where the object was lost
    last_valid_index : int
        last frame with a valid box
    trajectory : posetrack.tracker.Trajectory, optional
        partial trajectory up to `last_valid_index`
    """

    def __init__(self, message, frame_index, last_valid_index=None,
                 trajectory=None):
        super().__init__(f'frame {frame_index}: {message}')
        self.frame_index = frame_index
        if last_valid_index is None:
            last_valid_index = frame_index - 1
        self.last_valid_index = last_valid_index
        self.trajectory = trajectory


class NonFiniteLossError(PoseTrackError, ArithmeticError):
    def __init__(self, step, value):
        super().__init__(f'non-finite loss {value} at step {step}')
        self.step = step
        self.value = value


class ConfigError(PoseTrackError, ValueError):
    def __init__(self, field, message):
        super().__init__(f'{field}: {message}')
        self.field = field
        self.message = message


class DatasetError(PoseTrackError):
    def __init__(self, path, message):
        super().__init__(f'{path}: {message}')
        self.path = str(path)
