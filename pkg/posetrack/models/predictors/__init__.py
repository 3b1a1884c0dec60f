# move the predictors file up a namespace for readability
from .predictors import *  # noqa: F401, F403
