"""Online continual learning experiments on synthetic non-stationary streams."""

from .config import ExperimentConfig, load_config, parse_config
from .errors import (ComparisonError, ConfigError, IntegrityError, NumericalError, OclError, OutOfRegionError,
                     ScheduleRangeError, ShapeError)
from .harness import RunResult, evaluate_checkpoint, run, run_blind_baseline
from .learner import BlindClassifier, Learner, copy_weights
from .replay import AdRepState, ReplayBuffer
from .schedule import ConstantSchedule, CosineSchedule, Polrs
from .stream import StreamSpec, holdout_split, materialize

__version__ = "0.1.0"
