"""Patch-classifier grasping: a small fully convolutional network that learns a
block's appearance from one demonstration frame, plus a simulated tabletop and
a visual-servoing controller that uses its activation map."""
from .augment import AugmentationConfig, generate_batch, generate_eval_set
from .controller import ControllerConfig, run_episode, step
from .demo import CameraPose, Demonstration, load_demonstrations, save_demonstration
from .errors import (CorruptFileError, GraspNetError, IntegrityError, InvalidShapeError,
                     NonFiniteError, NotFoundError, PlacementError, PreconditionError)
from .estimators import GraspNetClassifier, ReptileInitializer
from .model import (NUM_PARAMETERS, ActivationMap, GraspNetParams, forward_full, forward_patch,
                    init_params, load_params, save_params)
from .rng import SeededRNG
from .sim import WorkspaceState, capture_all, default_workspace, render
from .training import Metrics, ReptileConfig, TrainConfig, evaluate, fine_tune, reptile_meta_train, train

__version__ = "0.1.0"
