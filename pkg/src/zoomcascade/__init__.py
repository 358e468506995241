"""Cascaded zoom-in policies for cost-aware object detection on large images.

A coarse policy (CPNet) picks which patches of a low-resolution scene to look
at in high resolution, and a fine policy (FPNet) picks subpatches inside each
chosen patch. Both are small MLPs trained with REINFORCE against simulated
coarse and fine detectors.
"""

from .cascade import CostModel, EvalReport, PolicySpec, evaluate, run_baseline, run_cascade
from .config import RunConfig
from .detectors import DetectorConfig, DetectorPair, ReplayDetectors, SimulatedDetectors
from .errors import ConfigError, TrainingError, ZoomCascadeError
from .kernels import BACKEND
from .metrics import average_precision, iou, recall
from .policy import PolicyModel, init_model
from .reward import Hyperparams, ablation_reward, combined_reward, oracle_policy
from .scene import BBox, GridLayout, Scene, build_grid
from .synth import SynthConfig, generate
from .trainer import TrainConfig, grad_check, mc_check, train

__version__ = "0.1.0"
