"""Prompt-guided depth super-resolution on a small numpy autodiff engine."""

from .data import SamplePair, Scene, degrade, gen_scene, make_dataset
from .network import DuCosModel, ModelConfig, load_model
from .prompts import PromptFlow, synthetic_prompt_oracle
from .trainer import DualState, TrainConfig, step_dual, step_primal, step_schedule, train

__version__ = "0.1.0"
