"""Grading bounding-box annotations with a contrastively fine-tuned image/text model."""

from .crops import CropSpec, CropWindow, ImageStore, plan_crop, render
from .dataset import Dataset, filter_small, load_dataset, parse_annotations
from .gate import GateStats, PseudoLabel, gate_batch
from .grader import Checkpoint, Grader, GradeResult, TrainConfig, decide, train
from .metrics import compute_metrics, evaluate, sweep_thresholds
from .prompts import PromptBank, build_prompts
from .synthesis import SampleManifest, SynthesisConfig, synthesize

__version__ = "0.1.0"
