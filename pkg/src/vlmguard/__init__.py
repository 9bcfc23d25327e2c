"""Adversarial-input triage, patch purification and latent prompt tuning for VLM inputs."""
from .eapt import EaptConfig, OptimTrace, RobustPrompt, compose_prompt, generate_suffix, optimize_suffix_embedding, run_eapt
from .embedspace import Projector, ToyDualEncoder, Vocabulary, cosine, nn_search, semantic_verification
from .errormap import BlockGrid, ErrorMap, compute_error_map, load_image, reconstruct, save_image
from .errors import InvalidInput, ParseError
from .pipeline import DefenseOutcome, PipelineConfig, defend, load_config
from .purifier import apply_gray_mask, build_mask, mask_iou
from .sentinel import DetectionMetrics, GateThresholds, Verdict, VerdictClass, compute_metrics, detect, dual_gate

__version__ = "0.1.0"
