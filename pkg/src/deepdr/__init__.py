"""Structure-aware, temporally coherent RGB-D inpainting."""
from .core_types import LossWeights, SequenceSample, apply_mask, normalize_rgb, scale_depth
from .generator import Generator, GeneratorState, ModelConfig, count_mads, count_params

__all__ = ["LossWeights", "SequenceSample", "apply_mask", "normalize_rgb", "scale_depth",
           "Generator", "GeneratorState", "ModelConfig", "count_mads", "count_params"]
__version__ = "0.1.0"
