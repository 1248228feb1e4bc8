"""Adaptive multi-scale vector median filtering against adversarial patches.

The package bundles the SMART-VMF filter, a classic vector median baseline,
derandomized-smoothing ablations with their overlap bounds, a LaVAN-style
patch attack, a linear reference classifier and the clean/certified
accuracy evaluation that ties them together.
"""

__version__ = "0.1.0"

from .ablation import AblationSet, AblationSpec, Ablator, delta_band, delta_block, generate_ablations
from .adversary import AttackConfig, LaVANPatch, Mask, apply_patch, build_mask, corner_placements, train_lavan
from .classifier import ReferenceClassifier, generate_synthetic, train_reference
from .evaluation import AblationVote, EvalRecord, clean_accuracy, robust_certified, run_sweep, write_report
from .filters import (
    ClassicVMF,
    FilterConfig,
    SmartVMF,
    adaptive_weights,
    classic_vmf,
    fuse_scales,
    residual_energy,
    smart_vmf,
    weiszfeld_median,
)
from .image import PixelCoord, window
from .raster import decode_ppm, encode_ppm, read_image, write_image



__all__ = [
    "AblationSet",
    "AblationSpec",
    "AblationVote",
    "Ablator",
    "AttackConfig",
    "ClassicVMF",
    "EvalRecord",
    "FilterConfig",
    "LaVANPatch",
    "Mask",
    "PixelCoord",
    "ReferenceClassifier",
    "SmartVMF",
    "adaptive_weights",
    "apply_patch",
    "build_mask",
    "classic_vmf",
    "clean_accuracy",
    "corner_placements",
    "decode_ppm",
    "delta_band",
    "delta_block",
    "encode_ppm",
    "fuse_scales",
    "generate_ablations",
    "generate_synthetic",
    "read_image",
    "residual_energy",
    "robust_certified",
    "run_sweep",
    "smart_vmf",
    "train_lavan",
    "train_reference",
    "weiszfeld_median",
    "window",
    "write_image",
    "write_report",
]
