"""Inverse halftoning by learned base/detail layer decomposition.

The pipeline halftones images with Floyd-Steinberg error diffusion,
learns to recover a blurred base layer through a residual network fed
with the Gaussian-blurred halftone, predicts a Laplacian structure map
to guide detail recovery, and reassembles the continuous-tone image as
clamp01(base + detail). Includes a small from-scratch conv/ReLU engine
with gradient checking, the three-stage training protocol, and
PSNR/SSIM/histogram evaluation tools.
"""

from .backend import BACKEND
from .filters import gaussian_kernel, convolve_same, laplacian_map
from .halftone import floyd_steinberg
from .imagecore import (
    ImageFormatError,
    clamp01,
    load_image,
    load_pgm,
    load_ppm,
    merge_planes,
    save_pgm,
    save_ppm,
    split_planes,
    to_grayscale,
)
from .metrics import psnr, residual_histogram, ssim
from .networks import (
    ModelBundle,
    SubnetSpec,
    UntrainedModelError,
    build_subnet,
    load_bundle,
    new_bundle,
    predict_base,
    predict_detail,
    predict_structure_map,
    reconstruct,
    reconstruct_color,
    save_bundle,
)
from .training import (
    NumericError,
    SampleTriplet,
    TrainConfig,
    base_residual_target,
    build_dataset,
    lr_schedule,
    train_baseline,
    train_stage1,
    train_stage2,
    train_stage3,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ImageFormatError",
    "ModelBundle",
    "NumericError",
    "SampleTriplet",
    "SubnetSpec",
    "TrainConfig",
    "UntrainedModelError",
    "base_residual_target",
    "build_dataset",
    "build_subnet",
    "clamp01",
    "convolve_same",
    "floyd_steinberg",
    "gaussian_kernel",
    "laplacian_map",
    "load_bundle",
    "load_image",
    "load_pgm",
    "load_ppm",
    "lr_schedule",
    "merge_planes",
    "new_bundle",
    "predict_base",
    "predict_detail",
    "predict_structure_map",
    "psnr",
    "reconstruct",
    "reconstruct_color",
    "residual_histogram",
    "save_bundle",
    "save_pgm",
    "save_ppm",
    "split_planes",
    "ssim",
    "to_grayscale",
    "train_baseline",
    "train_stage1",
    "train_stage2",
    "train_stage3",
]
