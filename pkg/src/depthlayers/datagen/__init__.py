from .crop import CropSpec, NoQualifyingInstance, apply_crop, qualifying_instances, resize, sample_crop
from .masks import DEFAULT_KIND_WEIGHTS, MASK_KINDS, sample_mask_kind, synthesize_mask
from .morphology import (binary_dilate, binary_erode, degrade_mask, dilate, erode, gaussian_blur,
                         gaussian_kernel)
from .perturb import (PerturbConfig, find_holes, hole_perturb, hole_ring, morph_scheme, perturb,
                      random_morph, sample_blur_sigma)
from .sample import TrainingSample, generate_dataset, generate_sample, synthetic_sample
from .scenes import synthetic_scene

__all__ = [
    "CropSpec", "NoQualifyingInstance", "apply_crop", "qualifying_instances", "resize", "sample_crop",
    "DEFAULT_KIND_WEIGHTS", "MASK_KINDS", "sample_mask_kind", "synthesize_mask",
    "binary_dilate", "binary_erode", "degrade_mask", "dilate", "erode", "gaussian_blur",
    "gaussian_kernel", "PerturbConfig", "find_holes", "hole_perturb", "hole_ring", "morph_scheme",
    "perturb", "random_morph", "sample_blur_sigma", "TrainingSample", "generate_dataset", "generate_sample",
    "synthetic_sample", "synthetic_scene",
]
