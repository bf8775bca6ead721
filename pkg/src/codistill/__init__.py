"""codistill: co-distillation of a grid detector and a report classifier.

Semi-supervised training on paired image/report data where each modality's
teacher-generated pseudo labels are refined by the other modality (RPDLR
for detections, APCLR for report classes), sharpened by self-adaptive NMS,
and improved over generations by promoting students to teachers.
"""

__version__ = "0.1.0"

from .config import DatasetConfig, NoiseSpec, PipelineConfig, RunConfig, desk_preset
from .geometry import BBox, area, iou
from .pipeline import run_ablation, run_coevolution
from .refine import ClassSet, apclr, classify_to_classset, rpdlr
from .suppression import Detection, DetectionSet, nms, sa_nms
from .synthdata import SyntheticDataset, generate, inject_noise

__all__ = [
    "BBox",
    "ClassSet",
    "DatasetConfig",
    "Detection",
    "DetectionSet",
    "NoiseSpec",
    "PipelineConfig",
    "RunConfig",
    "SyntheticDataset",
    "__version__",
    "apclr",
    "area",
    "classify_to_classset",
    "desk_preset",
    "generate",
    "inject_noise",
    "iou",
    "nms",
    "rpdlr",
    "run_ablation",
    "run_coevolution",
    "sa_nms",
]
