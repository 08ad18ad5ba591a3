"""
securepose - surveillance video forgery detection with Wi-Fi CSI

Cross-checks the human poses a camera shows against the poses a Wi-Fi
link senses, flags groups of pictures that disagree, and localizes the
people who were added or removed.
"""

from importlib.metadata import version as _version

__version__ = _version("securepose")
__all__ = [
    "PipelineConfig",
    "load_config",
    "build_dataset",
    "train_pose",
    "predict_pose",
    "train_detector",
    "compact_jhms",
    "detect",
    "decide",
    "localize_gop",
    "build_report",
    "run_pipeline",
]

from securepose.config import PipelineConfig, load_config
from securepose.csi2pose import predict_pose, train_pose
from securepose.dataset import build_dataset
from securepose.detector import compact_jhms, decide, detect, train_detector
from securepose.localizer import localize_gop
from securepose.metrics import build_report
from securepose.pipeline import run_pipeline
