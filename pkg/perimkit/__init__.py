from .config import PipelineConfig, SynthConfig
from .errors import PerimkitError
from .models import NOISE, EvalReport, Perimeter, PointCloud, RoomSkeleton
from .pipeline import run_pipeline

__version__ = "0.1.0"
__all__ = ["PipelineConfig", "SynthConfig", "PerimkitError", "NOISE", "EvalReport", "Perimeter", "PointCloud",
           "RoomSkeleton", "run_pipeline"]
