"""Block-wise DISTS and LPIPS feature-map exporter writing FMAP files."""

__version__ = "0.1.0"

from .export import ExportJob, Grid, METRIC_GRIDS, export, make_job
from .fmap import write_fmap
from .models import MetricModel, load_model, make_synthetic_weights, save_weights

__all__ = [
    "__version__",
    "ExportJob",
    "Grid",
    "METRIC_GRIDS",
    "export",
    "make_job",
    "write_fmap",
    "MetricModel",
    "load_model",
    "make_synthetic_weights",
    "save_weights",
]
