"""Framework-side exporter for the landmark toolkit: torch state dicts to
`.lmkw` containers, plus offline teacher-heatmap precomputation."""

from .export import ExportError, export_teacher_heatmaps, export_weights
from .name_map import MapEntry, NameMap, NameMapError, default_name_map
from .torch_model import StudentNet

__all__ = [
    "ExportError", "export_teacher_heatmaps", "export_weights",
    "MapEntry", "NameMap", "NameMapError", "default_name_map",
    "StudentNet",
]
