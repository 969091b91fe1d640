"""Image-folder feature exporter producing EMBS embedding sets."""

from .backbones import BackboneError, resolve
from .export import ExportError, ExportSpec, ExportSummary, export
from .preprocess import load_image

__version__ = "0.1.0"

__all__ = [
    "BackboneError",
    "ExportError",
    "ExportSpec",
    "ExportSummary",
    "export",
    "load_image",
    "resolve",
]
