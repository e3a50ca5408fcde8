"""Feature-map dumper for image folders in the industrial-defect layout."""

from .container import write_tensor
from .extract import ExtractConfig, extract
from .layout import DatasetImage, scan_layout

__all__ = ["ExtractConfig", "extract", "write_tensor", "DatasetImage", "scan_layout"]

__version__ = "0.1.0"
