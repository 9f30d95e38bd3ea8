"""Offline embedding exporter for the memsel engine's file formats."""

from .encoders import HfClipEncoder, ToyColorEncoder, get_encoder
from .errors import ExportError, ImageDecodeFailure, ManifestError, ModelLoadFailure
from .export import (
    ExportJob,
    ExportReport,
    ManifestEntry,
    embed_negatives,
    export_store,
    load_manifest,
)

__version__ = "0.1.0"
