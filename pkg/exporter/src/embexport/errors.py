class ExportError(Exception):
    """Base class for exporter failures."""


class ModelLoadFailure(ExportError):
    pass


class ImageDecodeFailure(ExportError):
    pass


class ManifestError(ExportError):
    pass
