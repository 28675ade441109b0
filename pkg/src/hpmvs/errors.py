"""Exception types shared across the pipeline."""


class HpmvsError(Exception):
    """Base class for all pipeline errors."""


class FormatError(HpmvsError):
    """A file on disk does not match its documented format."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class InsufficientViewsError(HpmvsError):
    """The scene does not have enough views for multi-view matching."""


class DegeneratePlaneError(HpmvsError):
    """A plane passes through a camera center; no homography exists."""


class DegenerateSupportError(HpmvsError):
    """Plane-fit support points are rank deficient (collinear or coincident)."""


class DegenerateInputError(HpmvsError):
    """Point set is too small or collinear; triangulation is undefined."""


class EmptyCloudError(HpmvsError):
    """A point cloud required to be nonempty is empty."""
