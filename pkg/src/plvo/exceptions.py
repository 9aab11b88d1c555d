"""Exception hierarchy shared across the package."""


class PLVOError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(PLVOError, ValueError):
    pass


class BehindCameraError(GeometryError):
    """A point is at or behind the minimum depth plane."""


class DegenerateDepthError(GeometryError):
    """Stereo disparity too small to triangulate."""


class DegenerateLineError(GeometryError):
    """Coincident endpoints, or a line whose image projection vanishes."""


class NearSingularLogError(GeometryError):
    """Rotation angle too close to pi for a well defined logarithm."""


class ParseError(PLVOError, ValueError):
    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class ConfigError(PLVOError, ValueError):
    pass


class TrajectoryMismatchError(PLVOError, ValueError):
    def __init__(self, missing_in_est, missing_in_gt):
        self.missing_in_est = list(missing_in_est)
        self.missing_in_gt = list(missing_in_gt)
        super().__init__(
            "trajectories do not share frame ids; "
            f"missing in estimate: {self.missing_in_est[:20]}, "
            f"missing in ground truth: {self.missing_in_gt[:20]}"
        )
