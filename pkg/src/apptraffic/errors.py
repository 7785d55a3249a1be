"""Exception hierarchy shared by every pipeline stage."""


class AppTrafficError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""

    exit_code = 4


class ConfigError(AppTrafficError, ValueError):
    exit_code = 2

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


# Geometry raises ConfigurationError for bad call arguments; same thing.
ConfigurationError = ConfigError


class StageError(AppTrafficError):
    """A stage's predecessor output is missing."""

    exit_code = 3

    def __init__(self, stage, missing):
        self.stage = stage
        self.missing = missing
        super().__init__(f"missing input {missing}; run the '{stage}' stage first")


class GeometryError(AppTrafficError, ValueError):
    def __init__(self, message, ident=None):
        self.ident = ident
        super().__init__(message if ident is None else f"{message} ({ident})")


class DuplicateSiteError(GeometryError):
    def __init__(self, first, second):
        self.pair = (first, second)
        super().__init__("duplicate site locations", f"{first}, {second}")


class FormatError(AppTrafficError, ValueError):
    pass


class IngestError(AppTrafficError):
    pass


class InterpolationError(AppTrafficError, KeyError):
    def __init__(self, site_id):
        self.site_id = site_id
        super().__init__(f"site {site_id!r} has no row in the weight matrix")

    def __str__(self):
        return self.args[0]


class FeatureError(AppTrafficError, ValueError):
    pass


class AnalysisError(AppTrafficError, ValueError):
    pass


class ModelError(AppTrafficError, ValueError):
    pass
