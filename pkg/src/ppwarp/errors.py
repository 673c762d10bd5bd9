"""Exception hierarchy.

Every error carries the name of the module that raised it so the CLI can
report provenance. Data errors (bad files, bad specs) and numerical errors
(degenerate geometry) map to different exit codes.
"""


class StitchError(Exception):
    module = "ppwarp"

    def __init__(self, message, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module


class DataError(StitchError):
    """Input could not be parsed or violates a declared contract."""


class NumericalError(StitchError):
    """Input is well-formed but the geometry is degenerate."""


class TooFewCorrespondences(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, field=None, module="matches"):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        if loc:
            message = f"{', '.join(loc)}: {message}"
        super().__init__(message, module)
        self.line = line
        self.field = field


class BoundsError(DataError):
    def __init__(self, message, pair_id=None, module="matches"):
        super().__init__(message, module)
        self.pair_id = pair_id


class IoError(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InvalidGrid(DataError):
    pass


class InvalidSpec(DataError):
    pass


class EmptyInput(DataError):
    pass


class DegenerateConfiguration(NumericalError):
    def __init__(self, message, cell=None, module="geometry"):
        super().__init__(message, module)
        self.cell = cell


class AtInfinity(NumericalError):
    pass


class NoStructureFound(NumericalError):
    pass


class DegenerateAxis(NumericalError):
    pass


class SingularBlend(NumericalError):
    def __init__(self, message, cell=None, module="combine"):
        super().__init__(message, module)
        self.cell = cell


class UnboundedCanvas(NumericalError):
    pass
