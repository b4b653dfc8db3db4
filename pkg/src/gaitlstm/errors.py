"""Exception hierarchy shared by all modules."""


class GaitLstmError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(GaitLstmError, ValueError):
    """Operands have incompatible dimensions."""


class InvalidInputError(GaitLstmError, ValueError):
    """Input is structurally valid but unusable (e.g. empty sequence)."""


class InvalidConfigError(GaitLstmError, ValueError):
    """A hyperparameter or option is outside its allowed range."""


class ParseError(GaitLstmError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class LabelError(GaitLstmError, ValueError):
    """Cohort label cannot be derived from the file name and no override was given."""


class SplitError(GaitLstmError, ValueError):
    pass


class TrainingError(GaitLstmError, RuntimeError):
    pass


class CheckpointError(GaitLstmError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError):
    pass
