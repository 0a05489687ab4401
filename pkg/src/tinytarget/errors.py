"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class BranchPointError(DomainError):
    """A derivative was requested at a point where the loss is discontinuous."""


class ShapeError(ValueError):
    """Tensor or parameter shapes do not agree."""


class AnnotationParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class GenerationError(RuntimeError):
    """Synthetic scene generation could not place all targets."""


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
