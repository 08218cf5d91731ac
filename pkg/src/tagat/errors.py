"""Exception hierarchy shared across the package."""


class TagatError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(TagatError, ValueError):
    pass


class ZeroVarianceColumn(TagatError, ValueError):
    def __init__(self, index: int):
        super().__init__(f"column {index} has zero sample variance")
        self.index = index


class FactorizationFailed(TagatError, ArithmeticError):
    pass


class NonpositiveDiagonal(TagatError, ValueError):
    def __init__(self, index: int, value: float):
        super().__init__(f"precision diagonal entry {index} is {value!r}, expected > 0")
        self.index = index
        self.value = value


class NonScalarLoss(TagatError, ValueError):
    pass


class NonPositiveEdgeWeight(TagatError, ValueError):
    def __init__(self, i: int, j: int, w: float):
        super().__init__(
            f"retained edge ({i}, {j}) has weight {w!r} <= 0; "
            "density exceeds the number of positive partial correlations"
        )
        self.i, self.j, self.w = i, j, w


class IndexOutOfRange(TagatError, IndexError):
    pass


class UnknownTask(TagatError, KeyError):
    def __init__(self, task):
        super().__init__(f"unknown task {task!r}")
        self.task = task

    def __str__(self):
        return self.args[0]


class ZeroNormRow(TagatError, ValueError):
    def __init__(self, k: int):
        super().__init__(f"memory bank row {k} has zero norm")
        self.k = k


class EmptyBatch(TagatError, ValueError):
    pass


class EmptyDataset(TagatError, ValueError):
    pass


class NonFiniteLoss(TagatError, FloatingPointError):
    def __init__(self, step: int, terms: dict):
        detail = ", ".join(f"{k}={v!r}" for k, v in terms.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")
        self.step = step
        self.terms = terms


class DegenerateCorr(TagatError, ValueError):
    pass


class ParseError(TagatError, ValueError):
    def __init__(self, path, line: int, col: int, text: str):
        super().__init__(f"{path}:{line}:{col}: cannot parse {text!r} as a number")
        self.line, self.col = line, col


class NonFiniteValue(TagatError, ValueError):
    def __init__(self, path, line: int, col: int, text: str):
        super().__init__(f"{path}:{line}:{col}: non-finite value {text!r}")
        self.line, self.col = line, col


class VersionMismatch(TagatError, ValueError):
    pass


class CorruptPayload(TagatError, ValueError):
    pass
