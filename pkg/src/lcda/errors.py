"""Exception hierarchy shared by every module."""


class LcdaError(Exception):
    """Base class for all library errors."""


class DomainError(LcdaError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvalidClass(DomainError):
    """A class block cannot produce sufficient statistics."""

    def __init__(self, class_id, message=None):
        self.class_id = class_id
        super().__init__(message or f"class {class_id!r} needs at least 2 observations")


class NumericalError(LcdaError, ArithmeticError):
    """A factorization or eigendecomposition failed."""


class RankError(NumericalError):
    """A scatter matrix has the wrong rank for the requested density."""

    def __init__(self, message, class_id=None):
        self.class_id = class_id
        if class_id is not None:
            message = f"class {class_id!r}: {message}"
        super().__init__(message)


class ComponentCollapse(NumericalError):
    """A mixture component lost (almost) all of its responsibility mass."""

    def __init__(self, k, iteration=None, reason="responsibility mass below collapse tolerance"):
        self.k = k
        self.iteration = iteration
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"component {k} collapsed{where}: {reason}")


class NonFiniteLikelihood(NumericalError):
    """The log-likelihood trace left the real line."""


class SelectionFailed(LcdaError):
    """Every point of a K grid collapsed."""


class QdaInfeasible(NumericalError):
    """At least one class covariance estimate is singular."""

    def __init__(self, class_ids):
        self.class_ids = list(class_ids)
        shown = ", ".join(map(str, self.class_ids[:10]))
        more = "" if len(self.class_ids) <= 10 else f" (+{len(self.class_ids) - 10} more)"
        super().__init__(
            f"QDA needs n_i - 1 >= p for every class; singular covariance for: {shown}{more}"
        )
