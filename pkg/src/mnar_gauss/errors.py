"""Exception hierarchy shared by the estimators and the command line front end."""


class MnarGaussError(Exception):
    """Base class for every error raised by this package."""


class NotPositiveDefinite(MnarGaussError, ValueError):
    pass


class SingularBlock(MnarGaussError, ValueError):
    pass


class MassTooLow(MnarGaussError, RuntimeError):
    """Rejection sampling could not hit the truncation set."""


class NonConvergent(MnarGaussError, RuntimeError):
    pass


class NoConvergence(MnarGaussError, RuntimeError):
    """Alternating projection exhausted its sweep budget."""


class EmptyFeasible(MnarGaussError, RuntimeError):
    pass


class InvalidBeta(MnarGaussError, ValueError):
    pass


class GridTooCoarse(MnarGaussError, ValueError):
    pass


class InsufficientStream(MnarGaussError, ValueError):
    pass


class SchemaError(MnarGaussError, ValueError):
    pass


class AssumptionViolation(MnarGaussError):
    """Data does not support one of the identifiability assumptions."""


class PairStarved(AssumptionViolation):
    def __init__(self, i, j, count, required):
        self.pair = (i, j)
        self.count = count
        self.required = required
        if i == j:
            what = f"coordinate {i}"
        else:
            what = f"pair ({i}, {j})"
        super().__init__(f"{what} observed in {count} rows, need {required}")


class BlockStarved(AssumptionViolation):
    def __init__(self, block, coords):
        self.block = block
        self.coords = tuple(coords)
        super().__init__(f"block {block} (coordinates {list(coords)}) is never fully observed")


class AnchorViolated(AssumptionViolation):
    def __init__(self, n_bad, n_total):
        self.n_bad = n_bad
        self.n_total = n_total
        super().__init__(f"anchor set hidden on {n_bad} of {n_total} draws")
