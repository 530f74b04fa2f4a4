"""Exception and warning types.

Every error carries an ``invariant`` name so that command-line callers can
emit machine-readable failures.
"""


class TranscostError(Exception):
    """Base class for all package errors."""

    invariant = "TranscostError"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context

    def to_dict(self):
        out = {"error": type(self).__name__, "invariant": self.invariant,
               "message": str(self)}
        if self.context:
            out["context"] = {k: _jsonable(v) for k, v in self.context.items()}
        return out


def _jsonable(v):
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return str(v)


def _named(name, base=TranscostError, doc=""):
    cls = type(name, (base,), {"invariant": name, "__doc__": doc})
    return cls


class InvariantViolation(TranscostError, ValueError):
    """A domain-type invariant does not hold."""

    invariant = "InvariantViolation"


# event_history
NonMonotoneTimes = _named("NonMonotoneTimes", InvariantViolation,
                          "Event times within a subject are not strictly increasing.")
BrokenChain = _named("BrokenChain", InvariantViolation,
                     "An event's from_state does not match the current state.")
TransitionFromAbsorbing = _named("TransitionFromAbsorbing", InvariantViolation,
                                 "A transition leaves an absorbing state.")
EventAfterCensoring = _named("EventAfterCensoring", InvariantViolation,
                             "An event lies after the censoring time or the horizon.")
MixedStateSpaces = _named("MixedStateSpaces", InvariantViolation,
                          "Histories do not share a state space and horizon.")

# survival / weights
EmptySample = _named("EmptySample", InvariantViolation, "No observations supplied.")
EmptyStratum = _named("EmptyStratum", InvariantViolation, "A requested stratum has no subjects.")
ZeroCensoringSurvival = _named("ZeroCensoringSurvival", InvariantViolation,
                               "A censoring-survival weight denominator is zero.")

# markov
JumpWithEmptyRiskSet = _named("JumpWithEmptyRiskSet", InvariantViolation,
                              "A transition was recorded while nobody was at risk.")
InvalidFactor = _named("InvalidFactor", InvariantViolation,
                       "A product-integral factor has a negative entry.")
NoConvergence = _named("NoConvergence", TranscostError,
                       "An iterative procedure hit its iteration limit.")

# cox
MonotoneLikelihood = _named("MonotoneLikelihood", TranscostError,
                            "The partial likelihood has no finite maximiser.")
SingularInformation = _named("SingularInformation", TranscostError,
                             "The information matrix is singular.")
NoEvents = _named("NoEvents", InvariantViolation, "There are no observed transitions.")

# cost estimators
EmptyRiskSetAtAccrual = _named("EmptyRiskSetAtAccrual", InvariantViolation,
                               "Cost accrues while the risk set is empty.")
GridMismatch = _named("GridMismatch", InvariantViolation,
                      "Cost panels do not share a common grid.")
EmptyRiskSetAtInterval = _named("EmptyRiskSetAtInterval", InvariantViolation,
                                "An interval with observed cost has an empty risk set.")

# regression
SingularDesign = _named("SingularDesign", TranscostError, "The weighted design is rank deficient.")
NonPositiveDefiniteOmega = _named("NonPositiveDefiniteOmega", InvariantViolation,
                                  "A working covariance block is not positive definite.")
SingularWorkingMatrix = _named("SingularWorkingMatrix", TranscostError,
                               "The GEE working matrix is singular.")
SingularA = _named("SingularA", TranscostError, "The sandwich bread matrix is singular.")
NonMonotoneObservation = _named("NonMonotoneObservation", InvariantViolation,
                                "Observed rows within a subject are not a leading prefix.")

# npv
DimensionMismatch = _named("DimensionMismatch", InvariantViolation,
                           "A design row does not match the coefficient length.")
MissingCostModel = _named("MissingCostModel", InvariantViolation,
                          "A transition type with events has no cost builder.")
NoJumps = _named("NoJumps", InvariantViolation, "The survival curve is flat on the window.")

# simulator / io
InvalidSpec = _named("InvalidSpec", InvariantViolation, "The scenario is malformed.")
SchemaError = _named("SchemaError", InvariantViolation, "An input file violates its schema.")


class InsufficientPairsWarning(UserWarning):
    """No subject has two observed rows; the random-effect variance is set to zero."""


class SharedJumpWarning(UserWarning):
    """Cost accrual and survival jump at the same instant in the dual Strawderman form."""
