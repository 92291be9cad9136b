"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end and,
where one applies, the modelling assumption that the failure implicates.
"""


class PwaError(Exception):
    """Base class for all library errors."""

    exit_code = 1
    assumption = None

    def __init__(self, message, *, assumption=None, **details):
        super().__init__(message)
        if assumption is not None:
            self.assumption = assumption
        self.details = details


class NoLocation(PwaError):
    """A signature vector matched no location of the partition."""

    exit_code = 10
    assumption = "partition completeness (locations cover every reachable state)"


class WrongDegree(PwaError):
    """An inversion formula was requested for a model of another relative degree."""

    exit_code = 11
    assumption = "A4 (equal component relative degree)"


class NotDecouplable(PwaError):
    exit_code = 12
    assumption = "A9 (one similarity transform decouples stable/unstable modes)"


class NonHyperbolic(PwaError):
    exit_code = 13
    assumption = "A9 (no eigenvalue on the unit circle)"


class EmptySolutionSet(PwaError):
    exit_code = 14
    assumption = "A9b (every unstable successor state has a predecessor)"


class DegreeExceedsCap(PwaError):
    exit_code = 15
    assumption = "finite global dynamical relative degree"


class AssumptionViolated(PwaError):
    exit_code = 16


class A5Violated(AssumptionViolated):
    assumption = "A5 (location-invariant output function)"


class A6Violated(AssumptionViolated):
    assumption = "A6 (time-invariant output function and output-based switching)"


class NoForceZeroValue(PwaError):
    exit_code = 17
    assumption = "A8 (forcing decays at the horizon extremities)"


class HorizonError(PwaError):
    """A time index fell outside a schedule's declared horizon."""

    exit_code = 18


class PlantError(PwaError):
    """An ILC plant executor failed on a given trial."""

    exit_code = 19
