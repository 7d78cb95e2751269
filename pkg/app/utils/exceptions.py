# app/utils/exceptions.py

EXIT_FAILURE = 1
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3


class SimulationError(Exception):
    """
    Base class for every domain error raised by the simulator.
    `exit_code` is what the CLI returns when the error reaches it.
    """

    exit_code: int = EXIT_FAILURE

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# quant


class InvalidDemand(SimulationError):
    """
    Raised when an error demand (delta, Delta) is not strictly positive.
    """


class InvalidWeights(SimulationError):
    """
    Raised when a weight vector is empty or holds non-finite entries.
    """


class CorruptPayload(SimulationError):
    """
    Raised when a quantized payload or its byte form is malformed.
    """


# linkmodel


class FrequencyOutOfRange(SimulationError):
    """
    Raised when a CPU frequency lies outside [f_min, f_max].
    """


class ZeroRate(SimulationError):
    """
    Raised when a transmission is requested over a non-positive rate.
    """


class InfeasibleSplit(SimulationError):
    """
    Raised when a (theta, pi) split implies f or P outside the device bounds.
    Returns exit code 2.
    """

    exit_code = EXIT_INFEASIBLE


# allocator


class InvalidMultiplier(SimulationError):
    """
    Raised when a Lagrange multiplier is not strictly positive.
    """


class InfeasibleBudget(SimulationError):
    """
    Raised when no allocation fits the round time budget
    (theta_min + pi_min > 1).
    Returns exit code 2.
    """

    exit_code = EXIT_INFEASIBLE

    def __init__(self, detail: str, device_id: int | None = None):
        super().__init__(detail)
        self.device_id = device_id


# diffusion


class InvalidSchedule(SimulationError):
    """
    Raised when a variance schedule has betas outside (0, 1) or T < 1.
    """


class NumericalOverflow(SimulationError):
    """
    Raised when the noise model produces non-finite values.
    """


# federation / metrics


class TooFewSamples(SimulationError):
    """
    Raised when a point set is too small for the requested operation.
    """


class ShapeError(SimulationError):
    """
    Raised when vectors that must share a dimension do not.
    """


class InvalidCovariance(SimulationError):
    """
    Raised when a covariance is not symmetric positive semidefinite.
    """


# cli


class ConfigError(SimulationError):
    """
    Raised when a run configuration cannot be loaded or validated.
    Returns exit code 3.
    """

    exit_code = EXIT_CONFIG
