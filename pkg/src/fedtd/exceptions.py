"""Exception types shared across the package."""


class FedTdError(Exception):
    """Base class for all fedtd-specific errors."""


class NotErgodicError(FedTdError):
    """A transition matrix is not aperiodic and irreducible."""


class GenerationError(FedTdError):
    """Family generation exhausted its rejection budget.

    Carries the tightest heterogeneity levels realized across all attempts
    so callers can report how far generation was from the target.
    """

    def __init__(self, message, tightest_kernel=None, tightest_reward=None):
        super().__init__(message)
        self.tightest_kernel = tightest_kernel
        self.tightest_reward = tightest_reward


class NumericError(FedTdError):
    """A numerical routine failed a consistency check on valid-looking input."""


class BoundRegimeError(FedTdError):
    """Perturbation-bound validity condition violated; carries the ratio."""

    def __init__(self, message, ratio):
        super().__init__(message)
        self.ratio = ratio


class NotSchurStableError(FedTdError):
    """The mean-path iteration matrix is not Schur stable."""

    def __init__(self, message, spectral_radius):
        super().__init__(message)
        self.spectral_radius = spectral_radius


class DivergedError(FedTdError):
    """An unprojected run produced a non-finite or blown-up iterate."""

    def __init__(self, message, round_index):
        super().__init__(message)
        self.round_index = round_index
