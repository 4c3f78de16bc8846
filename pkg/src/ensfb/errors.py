"""Exception hierarchy shared by the solvers and the CLI."""


class EnsfbError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(EnsfbError, ValueError):
    """Bad input: wrong shapes, non-finite entries, unknown names."""


class SolverError(EnsfbError, RuntimeError):
    """A numerical routine failed to deliver a trustworthy result."""


class ConvergenceError(SolverError):
    """Iteration budget exhausted before the tolerance was met."""


class NotStableError(SolverError):
    """A matrix required to be Hurwitz has an eigenvalue with Re >= 0."""


class StabilizabilityError(SolverError):
    """The Hamiltonian has eigenvalues on the imaginary axis."""


class StepUnderflowError(SolverError):
    """The adaptive integrator could not make progress."""
