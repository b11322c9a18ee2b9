"""Error taxonomy shared across the package.

ValidationError covers bad parameters, malformed descriptors, and contract
violations detected before any numerics run.  SolverError covers numerical
failures (non-convergence, indefinite mass, singular samples).  The command
line maps these onto distinct exit codes.
"""


class ValidationError(ValueError):
    """Invalid configuration, parameters, or input data."""


class SolverError(RuntimeError):
    """Numerical failure: non-convergence, degenerate geometry, singularity."""
