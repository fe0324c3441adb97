"""Monotone Markov chain toolkit.

Finite Markov kernels over ordered state spaces, exact structural checks
(stochastic monotonicity, shift-tail monotonicity, supermodularity), exact
covariance / mean curve computation with shape certification, a seeded
common-uniform coupling simulator, and constructors for the standard model
families (reflected walks, birth-death skeletons, shot noise, dams).
"""

from .kernels import (
    FiniteKernel,
    GeneralizedInverseTable,
    KernelError,
    KernelSequence,
    OrderedStateSpace,
    build_ginv,
    compose,
    ginv_query,
    identity_kernel,
    integer_space,
    kernel_from_json,
    kernel_to_json,
    n_step,
    uniform_space,
)

__version__ = "0.1.0"
