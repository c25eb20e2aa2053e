"""Kernel gradient descent (KGD) regression with early-stopping rules.

The package fits least-squares regression in a reproducing kernel Hilbert
space by plain gradient descent on the coefficient vector and chooses the
number of iterations with one of several stopping rules: an adaptive rule
driven by the empirical effective dimension, an oracle, hold-out, the
balancing and Lepskii principles, and a Rademacher-complexity rule.
"""

from .exceptions import ConfigError, InputError, KgdError, NumericError
from .kernels import (
    Dataset,
    KernelSpec,
    build_kernel_matrix,
    cross_kernel,
    eval_kernel,
    kappa_sq,
)
from .spectral import (
    KernelMatrix,
    eig_sym,
    empirical_effective_dim,
    local_rademacher,
)
from .kgd import (
    IncrementNorms,
    KgdState,
    increment_norms,
    kgd_closed_form,
    kgd_path,
    kgd_step,
    predict,
    predict_many,
)
from .rules import (
    RuleConfig,
    StoppingDecision,
    asr_stop,
    bp_stop,
    cross_validate_constant,
    dsr_stop,
    estimate_noise_std,
    holdout_stop,
    lp_stop,
    oracle_stop,
    w_full,
    w_prime,
)

__version__ = "0.1.0"
