"""Early-stopping rules for KGD.

Every rule takes a training :class:`~kgdstop.kernels.Dataset`, its Gram
matrix and a :class:`RuleConfig`, runs the KGD recursion as far as it needs
to, and returns a :class:`StoppingDecision`.

=========  ==============================================================
``asr``    adaptive rule: first t with
           ``||f_{t+1}-f_t||_D + t^{-1/2} ||f_{t+1}-f_t||_K
           <= 4 C (1+beta) W'(t) / t``
``or``     oracle: argmin_t ``||f_t - f_rho||_D``
``ho``     hold-out: train on half the data, argmin validation error
``bp``     balancing principle over all pairs ``t < t'``
``lp``     Lepskii principle on a geometric grid of iteration counts
``dsr``    first t where the local empirical Rademacher complexity
           exceeds ``C / (tau * t * beta)``
=========  ==============================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import ConfigError, InputError, KgdError
from .kernels import Dataset, KernelSpec, build_kernel_matrix, cross_kernel, kappa_sq
from .kgd import KgdState, check_step_size, increment_norms, kgd_path, kgd_step, predict_many
from .spectral import KernelMatrix, local_rademacher

DEFAULT_CV_GRID = tuple(2.0**k for k in range(-16, 5))

# rule id -> RuleConfig field holding its tunable constant
CONSTANT_FIELDS = {"asr": "c_cv", "bp": "c_bp", "lp": "c_lp", "dsr": "c_dsr"}


class EmptyGridError(KgdError):
    """The Lepskii cap removed every candidate iteration count."""


@dataclass(frozen=True)
class RuleConfig:
    """Constants shared by the stopping rules.

    ``t_max``, ``beta``, ``m_noise`` and ``gamma_noise`` default to ``None``
    and are then resolved per dataset: ``t_max = n``, ``beta = 1/kappa^2``,
    ``M = 3 tau`` and ``gamma = tau`` with ``tau`` the estimated noise
    standard deviation. ``theoretical`` switches ASR to the confidence-based
    threshold with the full W statistic and ``log^4(16/delta)``.
    """

    delta: float = 0.05
    c_cv: float = 1.0
    c_bp: float = 1.0
    c_lp: float = 1.0
    c_dsr: float = 2.0 * math.e
    q: float = 2.0
    t_max: int | None = None
    m_noise: float | None = None
    gamma_noise: float | None = None
    beta: float | None = None
    theoretical: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not self.q > 1.0:
            raise ConfigError(f"q must exceed 1, got {self.q!r}")
        for name in ("c_cv", "c_bp", "c_lp", "c_dsr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("m_noise", "gamma_noise", "beta"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if self.t_max is not None and (int(self.t_max) != self.t_max or self.t_max < 1):
            raise ConfigError(f"t_max must be a positive integer, got {self.t_max!r}")


@dataclass
class StoppingDecision:
    """Outcome of a stopping rule.

    ``trace`` has one row ``(t, statistic, threshold)`` per examined
    iteration count. ``coeffs_at_stop`` are the coefficients of
    ``f_{t_hat}`` over the training inputs selected by ``support``
    (``None`` meaning the whole training set, in order).
    """

    rule_name: str
    t_hat: int
    trace: np.ndarray
    coeffs_at_stop: np.ndarray
    truncated: bool = False
    support: np.ndarray | None = field(default=None, repr=False)

    def predict(self, spec: KernelSpec, train: Dataset, points) -> np.ndarray:
        inputs = train.inputs if self.support is None else train.inputs[self.support]
        return predict_many(spec, inputs, self.coeffs_at_stop, points)


def _decision(name, t_hat, rows, coeffs, truncated=False, support=None) -> StoppingDecision:
    trace = np.asarray(rows, dtype=float).reshape(-1, 3)
    return StoppingDecision(name, int(t_hat), trace, np.asarray(coeffs, dtype=float), bool(truncated), support)


def _resolve(config: RuleConfig, spec: KernelSpec, n: int) -> tuple[float, int]:
    k2 = kappa_sq(spec)
    beta = 1.0 / k2 if config.beta is None else config.beta
    check_step_size(beta, k2)
    t_max = n if config.t_max is None else int(config.t_max)
    return beta, t_max


def _check_matrix(dataset: Dataset, matrix: KernelMatrix) -> None:
    if matrix.n != len(dataset):
        raise InputError(f"dimension mismatch: kernel matrix is {matrix.n}x{matrix.n} for {len(dataset)} samples")


def _coeffs_after(matrix: KernelMatrix, y, beta: float, t: int) -> np.ndarray:
    state = KgdState(np.zeros(matrix.n), 0, beta)
    for _ in range(t):
        state = kgd_step(state, matrix, y)
    return state.coeffs


# ---------------------------------------------------------------------------
# threshold statistics


def _building_blocks(t, n, eff_dim):
    t = np.asarray(t, dtype=float)
    root_n = np.sqrt(n)
    cap = np.sqrt(np.maximum(eff_dim, 1.0))
    growth = 1.0 + 8.0 * np.sqrt(t / n)
    a = np.sqrt(t) / n + cap * growth / root_n
    b = np.sqrt(t) / n + cap / root_n
    return a, b, growth


def w_prime(t, n: int, eff_dim):
    """Constant-free variance proxy W'(t) used by the practical rules."""
    a, b, growth = _building_blocks(t, n, eff_dim)
    out = a * (1.0 + np.sqrt(t) * b * growth)
    return float(out) if np.ndim(out) == 0 else out


def w_full(t, n: int, eff_dim, kappa: float, m_noise: float, gamma_noise: float):
    """Variance bound W(t) including the noise constants M and gamma."""
    a, b, growth = _building_blocks(t, n, eff_dim)
    sqrt2 = math.sqrt(2.0)
    inner = sqrt2 + 2.0 * sqrt2 * (kappa**2 + kappa) * np.sqrt(t) * b * growth
    out = 2.0 * (kappa * m_noise + gamma_noise) * a * inner
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# rules


def asr_threshold(t: int, matrix: KernelMatrix, beta: float, config: RuleConfig,
                  spec: KernelSpec | None = None, tau: float | None = None) -> float:
    """Right-hand side of the adaptive rule at iteration ``t``."""
    n = matrix.n
    eff = matrix.effective_dim(1.0 / t)
    if not config.theoretical:
        return 4.0 * config.c_cv * (1.0 + beta) * w_prime(t, n, eff) / t
    m_noise = config.m_noise if config.m_noise is not None else 3.0 * tau
    gamma = config.gamma_noise if config.gamma_noise is not None else tau
    kappa = math.sqrt(kappa_sq(spec))
    log_term = math.log(16.0 / config.delta) ** 4
    return 4.0 * (1.0 + beta) * w_full(t, n, eff, kappa, m_noise, gamma) * log_term / t


def asr_stop(dataset: Dataset, matrix: KernelMatrix, spec: KernelSpec, config: RuleConfig) -> StoppingDecision:
    """Adaptive stopping rule driven by successive-iterate increments."""
    _check_matrix(dataset, matrix)
    beta, t_max = _resolve(config, spec, matrix.n)
    y = dataset.outputs
    tau = None
    if config.theoretical and (config.m_noise is None or config.gamma_noise is None):
        tau = estimate_noise_std(dataset)
    name = "asr-theory" if config.theoretical else "asr"

    cur = kgd_step(KgdState.start(matrix.n, beta, kappa_sq(spec)), matrix, y)
    rows = []
    for t in range(1, t_max + 1):
        nxt = kgd_step(cur, matrix, y)
        inc = increment_norms(cur.coeffs, nxt.coeffs, matrix)
        lhs = inc.d_norm + inc.k_norm / math.sqrt(t)
        rhs = asr_threshold(t, matrix, beta, config, spec, tau)
        rows.append((t, lhs, rhs))
        if lhs <= rhs:
            return _decision(name, t, rows, cur.coeffs)
        if t < t_max:
            cur = nxt
    return _decision(name, t_max, rows, cur.coeffs, truncated=True)


def oracle_stop(dataset: Dataset, matrix: KernelMatrix, spec: KernelSpec, f_rho_values,
                config: RuleConfig) -> StoppingDecision:
    """Iteration count closest to the true regression function in ||.||_D."""
    _check_matrix(dataset, matrix)
    beta, t_max = _resolve(config, spec, matrix.n)
    f_rho = np.asarray(f_rho_values, dtype=float)
    if f_rho.shape != (matrix.n,):
        raise InputError(f"dimension mismatch: f_rho has shape {f_rho.shape}, expected ({matrix.n},)")
    coeffs, fitted = kgd_path(matrix, dataset.outputs, beta, t_max)
    err = np.mean((fitted - f_rho) ** 2, axis=1)
    t_hat = int(np.argmin(err))
    rows = np.column_stack([np.arange(t_max + 1), err, np.full(t_max + 1, np.nan)])
    return _decision("or", t_hat, rows, coeffs[t_hat], truncated=t_hat == t_max)


def holdout_split(n: int, split_seed) -> tuple[np.ndarray, np.ndarray]:
    """Random halves (train, validation) of ``range(n)``."""
    perm = np.random.default_rng(split_seed).permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


def holdout_stop(dataset: Dataset, spec: KernelSpec, config: RuleConfig, split_seed) -> StoppingDecision:
    """Hold-out selection: KGD on one half, validation error on the other."""
    n = len(dataset)
    if n < 2:
        raise InputError("hold-out needs at least 2 samples")
    tr, vl = holdout_split(n, split_seed)
    train, valid = dataset.subset(tr), dataset.subset(vl)
    matrix = build_kernel_matrix(spec, train.inputs)
    beta, t_max = _resolve(config, spec, n)
    coeffs, _ = kgd_path(matrix, train.outputs, beta, t_max)
    kv = cross_kernel(spec, valid.inputs, train.inputs)
    err = np.mean((coeffs @ kv.T - valid.outputs) ** 2, axis=1)
    t_hat = int(np.argmin(err))
    rows = np.column_stack([np.arange(t_max + 1), err, np.full(t_max + 1, np.nan)])
    return _decision("ho", t_hat, rows, coeffs[t_hat], truncated=t_hat == t_max, support=tr)


def bp_stop(dataset: Dataset, matrix: KernelMatrix, spec: KernelSpec, config: RuleConfig) -> StoppingDecision:
    """Balancing principle.

    Smallest t such that ``||f_{t'} - f_t||_D <= C_BP W'(t')`` for every
    ``t' = t+1..t_max``. Reaching ``t_max`` (where the condition is vacuous)
    is reported as truncated.
    """
    _check_matrix(dataset, matrix)
    beta, t_max = _resolve(config, spec, matrix.n)
    n = matrix.n
    _, fitted = kgd_path(matrix, dataset.outputs, beta, t_max)
    ts = np.arange(1, t_max + 1)
    wp = np.asarray(w_prime(ts, n, matrix.effective_dim(1.0 / ts)))
    bound = config.c_bp * wp
    rows = []
    for t in range(t_max + 1):
        later = fitted[t + 1:]
        dist = np.sqrt(np.sum((later - fitted[t]) ** 2, axis=1) / n)
        ratio = float(np.max(dist / wp[t:])) if dist.size else 0.0
        rows.append((t, ratio, config.c_bp))
        if np.all(dist <= bound[t:]):
            break
    t_hat = t
    coeffs = _coeffs_after(matrix, dataset.outputs, beta, t_hat)
    return _decision("bp", t_hat, rows, coeffs, truncated=t_hat == t_max)


def lepskii_grid(n: int, spec: KernelSpec, matrix: KernelMatrix, config: RuleConfig) -> np.ndarray:
    """Integer candidate set for the Lepskii principle.

    Geometric values ``q^i / kappa^2`` rounded up and deduplicated, kept
    while ``t <= max(n / (100 kappa^2 L^2), n / (3 kappa^2 (N_D(1/t) + 1)))``
    and ``t <= t_max``.
    """
    if n < 3:
        raise InputError("the Lepskii principle needs at least 3 samples")
    k2 = kappa_sq(spec)
    _, t_max = _resolve(config, spec, n)
    log_term = 2.0 * math.log(8.0 * math.log(n) / (config.delta * math.log(config.q)))
    first_cap = n / (100.0 * k2 * log_term**2)
    grid = []
    i = 0
    while True:
        t = max(1, math.ceil(config.q**i / k2))
        i += 1
        if t > min(n, t_max):
            break
        if grid and t == grid[-1]:
            continue
        cap = max(first_cap, n / (3.0 * k2 * (matrix.effective_dim(1.0 / t) + 1.0)))
        if t <= cap:
            grid.append(t)
    return np.asarray(grid, dtype=int)


def lp_stop(dataset: Dataset, matrix: KernelMatrix, spec: KernelSpec, config: RuleConfig) -> StoppingDecision:
    """Lepskii principle over :func:`lepskii_grid`.

    The left-hand side uses ``||(L_D + I/t')^{1/2} g||_K^2 = ||g||_D^2 +
    ||g||_K^2 / t'`` and the threshold is ``C_LP (N_D(1/t') + 1) / sqrt(n)``.
    """
    _check_matrix(dataset, matrix)
    n = matrix.n
    beta, _ = _resolve(config, spec, n)
    grid = lepskii_grid(n, spec, matrix, config)
    if grid.size == 0:
        raise EmptyGridError(f"Lepskii cap eliminated every candidate (n={n})")
    coeffs, fitted = kgd_path(matrix, dataset.outputs, beta, int(grid[-1]))
    c_grid, f_grid = coeffs[grid], fitted[grid]
    tp = grid.astype(float)
    w_star = np.sqrt(tp) * (matrix.effective_dim(1.0 / tp) + 1.0) / math.sqrt(n)
    bound = config.c_lp * w_star / np.sqrt(tp)
    rows = []
    for j, t in enumerate(grid):
        dc = c_grid[j:] - c_grid[j]
        df = f_grid[j:] - f_grid[j]
        d_sq = np.sum(df * df, axis=1) / n
        k_sq = np.maximum(np.sum(dc * df, axis=1), 0.0)
        lhs = np.sqrt(d_sq + k_sq / tp[j:])
        rows.append((t, float(np.max(lhs / (w_star[j:] / np.sqrt(tp[j:])))), config.c_lp))
        if np.all(lhs <= bound[j:]):
            break
    return _decision("lp", t, rows, c_grid[j], truncated=j == grid.size - 1)


def dsr_stop(dataset: Dataset, matrix: KernelMatrix, spec: KernelSpec, config: RuleConfig,
             tau: float, name: str = "dsr") -> StoppingDecision:
    """Data-driven rule: first t with R(1/sqrt(t beta)) > C_DSR / (tau t beta).

    ``R`` is the local empirical Rademacher complexity of the spectrum of
    ``K / n``; ``tau`` is the noise standard deviation.
    """
    _check_matrix(dataset, matrix)
    if not tau > 0:
        raise InputError(f"noise level tau must be positive, got {tau!r}")
    beta, t_max = _resolve(config, spec, matrix.n)
    mu = matrix.normalized_eigvals
    rows = []
    t_hat, truncated = t_max, True
    for t in range(1, t_max + 1):
        eta = t * beta
        lhs = local_rademacher(mu, 1.0 / math.sqrt(eta), matrix.n)
        rhs = config.c_dsr / (tau * eta)
        rows.append((t, lhs, rhs))
        if lhs > rhs:
            t_hat, truncated = t, False
            break
    coeffs = _coeffs_after(matrix, dataset.outputs, beta, t_hat)
    return _decision(name, t_hat, rows, coeffs, truncated=truncated)


def estimate_noise_std(dataset: Dataset) -> float:
    """Difference-based estimate of the noise standard deviation.

    In one dimension successive outputs (sorted by input) are differenced;
    in higher dimensions each output is paired with its nearest neighbour.
    """
    n = len(dataset)
    if n < 3:
        raise InputError("noise estimation needs at least 3 samples")
    x, y = dataset.inputs, dataset.outputs
    if dataset.dim == 1:
        order = np.argsort(x[:, 0], kind="stable")
        diffs = np.diff(y[order])
        return float(np.sqrt(np.sum(diffs**2) / (2.0 * (n - 1))))
    _, nn = cKDTree(x).query(x, k=2)
    diffs = y - y[nn[:, 1]]
    return float(np.sqrt(np.sum(diffs**2) / (2.0 * n)))


# ---------------------------------------------------------------------------
# constant selection


def run_rule(rule: str, dataset: Dataset, matrix: KernelMatrix, spec: KernelSpec, config: RuleConfig,
             tau: float | None = None) -> StoppingDecision:
    """Dispatch one of the constant-driven rules by id."""
    if rule == "asr":
        return asr_stop(dataset, matrix, spec, config)
    if rule == "bp":
        return bp_stop(dataset, matrix, spec, config)
    if rule == "lp":
        return lp_stop(dataset, matrix, spec, config)
    if rule == "dsr":
        if tau is None:
            tau = estimate_noise_std(dataset)
        return dsr_stop(dataset, matrix, spec, config, tau)
    raise ConfigError(f"rule {rule!r} has no tunable constant; expected one of {sorted(CONSTANT_FIELDS)}")


def _folds(m: int, folds: int | None, seed) -> list[tuple[np.ndarray, np.ndarray]]:
    if folds is None:
        return [holdout_split(m, seed)]
    if folds < 2 or folds > m:
        raise ConfigError(f"folds must be between 2 and {m}, got {folds!r}")
    perm = np.random.default_rng(seed).permutation(m)
    parts = np.array_split(perm, folds)
    return [(np.concatenate(parts[:k] + parts[k + 1:]), parts[k]) for k in range(folds)]


def cross_validate_constant(rule: str, dataset: Dataset, spec: KernelSpec, grid=DEFAULT_CV_GRID,
                            folds: int | None = 5, seed=0, config: RuleConfig | None = None,
                            fraction: float = 0.5) -> float:
    """Pick a rule's constant by validation error on a subsample.

    The first ``fraction * n`` samples form the selection set, scored by
    ``folds``-fold cross-validation, or by a single random half split when
    ``folds`` is None. Each candidate constant runs the rule on the
    fitting part and is scored by squared error on the held-out part. Ties go
    to the smallest constant; a candidate whose rule raises scores ``inf``.
    """
    grid = sorted(float(c) for c in grid)
    if not grid:
        raise InputError("constant grid is empty")
    if rule not in CONSTANT_FIELDS:
        raise ConfigError(f"unknown rule {rule!r}; expected one of {sorted(CONSTANT_FIELDS)}")
    if len(grid) == 1:
        return grid[0]
    config = RuleConfig() if config is None else config
    m = int(len(dataset) * fraction)
    if m < 4:
        raise InputError(f"constant selection needs at least 4 samples, got {m}")
    sub = dataset.subset(np.arange(m))
    scores = np.zeros(len(grid))
    for fit_idx, val_idx in _folds(m, folds, seed):
        fit, val = sub.subset(fit_idx), sub.subset(val_idx)
        matrix = build_kernel_matrix(spec, fit.inputs)
        tau = estimate_noise_std(fit) if rule == "dsr" else None
        for k, c in enumerate(grid):
            cfg = replace(config, **{CONSTANT_FIELDS[rule]: c})
            try:
                decision = run_rule(rule, fit, matrix, spec, cfg, tau)
            except KgdError:
                scores[k] = np.inf
                continue
            pred = decision.predict(spec, fit, val.inputs)
            scores[k] += float(np.sum((pred - val.outputs) ** 2))
    return grid[int(np.argmin(scores))]
