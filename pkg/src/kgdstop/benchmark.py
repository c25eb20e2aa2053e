"""Monte-Carlo comparison of stopping rules on synthetic regression problems.

Two scenarios are available:

* ``g1k1``: d = 1, target ``g1(x) = x`` on (0, 0.5] and ``1 - x`` on
  (0.5, 1], kernel ``1 + min(x, x')``;
* ``g2k2``: d = 3, target ``g2(r) = (1 - r)^6 (35 r^2 + 18 r + 3)`` of
  ``r = |x|``, Wendland kernel ``(1 - r)^4 (4 r + 1)``.

Inputs are uniform on the unit cube, outputs carry Gaussian noise, and test
points are scored against the noiseless target. Every (n, repetition) cell
draws from its own generator seeded by ``(master_seed, n, rep)``, so results
do not depend on execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, KgdError
from .kernels import Dataset, KernelSpec, build_kernel_matrix
from .rules import (
    CONSTANT_FIELDS,
    DEFAULT_CV_GRID,
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
)

log = logging.getLogger(__name__)

SCENARIOS = {"g1k1": 1, "g2k2": 3}
ALL_RULES = ("asr", "asr-theory", "or", "ho", "bp", "lp", "dsr1", "dsr2")
CSV_COLUMNS = ("scenario", "rule", "n", "rep_count", "mean_mse", "std_mse", "mean_t_hat", "truncated_count")

# rules whose constant is chosen by cross-validation, with the RuleConfig field
_TUNED = {"asr": "asr", "bp": "bp", "lp": "lp", "dsr1": "dsr"}

# stream tags that keep the per-cell generators for different purposes apart
_DATA_STREAM, _SPLIT_STREAM, _CV_STREAM = 0, 1, 2


@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation protocol.

    ``constants`` fixes a rule's constant (keys ``asr``, ``bp``, ``lp``,
    ``dsr1``) instead of selecting it by cross-validation on the first
    ``cv_fraction * n`` training points.
    """

    scenario: str = "g1k1"
    n_grid: tuple[int, ...] = tuple(range(100, 1501, 100))
    reps: int = 100
    noise_variance: float = 0.2
    rules: tuple[str, ...] = ALL_RULES
    master_seed: int = 0
    test_fraction: float = 0.1
    cv_grid: tuple[float, ...] = DEFAULT_CV_GRID
    cv_fraction: float = 0.5
    cv_folds: int | None = 5
    constants: dict = field(default_factory=dict)
    delta: float = 0.05
    q: float = 2.0
    t_max: int | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {sorted(SCENARIOS)}")
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"n_grid must be nonempty and strictly increasing, got {list(self.n_grid)}")
        if grid[0] < 10:
            raise ConfigError("every n in n_grid must be at least 10")
        object.__setattr__(self, "n_grid", grid)
        if self.reps < 1:
            raise ConfigError(f"reps must be at least 1, got {self.reps!r}")
        if not self.noise_variance >= 0:
            raise ConfigError(f"noise_variance must be nonnegative, got {self.noise_variance!r}")
        unknown = [r for r in self.rules if r not in ALL_RULES]
        if unknown or not self.rules:
            raise ConfigError(f"unknown rules {unknown}; expected a subset of {list(ALL_RULES)}")
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "cv_grid", tuple(float(c) for c in self.cv_grid))
        bad = [k for k in self.constants if k not in _TUNED]
        if bad:
            raise ConfigError(f"constants given for unknown rules {bad}; expected keys from {sorted(_TUNED)}")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ConfigError(f"master_seed must be a nonnegative integer, got {self.master_seed!r}")
        if not 0.0 < self.test_fraction <= 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1], got {self.test_fraction!r}")
        if not 0.0 < self.cv_fraction <= 1.0:
            raise ConfigError(f"cv_fraction must lie in (0, 1], got {self.cv_fraction!r}")
        # validates delta, q, t_max and beta
        self.rule_config()

    @property
    def dim(self) -> int:
        return SCENARIOS[self.scenario]

    def kernel(self) -> KernelSpec:
        if self.scenario == "g1k1":
            return KernelSpec.min_plus_one()
        return KernelSpec.wendland_g3(3)

    def rule_config(self) -> RuleConfig:
        return RuleConfig(delta=self.delta, q=self.q, t_max=self.t_max, beta=self.beta)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        out["rules"] = list(self.rules)
        out["cv_grid"] = list(self.cv_grid)
        return out


@dataclass(frozen=True)
class CurvePoint:
    n: int
    rep_count: int
    mean_mse: float
    std_mse: float
    mean_t_hat: float
    truncated_count: int


@dataclass(frozen=True)
class MseCurve:
    rule_name: str
    scenario: str
    points: tuple[CurvePoint, ...]


@dataclass(frozen=True)
class RepResult:
    """One rule on one (n, rep) cell. ``error`` is set when the rule failed."""

    rule: str
    n: int
    rep: int
    t_hat: int = -1
    mse: float = math.nan
    train_dist: float = math.nan  # ||f_t_hat - f_rho||_D on the training inputs
    truncated: bool = False
    constant: float = math.nan
    error: str = ""


def target_value(scenario: str, x):
    """Regression function of a scenario at one point or at the rows of ``x``."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    d = SCENARIOS[scenario]
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and d > 1)
    pts = arr.reshape(-1, d)
    if scenario == "g1k1":
        v = pts[:, 0]
        out = np.where(v <= 0.5, v, 1.0 - v)
    else:
        r = np.sqrt(np.sum(pts * pts, axis=1))
        u = 1.0 - r
        u3 = u * u * u
        out = np.where(r <= 1.0, u3 * u3 * (35.0 * r * r + 18.0 * r + 3.0), 0.0)
    return float(out[0]) if single else out


def _cell_rng(config: ExperimentConfig, n: int, rep: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([config.master_seed, n, rep, stream])


def _cell_seed(config: ExperimentConfig, n: int, rep: int, stream: int) -> int:
    return int(_cell_rng(config, n, rep, stream).integers(2**63))


def generate_data(config: ExperimentConfig, n: int, rep_seed: int) -> tuple[Dataset, Dataset, np.ndarray]:
    """Training set, noiseless test set of size ``n * test_fraction`` and f_rho at the training inputs."""
    rng = _cell_rng(config, n, rep_seed, _DATA_STREAM)
    d = config.dim
    x = rng.uniform(size=(n, d))
    f_rho = target_value(config.scenario, x)
    noise = rng.normal(0.0, math.sqrt(config.noise_variance), size=n)
    m = max(1, int(n * config.test_fraction))
    x_test = rng.uniform(size=(m, d))
    train = Dataset(x, f_rho + noise)
    test = Dataset(x_test, target_value(config.scenario, x_test))
    return train, test, f_rho


def select_constant(config: ExperimentConfig, rule: str, train: Dataset, spec: KernelSpec, rep: int) -> float:
    if rule in config.constants:
        return float(config.constants[rule])
    return cross_validate_constant(
        _TUNED[rule], train, spec, config.cv_grid, folds=config.cv_folds,
        seed=_cell_seed(config, len(train), rep, _CV_STREAM), config=config.rule_config(),
        fraction=config.cv_fraction,
    )


def _run_rule(rule: str, config: ExperimentConfig, train: Dataset, matrix, spec: KernelSpec,
              f_rho: np.ndarray, rep: int, tau: float | None) -> tuple[StoppingDecision, float]:
    base = config.rule_config()
    n = len(train)
    if rule == "or":
        return oracle_stop(train, matrix, spec, f_rho, base), math.nan
    if rule == "ho":
        return holdout_stop(train, spec, base, _cell_seed(config, n, rep, _SPLIT_STREAM)), math.nan
    if rule == "asr-theory":
        return asr_stop(train, matrix, spec, replace(base, theoretical=True)), math.nan
    if rule == "dsr2":
        return dsr_stop(train, matrix, spec, base, tau, name="dsr2"), base.c_dsr
    c = select_constant(config, rule, train, spec, rep)
    cfg = replace(base, **{CONSTANT_FIELDS[_TUNED[rule]]: c})
    if rule == "asr":
        return asr_stop(train, matrix, spec, cfg), c
    if rule == "bp":
        return bp_stop(train, matrix, spec, cfg), c
    if rule == "lp":
        return lp_stop(train, matrix, spec, cfg), c
    return dsr_stop(train, matrix, spec, cfg, tau, name="dsr1"), c


def run_cell(config: ExperimentConfig, n: int, rep: int) -> list[RepResult]:
    """Every enabled rule on one freshly generated (n, rep) problem."""
    train, test, f_rho = generate_data(config, n, rep)
    spec = config.kernel()
    matrix = build_kernel_matrix(spec, train.inputs)
    tau = None
    if any(r in config.rules for r in ("dsr1", "dsr2")):
        tau = estimate_noise_std(train)
    out = []
    for rule in config.rules:
        try:
            decision, c = _run_rule(rule, config, train, matrix, spec, f_rho, rep, tau)
        except (KgdError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("rule %s failed at n=%d rep=%d: %s", rule, n, rep, exc)
            out.append(RepResult(rule, n, rep, error=f"{type(exc).__name__}: {exc}"))
            continue
        pred = decision.predict(spec, train, test.inputs)
        fit = decision.predict(spec, train, train.inputs)
        out.append(RepResult(
            rule, n, rep,
            t_hat=decision.t_hat,
            mse=float(np.mean((pred - test.outputs) ** 2)),
            train_dist=float(np.sqrt(np.mean((fit - f_rho) ** 2))),
            truncated=decision.truncated,
            constant=c,
        ))
    return out


def _run_cell_args(args):
    return run_cell(*args)


def run_cells(config: ExperimentConfig, jobs: int = 1) -> list[RepResult]:
    """Per-repetition results for every (n, rep, rule), in grid order."""
    cells = [(config, n, rep) for n in config.n_grid for rep in range(config.reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            nested = list(pool.map(_run_cell_args, cells))
    else:
        nested = [run_cell(*c) for c in cells]
    return [r for cell in nested for r in cell]


def aggregate(config: ExperimentConfig, results: list[RepResult]) -> list[MseCurve]:
    """Mean/std of test MSE per (rule, n); failed repetitions are excluded."""
    curves = []
    for rule in config.rules:
        points = []
        for n in config.n_grid:
            ok = [r for r in results if r.rule == rule and r.n == n and not r.error]
            mses = np.array([r.mse for r in ok])
            count = len(ok)
            points.append(CurvePoint(
                n=n,
                rep_count=count,
                mean_mse=float(np.mean(mses)) if count else math.nan,
                std_mse=float(np.std(mses, ddof=1)) if count > 1 else 0.0 if count else math.nan,
                mean_t_hat=float(np.mean([r.t_hat for r in ok])) if count else math.nan,
                truncated_count=sum(r.truncated for r in ok),
            ))
        curves.append(MseCurve(rule, config.scenario, tuple(points)))
    return curves


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> list[MseCurve]:
    return aggregate(config, run_cells(config, jobs))


def _fmt(x) -> str:
    return f"{x:.12g}"


def emit_results(curves: list[MseCurve], path, config: ExperimentConfig | None = None) -> Path:
    """Write the curves as CSV and, when ``config`` is given, a JSON manifest next to it.

    Returns the CSV path. The manifest lands at ``<path>.manifest.json``.
    """
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for curve in curves:
                for p in curve.points:
                    writer.writerow([
                        curve.scenario, curve.rule_name, p.n, p.rep_count,
                        _fmt(p.mean_mse), _fmt(p.std_mse), _fmt(p.mean_t_hat), p.truncated_count,
                    ])
        if config is not None:
            manifest = {
                "config": config.to_dict(),
                "cell_seeds": "numpy default_rng([master_seed, n, rep, stream]); streams data=0 split=1 cv=2",
                "columns": list(CSV_COLUMNS),
            }
            manifest_path = path.with_name(path.name + ".manifest.json")
            manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def parse_results(path) -> list[MseCurve]:
    """Inverse of :func:`emit_results` (CSV part)."""
    path = Path(path)
    groups: dict[tuple[str, str], list[CurvePoint]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            scenario, rule, n, count, mean, std, t_hat, trunc = row
            groups.setdefault((scenario, rule), []).append(
                CurvePoint(int(n), int(count), float(mean), float(std), float(t_hat), int(trunc))
            )
    return [MseCurve(rule, scenario, tuple(points)) for (scenario, rule), points in groups.items()]
