"""Command-line front end.

    kgdstop bench        run the Monte-Carlo comparison and write a CSV
    kgdstop fit          fit KGD to a delimited data file with one stopping rule
    kgdstop rules-trace  like ``fit`` and also dump the rule's (t, lhs, rhs) trace

Settings come from built-in defaults, then an optional JSON config file
(``--config``), then ``--set key=value`` overrides, then dedicated flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .benchmark import ALL_RULES, SCENARIOS, ExperimentConfig, emit_results, run_experiment
from .exceptions import ConfigError, InputError, KgdError
from .kernels import Dataset, KernelKind, KernelSpec, build_kernel_matrix
from .rules import (
    CONSTANT_FIELDS,
    RuleConfig,
    asr_stop,
    bp_stop,
    cross_validate_constant,
    dsr_stop,
    estimate_noise_std,
    holdout_stop,
    lp_stop,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class MissingFileError(KgdError):
    pass


def _int_list(value):
    if isinstance(value, str):
        return [int(v) for v in value.split(",") if v.strip()]
    return [int(v) for v in value]


def _str_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def _float_list(value):
    if isinstance(value, str):
        return [float(v) for v in value.split(",") if v.strip()]
    return [float(v) for v in value]


def _opt(conv):
    def parse(value):
        if value is None or (isinstance(value, str) and value.lower() in ("", "none", "null")):
            return None
        return conv(value)
    return parse


def _bool(value):
    if isinstance(value, str):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return bool(value)


_SHARED_KEYS = {
    "seed": (int, 0, "master random seed; every random choice derives from it"),
    "beta": (_opt(float), None, "step size (default: 1/kappa^2)"),
    "delta": (float, 0.05, "confidence level"),
    "t_max": (_opt(int), None, "iteration cap (default: n)"),
    "q": (float, 2.0, "Lepskii grid ratio"),
    "c_cv": (_opt(float), None, "fixed ASR constant (default: cross-validated)"),
    "c_bp": (_opt(float), None, "fixed balancing-principle constant (default: cross-validated)"),
    "c_lp": (_opt(float), None, "fixed Lepskii constant (default: cross-validated)"),
    "c_dsr": (_opt(float), None, "fixed DSR1 constant (default: cross-validated)"),
    "cv_grid": (_float_list, [2.0**k for k in range(-16, 5)], "candidate constants for cross-validation"),
    "cv_folds": (_opt(int), 5, "cross-validation folds (none = single half split)"),
    "cv_fraction": (float, 0.5, "fraction of the training set used to select constants"),
}

BENCH_KEYS = {
    "scenario": (str, "g1k1", f"simulation scenario, one of {sorted(SCENARIOS)}"),
    "n_grid": (_int_list, list(range(100, 1501, 100)), "comma-separated training sizes"),
    "reps": (int, 100, "repetitions per training size"),
    "rules": (_str_list, list(ALL_RULES), "comma-separated rules"),
    "noise_variance": (float, 0.2, "variance of the Gaussian output noise"),
    "test_fraction": (float, 0.1, "test-set size as a fraction of n"),
    "jobs": (int, 1, "worker processes (results do not depend on it)"),
    "out": (str, "results.csv", "output CSV path"),
    **_SHARED_KEYS,
}

FIT_RULES = ("asr", "asr-theory", "ho", "bp", "lp", "dsr1", "dsr2")

FIT_KEYS = {
    "kernel": (str, "min_plus_one", f"kernel, one of {[k.value for k in KernelKind]}"),
    "bandwidth": (float, 0.2, "gaussian kernel bandwidth"),
    "rule": (str, "asr", f"stopping rule, one of {list(FIT_RULES)}"),
    "test": (_opt(str), None, "optional test data file with the same columns (default: none)"),
    "trace_out": (str, "trace.csv", "trace CSV path (rules-trace only)"),
    **_SHARED_KEYS,
}

_CONSTANT_KEY = {"asr": "c_cv", "bp": "c_bp", "lp": "c_lp", "dsr1": "c_dsr"}
_TUNED_RULE = {"asr": "asr", "bp": "bp", "lp": "lp", "dsr1": "dsr"}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_flags(parser: argparse.ArgumentParser, keys: dict) -> None:
    for key, (_, default, help_text) in keys.items():
        shown = ",".join(str(v) for v in default) if isinstance(default, list) else default
        if key == "cv_grid":
            shown = "2^k for k=-16..4"
        if default is not None:
            help_text = f"{help_text} (default: {shown})"
        parser.add_argument(_flag(key), dest=key, default=None, metavar=key.upper(), help=help_text)
    parser.add_argument("--config", dest="config_path", default=None,
                        help="JSON file of key/value settings (default: none)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a setting; may be repeated (default: none)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgdstop", description="Kernel gradient descent with early stopping.")
    sub = parser.add_subparsers(dest="command", required=True)
    bench = sub.add_parser("bench", help="run the stopping-rule benchmark")
    _add_flags(bench, BENCH_KEYS)
    for name, help_text in (("fit", "fit one dataset with one rule"),
                            ("rules-trace", "fit and dump the per-iteration rule trace")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("data", help="delimited text file: columns x1..xd, y")
        _add_flags(p, FIT_KEYS)
    return parser


def resolve_settings(args: argparse.Namespace, keys: dict) -> dict:
    """Merge defaults, config file, --set overrides and flags (later wins)."""
    raw: dict = {}
    if args.config_path:
        path = Path(args.config_path)
        if not path.is_file():
            raise MissingFileError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        raw.update(loaded)
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        raw[key.strip().replace("-", "_")] = value.strip()
    for key in keys:
        if getattr(args, key, None) is not None:
            raw[key] = getattr(args, key)
    unknown = sorted(set(raw) - set(keys))
    if unknown:
        raise ConfigError(f"unknown setting {unknown[0]!r}")
    settings = {}
    for key, (conv, default, _) in keys.items():
        if key not in raw:
            settings[key] = default
            continue
        try:
            settings[key] = conv(raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from exc
    return settings


def _rule_config(settings: dict) -> RuleConfig:
    return RuleConfig(delta=settings["delta"], q=settings["q"], t_max=settings["t_max"], beta=settings["beta"])


def _bench(settings: dict, out) -> int:
    constants = {rule: settings[key] for rule, key in _CONSTANT_KEY.items() if settings[key] is not None}
    config = ExperimentConfig(
        scenario=settings["scenario"],
        n_grid=tuple(settings["n_grid"]),
        reps=settings["reps"],
        noise_variance=settings["noise_variance"],
        rules=tuple(settings["rules"]),
        master_seed=settings["seed"],
        test_fraction=settings["test_fraction"],
        cv_grid=tuple(settings["cv_grid"]),
        cv_fraction=settings["cv_fraction"],
        cv_folds=settings["cv_folds"],
        constants=constants,
        delta=settings["delta"],
        q=settings["q"],
        t_max=settings["t_max"],
        beta=settings["beta"],
    )
    curves = run_experiment(config, jobs=max(1, settings["jobs"]))
    path = emit_results(curves, settings["out"], config)
    print(f"wrote {path}", file=out)
    print(f"{'rule':<11}{'n':>6}{'reps':>6}{'mean_mse':>14}{'mean_t_hat':>12}", file=out)
    for curve in curves:
        for p in curve.points:
            print(f"{curve.rule_name:<11}{p.n:>6}{p.rep_count:>6}{p.mean_mse:>14.6g}{p.mean_t_hat:>12.6g}", file=out)
    return EXIT_OK


def load_table(path, kind: str = "data") -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{kind} file not found: {path}")
    text = path.read_text()
    delimiter = "," if "," in text else None
    try:
        table = np.loadtxt(path, delimiter=delimiter, ndmin=2, comments="#")
    except ValueError as exc:
        raise InputError(f"cannot parse {kind} file {path}: {exc}") from exc
    if table.shape[1] < 2 or table.shape[0] < 1:
        raise InputError(f"{kind} file {path} needs at least one input column and a y column")
    return table


def _kernel_for(settings: dict, dim: int) -> KernelSpec:
    try:
        kind = KernelKind(settings["kernel"])
    except ValueError as exc:
        raise ConfigError(f"unknown kernel {settings['kernel']!r}") from exc
    if kind is KernelKind.MIN_PLUS_ONE and dim != 1:
        raise InputError(f"dimension mismatch: kernel {kind.value} needs 1 input column, data has {dim}")
    return KernelSpec(kind, dim, settings["bandwidth"])


def _fit(settings: dict, data_path: str, out, trace: bool) -> int:
    rule = settings["rule"]
    if rule == "or":
        raise ConfigError("rule 'or' needs the true regression function and is only available in bench")
    if rule not in FIT_RULES:
        raise ConfigError(f"unknown rule {rule!r}; expected one of {list(FIT_RULES)}")
    table = load_table(data_path)
    train = Dataset(table[:, :-1], table[:, -1])
    spec = _kernel_for(settings, train.dim)
    test = None
    if settings["test"] is not None:
        t_table = load_table(settings["test"], "test")
        if t_table.shape[1] != table.shape[1]:
            raise InputError(
                f"dimension mismatch: test file has {t_table.shape[1]} columns, data file has {table.shape[1]}"
            )
        test = Dataset(t_table[:, :-1], t_table[:, -1])

    matrix = build_kernel_matrix(spec, train.inputs)
    base = _rule_config(settings)
    constant = math.nan
    if rule in _CONSTANT_KEY:
        key = _CONSTANT_KEY[rule]
        constant = settings[key]
        if constant is None:
            constant = cross_validate_constant(
                _TUNED_RULE[rule], train, spec, settings["cv_grid"], folds=settings["cv_folds"],
                seed=settings["seed"], config=base, fraction=settings["cv_fraction"],
            )
        base = replace(base, **{CONSTANT_FIELDS[_TUNED_RULE[rule]]: constant})

    if rule == "asr":
        decision = asr_stop(train, matrix, spec, base)
    elif rule == "asr-theory":
        decision = asr_stop(train, matrix, spec, replace(base, theoretical=True))
    elif rule == "ho":
        decision = holdout_stop(train, spec, base, settings["seed"])
    elif rule == "bp":
        decision = bp_stop(train, matrix, spec, base)
    elif rule == "lp":
        decision = lp_stop(train, matrix, spec, base)
    else:
        tau = estimate_noise_std(train)
        if rule == "dsr2":
            constant = base.c_dsr
        decision = dsr_stop(train, matrix, spec, base, tau, name=rule)

    fitted = decision.predict(spec, train, train.inputs)
    print(f"rule: {decision.rule_name}", file=out)
    print(f"kernel: {spec.kind.value}", file=out)
    print(f"n: {len(train)}", file=out)
    print(f"constant: {constant:.12g}", file=out)
    print(f"t_hat: {decision.t_hat}", file=out)
    print(f"truncated: {str(decision.truncated).lower()}", file=out)
    print(f"train_mse: {float(np.mean((fitted - train.outputs) ** 2)):.12g}", file=out)
    if test is not None:
        pred = decision.predict(spec, train, test.inputs)
        print(f"test_mse: {float(np.mean((pred - test.outputs) ** 2)):.12g}", file=out)
    if trace:
        path = Path(settings["trace_out"])
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("t", "lhs", "rhs"))
            for t, lhs, rhs in decision.trace:
                writer.writerow((int(t), f"{lhs:.12g}", f"{rhs:.12g}"))
        print(f"trace: {path}", file=out)
    return EXIT_OK


def run_cli(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    keys = BENCH_KEYS if args.command == "bench" else FIT_KEYS
    try:
        settings = resolve_settings(args, keys)
        if args.command == "bench":
            return _bench(settings, out)
        return _fit(settings, args.data, out, trace=args.command == "rules-trace")
    except MissingFileError as exc:
        print(f"error: missing file: {exc}", file=err)
        return EXIT_CONFIG if args.config_path and "config file" in str(exc) else EXIT_RUNTIME
    except ConfigError as exc:
        print(f"error: config: {exc}", file=err)
        return EXIT_CONFIG
    except InputError as exc:
        msg = str(exc)
        if msg.startswith("dimension mismatch: "):
            print(f"error: dimension mismatch: {msg[len('dimension mismatch: '):]}", file=err)
        else:
            print(f"error: input: {msg}", file=err)
        return EXIT_RUNTIME
    except (KgdError, OSError) as exc:
        print(f"error: runtime: {exc}", file=err)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())
