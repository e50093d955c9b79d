"""Batch front end: line-oriented configs, five subcommands, CSV reports.

Config format: ``section.key = value`` lines, ``#`` comments, sections
process / payoff / region / optimizer / plan / rates / output.  Every
run takes its master seed from the config (or --seed); nothing ever
falls back to the clock, so identical (config, seed) runs write byte
identical CSVs whatever --threads says.  Figures are written next to
the CSVs unless --no-plots.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, oracle
from .adversarial import (
    build_instance,
    bump_count_for,
    learning_curve,
    margin_check,
    margin_exponent_estimate,
)
from .errors import (
    ConfigError,
    ConstructionError,
    ParameterError,
    UnsupportedOperationError,
)
from .estimate import (
    ExperimentPlan,
    compute_q_curves,
    decomposition_report,
    run_batch_experiment,
)
from .optimize import OptimizerConfig
from .process import GbmSpec
from .rates import (
    batch_for_fresh,
    holder_entropy_exponent,
    lower_rate_exponent,
    upper_rate_exponent,
)
from .stopping import Box, MaxCallPayoff, MaxCallRegion, TableRegion, region_distance

_SUBCOMMANDS = ("price", "qcurves", "oracle-check", "adversarial", "rates")
_SECTIONS = ("process", "payoff", "region", "optimizer", "plan", "rates", "output")

# key -> value kind; "ints" is a whitespace- or comma-separated list
_KEY_TYPES = {
    ("process", "kind"): "word",
    ("process", "dim"): "int",
    ("process", "rate"): "real",
    ("process", "dividend"): "real",
    ("process", "vol"): "real",
    ("process", "spot"): "real",
    ("process", "horizon"): "real",
    ("process", "dates"): "int",
    ("process", "max_states"): "int",
    ("process", "max_dates"): "int",
    ("process", "min_states"): "int",
    ("process", "min_dates"): "int",
    ("payoff", "kind"): "word",
    ("payoff", "strike"): "real",
    ("payoff", "discounted"): "flag",
    ("payoff", "alpha"): "real",
    ("payoff", "amp"): "real",
    ("payoff", "g1_intercept"): "real",
    ("payoff", "g1_slope"): "real",
    ("region", "kind"): "word",
    ("region", "shared"): "flag",
    ("region", "lower"): "real",
    ("region", "upper"): "real",
    ("region", "gamma"): "real",
    ("region", "height"): "real",
    ("region", "bumps"): "ints",
    ("region", "bump_scale"): "real",
    ("optimizer", "grid_points"): "int",
    ("optimizer", "refine_rounds"): "int",
    ("optimizer", "refine_top_k"): "int",
    ("optimizer", "pattern_shrink"): "real",
    ("plan", "seed"): "int",
    ("plan", "batch_size"): "int",
    ("plan", "fresh_size"): "int",
    ("plan", "replications"): "int",
    ("plan", "ref_batch_size"): "int",
    ("plan", "ref_fresh_size"): "int",
    ("plan", "ref_replications"): "int",
    ("plan", "batch_grid"): "ints",
    ("plan", "fresh_grid"): "ints",
    ("plan", "q2_convention"): "word",
    ("plan", "instances"): "int",
    ("plan", "region_pairs"): "int",
    ("rates", "alpha"): "real",
    ("rates", "rho"): "real",
    ("rates", "gamma"): "real",
    ("rates", "dim"): "int",
    ("rates", "dates"): "int",
    ("rates", "fresh_grid"): "ints",
    ("output", "dir"): "word",
    ("output", "plots"): "flag",
}

_REQUIRED_SECTIONS = {
    "price": ("process", "payoff", "region", "plan"),
    "qcurves": ("process", "payoff", "region", "plan"),
    "oracle-check": ("process", "plan"),
    "adversarial": ("process", "payoff", "region", "plan"),
    "rates": ("process", "plan", "rates"),
}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    seed: int
    out_dir: Path
    plots: bool
    threads: int
    process: object = None
    payoff: object = None
    family: object = None
    box: object = None
    optimizer: OptimizerConfig = OptimizerConfig()
    plan: object = None
    oracle_counts: tuple = ()
    bump_base: object = None
    bump_list: tuple = ()
    bump_scale: float = 1.0
    curve_grid: tuple = ()
    curve_reps: int = 0
    rate_inputs: dict = field(default_factory=dict)


def _convert(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "real":
        return float(raw)
    if kind == "flag":
        if raw not in ("true", "false"):
            raise ValueError(raw)
        return raw == "true"
    if kind == "ints":
        parts = raw.replace(",", " ").split()
        if not parts:
            raise ValueError(raw)
        return tuple(int(p) for p in parts)
    return raw


def _scan(text: str) -> tuple:
    """Raw pass: (section, key) -> (typed value, line), plus error strings."""
    entries = {}
    errors = []
    for line_no, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {line_no}: expected 'section.key = value'")
            continue
        name, _, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if "." not in name:
            errors.append(f"line {line_no}: key '{name}' needs a section prefix")
            continue
        section, _, key = name.partition(".")
        if section not in _SECTIONS:
            errors.append(f"line {line_no}: unknown section '{section}'")
            continue
        if (section, key) not in _KEY_TYPES:
            errors.append(f"line {line_no}: unknown key '{section}.{key}'")
            continue
        if (section, key) in entries:
            first = entries[(section, key)][1]
            errors.append(
                f"line {line_no}: duplicate key '{section}.{key}' (first set at line {first})"
            )
            continue
        kind = _KEY_TYPES[(section, key)]
        try:
            entries[(section, key)] = (_convert(kind, value), line_no)
        except ValueError:
            errors.append(f"line {line_no}: {section}.{key} expects {kind}, got '{value}'")
    return entries, errors


class _View:
    """Typed access to scanned entries with error accumulation."""

    def __init__(self, entries, errors):
        self.entries = entries
        self.errors = errors

    def get(self, section, key, default=None):
        hit = self.entries.get((section, key))
        return hit[0] if hit is not None else default

    def need(self, section, key):
        hit = self.entries.get((section, key))
        if hit is None:
            self.errors.append(f"missing key: {section}.{key}")
            return None
        return hit[0]

    def expect(self, section, key, allowed, default=None):
        value = self.get(section, key, default)
        if value not in allowed:
            line = self.entries.get((section, key), (None, "?"))[1]
            self.errors.append(
                f"line {line}: {section}.{key} must be one of {'/'.join(sorted(allowed))}"
            )
            return None
        return value


def _gbm_pieces(view: _View):
    dim = view.get("process", "dim", 2)
    dates = view.need("process", "dates")
    spec = None
    kwargs = {
        "rate": view.need("process", "rate"),
        "dividend": view.need("process", "dividend"),
        "vol": view.need("process", "vol"),
        "spot": view.need("process", "spot"),
        "horizon": view.need("process", "horizon"),
    }
    strike = view.need("payoff", "strike")
    view.expect("payoff", "kind", {"maxcall"}, "maxcall")
    view.expect("region", "kind", {"maxcall"}, "maxcall")
    if view.errors:
        return None, None, None, None
    spec = GbmSpec(dim=dim, dates=dates, **kwargs)
    payoff = MaxCallPayoff.for_process(
        spec, strike=strike, discounted=view.get("payoff", "discounted", True)
    )
    family = MaxCallRegion(
        strike=strike, dates=dates, shared=view.get("region", "shared", True)
    )
    lo = view.get("region", "lower", 0.0)
    hi = view.get("region", "upper", 50.0)
    box = Box(np.full(family.param_count, lo), np.full(family.param_count, hi))
    return spec, payoff, family, box


def _experiment_plan(view: _View, seed: int, need_grid: bool):
    batch_size = view.need("plan", "batch_size")
    fresh_size = view.need("plan", "fresh_size")
    replications = view.need("plan", "replications")
    grid = view.need("plan", "batch_grid") if need_grid else view.get("plan", "batch_grid", ())
    convention = view.expect(
        "plan", "q2_convention", {"sqrt_vartheta", "vartheta"}, "sqrt_vartheta"
    )
    if view.errors:
        return None
    return ExperimentPlan(
        batch_size=batch_size,
        fresh_size=fresh_size,
        replications=replications,
        seed=seed,
        ref_batch_size=view.get("plan", "ref_batch_size", 0),
        ref_fresh_size=view.get("plan", "ref_fresh_size", 0),
        ref_replications=view.get("plan", "ref_replications", 0),
        batch_grid=grid or (),
        fresh_grid=view.get("plan", "fresh_grid", ()),
        q2_convention=convention,
    )


def _optimizer(view: _View) -> OptimizerConfig:
    return OptimizerConfig(
        grid_points_per_dim=view.get("optimizer", "grid_points", 33),
        refine_rounds=view.get("optimizer", "refine_rounds", 3),
        refine_top_k=view.get("optimizer", "refine_top_k", 3),
        pattern_shrink=view.get("optimizer", "pattern_shrink", 0.5),
    )


def parse_config(
    text: str,
    subcommand: str,
    seed_override: int = None,
    out_override: str = None,
    threads: int = 1,
    plots_override: bool = None,
) -> RunConfig:
    """Validate the config text for one subcommand, or raise ConfigError
    carrying every problem found, each tagged with its line."""
    if subcommand not in _SUBCOMMANDS:
        raise ConfigError([f"unknown subcommand '{subcommand}'"])
    entries, errors = _scan(text)
    present = {section for section, _ in entries}
    for section in _REQUIRED_SECTIONS[subcommand]:
        if section not in present:
            errors.append(f"missing section: {section}")
    if errors:
        raise ConfigError(errors)

    view = _View(entries, errors)
    seed = seed_override if seed_override is not None else view.need("plan", "seed")
    if seed is not None and seed < 0:
        errors.append("plan.seed must be nonnegative")
    out_dir = Path(out_override if out_override is not None else view.get("output", "dir", "."))
    plots = plots_override if plots_override is not None else view.get("output", "plots", True)
    if threads < 0:
        errors.append("--threads must be >= 0")
    threads = threads if threads > 0 else (os.cpu_count() or 1)
    common = dict(seed=seed, out_dir=out_dir, plots=plots, threads=threads)

    if subcommand in ("price", "qcurves"):
        view.expect("process", "kind", {"gbm"})
        spec, payoff, family, box = _gbm_pieces(view)
        plan = _experiment_plan(view, seed or 0, need_grid=subcommand == "qcurves")
        if errors:
            raise ConfigError(errors)
        return RunConfig(
            subcommand=subcommand,
            process=spec,
            payoff=payoff,
            family=family,
            box=box,
            optimizer=_optimizer(view),
            plan=plan,
            **common,
        )

    if subcommand == "oracle-check":
        view.expect("process", "kind", {"chain"})
        counts = (
            view.get("plan", "instances", 60),
            view.get("plan", "region_pairs", 3),
            view.get("process", "min_states", 2),
            view.get("process", "max_states", 3),
            view.get("process", "min_dates", 2),
            view.get("process", "max_dates", 4),
        )
        if any(c is not None and c < 1 for c in counts):
            errors.append("oracle-check counts must be >= 1")
        if errors:
            raise ConfigError(errors)
        return RunConfig(subcommand=subcommand, oracle_counts=counts, **common)

    if subcommand == "adversarial":
        view.expect("process", "kind", {"bump"})
        view.expect("payoff", "kind", {"digital"}, "digital")
        view.expect("region", "kind", {"bumps"}, "bumps")
        gamma = view.need("region", "gamma")
        height = view.need("region", "height")
        alpha = view.need("payoff", "alpha")
        amp = view.need("payoff", "amp")
        grid = view.need("plan", "batch_grid")
        reps = view.need("plan", "replications")
        bump_list = view.get("region", "bumps", ())
        scale = view.get("region", "bump_scale", 1.0)
        if bump_list and grid and len(bump_list) != len(grid):
            errors.append("region.bumps must list one bump count per plan.batch_grid entry")
        if errors:
            raise ConfigError(errors)
        first_bumps = (
            bump_list[0] if bump_list else bump_count_for(grid[0], gamma, alpha, scale)
        )
        base = build_instance(
            bumps=first_bumps,
            gamma=gamma,
            alpha=alpha,
            height=height,
            amp=amp,
            g1_intercept=view.get("payoff", "g1_intercept", 0.3),
            g1_slope=view.get("payoff", "g1_slope", 0.4),
        )
        return RunConfig(
            subcommand=subcommand,
            bump_base=base,
            bump_list=tuple(bump_list),
            bump_scale=scale,
            curve_grid=tuple(grid),
            curve_reps=reps,
            **common,
        )

    view.expect("process", "kind", {"none"})
    alpha = view.need("rates", "alpha")
    rho = view.get("rates", "rho")
    gamma = view.get("rates", "gamma")
    if rho is None and gamma is None:
        errors.append("missing key: rates.rho or rates.gamma")
    if errors:
        raise ConfigError(errors)
    rate_inputs = {
        "alpha": alpha,
        "rho": rho,
        "gamma": gamma,
        "dim": view.get("rates", "dim", 2),
        "dates": view.get("rates", "dates", 2),
        "fresh_grid": view.get("rates", "fresh_grid", ()),
    }
    return RunConfig(subcommand="rates", rate_inputs=rate_inputs, **common)


def _csv_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: Path, header, rows, seed: int) -> None:
    lines = [",".join(header), f"# seed={seed} version={__version__}"]
    lines.extend(",".join(_csv_value(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _run_price(cfg: RunConfig) -> int:
    stats = run_batch_experiment(
        cfg.process, cfg.plan, cfg.family, cfg.payoff, cfg.optimizer, cfg.threads, cfg.box
    )
    rows = [(r.stream_id, r.theta[0], r.theta[1], r.value, r.sigma) for r in stats.per_replica]
    _write_csv(cfg.out_dir / "stats.csv", ("l", "theta1", "theta2", "v_mn", "sigma_l"), rows, cfg.seed)
    vartheta = stats.vartheta if stats.vartheta is not None else float("nan")
    _write_csv(
        cfg.out_dir / "summary.csv",
        ("M", "N", "L", "mu", "vartheta", "sigma_min"),
        [(cfg.plan.batch_size, cfg.plan.fresh_size, cfg.plan.replications, stats.mu, vartheta, stats.sigma_min)],
        cfg.seed,
    )
    if cfg.plots:
        from . import figures

        figures.save_replicas(stats, cfg.out_dir / "replicas.png")
    print(f"[PRICE] mu={stats.mu:.6f} vartheta={vartheta:.6f} sigma_min={stats.sigma_min:.6f}")
    return 0


def _run_qcurves(cfg: RunConfig) -> int:
    curves = compute_q_curves(
        cfg.process, cfg.plan, cfg.family, cfg.payoff, cfg.optimizer, cfg.threads, cfg.box
    )
    out = cfg.out_dir
    _write_csv(out / "q1.csv", ("M", "value"), curves.q1, cfg.seed)
    _write_csv(out / "q2.csv", ("M", "value"), curves.q2, cfg.seed)
    _write_csv(out / "q3.csv", ("N", "value"), curves.q3, cfg.seed)
    _write_csv(out / "mn.csv", ("M", "N_solving"), curves.mn_pairs, cfg.seed)
    decomp = decomposition_report(curves)
    _write_csv(out / "decomp.csv", ("M", "N", "bias", "spread", "eval_error"), decomp, cfg.seed)
    if cfg.plots:
        from . import figures

        figures.save_qcurves(curves, out / "qcurves.png")
        figures.save_budget(curves, out / "budget.png")
        figures.save_decomposition(decomp, out / "decomp.png")
    tag = " (degenerate)" if curves.degenerate else ""
    print(f"[QCURVES] mu_ref={curves.mu_ref:.6f} pairs={len(curves.mn_pairs)}{tag}")
    return 0


def _run_oracle_check(cfg: RunConfig) -> int:
    instances, pairs, min_states, max_states, min_dates, max_dates = cfg.oracle_counts
    rng = np.random.default_rng(cfg.seed)
    exact = identity = masked = payoff_ok = bounds_ok = 0
    bound_total = skipped = 0
    for _ in range(instances):
        inst = oracle.random_instance(
            rng,
            max_states=max_states,
            max_dates=max_dates,
            min_states=min_states,
            min_dates=min_dates,
        )
        tables = oracle.backward_induction(inst)
        best, _ = oracle.exhaustive_region_search(inst)
        exact += best == tables.root_value
        for _ in range(pairs):
            a = oracle.random_region(rng, inst.dates, inst.states)
            b = oracle.random_region(rng, inst.dates, inst.states)
            lhs, rhs = oracle.value_gap_identity(inst, a, tables)
            identity += abs(lhs - rhs) <= 1e-10
            dist, _ = region_distance(TableRegion(a), None, TableRegion(b), None, inst.chain)
            masked += oracle.masked_region_distance(inst, a, b) <= dist + 1e-12
            payoff_ok += oracle.payoff_distance_bound_check(inst, a, b)["ok"]
            bound_total += 1
            try:
                fit = oracle.fit_margin(inst)
                report = oracle.margin_regret_bounds(inst, a, fit)
                bounds_ok += report["ok_lower"] and report["ok_upper"]
            except oracle.DegenerateFitError:
                skipped += 1
                bounds_ok += 1
    lines = [
        ("backward vs exhaustive optimum", exact, instances),
        ("value-gap identity within 1e-10", identity, bound_total),
        ("masked distance <= marginal distance", masked, bound_total),
        ("payoff-distance bound", payoff_ok, bound_total),
        (f"margin-regret bounds ({skipped} degenerate fits skipped)", bounds_ok, bound_total),
    ]
    failed = False
    for label, good, total in lines:
        tag = "OK" if good == total else "FAIL"
        failed = failed or good != total
        print(f"[{tag}] {label}: {good}/{total}")
    return 2 if failed else 0


def _run_adversarial(cfg: RunConfig) -> int:
    base = cfg.bump_base
    if cfg.bump_list:
        table = dict(zip(cfg.curve_grid, cfg.bump_list))
        bumps_for = lambda count: table[count]
    else:
        bumps_for = lambda count: bump_count_for(count, base.gamma, base.alpha, cfg.bump_scale)
    curve = learning_curve(
        base, cfg.curve_grid, cfg.curve_reps, cfg.seed, bumps_for=bumps_for
    )
    _write_csv(cfg.out_dir / "regret.csv", ("M", "mean_regret", "stderr"), curve.rows, cfg.seed)
    theory = -lower_rate_exponent(base.alpha, base.gamma, 2)
    if cfg.plots:
        from . import figures

        figures.save_learning_curve(curve, theory, cfg.out_dir / "regret.png")

    family = []
    for count in sorted({bumps_for(c) for c in cfg.curve_grid}):
        family.append(replace(base, bumps=count, omega=(1,) * count))
    margin_ok = all(
        ok for spec in family for _, _, _, ok in margin_check(spec, [spec.shift / 2, spec.shift, 2 * spec.shift])
    )
    alpha_line = ""
    if len(family) >= 2:
        alpha_line = f" alpha_hat={margin_exponent_estimate(family):.4f}"
    print(
        f"[ADVERSARIAL] slope={curve.slope:.4f} theory={theory:.4f}"
        f" margin_ok={str(margin_ok).lower()}{alpha_line}"
    )
    return 0


def _run_rates(cfg: RunConfig) -> int:
    inputs = cfg.rate_inputs
    alpha, dim, dates = inputs["alpha"], inputs["dim"], inputs["dates"]
    rho = inputs["rho"]
    if rho is None:
        rho = holder_entropy_exponent(inputs["gamma"], dim, dates)
        print(f"[RATES] rho from smoothness gamma={inputs['gamma']:g}: {rho:.17g}")
    print(f"[RATES] alpha={alpha:g} rho={rho:g}")
    print(f"upper_rate_exponent = {upper_rate_exponent(alpha, rho):.17g}")
    if inputs["gamma"] is not None:
        print(
            f"lower_rate_exponent(dim={dim}) = "
            f"{lower_rate_exponent(alpha, inputs['gamma'], dim):.17g}"
        )
    exponent = (2.0 + alpha * (1.0 + rho)) / (2.0 * (1.0 + alpha))
    print(f"batch_for_fresh exponent = {exponent:.17g}")
    for fresh in inputs["fresh_grid"]:
        print(f"batch_for_fresh({fresh}) = {batch_for_fresh(fresh, alpha, rho)}")
    return 0


_RUNNERS = {
    "price": _run_price,
    "qcurves": _run_qcurves,
    "oracle-check": _run_oracle_check,
    "adversarial": _run_adversarial,
    "rates": _run_rates,
}


def run(config: RunConfig) -> int:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[config.subcommand](config)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stopsearch",
        description="Monte Carlo optimal stopping: pricing, diagnostics, oracles",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    help_lines = {
        "price": "optimize regions on batches and value them out of sample",
        "qcurves": "tabulate the bias/spread/evaluation curves and budget pairs",
        "oracle-check": "run the exact identity suites on random finite instances",
        "adversarial": "measure learner regret on the hard two-date family",
        "rates": "print the closed-form rate and budget exponents",
    }
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=help_lines[name])
        p.add_argument("--config", required=True, help="path to a section.key = value file")
        p.add_argument("--seed", type=int, default=None, help="override plan.seed")
        p.add_argument("--out", default=None, help="override output.dir")
        p.add_argument(
            "--threads", type=int, default=1, help="worker threads; 0 = auto; never changes results"
        )
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        config = parse_config(
            text,
            args.subcommand,
            seed_override=args.seed,
            out_override=args.out,
            threads=args.threads,
            plots_override=False if args.no_plots else None,
        )
    except ConfigError as exc:
        for message in exc.errors:
            print(f"error: {message}", file=sys.stderr)
        return 1
    except (ParameterError, ConstructionError, UnsupportedOperationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return run(config)
    except (ParameterError, ConstructionError, UnsupportedOperationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
