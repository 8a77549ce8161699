"""Experiment front end: config files, Monte-Carlo batches, result files.

A batch is described by an INI file with sections ``[scenario]``,
``[schemes]``, ``[objective]``, ``[sweep]`` and ``[run]``; every key has a
default, unknown keys are rejected with a spelling suggestion, and range
violations name the offending key.  For each sweep point the configured
scheme variants run on *identical* channel realizations per trial (seeds
derive from ``(base_seed, trial)`` only), so scheme comparisons are paired.

Outputs under the output directory: ``results.csv`` (one aggregated row per
scheme and sweep point), ``traces/*.json`` (one per run) and
``summary.json`` (aggregates, failures, config echo, package version).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import difflib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (
    FadingParams,
    ThetaSet,
    Topology,
    UserSpaceMap,
    make_topology,
    sample_scenario,
)
from .framework import (
    OBJECTIVES,
    ConvergenceCriteria,
    ProblemSpec,
    classify_rs_mode,
    exact_objective,
    run_ao,
    run_mm,
)
from .rates import Impairments, build_real_links, rate_bundle
from .rispace import SET_KINDS, RelaxationParams, random_theta
from .subproblems import InfeasibleTargetError

SWEEP_AXES = ("power_dbw", "target_rate", "bs_antennas", "users_per_cell")
#: surface handling beyond the optimized sets: no surface at all, or a
#: random fixed configuration that only the covariances adapt to
PASSIVE_KINDS = ("none", "fixed")


class ConfigError(ValueError):
    """A config file that parses but does not validate."""


@dataclass(frozen=True)
class ScenarioConfig:
    cells: int = 2
    users_per_cell: int = 2
    bs_antennas: int = 1
    user_antennas: int = 1
    ris_elements: int = 8
    square_side: float = 20.0
    ref_loss_db: float = -30.0
    direct_exponent: float = 3.75
    ris_exponent: float = 2.2
    rician_k_db: float = 3.0
    noise_dbm: float = -94.0
    tx_epsilon: float = 1.0
    tx_phi_deg: float = 0.0
    rx_epsilon: float = 1.0
    rx_phi_deg: float = 0.0


@dataclass(frozen=True)
class SchemeSpec:
    scheme: str
    signaling: str
    set_kind: str
    iqi_aware: bool = True

    @property
    def label(self) -> str:
        parts = [self.scheme, self.signaling, self.set_kind]
        if not self.iqi_aware:
            parts.append("unaware")
        return "-".join(parts)


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "mwrm"
    weights: tuple | None = None
    target_rate: float | None = None
    power_dbw: float = 10.0


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "power_dbw"
    values: tuple = (10.0,)


@dataclass(frozen=True)
class RunConfig:
    trials: int = 10
    base_seed: int = 2024
    out_dir: str = "results"
    threads: int = 1
    rel_tol: float = 1e-4
    max_iters: int = 50
    epsilon_relax: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = ScenarioConfig()
    schemes: tuple = (
        SchemeSpec("rs", "igs", "unit"),
        SchemeSpec("tin", "igs", "unit"),
    )
    objective: ObjectiveConfig = ObjectiveConfig()
    sweep: SweepConfig = SweepConfig()
    run: RunConfig = RunConfig()


def _parse_int(section, key, raw, minimum=None):
    try:
        v = int(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from e
    if minimum is not None and v < minimum:
        raise ConfigError(f"[{section}] {key} must be >= {minimum}, got {v}")
    return v


def _parse_float(section, key, raw, minimum=None, strict=False):
    try:
        v = float(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from e
    if minimum is not None and (v <= minimum if strict else v < minimum):
        cmp = ">" if strict else ">="
        raise ConfigError(f"[{section}] {key} must be {cmp} {minimum}, got {v}")
    return v


def _parse_float_list(section, key, raw):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"[{section}] {key} must not be empty")
    return tuple(_parse_float(section, key, p) for p in parts)


def _parse_choice(section, key, raw, choices):
    v = raw.strip().lower()
    if v not in choices:
        hint = difflib.get_close_matches(v, choices, n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise ConfigError(
            f"[{section}] {key} must be one of {', '.join(choices)}, got {raw!r}{extra}"
        )
    return v


def _parse_scheme_list(raw: str):
    combos = []
    for token in (t.strip().lower() for t in raw.split(",")):
        if not token:
            continue
        parts = token.split("-")
        if (
            len(parts) < 2
            or parts[0] not in ("rs", "tin")
            or parts[1] not in ("igs", "pgs")
            or (len(parts) == 3 and parts[2] != "unaware")
            or len(parts) > 3
        ):
            raise ConfigError(
                f"[schemes] list entries look like 'rs-igs' or 'tin-pgs-unaware', got {token!r}"
            )
        combos.append((parts[0], parts[1], len(parts) < 3))
    if not combos:
        raise ConfigError("[schemes] list must name at least one scheme")
    return tuple(dict.fromkeys(combos))


_SCENARIO_PARSERS = {
    "cells": lambda s: _parse_int("scenario", "cells", s, 1),
    "users_per_cell": lambda s: _parse_int("scenario", "users_per_cell", s, 1),
    "bs_antennas": lambda s: _parse_int("scenario", "bs_antennas", s, 1),
    "user_antennas": lambda s: _parse_int("scenario", "user_antennas", s, 1),
    "ris_elements": lambda s: _parse_int("scenario", "ris_elements", s, 1),
    "square_side": lambda s: _parse_float("scenario", "square_side", s, 0.0, strict=True),
    "ref_loss_db": lambda s: _parse_float("scenario", "ref_loss_db", s),
    "direct_exponent": lambda s: _parse_float("scenario", "direct_exponent", s, 0.0),
    "ris_exponent": lambda s: _parse_float("scenario", "ris_exponent", s, 0.0),
    "rician_k_db": lambda s: _parse_float("scenario", "rician_k_db", s),
    "noise_dbm": lambda s: _parse_float("scenario", "noise_dbm", s),
    "tx_epsilon": lambda s: _parse_float("scenario", "tx_epsilon", s, 0.0, strict=True),
    "tx_phi_deg": lambda s: _parse_float("scenario", "tx_phi_deg", s),
    "rx_epsilon": lambda s: _parse_float("scenario", "rx_epsilon", s, 0.0, strict=True),
    "rx_phi_deg": lambda s: _parse_float("scenario", "rx_phi_deg", s),
}

_OBJECTIVE_PARSERS = {
    "kind": lambda s: _parse_choice("objective", "kind", s, OBJECTIVES),
    "weights": lambda s: _parse_float_list("objective", "weights", s),
    "target_rate": lambda s: _parse_float("objective", "target_rate", s, 0.0),
    "power_dbw": lambda s: _parse_float("objective", "power_dbw", s),
}

_SWEEP_PARSERS = {
    "axis": lambda s: _parse_choice("sweep", "axis", s, SWEEP_AXES),
    "values": lambda s: _parse_float_list("sweep", "values", s),
}

_RUN_PARSERS = {
    "trials": lambda s: _parse_int("run", "trials", s, 1),
    "base_seed": lambda s: _parse_int("run", "base_seed", s, 0),
    "out_dir": lambda s: s.strip(),
    "threads": lambda s: _parse_int("run", "threads", s, 1),
    "rel_tol": lambda s: _parse_float("run", "rel_tol", s, 0.0, strict=True),
    "max_iters": lambda s: _parse_int("run", "max_iters", s, 1),
    "epsilon_relax": lambda s: _parse_float("run", "epsilon_relax", s, 0.0, strict=True),
}

_SCHEME_KEYS = ("list", "set_kinds")
_SECTION_KEYS = {
    "scenario": tuple(_SCENARIO_PARSERS),
    "schemes": _SCHEME_KEYS,
    "objective": tuple(_OBJECTIVE_PARSERS),
    "sweep": tuple(_SWEEP_PARSERS),
    "run": tuple(_RUN_PARSERS),
}


def _section_kwargs(cp, section, parsers):
    if not cp.has_section(section):
        return {}
    out = {}
    for key, raw in cp.items(section):
        if key not in parsers:
            hint = difflib.get_close_matches(key, list(parsers), n=1)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"unknown key {key!r} in [{section}]{extra}")
        out[key] = parsers[key](raw)
    return out


def parse_config(cp: configparser.ConfigParser) -> ExperimentConfig:
    for section in cp.sections():
        if section not in _SECTION_KEYS:
            hint = difflib.get_close_matches(section, list(_SECTION_KEYS), n=1)
            extra = f"; did you mean [{hint[0]}]?" if hint else ""
            raise ConfigError(f"unknown section [{section}]{extra}")

    scenario = ScenarioConfig(**_section_kwargs(cp, "scenario", _SCENARIO_PARSERS))
    objective = ObjectiveConfig(**_section_kwargs(cp, "objective", _OBJECTIVE_PARSERS))
    sweep = SweepConfig(**_section_kwargs(cp, "sweep", _SWEEP_PARSERS))
    run = RunConfig(**_section_kwargs(cp, "run", _RUN_PARSERS))

    kinds_ok = SET_KINDS + PASSIVE_KINDS
    combos = (("rs", "igs", True), ("tin", "igs", True))
    set_kinds = ("unit",)
    if cp.has_section("schemes"):
        for key, raw in cp.items("schemes"):
            if key == "list":
                combos = _parse_scheme_list(raw)
            elif key == "set_kinds":
                set_kinds = tuple(
                    _parse_choice("schemes", "set_kinds", t, kinds_ok)
                    for t in raw.split(",")
                    if t.strip()
                )
                if not set_kinds:
                    raise ConfigError("[schemes] set_kinds must not be empty")
            else:
                hint = difflib.get_close_matches(key, _SCHEME_KEYS, n=1)
                extra = f"; did you mean {hint[0]!r}?" if hint else ""
                raise ConfigError(f"unknown key {key!r} in [schemes]{extra}")
    schemes = tuple(
        SchemeSpec(s, g, kind, aware)
        for (s, g, aware) in combos
        for kind in dict.fromkeys(set_kinds)
    )

    cfg = ExperimentConfig(scenario, schemes, objective, sweep, run)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig) -> None:
    sc, ob, sw = cfg.scenario, cfg.objective, cfg.sweep
    if ob.kind == "powermin":
        if sw.axis == "power_dbw":
            raise ConfigError(
                "[sweep] axis power_dbw makes no sense for the powermin objective"
            )
        if ob.target_rate is None and sw.axis != "target_rate":
            raise ConfigError("[objective] target_rate is required for powermin")
    if ob.weights is not None:
        if sw.axis == "users_per_cell":
            raise ConfigError(
                "[objective] weights cannot be fixed while sweeping users_per_cell"
            )
        want = sc.cells * sc.users_per_cell
        if len(ob.weights) != want:
            raise ConfigError(
                f"[objective] weights needs cells*users_per_cell = {want} entries, "
                f"got {len(ob.weights)}"
            )
    if sw.axis in ("bs_antennas", "users_per_cell"):
        for v in sw.values:
            if v != int(v) or v < 1:
                raise ConfigError(
                    f"[sweep] values for axis {sw.axis} must be positive integers"
                )


def validate_config(path) -> ExperimentConfig:
    """Parse and fully validate an experiment description file."""
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return parse_config(cp)


# --------------------------------------------------------------------------
# batch execution


@dataclass(frozen=True)
class TrialOutcome:
    scheme: str
    sweep_value: float
    trial: int
    status: str  # "ok", "infeasible", or "error: ..."
    value: float | None
    converged: bool | None
    trace: dict | None


@dataclass(frozen=True)
class ResultTable:
    outcomes: tuple

    def rows(self):
        """One aggregate per (scheme, sweep point), sorted, means over the
        trials that completed."""
        grouped: dict = {}
        for o in self.outcomes:
            grouped.setdefault((o.scheme, o.sweep_value), []).append(o)
        rows = []
        for scheme, value in sorted(grouped):
            vals = [o.value for o in grouped[scheme, value] if o.status == "ok"]
            n = len(vals)
            mean = float(np.mean(vals)) if n else float("nan")
            stderr = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            rows.append(
                {
                    "scheme": scheme,
                    "sweep_value": value,
                    "mean": mean,
                    "stderr": stderr,
                    "n": n,
                }
            )
        return rows

    def values(self, scheme: str, sweep_value: float) -> np.ndarray:
        return np.array(
            [
                o.value
                for o in self.outcomes
                if o.scheme == scheme and o.sweep_value == sweep_value and o.status == "ok"
            ]
        )

    def failures(self):
        return [o for o in self.outcomes if o.status != "ok"]


def _sigma2_watts(noise_dbm: float) -> float:
    return 10.0 ** ((noise_dbm - 30.0) / 10.0)


def _transmission_mask(top: Topology) -> UserSpaceMap:
    """Users beyond their cell's surface (seen from the base station) are
    served through it; the rest by reflection."""
    l_cells, k_users = top.user_positions.shape[:2]
    mask = np.zeros((l_cells, k_users), dtype=bool)
    for l in range(l_cells):
        axis = top.ris_positions[l, :2] - top.bs_positions[l, :2]
        for k in range(k_users):
            rel = top.user_positions[l, k, :2] - top.ris_positions[l, :2]
            mask[l, k] = float(rel @ axis) > 0.0
    return UserSpaceMap(mask)


def _dims_at(cfg: ExperimentConfig, value: float) -> tuple[int, int, int, int]:
    sc = cfg.scenario
    k_users, n_bs = sc.users_per_cell, sc.bs_antennas
    if cfg.sweep.axis == "users_per_cell":
        k_users = int(value)
    elif cfg.sweep.axis == "bs_antennas":
        n_bs = int(value)
    return sc.cells, k_users, n_bs, sc.user_antennas


def run_trial(cfg: ExperimentConfig, sch: SchemeSpec, value: float, trial: int) -> TrialOutcome:
    """One (scheme, sweep point, trial) cell of the batch.

    Channel draws depend only on ``(base_seed, trial)`` and the problem
    dimensions, never on the scheme, so scheme comparisons are paired.
    Failures are reported in the outcome instead of raised.
    """
    try:
        return _run_trial_inner(cfg, sch, value, trial)
    except InfeasibleTargetError:
        return TrialOutcome(sch.label, value, trial, "infeasible", None, None, None)
    except Exception as e:  # noqa: BLE001 - batch must survive stray failures
        return TrialOutcome(
            sch.label, value, trial, f"error: {type(e).__name__}: {e}", None, None, None
        )


def _run_trial_inner(cfg, sch, value, trial):
    sc, ob, rn = cfg.scenario, cfg.objective, cfg.run
    l_cells, k_users, n_bs, n_u = _dims_at(cfg, value)
    base = rn.base_seed

    top = make_topology(
        l_cells, k_users, n_bs, n_u, sc.ris_elements,
        seed=(base, trial, 0), square_side=sc.square_side,
    )
    fp = FadingParams(sc.ref_loss_db, sc.direct_exponent, sc.ris_exponent, sc.rician_k_db)
    fs = sample_scenario(top, fp, seed=(base, trial, 1))
    sigma2 = _sigma2_watts(sc.noise_dbm)
    imp_true = Impairments.uniform(
        l_cells, k_users, n_bs, n_u, sigma2,
        sc.tx_epsilon, np.deg2rad(sc.tx_phi_deg),
        sc.rx_epsilon, np.deg2rad(sc.rx_phi_deg),
    )
    imp_opt = (
        imp_true
        if sch.iqi_aware
        else Impairments.ideal(l_cells, k_users, n_bs, n_u, sigma2)
    )

    if ob.kind == "powermin":
        budgets = None
        thresholds = value if cfg.sweep.axis == "target_rate" else ob.target_rate
    else:
        dbw = value if cfg.sweep.axis == "power_dbw" else ob.power_dbw
        budgets = [10.0 ** (dbw / 10.0)] * l_cells
        thresholds = value if cfg.sweep.axis == "target_rate" else ob.target_rate
    weights = (
        np.asarray(ob.weights, dtype=float).reshape(l_cells, k_users)
        if ob.weights is not None
        else None
    )
    spec = ProblemSpec(
        ob.kind,
        scheme=sch.scheme,
        signaling=sch.signaling,
        weights=weights,
        thresholds=thresholds,
        iqi_aware=sch.iqi_aware,
    )
    criteria = ConvergenceCriteria(rn.rel_tol, rn.max_iters)
    space = _transmission_mask(top) if sch.set_kind == "star" else None
    theta_rng = np.random.default_rng(np.random.SeedSequence((base, trial, 2)))

    if sch.set_kind in PASSIVE_KINDS:
        m_ris = top.ris_positions.shape[0]
        if sch.set_kind == "none":
            ts = ThetaSet(np.zeros((m_ris, sc.ris_elements)))
        else:
            ts = random_theta("unit", m_ris, sc.ris_elements, theta_rng)
        links = build_real_links(fs, ts, imp_opt, space)
        trace = run_mm(spec, links, budgets, criteria=criteria)
        theta_final = ts
    else:
        theta0 = random_theta(sch.set_kind, top.ris_positions.shape[0],
                              sc.ris_elements, theta_rng)
        trace = run_ao(
            spec, fs, imp_opt, sch.set_kind, budgets,
            space=space, theta0=theta0, criteria=criteria,
            relax=RelaxationParams(rn.epsilon_relax),
        )
        theta_final = trace.theta

    # what counts is always the exact objective under the true front ends;
    # for aware schemes this re-evaluates the same quantity the run tracked
    links_true = build_real_links(fs, theta_final, imp_true, space)
    value_true, r_c_true = exact_objective(spec, trace.cov, links_true)
    bundle_true = rate_bundle(trace.cov, links_true)

    blob = trace.to_json_dict()
    blob.update(
        scheme=sch.label,
        sweep_value=value,
        trial=trial,
        evaluated_objective=value_true,
        evaluated_rates=(bundle_true.private + r_c_true).tolist(),
        modes=classify_rs_mode(bundle_true, r_c_true),
    )
    return TrialOutcome(
        sch.label, value, trial, "ok", value_true, trace.converged, blob
    )


def _run_packed(args):
    return run_trial(*args)


def run_experiment(cfg: ExperimentConfig, scheme_filter: str | None = None) -> ResultTable:
    """Run the whole batch; deterministic for a given config regardless of
    worker count or completion order."""
    schemes = cfg.schemes
    if scheme_filter:
        wanted = [w.strip() for w in scheme_filter.split(",") if w.strip()]
        schemes = tuple(s for s in schemes if any(w in s.label for w in wanted))
        if not schemes:
            raise ConfigError(
                f"scheme filter {scheme_filter!r} matches none of "
                f"{[s.label for s in cfg.schemes]}"
            )
    tasks = [
        (cfg, sch, value, trial)
        for value in cfg.sweep.values
        for sch in schemes
        for trial in range(cfg.run.trials)
    ]
    if cfg.run.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.threads) as pool:
            outcomes = list(pool.map(_run_packed, tasks))
    else:
        outcomes = [run_trial(*t) for t in tasks]
    outcomes.sort(key=lambda o: (o.scheme, o.sweep_value, o.trial))
    return ResultTable(tuple(outcomes))


# --------------------------------------------------------------------------
# persistence


def emit_plot_data(table: ResultTable, out_dir, fmt: str = "csv") -> Path:
    """Write the aggregated plot data; stable column and row order."""
    if fmt != "csv":
        raise ValueError(f"unsupported format {fmt!r}")
    rows = table.rows()
    if not rows:
        raise ValueError("no results to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "results.csv"
    with open(target, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["scheme", "sweep_value", "mean", "stderr", "n"])
        writer.writeheader()
        writer.writerows(rows)
    return target


def write_archive(table: ResultTable, cfg: ExperimentConfig, out_dir) -> Path:
    """Per-run traces plus a summary with config echo and failure list."""
    out_dir = Path(out_dir)
    traces = out_dir / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    for o in table.outcomes:
        if o.trace is not None:
            name = f"{o.scheme}_v{o.sweep_value:g}_t{o.trial:03d}.json"
            with open(traces / name, "w") as fh:
                json.dump(o.trace, fh, indent=1)
    summary = {
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "results": table.rows(),
        "failures": [
            {"scheme": o.scheme, "sweep_value": o.sweep_value, "trial": o.trial, "status": o.status}
            for o in table.failures()
        ],
        "trials_total": len(table.outcomes),
    }
    target = out_dir / "summary.json"
    with open(target, "w") as fh:
        json.dump(summary, fh, indent=1)
    return target


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rsris",
        description="Monte-Carlo experiments for rate-splitting multicell "
        "networks with reconfigurable surfaces",
    )
    parser.add_argument("--config", required=True, help="experiment INI file")
    parser.add_argument("--out-dir", default=None, help="override [run] out_dir")
    parser.add_argument("--trials", type=int, default=None, help="override [run] trials")
    parser.add_argument("--seed", type=int, default=None, help="override [run] base_seed")
    parser.add_argument("--threads", type=int, default=None, help="override [run] threads")
    parser.add_argument(
        "--scheme-filter",
        default=None,
        help="comma list of substrings; keep schemes whose label matches any",
    )
    args = parser.parse_args(argv)

    try:
        cfg = validate_config(args.config)
    except ConfigError as e:
        parser.error(str(e))

    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if overrides:
        try:
            cfg = dataclasses.replace(
                cfg, run=dataclasses.replace(cfg.run, **overrides)
            )
        except ValueError as e:
            parser.error(str(e))

    try:
        table = run_experiment(cfg, scheme_filter=args.scheme_filter)
    except ConfigError as e:
        parser.error(str(e))

    out_dir = Path(cfg.run.out_dir)
    emit_plot_data(table, out_dir)
    write_archive(table, cfg, out_dir)

    axis = cfg.sweep.axis
    for row in table.rows():
        print(
            f"{row['scheme']:<28} {axis}={row['sweep_value']:g} "
            f"mean={row['mean']:.4f} stderr={row['stderr']:.4f} n={row['n']}"
        )
    failures = table.failures()
    if failures:
        print(f"{len(failures)} run(s) did not complete; see summary.json", file=sys.stderr)
    print(f"wrote {out_dir / 'results.csv'}, {out_dir / 'summary.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
