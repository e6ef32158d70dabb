"""Command-line interface: validate, thresholds, simulate, verify, sweep.

Configs are JSON with a fixed schema (unknown keys rejected):

    {
      "patches": 1, "strains": 2,
      "birth": [1.0], "death": [1.0],
      "beta_diag": [[20.0, 4.0]], "theta": [[1.0, 1.0]],
      "migration": [[0.0]],
      "integrator": { ... optional overrides ... },
      "seeds": [1, 2, 3]
    }

migration[l][i] is the travel rate from patch i to patch l.  Exit
codes: 0 success, 1 verification failure, 2 validation/config error,
3 numeric failure.  Identical config + seeds give byte-identical
outputs; STRAIN_CASCADE_THREADS caps the worker pool for verify/sweep.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CascadeError, CascadeReport, LVConvergenceError, run_cascade
from .linalg import PowerIterationError, SolveError, ZMatrixError
from .model import ModelParameters, state_dim, validate
from .simulate import (
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    converged_to,
    integrate,
    write_trajectory_csv,
)
from .singlepatch import r0_cascade

__all__ = ["RunConfig", "ConfigError", "parse_config", "serialize_config", "main"]

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INVALID = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (CascadeError, LVConvergenceError, IntegrationError,
                   PowerIterationError, SolveError, ZMatrixError,
                   np.linalg.LinAlgError)

_MODEL_KEYS = {"patches", "strains", "birth", "death", "beta_diag",
               "theta", "migration"}
_OPTIONAL_KEYS = {"integrator", "seeds"}
_INTEGRATOR_KEYS = {"rel_tol", "abs_tol", "max_time", "max_steps",
                    "convergence_eps", "convergence_window"}


class ConfigError(ValueError):
    """Config file malformed; carries the full violation list."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    """Parsed configuration plus output destination."""

    model: ModelParameters
    integrator: IntegratorConfig
    seeds: list[int] = field(default_factory=list)
    outputs: Path = Path(".")


def parse_config(path) -> RunConfig:
    """Load and schema-check a JSON config file.

    Raises:
        ConfigError: unknown keys, wrong types/shapes, or bad values;
            the message lists every problem found.
        FileNotFoundError: missing file.
    """
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            [f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]
        ) from exc
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])

    unknown = set(raw) - _MODEL_KEYS - _OPTIONAL_KEYS
    for key in sorted(unknown):
        problems.append(f"unknown key {key!r}")
    missing = _MODEL_KEYS - set(raw)
    for key in sorted(missing):
        problems.append(f"missing required key {key!r}")
    if problems:
        raise ConfigError(problems)

    def want_int(key):
        v = raw[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            problems.append(f"{key!r} must be a positive integer")
            return 1
        return v

    p = want_int("patches")
    n = want_int("strains")

    def want_array(key, shape):
        try:
            arr = np.asarray(raw[key], dtype=np.float64)
        except (TypeError, ValueError):
            problems.append(f"{key!r} is not a numeric array")
            return np.zeros(shape)
        if arr.shape != shape:
            problems.append(f"{key!r} has shape {arr.shape}, expected {shape}")
            return np.zeros(shape)
        return arr

    birth = want_array("birth", (p,))
    death = want_array("death", (p,))
    beta = want_array("beta_diag", (p, n))
    theta = want_array("theta", (p, n))
    migration = want_array("migration", (p, p))
    if problems:
        raise ConfigError(problems)

    model = ModelParameters(p, n, birth, death, beta, theta, migration)
    for v in validate(model):
        problems.append(str(v))

    integ_raw = raw.get("integrator", {})
    integrator = IntegratorConfig()
    if not isinstance(integ_raw, dict):
        problems.append("'integrator' must be an object")
    else:
        for key in sorted(set(integ_raw) - _INTEGRATOR_KEYS):
            problems.append(f"unknown integrator key {key!r}")
        kwargs = {}
        for key in _INTEGRATOR_KEYS & set(integ_raw):
            val = integ_raw[key]
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                problems.append(f"integrator.{key} must be a number")
            else:
                kwargs[key] = int(val) if key == "max_steps" else float(val)
        if not problems:
            try:
                integrator = IntegratorConfig(**kwargs)
            except ValueError as exc:
                problems.append(f"integrator: {exc}")

    seeds_raw = raw.get("seeds", [])
    seeds: list[int] = []
    if (not isinstance(seeds_raw, list)
            or any(not isinstance(s, int) or isinstance(s, bool)
                   for s in seeds_raw)):
        problems.append("'seeds' must be a list of integers")
    else:
        seeds = list(seeds_raw)

    if problems:
        raise ConfigError(problems)
    return RunConfig(model=model, integrator=integrator, seeds=seeds)


def serialize_config(config: RunConfig) -> dict:
    """Canonical dict form; parse(serialize(...)) is the identity."""
    out = config.model.to_dict()
    out["integrator"] = config.integrator.to_dict()
    out["seeds"] = list(config.seeds)
    return out


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _worker_count() -> int:
    raw = os.environ.get("STRAIN_CASCADE_THREADS", "")
    if raw.strip():
        try:
            cap = int(raw)
        except ValueError:
            cap = 1
        return max(1, cap)
    return os.cpu_count() or 1


def _report_dict(config: RunConfig, report: CascadeReport) -> dict:
    d = report.to_dict()
    d["patches"] = config.model.patches
    d["strains"] = config.model.strains
    if config.model.patches == 1:
        seq, eq = r0_cascade(config.model)
        agree_set = (report.persistence_set
                     == sorted(k + 1 for k in
                               np.nonzero(eq.infected[0] > 0)[0]))
        max_diff = float(np.abs(report.equilibrium.to_flat()
                                - eq.to_flat()).max())
        d["single_patch"] = seq.to_dict()
        d["single_patch"]["equilibrium"] = eq.to_dict()
        d["single_patch"]["agreement"] = {
            "persistence_sets_match": bool(agree_set),
            "equilibrium_max_diff": max_diff,
            "agrees": bool(agree_set and max_diff <= 1e-10),
        }
    return d


def _print_report(report: CascadeReport, file=None) -> None:
    file = file if file is not None else sys.stdout
    print("threshold cascade:", file=file)
    for v in report.verdicts:
        flag = ""
        if v.near_threshold:
            flag = "  [near-threshold]"
        elif v.weak_persistence:
            flag = "  [weak persistence]"
        verdict = "persists" if v.persists else "dies out"
        print(f"  strain {v.strain}: s = {v.threshold:+.6e}  ->  {verdict}{flag}",
              file=file)
    pset = report.persistence_set
    print(f"persistence set: {{{', '.join(map(str, pset))}}}" if pset
          else "persistence set: {} (disease-free)", file=file)
    eq = report.equilibrium
    for l in range(eq.susceptible.shape[0]):
        levels = ", ".join("%.10g" % x for x in eq.infected[l])
        print(f"  patch {l + 1}: S = {eq.susceptible[l]:.10g}  T = [{levels}]",
              file=file)


def _random_initial(rng: np.random.Generator, model: ModelParameters,
                    n_star: np.ndarray) -> np.ndarray:
    """Strictly positive state, log-uniform in [1e-3, 10] x N* per patch."""
    p, n = model.patches, model.strains
    scale = np.repeat(n_star, n + 1)
    return scale * 10.0 ** rng.uniform(-3.0, 1.0, size=(n + 1) * p)


def _load_initial(path, model: ModelParameters) -> np.ndarray:
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict) and "state" in raw:
        raw = raw["state"]
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (state_dim(model),):
        raise ConfigError(
            [f"initial state has shape {arr.shape}, "
             f"expected ({state_dim(model)},)"]
        )
    if (arr < 0).any():
        raise ConfigError(["initial state must be nonnegative"])
    return arr


def cmd_validate(config: RunConfig, args) -> int:
    problems = validate(config.model)
    if problems:
        for v in problems:
            print(f"violation: {v}")
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def cmd_thresholds(config: RunConfig, args) -> int:
    report = run_cascade(config.model)
    _print_report(report)
    report_dict = _report_dict(config, report)
    if "single_patch" in report_dict:
        sp = report_dict["single_patch"]
        r0s = ", ".join(f"{k} = {v:.6g}" for k, v in sp["r0"].items())
        print(f"single-patch reproduction numbers: {r0s}")
        agree = sp["agreement"]
        print(f"cascade/R0 agreement: {agree['agrees']} "
              f"(max equilibrium diff {agree['equilibrium_max_diff']:.3e})")
    out = config.outputs
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(report_dict, out / "report.json")
    print(f"report written to {out / 'report.json'}")
    return EXIT_OK


def cmd_simulate(config: RunConfig, args) -> int:
    report = run_cascade(config.model)
    n_star = report.verdicts[0].total_pop_limit
    if args.initial:
        y0 = _load_initial(args.initial, config.model)
    else:
        seed = args.seed if args.seed is not None else 0
        rng = np.random.default_rng(seed)
        y0 = _random_initial(rng, config.model, n_star)

    try:
        traj = integrate(config.model, y0, config.integrator)
    except IntegrationError as exc:
        print(f"integration failed: {exc.reason}; last good time t = {exc.t_last}")
        return EXIT_NUMERIC

    out = config.outputs
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "trajectory.csv"
    write_trajectory_csv(csv_path, traj, config.model.patches,
                         config.model.strains)
    dist = float(np.abs(traj.final_state - report.equilibrium.to_flat()).max())
    print(f"status: {traj.status}  t_end = {traj.final_time:.6g}  "
          f"distance to predicted equilibrium = {dist:.3e}")
    if traj.status == "max_time":
        print("warning: max_time reached before the convergence window criterion")
    print(f"trajectory written to {csv_path}")
    return EXIT_OK


def cmd_verify(config: RunConfig, args) -> int:
    if not config.seeds:
        print("config error: 'seeds' must be nonempty for verify")
        return EXIT_INVALID
    report = run_cascade(config.model)
    target = report.equilibrium
    n_star = report.verdicts[0].total_pop_limit
    eps = args.eps

    def one(seed: int):
        rng = np.random.default_rng(seed)
        y0 = _random_initial(rng, config.model, n_star)
        try:
            traj = integrate(config.model, y0, config.integrator)
        except IntegrationError as exc:
            return {"seed": seed, "ok": False, "error": exc.reason,
                    "distance": None, "t_end": exc.t_last}
        dist = float(np.abs(traj.final_state - target.to_flat()).max())
        ok = converged_to(traj, target, eps)
        return {"seed": seed, "ok": bool(ok), "distance": dist,
                "t_end": traj.final_time, "status": traj.status}

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        rows = list(pool.map(one, config.seeds))

    out = config.outputs
    out.mkdir(parents=True, exist_ok=True)
    _dump_json({"eps": eps, "runs": rows}, out / "verify.json")

    print(f"{'seed':>12}  {'converged':>9}  {'distance':>12}  {'t_end':>10}")
    for row in rows:
        dist = "---" if row["distance"] is None else f"{row['distance']:.3e}"
        print(f"{row['seed']:>12}  {str(row['ok']):>9}  {dist:>12}  "
              f"{row['t_end']:>10.4g}")
    bad = [row for row in rows if not row["ok"]]
    if bad:
        print(f"verification FAILED for seed {bad[0]['seed']}")
        return EXIT_VERIFY_FAILED
    print(f"verification passed for all {len(rows)} seeds")
    return EXIT_OK


_AXIS_RE = re.compile(
    r"^(birth|death|beta_diag|theta|migration)"
    r"\[(\d+)\](?:\[(\d+)\])?=([^:]+):([^:]+):(\d+)$"
)


def _parse_axis(spec: str, model: ModelParameters):
    m = _AXIS_RE.match(spec.strip())
    if not m:
        raise ConfigError(
            [f"bad --axis {spec!r}; expected "
             "name[i]=start:stop:steps or name[i][j]=start:stop:steps"]
        )
    name, i, j, start, stop, steps = m.groups()
    i = int(i)
    j = None if j is None else int(j)
    arr = getattr(model, name)
    if arr.ndim == 1:
        if j is not None:
            raise ConfigError([f"{name!r} takes one index"])
        if not 0 <= i < arr.shape[0]:
            raise ConfigError([f"index {i} out of range for {name!r}"])
        path = (name, (i,))
    else:
        if j is None:
            raise ConfigError([f"{name!r} takes two indices"])
        if not (0 <= i < arr.shape[0] and 0 <= j < arr.shape[1]):
            raise ConfigError([f"index [{i}][{j}] out of range for {name!r}"])
        path = (name, (i, j))
    grid = np.linspace(float(start), float(stop), int(steps))
    return path, grid


def cmd_sweep(config: RunConfig, args) -> int:
    if not args.axis:
        print("config error: --axis required for sweep")
        return EXIT_INVALID
    try:
        (name, idx), grid = _parse_axis(args.axis, config.model)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}")
        return EXIT_INVALID

    n = config.model.strains
    header = (["value"] + [f"s_M_{k}" for k in range(n, 0, -1)]
              + ["persistence_set"])

    def one(value: float):
        m = config.model.copy()
        getattr(m, name)[idx] = value
        try:
            bad = validate(m)
            if bad:
                raise ValueError("; ".join(map(str, bad)))
            report = run_cascade(m)
        except Exception as exc:  # per-point failures recorded in-row
            return [("%.17g" % value)] + [""] * n \
                + [f"error:{type(exc).__name__}"]
        pset = ";".join(str(k) for k in report.persistence_set)
        return [("%.17g" % value)] \
            + [("%.17g" % s) for s in report.thresholds] + [pset]

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        rows = list(pool.map(one, grid))

    out = config.outputs
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    print(f"swept {name}{list(idx)} over {len(grid)} points -> {path}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="strain-cascade",
        description="Threshold cascade and ODE verification for the "
                    "multistrain multipatch SIS model",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, extra in [
        ("validate", cmd_validate, ()),
        ("thresholds", cmd_thresholds, ()),
        ("simulate", cmd_simulate, ("seed", "initial")),
        ("verify", cmd_verify, ("eps",)),
        ("sweep", cmd_sweep, ("axis",)),
    ]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", default=".", help="output directory")
        if "seed" in extra:
            sp.add_argument("--seed", type=int, default=None,
                            help="seed for a random positive initial state")
        if "initial" in extra:
            sp.add_argument("--initial", default=None,
                            help="JSON file with the initial state")
        if "eps" in extra:
            sp.add_argument("--eps", type=float, default=1e-5,
                            help="convergence tolerance against the "
                                 "predicted equilibrium")
        if "axis" in extra:
            sp.add_argument("--axis", default=None,
                            help="parameter sweep, e.g. beta_diag[0][1]=1:30:10")
        sp.set_defaults(handler=fn)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}")
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"config error: {exc}")
        return EXIT_INVALID
    config.outputs = Path(args.out)
    try:
        return args.handler(config, args)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}")
        return EXIT_INVALID
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"validation error: {exc}")
        return EXIT_INVALID
    except OSError as exc:
        print(f"config error: output path not usable: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
