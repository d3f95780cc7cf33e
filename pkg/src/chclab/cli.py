"""Command-line front end.

One config file drives every command; the command name itself lives in the
config so an experiment is a single self-describing artifact.  Flags and
CHCLAB_* environment variables override the handful of knobs you want to vary
without editing the file (seed, worker count, output dir, path count), with
flags winning over the environment and the environment over the file.

Artifacts are written into the output directory: results as CSV/JSON plus a
meta.json carrying the effective config, its hash, and wall time.  CSV bytes
are reproducible for a fixed effective config; wall time lives only in
meta.json.  Failures leave a machine-readable error.json behind and exit 2
for config problems, 3 for solver blowups, 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, load_config
from .convergence import LadderInfeasible, LadderSpec, galerkin_rate_study, strong_error_study
from .noise import NoiseModel, certify_gamma, effective_gamma
from .presets import InitialData
from .simulator import ensemble_states, holder_probe, simulate_path, trajectory_to_csv, save_fields
from .spectral import build_basis, verify_smoothing_bounds
from .stepper import SchemeConfig, SolverDiverged, verify_discrete_smoothing


def _apply_overrides(cfg: dict, args) -> dict:
    def pick(flag, env, current, cast):
        if flag is not None:
            return cast(flag)
        if env in os.environ:
            return cast(os.environ[env])
        return current

    cfg = json.loads(json.dumps(cfg))  # deep copy, keeps types JSON-clean
    cfg["seed"] = pick(args.seed, "CHCLAB_SEED", cfg["seed"], int)
    cfg["workers"] = pick(args.workers, "CHCLAB_WORKERS", cfg["workers"], int)
    cfg["output"]["dir"] = pick(args.out, "CHCLAB_OUT", cfg["output"]["dir"], str)
    cfg["study"]["n_paths"] = pick(args.paths, "CHCLAB_PATHS", cfg["study"]["n_paths"], int)
    return cfg


def _build_basis(cfg):
    dom = cfg["domain"]
    return build_basis(dom["dim"], dom["modes_per_axis"], dom.get("lengths"))


def _build_model(cfg):
    noi = cfg["noise"]
    if noi["kind"] == "trace-class-power":
        return NoiseModel.trace_class_power(noi["s"], noi["q0"])
    if noi["kind"] == "white":
        return NoiseModel.white(noi["q0"])
    if "q" not in noi:
        raise ConfigError(["noise.q is required when noise.kind is 'custom'"])
    return NoiseModel.custom(noi["q"])


def _build_initial(cfg):
    ini = cfg["initial"]
    preset = ini["preset"]
    if preset == "zero":
        return InitialData.zero()
    if preset == "single-mode":
        return InitialData.single_mode(ini["index"], ini["amplitude"])
    if preset == "smooth-random":
        return InitialData.smooth_random(ini["decay"], ini["amplitude"])
    if "path" not in ini:
        raise ConfigError(["initial.path is required when initial.preset is 'grid-file'"])
    return InitialData.grid_file(ini["path"])


def _scheme_config(cfg, M=None, N=None):
    sch = cfg["scheme"]
    return SchemeConfig(
        N=N if N is not None else sch["N"],
        M=M if M is not None else sch["M"],
        T=sch["T"],
        solver=sch["solver"],
        solver_tol=sch["tol"],
        max_iters=sch["max_iters"],
    )


def _require_study(cfg, *keys):
    missing = [f"study.{k} is required for command '{cfg['command']}'"
               for k in keys if k not in cfg["study"]]
    if missing:
        raise ConfigError(missing)


def _write(out_dir, name, text):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _csv_text(rows) -> str:
    return "\n".join(",".join(row) for row in rows) + "\n"


def _run_ladder(cfg, basis, model, initial, axis):
    sch, study = cfg["scheme"], cfg["study"]
    if axis == "time":
        _require_study(cfg, "levels_M", "reference_M", "reference_N")
        levels = tuple((M, study["reference_N"]) for M in study["levels_M"])
    else:
        _require_study(cfg, "levels_N", "reference_M", "reference_N")
        levels = tuple((study["reference_M"], N) for N in study["levels_N"])
    spec = LadderSpec(
        axis=axis,
        levels=levels,
        reference=(study["reference_M"], study["reference_N"]),
        n_paths=study["n_paths"],
        p=study["p"],
        T=sch["T"],
        seed=cfg["seed"],
        gamma_requested=study.get("gamma"),
        solver=sch["solver"],
        solver_tol=sch["tol"],
        max_iters=sch["max_iters"],
    )
    return strong_error_study(spec, basis, model, initial, workers=cfg["workers"])


def _cmd_converge(cfg, out_dir, axis):
    basis = _build_basis(cfg)
    model = _build_model(cfg)
    report = _run_ladder(cfg, basis, model, _build_initial(cfg), axis)
    _write(out_dir, "rate_report.json", report.to_json())
    _write(out_dir, "errors.csv", _csv_text(report.csv_rows()))


def _cmd_galerkin(cfg, out_dir):
    _require_study(cfg, "levels_N", "reference_N")
    basis = _build_basis(cfg)
    model = _build_model(cfg)
    study, sch = cfg["study"], cfg["scheme"]
    report = galerkin_rate_study(
        basis, model, _build_initial(cfg),
        levels_N=tuple(study["levels_N"]),
        N_ref=study["reference_N"],
        M_time=sch["M"],
        workers=cfg["workers"],
        T=sch["T"],
        n_paths=study["n_paths"],
        p=study["p"],
        seed=cfg["seed"],
        gamma_requested=study.get("gamma"),
        solver=sch["solver"],
        solver_tol=sch["tol"],
        max_iters=sch["max_iters"],
    )
    _write(out_dir, "rate_report.json", report.to_json())
    _write(out_dir, "errors.csv", _csv_text(report.csv_rows()))


def _cmd_simulate(cfg, out_dir):
    basis = _build_basis(cfg)
    model = _build_model(cfg)
    traj = simulate_path(
        basis, model, _scheme_config(cfg), cfg["seed"], _build_initial(cfg),
        thin=cfg["output"]["thin"], keep_fields=cfg["output"]["fields"],
    )
    trajectory_to_csv(traj, os.path.join(out_dir, "trajectory.csv"))
    if traj.fields is not None:
        save_fields(basis, traj.times, traj.fields, os.path.join(out_dir, "fields.bin"))


def _cmd_regularity(cfg, out_dir):
    basis = _build_basis(cfg)
    model = _build_model(cfg)
    gamma = cfg["study"].get("gamma")
    if gamma is None:
        gamma = effective_gamma(certify_gamma(model, basis))
    times, states, _, _ = ensemble_states(
        basis, model, _scheme_config(cfg), cfg["seed"],
        n_paths=cfg["study"]["n_paths"], initial=_build_initial(cfg),
        workers=cfg["workers"],
    )
    probes = [
        holder_probe(basis, times, states, beta=beta, p=cfg["study"]["p"], gamma=gamma)
        for beta in cfg["study"]["betas"]
    ]
    _write(out_dir, "regularity.json", json.dumps(probes, indent=2, sort_keys=True))
    rows = [["beta", "p", "exponent", "exponent_se", "expected"]]
    for pr in probes:
        rows.append([
            f"{pr['beta']:.17g}", f"{pr['p']:.17g}", f"{pr['exponent']:.17g}",
            f"{pr['exponent_se']:.17g}", f"{pr['expected']:.17g}",
        ])
    _write(out_dir, "regularity.csv", _csv_text(rows))


def _cmd_verify_operators(cfg, out_dir):
    basis = _build_basis(cfg)
    t_grid = np.logspace(-4, 0, 13)
    rows = verify_smoothing_bounds(basis, t_grid)
    head = ["bound", "exponent", "constant", "fitted_rate", "expected_rate"]
    table = [head] + [
        [r["bound"], f"{r['exponent']:.17g}", f"{r['constant']:.17g}",
         f"{r.get('fitted_rate', float('nan')):.17g}",
         f"{r.get('expected_rate', float('nan')):.17g}"]
        for r in rows
    ]
    _write(out_dir, "smoothing.csv", _csv_text(table))
    drows = verify_discrete_smoothing(basis, k_grid=(1e-1, 1e-2, 1e-3, 1e-4))
    dhead = ["bound", "k", "exponent", "constant"]
    dtable = [dhead] + [
        [r["bound"], f"{r['k']:.17g}",
         "" if r["exponent"] is None else f"{r['exponent']:.17g}",
         f"{r['constant']:.17g}"]
        for r in drows
    ]
    _write(out_dir, "discrete_smoothing.csv", _csv_text(dtable))


_RUNNERS = {
    "simulate": _cmd_simulate,
    "converge-time": lambda cfg, out: _cmd_converge(cfg, out, "time"),
    "converge-space": lambda cfg, out: _cmd_converge(cfg, out, "space"),
    "converge-galerkin": _cmd_galerkin,
    "regularity": _cmd_regularity,
    "verify-operators": _cmd_verify_operators,
}


def _fail(out_dir, kind, message, code, extra=None):
    payload = {"error": kind, "message": message}
    if extra:
        payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True)
    try:
        os.makedirs(out_dir, exist_ok=True)
        _write(out_dir, "error.json", text + "\n")
    except OSError:
        pass
    print(text, file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="chclab",
        description="Spectral-Galerkin stochastic Cahn-Hilliard laboratory.",
    )
    ap.add_argument("--config", required=True, help="Path to the experiment JSON config.")
    ap.add_argument("--seed", type=int, default=None, help="Override config seed.")
    ap.add_argument("--workers", type=int, default=None, help="Override worker count.")
    ap.add_argument("--out", default=None, help="Override output directory.")
    ap.add_argument("--paths", type=int, default=None, help="Override study.n_paths.")
    args = ap.parse_args(argv)

    # honored even when the config itself is unreadable, so error.json has a home
    out_dir = args.out or os.environ.get("CHCLAB_OUT", ".")
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        out_dir = cfg["output"]["dir"]
        os.makedirs(out_dir, exist_ok=True)

        started = time.perf_counter()
        _RUNNERS[cfg["command"]](cfg, out_dir)
        wall = time.perf_counter() - started

        meta = {
            "command": cfg["command"],
            "config": cfg,
            "config_hash": config_hash(cfg),
            "seed": cfg["seed"],
            "version": __version__,
            "wall_time_s": wall,
        }
        _write(out_dir, "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except (ConfigError, LadderInfeasible) as exc:
        problems = getattr(exc, "problems", None) or [str(exc)]
        return _fail(out_dir, "config", "invalid config", 2, {"problems": problems})
    except SolverDiverged as exc:
        extra = {"step": exc.step_index, "residual": exc.residual}
        if exc.path_index is not None:
            extra["path"] = exc.path_index
        if getattr(exc, "level", None):
            extra["level"] = exc.level
        return _fail(out_dir, "solver", str(exc), 3, extra)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        return _fail(out_dir, "internal", f"{type(exc).__name__}: {exc}", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
