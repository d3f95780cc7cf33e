"""Path simulation, ensemble statistics, and the temporal regularity probe.

Ensembles advance in fixed-size path chunks.  The chunk partition is a
constant of the implementation, not of the worker count, and the cross-path
reductions happen on fully assembled arrays in path order with numpy's
pairwise summation, so moment curves are reproducible to near machine
precision no matter how the work was scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import struct

import numpy as np

from .spectral import EigenBasis, coeffs_to_grid
from .noise import (
    BrownianSkeleton,
    NoiseModel,
    certify_gamma,
    derive_path_seed,
    effective_gamma,
    increments,
)
from .presets import InitialData
from .stepper import SchemeConfig, run_scheme_batch
from .fitting import fit_rate

__all__ = [
    "Trajectory",
    "MomentReport",
    "observable_kappa",
    "simulate_path",
    "ensemble_states",
    "ensemble_moments",
    "holder_probe",
    "trajectory_to_csv",
    "save_fields",
    "load_fields",
]

_CHUNK = 16  # paths per batch; fixed so scheduling cannot alter results


def observable_kappa(model: NoiseModel, basis: EigenBasis) -> float:
    """Exponent of the recorded Sobolev norm: min(gamma, d/2 + 1/4) with the
    certified gamma backed off into the open admissible interval."""
    gamma = effective_gamma(certify_gamma(model, basis))
    return min(gamma, basis.dim / 2.0 + 0.25)


@dataclass
class Trajectory:
    """Observable series of one path, fields kept only on request."""

    times: np.ndarray
    observables: dict
    iterations: np.ndarray
    used_newton: np.ndarray
    fields: np.ndarray | None
    kappa: float
    seed: int
    config: SchemeConfig = field(repr=False)


def _grid_observables(basis: EigenBasis, coeffs: np.ndarray):
    """Quadrature L4 and L6 norms plus the double-well potential integral.

    coeffs is (..., n_modes); transforms run in slices to bound the size of
    the grid-space intermediate.
    """
    flat = coeffs.reshape(-1, coeffs.shape[-1])
    n = flat.shape[0]
    l4 = np.zeros(n)
    l6 = np.zeros(n)
    pot = np.zeros(n)
    w = basis.quad_weight
    step = max(1, 2**22 // max(np.prod(basis.grid_shape), 1))
    axes = tuple(range(-basis.dim, 0))
    for lo in range(0, n, step):
        vals = coeffs_to_grid(basis, flat[lo : lo + step])
        v2 = vals**2
        l4[lo : lo + step] = (w * np.sum(v2**2, axis=axes)) ** 0.25
        l6[lo : lo + step] = (w * np.sum(v2**3, axis=axes)) ** (1.0 / 6.0)
        pot[lo : lo + step] = w * np.sum(0.25 * v2**2 - 0.5 * v2, axis=axes)
    shape = coeffs.shape[:-1]
    return l4.reshape(shape), l6.reshape(shape), pot.reshape(shape)


def compute_observables(basis: EigenBasis, coeffs: np.ndarray, kappa: float) -> dict:
    """Standard observable set on a (..., n_modes) stack of states."""
    lam = basis.eigenvalues[1:]
    c0 = coeffs[..., 0]
    tail = coeffs[..., 1:]
    semi1 = np.sqrt(np.sum(lam * tail**2, axis=-1))
    semik = np.sqrt(np.sum(lam**kappa * tail**2, axis=-1))
    l4, l6, pot = _grid_observables(basis, coeffs)
    return {
        "norm_H": np.linalg.norm(coeffs, axis=-1),
        "seminorm_1": semi1,
        "norm_kappa": np.sqrt(semik**2 + c0**2),
        "norm_L4": l4,
        "norm_L6": l6,
        "mass": c0,
        "energy": 0.5 * semi1**2 + pot,
    }


def _run_paths(
    basis: EigenBasis,
    model: NoiseModel,
    config: SchemeConfig,
    path_seeds,
    initial: InitialData,
    record_steps,
):
    """Advance one chunk of paths; returns (times, states, iters, newton)."""
    P = len(path_seeds)
    c0 = np.stack([initial.sample(basis, s) for s in path_seeds])
    dW = np.stack(
        [
            increments(
                BrownianSkeleton.generate(s, config.M, basis.n_modes - 1, config.T),
                model,
                basis,
                config.M,
                config.N,
            )
            for s in path_seeds
        ]
    )
    return run_scheme_batch(basis, config, c0, dW, record_steps)


def _resolve_path_seeds(seed, n_paths, path_seeds):
    if path_seeds is not None:
        seeds = [int(s) for s in path_seeds]
        if len(seeds) != n_paths:
            raise ValueError("path_seeds length must equal n_paths")
        return seeds
    return [derive_path_seed(seed, i) for i in range(n_paths)]


def ensemble_states(
    basis: EigenBasis,
    model: NoiseModel,
    config: SchemeConfig,
    seed: int,
    n_paths: int,
    initial: InitialData,
    record_steps=None,
    workers: int = 1,
    path_seeds=None,
):
    """All recorded states of an ensemble: (times, (P, R, n_modes), iters,
    newton flags).  Path i runs from seed xor i unless seeds are overridden.
    """
    seeds = _resolve_path_seeds(seed, n_paths, path_seeds)
    chunks = [seeds[lo : lo + _CHUNK] for lo in range(0, n_paths, _CHUNK)]

    def work(chunk):
        return _run_paths(basis, model, config, chunk, initial, record_steps)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    times = parts[0][0]
    states = np.concatenate([p[1] for p in parts], axis=0)
    iters = np.concatenate([p[2] for p in parts], axis=0)
    newton = np.concatenate([p[3] for p in parts], axis=0)
    return times, states, iters, newton


def simulate_path(
    basis: EigenBasis,
    model: NoiseModel,
    config: SchemeConfig,
    seed: int,
    initial: InitialData,
    thin: int = 1,
    keep_fields: bool = False,
) -> Trajectory:
    """One deterministic path: same seed and config, same observables."""
    if thin < 1:
        raise ValueError(f"thin must be >= 1, got {thin}")
    record = np.unique(np.append(np.arange(0, config.M + 1, thin), config.M))
    times, states, iters, newton = _run_paths(
        basis, model, config, [int(seed)], initial, record
    )
    kappa = observable_kappa(model, basis)
    obs = compute_observables(basis, states[0], kappa)
    return Trajectory(
        times=times,
        observables=obs,
        iterations=iters[0],
        used_newton=newton[0],
        fields=states[0] if keep_fields else None,
        kappa=kappa,
        seed=int(seed),
        config=config,
    )


def _jackknife_se_mean(x: np.ndarray) -> np.ndarray:
    """Jackknife standard error of the mean over axis 0."""
    n = x.shape[0]
    if n < 2:
        return np.zeros(x.shape[1:])
    total = np.sum(x, axis=0)
    loo = (total - x) / (n - 1)
    center = np.mean(loo, axis=0)
    return np.sqrt((n - 1) / n * np.sum((loo - center) ** 2, axis=0))


@dataclass
class MomentReport:
    """Per-time Monte Carlo moments of the kappa norm with jackknife bars."""

    times: np.ndarray
    p_list: tuple
    moments: dict
    stderr: dict
    kappa: float
    n_paths: int
    seed: int


def ensemble_moments(
    basis: EigenBasis,
    model: NoiseModel,
    config: SchemeConfig,
    seed: int,
    n_paths: int,
    initial: InitialData,
    p_list=(2, 4, 6),
    record_steps=None,
    workers: int = 1,
    path_seeds=None,
) -> MomentReport:
    """Monte Carlo means of the kappa-norm powers along the time grid.

    States are reduced chunk by chunk to per-path norms, then averaged in one
    pairwise pass over the fully assembled path axis.
    """
    seeds = _resolve_path_seeds(seed, n_paths, path_seeds)
    kappa = observable_kappa(model, basis)
    chunks = [seeds[lo : lo + _CHUNK] for lo in range(0, n_paths, _CHUNK)]

    def work(chunk):
        times, states, _, _ = _run_paths(
            basis, model, config, chunk, initial, record_steps
        )
        lam = basis.eigenvalues[1:]
        norm2 = np.sum(lam**kappa * states[..., 1:] ** 2, axis=-1) + states[..., 0] ** 2
        return times, np.sqrt(norm2)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    times = parts[0][0]
    norms = np.concatenate([p[1] for p in parts], axis=0)  # (P, R)
    moments = {}
    stderr = {}
    for p in p_list:
        powd = norms**p
        moments[p] = np.mean(powd, axis=0)
        stderr[p] = _jackknife_se_mean(powd)
    return MomentReport(
        times=times,
        p_list=tuple(p_list),
        moments=moments,
        stderr=stderr,
        kappa=kappa,
        n_paths=n_paths,
        seed=int(seed),
    )


def holder_probe(
    basis: EigenBasis,
    times: np.ndarray,
    states: np.ndarray,
    beta: float,
    p: float = 2.0,
    gamma: float | None = None,
    max_starts: int = 256,
    min_gap_ratio: float = 100.0,
) -> dict:
    """Regress the temporal Hoelder exponent of order-beta increments.

    states is (P, R, n_modes) on a uniform time grid.  For each dyadic gap g
    the probe averages || X(t + g k) - X(t) ||_beta^p over paths and start
    times, then fits log moment against log(g k); the reported exponent is
    slope / p.  The dyadic gap set must span at least ``min_gap_ratio``
    between the smallest and largest gap, two decades by default.
    """
    times = np.asarray(times, dtype=float)
    R = times.shape[0]
    if R < 3:
        raise ValueError("need at least 3 time records")
    dt = np.diff(times)
    k = dt[0]
    if np.max(np.abs(dt - k)) > 1e-9 * max(times[-1], 1.0):
        raise ValueError("the holder probe needs a uniform time grid")
    M = R - 1
    gaps = []
    g = 1
    while g <= M // 2:
        gaps.append(g)
        g *= 2
    if not gaps or gaps[-1] / gaps[0] < min_gap_ratio:
        raise ValueError(
            f"dyadic gaps span ratio {gaps[-1] / gaps[0] if gaps else 0:.0f}, "
            f"need >= {min_gap_ratio:.0f}; use a finer time grid"
        )
    lam = basis.eigenvalues[1:]
    weights = lam**beta
    moments = []
    ses = []
    for g in gaps:
        stride = max(1, (R - g) // max_starts)
        starts = np.arange(0, R - g, stride)
        diff = states[:, starts + g, :] - states[:, starts, :]
        norm2 = np.sum(weights * diff[..., 1:] ** 2, axis=-1) + diff[..., 0] ** 2
        vals = norm2 ** (p / 2.0)
        per_path = np.mean(vals, axis=1)
        moments.append(float(np.mean(per_path)))
        ses.append(float(_jackknife_se_mean(per_path[:, None])[0]))
    slope, slope_se, _ = fit_rate(np.array(gaps) * k, moments, ses)
    row = {
        "beta": float(beta),
        "p": float(p),
        "exponent": slope / p,
        "exponent_se": slope_se / p,
        "gaps": [float(g * k) for g in gaps],
        "moments": moments,
        "stderrs": ses,
    }
    if gamma is not None:
        row["expected"] = min(0.5, (gamma - beta) / 4.0)
    return row


# ---------------------------------------------------------------------------
# persistence

_FIELD_HEADER = struct.Struct("<QQQQ")


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Plain CSV: one row per recorded time, fixed column order and float
    formatting so identical runs serialize byte-identically."""
    names = [
        "norm_H",
        "seminorm_1",
        "norm_kappa",
        "norm_L4",
        "norm_L6",
        "mass",
        "energy",
    ]
    M = traj.iterations.shape[0]
    steps = np.rint(traj.times / traj.config.k).astype(int)
    with open(path, "w", newline="") as fh:
        fh.write("t," + ",".join(names) + ",iterations\n")
        prev = 0
        for i, t in enumerate(traj.times):
            row = [f"{t:.17g}"]
            row += [f"{traj.observables[n][i]:.17g}" for n in names]
            upto = min(int(steps[i]), M)
            row.append(str(int(np.sum(traj.iterations[prev:upto]))))
            prev = upto
            fh.write(",".join(row) + "\n")


def save_fields(basis: EigenBasis, times, coeffs, path) -> None:
    """Binary dump: header (dim, modes_per_axis, n_records, n_modes), the box
    lengths, then times and row-major coefficients, all little-endian
    doubles."""
    times = np.asarray(times, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (times.shape[0], basis.n_modes):
        raise ValueError("coeffs must be (n_records, n_modes)")
    with open(path, "wb") as fh:
        fh.write(
            _FIELD_HEADER.pack(
                basis.dim, basis.modes_per_axis, times.shape[0], basis.n_modes
            )
        )
        fh.write(np.asarray(basis.lengths, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(coeffs, dtype="<f8").tobytes())


def load_fields(path):
    """Inverse of save_fields: ((dim, modes_per_axis, lengths), times, coeffs)."""
    with open(path, "rb") as fh:
        head = fh.read(_FIELD_HEADER.size)
        if len(head) != _FIELD_HEADER.size:
            raise ValueError(f"truncated field dump {path}")
        dim, modes, n_rec, n_modes = _FIELD_HEADER.unpack(head)
        lengths = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        times = np.frombuffer(fh.read(8 * n_rec), dtype="<f8")
        body = fh.read(8 * n_rec * n_modes)
    if len(body) != 8 * n_rec * n_modes:
        raise ValueError(f"field dump {path} payload is truncated")
    coeffs = np.frombuffer(body, dtype="<f8").reshape(n_rec, n_modes)
    meta = (int(dim), int(modes), tuple(float(L) for L in lengths))
    return meta, times.astype(float), coeffs.astype(float)
