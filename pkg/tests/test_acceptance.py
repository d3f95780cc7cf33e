"""Desk-scale acceptance ladder for the whole laboratory.

One test per claim in the package's acceptance checklist (see README).  Each
test prints a single summary line with the measured quantity, its target
band, and PASS/FAIL; the numeric experiments pin every parameter including
seeds, so reruns are bit-for-bit repeatable.

The rate experiments keep each ladder inside its asymptotic window:
- time ladders run to T = 1/16 so the coarsest level still resolves the
  slowest mean-free mode (k lam_1^2 < 1 at M = 16),
- space ladders run a few fine steps from initial data whose spectral decay
  matches the noise tail, so the measured error is the projection tail and
  the backward-Euler filter never distorts the retained modes.
"""

import sys
import time

import numpy as np
import pytest

from chclab import (
    BrownianSkeleton,
    LadderSpec,
    NoiseModel,
    SchemeConfig,
    build_basis,
    certify_gamma,
    effective_gamma,
    ensemble_states,
    galerkin_rate_study,
    holder_probe,
    increments,
    strong_error_study,
    verify_discrete_smoothing,
    verify_smoothing_bounds,
)
from chclab.dense_oracle import oracle_run
from chclab.nonlinearity import check_structure_conditions
from chclab.noise import balanced_sum
from chclab.presets import InitialData
from chclab.simulator import simulate_path
from chclab.spectral import SpectralField
from chclab.stepper import run_scheme_batch

N_PATHS = 64


def _report(name, ok, detail):
    print(f"[{name}] {detail} -> {'PASS' if ok else 'FAIL'}",
          file=sys.__stdout__, flush=True)
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def basis128():
    return build_basis(1, 128)


@pytest.fixture(scope="module")
def smooth_model():
    return NoiseModel.trace_class_power(2.5)  # certifies gamma = 4 exactly


@pytest.fixture(scope="module")
def matched_initial():
    return InitialData.smooth_random(3.95, 0.3)


def test_01_temporal_rate_smooth_noise(basis128, smooth_model, matched_initial):
    started = time.perf_counter()
    spec = LadderSpec(
        axis="time",
        levels=tuple((M, 128) for M in (16, 32, 64, 128, 256, 512)),
        reference=(4096, 128),
        n_paths=N_PATHS,
        p=2.0,
        T=0.0625,
        seed=0,
        gamma_requested=effective_gamma(certify_gamma(smooth_model, basis128)),
    )
    rep = strong_error_study(spec, basis128, smooth_model, matched_initial, workers=4)
    elapsed = time.perf_counter() - started
    ok = 0.85 <= rep.slope <= 1.15 and elapsed < 600.0
    _report(
        "temporal rate, smooth noise",
        ok,
        f"slope {rep.slope:.3f} +/- {rep.slope_se:.3f} in [0.85, 1.15], "
        f"{elapsed:.0f}s",
    )


def test_02_spatial_rate_smooth_noise(basis128, smooth_model, matched_initial):
    started = time.perf_counter()
    spec = LadderSpec(
        axis="space",
        levels=tuple((4096, N) for N in (4, 8, 16, 32, 64)),
        reference=(4096, 128),
        n_paths=N_PATHS,
        p=2.0,
        T=1e-6,
        seed=0,
        gamma_requested=effective_gamma(certify_gamma(smooth_model, basis128)),
    )
    rep = strong_error_study(spec, basis128, smooth_model, matched_initial, workers=4)
    elapsed = time.perf_counter() - started
    ok = -2.3 <= rep.slope <= -1.7 and elapsed < 600.0
    _report(
        "spatial rate, smooth noise",
        ok,
        f"slope {rep.slope:.3f} +/- {rep.slope_se:.3f} in [-2.3, -1.7], "
        f"{elapsed:.0f}s",
    )


def test_03_rough_noise_rate_shift(basis128):
    model = NoiseModel.white(1.0)
    gamma = effective_gamma(certify_gamma(model, basis128))
    init = InitialData.smooth_random(gamma, 0.3)
    time_spec = LadderSpec(
        axis="time",
        levels=tuple((M, 128) for M in (16, 32, 64, 128, 256, 512)),
        reference=(4096, 128),
        n_paths=N_PATHS,
        T=0.0625,
        seed=0,
        gamma_requested=gamma,
    )
    t_rep = strong_error_study(time_spec, basis128, model, init, workers=4)
    space_spec = LadderSpec(
        axis="space",
        levels=tuple((4096, N) for N in (4, 8, 16, 32, 64)),
        reference=(4096, 128),
        n_paths=N_PATHS,
        T=1e-6,
        seed=0,
        gamma_requested=gamma,
    )
    s_rep = strong_error_study(space_spec, basis128, model, init, workers=4)
    ok_t = 0.25 <= t_rep.slope <= 0.48
    ok_s = -0.95 <= s_rep.slope <= -0.5
    _report(
        "rough-noise rate shift",
        ok_t and ok_s,
        f"temporal {t_rep.slope:.3f} in [0.25, 0.48], "
        f"spatial {s_rep.slope:.3f} in [-0.95, -0.5]",
    )


def test_04_galerkin_semidiscrete_rate(smooth_model):
    basis = build_basis(1, 64)
    gamma = effective_gamma(certify_gamma(smooth_model, basis))
    rep = galerkin_rate_study(
        basis,
        smooth_model,
        InitialData.smooth_random(3.95, 0.3),
        levels_N=(4, 8, 16, 32),
        N_ref=64,
        M_time=2048,
        workers=4,
        n_paths=N_PATHS,
        T=2e-6,
        seed=0,
        gamma_requested=gamma,
    )
    lo, hi = -gamma / 2.0 - 0.3, -gamma / 2.0 + 0.3
    ok = lo <= rep.slope <= hi
    _report(
        "galerkin semidiscrete rate",
        ok,
        f"slope {rep.slope:.3f} +/- {rep.slope_se:.3f} in [{lo:.3f}, {hi:.3f}]",
    )


def test_05_holder_regularity_probes():
    basis = build_basis(1, 64)
    model = NoiseModel.trace_class_power(0.5)  # certifies gamma = 2 exactly
    assert certify_gamma(model, basis) == 2.0
    gamma = effective_gamma(2.0)

    # beta = 0 wants the fully resolved small-k regime
    t_fine, states_fine, _, _ = ensemble_states(
        basis, model, SchemeConfig(N=64, M=1024, T=0.01), seed=0,
        n_paths=N_PATHS, initial=InitialData.zero(), workers=4,
    )
    row0 = holder_probe(basis, t_fine, states_fine, beta=0.0, gamma=gamma)

    # beta = gamma is log-critical: every dyadic gap must be stationary, so
    # this ensemble uses steps long enough to decorrelate every mode
    t_coarse, states_coarse, _, _ = ensemble_states(
        basis, model, SchemeConfig(N=64, M=512, T=10.0), seed=0,
        n_paths=N_PATHS, initial=InitialData.zero(), workers=4,
    )
    rowg = holder_probe(basis, t_coarse, states_coarse, beta=2.0, gamma=gamma)

    ok0 = 0.4 <= row0["exponent"] <= 0.6
    okg = -0.1 <= rowg["exponent"] <= 0.1
    _report(
        "holder regularity",
        ok0 and okg,
        f"beta=0 exponent {row0['exponent']:.4f} in [0.4, 0.6], "
        f"beta=gamma exponent {rowg['exponent']:.4f} in [-0.1, 0.1]",
    )


def test_06_dense_oracle_agreement():
    basis = build_basis(1, 8)
    model = NoiseModel.trace_class_power(2.5)
    init = InitialData.smooth_random(3.95, 0.3)
    N, M, T = 3, 10, 0.1
    cfg = SchemeConfig(N=N, M=M, T=T, solver_tol=1e-13, k0_guard=False)
    worst = 0.0
    for seed in range(100):
        sk = BrownianSkeleton.generate(seed, M, basis.n_modes - 1, T)
        dW = increments(sk, model, basis, M, N)
        c0 = init.sample(basis, seed)
        _, out, _, _ = run_scheme_batch(basis, cfg, c0[None, :], dW[None, :, :])
        dense = oracle_run(basis, c0, dW, cfg.k, N)
        worst = max(worst, float(np.max(np.abs(out[0, :, : N + 1] - dense))))
    ok = worst <= 1e-8
    _report("dense oracle agreement", ok,
            f"sup discrepancy {worst:.3e} <= 1e-08 over 100 seeds")


def test_07_noise_exactness():
    basis = build_basis(1, 16)
    model = NoiseModel.trace_class_power(1.0, q0=1.0)
    q = model.variances(basis)

    # chi^2: 10^4 scaled increment squares must average 1 within 3 sigma
    n = 10_000
    sk = BrownianSkeleton.generate(2024, 2500, basis.n_modes - 1, 2500.0 / 8.0)
    dW = increments(sk, model, basis, 2500, basis.n_modes - 1)
    samples = (dW[:, :4] ** 2 / (sk.k_fine * q[:4])).ravel()
    dev = abs(float(np.mean(samples)) - 1.0)
    band = 3.0 * np.sqrt(2.0 / n)

    # refinement coupling: pairwise sums and whole-path totals telescope
    # without any floating-point drift at all
    sk2 = BrownianSkeleton.generate(7, 64, basis.n_modes - 1, 1.0)
    exact = True
    total = balanced_sum(increments(sk2, model, basis, 64, basis.n_modes - 1), axis=0)
    for level in (32, 16, 8, 4, 2, 1):
        fine = increments(sk2, model, basis, 2 * level, basis.n_modes - 1)
        coarse = increments(sk2, model, basis, level, basis.n_modes - 1)
        exact &= bool(np.array_equal(fine[0::2] + fine[1::2], coarse))
        exact &= bool(np.array_equal(balanced_sum(coarse, axis=0), total))

    ok = samples.size == n and dev <= band and exact
    _report(
        "noise exactness",
        ok,
        f"chi^2 deviation {dev:.4f} <= {band:.4f} at 10^4 samples, "
        f"telescoping bit-exact: {exact}",
    )


def test_08_structure_conditions_and_mass_rule():
    basis = build_basis(1, 32)
    rng = np.random.default_rng(31337)
    pairs = []
    for _ in range(100):
        scale = rng.uniform(0.1, 3.0)
        u = SpectralField(basis, scale * rng.standard_normal(basis.n_modes))
        v = SpectralField(basis, scale * rng.standard_normal(basis.n_modes))
        pairs.append((u, v))
    rep = check_structure_conditions(pairs)
    violations = rep["violations"]

    model = NoiseModel.trace_class_power(2.5, q0=0.0)
    traj = simulate_path(
        basis,
        model,
        SchemeConfig(N=32, M=64, T=0.064, k0_guard=False),
        seed=5,
        initial=InitialData.smooth_random(3.95, 0.5),
    )
    drift = float(np.max(np.abs(traj.observables["mass"] - traj.observables["mass"][0])))
    per_step = drift / 64.0

    ok = violations == 0 and per_step <= 1e-14
    _report(
        "structure conditions and mass rule",
        ok,
        f"violations {violations}/100 pairs, mass drift {per_step:.2e}/step",
    )


def test_09_smoothing_bound_suite():
    basis = build_basis(1, 16)
    lam1 = float(basis.eigenvalues[1])
    # include the analytic maximiser of t^(1/2) lam e^(-t lam^2)
    t_grid = np.sort(np.append(np.logspace(-4, 0, 13), 1.0 / (2.0 * lam1**2)))
    rows = verify_smoothing_bounds(basis, t_grid)
    finite = all(np.isfinite(r["constant"]) for r in rows)
    mu1 = [r for r in rows if r["bound"] == "decay" and r["exponent"] == 1.0][0]
    spot = abs(mu1["constant"] - (2.0 * np.e) ** -0.5)

    one = build_basis(1, 1, (np.pi,))  # single retained mode, lam = 1
    drows = verify_discrete_smoothing(one, (1e-1, 1e-2, 1e-3, 1e-4))
    dfinite = all(np.isfinite(r["constant"]) for r in drows)
    geo = max(
        r["constant"] for r in drows if r["bound"] == "discrete_square_sum"
    )

    ok = finite and dfinite and spot < 1e-12 and geo <= 1.0
    _report(
        "smoothing bound suite",
        ok,
        f"all constants finite, mu=1 spot gap {spot:.1e}, "
        f"single-mode square sum {geo:.3f} <= 1",
    )
