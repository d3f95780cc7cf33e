"""Ensemble driver determinism, observable bookkeeping, moment curves, the
temporal regularity probe, and the serialization formats."""

import numpy as np
import pytest

from chclab import (
    BrownianSkeleton,
    NoiseModel,
    SchemeConfig,
    build_basis,
    ensemble_moments,
    ensemble_states,
    holder_probe,
    increments,
    load_fields,
    observable_kappa,
    save_fields,
    simulate_path,
    trajectory_to_csv,
)
from chclab.presets import InitialData
from chclab.simulator import compute_observables


@pytest.fixture(scope="module")
def basis():
    return build_basis(1, 8)


ZERO_NOISE = NoiseModel.custom(np.zeros(9))


def _cfg(**kw):
    kw.setdefault("N", 8)
    kw.setdefault("M", 8)
    kw.setdefault("T", 0.008)
    kw.setdefault("k0_guard", False)
    return SchemeConfig(**kw)


def test_observable_kappa_values(basis):
    # d = 1 caps the recorded norm order at d/2 + 1/4
    assert observable_kappa(NoiseModel.trace_class_power(2.5), basis) == 0.75
    assert observable_kappa(NoiseModel.white(), basis) == 0.75
    basis2 = build_basis(2, 4)
    assert observable_kappa(NoiseModel.trace_class_power(2.0), basis2) == 1.25


def test_zero_data_zero_noise_is_quiescent(basis):
    _, states, iters, newton = ensemble_states(
        basis, ZERO_NOISE, _cfg(), seed=0, n_paths=2, initial=InitialData.zero()
    )
    assert np.all(states == 0.0)
    assert np.all(iters == 0)
    assert not np.any(newton)
    obs = compute_observables(basis, states[0], kappa=0.75)
    for name in ("norm_H", "norm_kappa", "mass", "energy"):
        assert np.all(obs[name] == 0.0)


def test_small_amplitude_tracks_linearization(basis):
    # F'(0) = -I, so a tiny single-mode state should decay like the scalar
    # recursion x -> x / (1 + k lam^2 - k lam) up to O(eps^3) corrections
    eps = 1e-3
    cfg = _cfg(M=16, T=0.016)
    traj = simulate_path(
        basis,
        ZERO_NOISE,
        cfg,
        seed=0,
        initial=InitialData.single_mode(1, eps),
        keep_fields=True,
    )
    lam1 = basis.eigenvalues[1]
    factor = 1.0 / (1.0 + cfg.k * lam1**2 - cfg.k * lam1)
    expect = eps * factor**16
    got = traj.fields[-1, 1]
    assert abs(got - expect) < 1e-5 * expect


def test_mass_follows_mean_noise_exactly(basis):
    cfg = _cfg(M=12, T=0.012)
    model = NoiseModel.white(1.0)
    traj = simulate_path(basis, model, cfg, seed=21, initial=InitialData.zero())
    sk = BrownianSkeleton.generate(21, cfg.M, basis.n_modes - 1, cfg.T)
    dW = increments(sk, model, basis, cfg.M, cfg.N)
    walk = np.concatenate([[0.0], np.cumsum(dW[:, 0])])
    np.testing.assert_array_equal(traj.observables["mass"], walk)


def test_single_path_reproducible(basis):
    cfg = _cfg()
    model = NoiseModel.trace_class_power(2.5)
    init = InitialData.smooth_random(3.0, 0.2)
    a = simulate_path(basis, model, cfg, 5, init, keep_fields=True)
    b = simulate_path(basis, model, cfg, 5, init, keep_fields=True)
    c = simulate_path(basis, model, cfg, 6, init, keep_fields=True)
    np.testing.assert_array_equal(a.fields, b.fields)
    assert np.any(a.fields != c.fields)


def test_worker_count_does_not_change_results(basis):
    model = NoiseModel.trace_class_power(2.5)
    init = InitialData.smooth_random(3.0, 0.2)
    out = {}
    for w in (1, 4):
        t, states, iters, _ = ensemble_states(
            basis, model, _cfg(), seed=3, n_paths=40, initial=init, workers=w
        )
        out[w] = (t, states, iters)
    np.testing.assert_array_equal(out[1][1], out[4][1])
    np.testing.assert_array_equal(out[1][2], out[4][2])


def test_forced_path_seeds_collapse_variance(basis):
    model = NoiseModel.trace_class_power(2.5)
    _, states, _, _ = ensemble_states(
        basis,
        model,
        _cfg(),
        seed=0,
        n_paths=5,
        initial=InitialData.zero(),
        path_seeds=[7] * 5,
    )
    for p in range(1, 5):
        np.testing.assert_array_equal(states[p], states[0])


def test_path_seed_length_mismatch(basis):
    with pytest.raises(ValueError):
        ensemble_states(
            basis,
            NoiseModel.white(),
            _cfg(),
            seed=0,
            n_paths=4,
            initial=InitialData.zero(),
            path_seeds=[1, 2, 3],
        )


def test_linear_mode_variance_matches_recursion(basis):
    # with F off each mode is a discrete OU recursion whose variance after m
    # steps is k q sum_{i=1..m} g^{2i}; check two modes at 3 sigma
    cfg = _cfg(M=16, T=0.16, nonlinear=False)
    model = NoiseModel.trace_class_power(1.0)
    _, states, _, _ = ensemble_states(
        basis, model, cfg, seed=11, n_paths=256, initial=InitialData.zero()
    )
    q = model.variances(basis)
    for j in (1, 2):
        g = 1.0 / (1.0 + cfg.k * basis.eigenvalues[j] ** 2)
        target = cfg.k * q[j] * np.sum(g ** (2 * np.arange(1, cfg.M + 1)))
        got = float(np.var(states[:, -1, j]))
        assert abs(got - target) < 3.0 * target * np.sqrt(2.0 / 255)


def test_moment_report_matches_states(basis):
    model = NoiseModel.trace_class_power(2.5)
    init = InitialData.smooth_random(3.0, 0.2)
    cfg = _cfg()
    rep = ensemble_moments(basis, model, cfg, seed=9, n_paths=24, initial=init)
    t, states, _, _ = ensemble_states(
        basis, model, cfg, seed=9, n_paths=24, initial=init
    )
    np.testing.assert_array_equal(rep.times, t)
    kappa = rep.kappa
    lam = basis.eigenvalues[1:]
    norm2 = np.sum(lam**kappa * states[..., 1:] ** 2, axis=-1) + states[..., 0] ** 2
    for p in (2, 4, 6):
        np.testing.assert_allclose(
            rep.moments[p], np.mean(norm2 ** (p / 2.0), axis=0), rtol=1e-13
        )
        assert np.all(rep.stderr[p] >= 0.0)


def test_holder_probe_recovers_brownian_half(basis):
    rng = np.random.default_rng(17)
    P, R = 64, 1025
    k = 1.0 / (R - 1)
    times = np.linspace(0.0, 1.0, R)
    states = np.zeros((P, R, basis.n_modes))
    states[:, 1:, 1] = np.cumsum(
        np.sqrt(k) * rng.standard_normal((P, R - 1)), axis=1
    )
    row = holder_probe(basis, times, states, beta=0.0, gamma=4.0)
    assert row["expected"] == 0.5
    assert abs(row["exponent"] - 0.5) < 0.05
    assert row["exponent_se"] < 0.05
    assert len(row["gaps"]) == len(row["moments"]) == len(row["stderrs"])


def test_holder_probe_validations(basis):
    states = np.zeros((2, 17, basis.n_modes))
    with pytest.raises(ValueError, match="ratio"):
        holder_probe(basis, np.linspace(0, 1, 17), states, beta=0.0)
    with pytest.raises(ValueError, match="uniform"):
        holder_probe(
            basis, np.linspace(0, 1, 1025) ** 2, np.zeros((2, 1025, 9)), beta=0.0
        )
    with pytest.raises(ValueError):
        holder_probe(basis, np.array([0.0, 1.0]), np.zeros((2, 2, 9)), beta=0.0)


def test_trajectory_csv_stable_bytes(tmp_path, basis):
    model = NoiseModel.trace_class_power(2.5)
    cfg = _cfg(M=10, T=0.01)
    init = InitialData.smooth_random(3.0, 0.2)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    trajectory_to_csv(simulate_path(basis, model, cfg, 4, init, thin=2), pa)
    trajectory_to_csv(simulate_path(basis, model, cfg, 4, init, thin=2), pb)
    a = pa.read_bytes()
    assert a == pb.read_bytes()
    header = a.decode().splitlines()[0]
    assert header.startswith("t,norm_H,")
    assert header.endswith(",iterations")
    assert len(a.decode().splitlines()) == 1 + 6  # t=0, thinned evens, final


def test_fields_round_trip(tmp_path, basis):
    rng = np.random.default_rng(19)
    times = np.linspace(0.0, 0.5, 6)
    coeffs = rng.standard_normal((6, basis.n_modes))
    path = tmp_path / "fields.bin"
    save_fields(basis, times, coeffs, path)
    meta, t_back, c_back = load_fields(path)
    assert meta == (1, 8, (1.0,))
    np.testing.assert_array_equal(t_back, times)
    np.testing.assert_array_equal(c_back, coeffs)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_fields(path)


def test_thinning_keeps_endpoints(basis):
    cfg = _cfg(M=10, T=0.01)
    traj = simulate_path(
        basis, ZERO_NOISE, cfg, 0, InitialData.zero(), thin=4
    )
    np.testing.assert_allclose(
        traj.times, np.array([0, 4, 8, 10]) * cfg.k, atol=1e-15
    )
