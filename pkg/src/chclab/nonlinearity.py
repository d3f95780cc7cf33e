"""Double well nonlinearity f(u) = u^3 - u, evaluated pseudospectrally.

The cube is formed pointwise on the quadrature grid and projected back onto
the retained modes.  Because the grid integrates products of four retained
modes exactly, the projected coefficients are free of aliasing error by
construction; no spectral filtering is involved.  Nothing here subtracts the
mean: the solver applies the mean-free projection where the equation demands
it, not inside the nonlinearity.
"""

from __future__ import annotations

import numpy as np

from .spectral import EigenBasis, SpectralField, coeffs_to_grid, grid_to_coeffs

__all__ = [
    "eval_F",
    "eval_F_prime_apply",
    "energy",
    "check_structure_conditions",
]


def eval_F_coeffs(basis: EigenBasis, coeffs: np.ndarray) -> np.ndarray:
    """Coefficients of the projection of u^3 - u; batch axes pass through."""
    vals = coeffs_to_grid(basis, coeffs)
    return grid_to_coeffs(basis, vals**3) - coeffs


def eval_F(u: SpectralField) -> SpectralField:
    return SpectralField(u.basis, eval_F_coeffs(u.basis, u.coeffs))


def eval_F_prime_coeffs(
    basis: EigenBasis, u_coeffs: np.ndarray, psi_coeffs: np.ndarray
) -> np.ndarray:
    """Directional derivative (3 u^2 - 1) psi, projected."""
    u_vals = coeffs_to_grid(basis, u_coeffs)
    psi_vals = coeffs_to_grid(basis, psi_coeffs)
    return grid_to_coeffs(basis, (3.0 * u_vals**2 - 1.0) * psi_vals)


def eval_F_prime_apply(u: SpectralField, psi: SpectralField) -> SpectralField:
    u._check(psi)
    return SpectralField(
        u.basis, eval_F_prime_coeffs(u.basis, u.coeffs, psi.coeffs)
    )


def energy(u: SpectralField) -> np.ndarray:
    """Ginzburg-Landau free energy: half the H^1 seminorm squared plus the
    quadrature integral of u^4/4 - u^2/2.

    Recorded as a diagnostic along trajectories; the noisy dynamics does not
    make it monotone, so nothing downstream asserts decay.
    """
    vals = coeffs_to_grid(u.basis, u.coeffs)
    axes = tuple(range(-u.basis.dim, 0))
    potential = u.basis.quad_weight * np.sum(
        0.25 * vals**4 - 0.5 * vals**2, axis=axes
    )
    return 0.5 * u.seminorm(1.0) ** 2 + potential


def check_structure_conditions(pairs) -> dict:
    """Check the three inequalities the convergence analysis leans on.

    For every pair (u, v), with all integrals taken by the shared grid
    quadrature and the sup norm read off grid values:

    * coercivity:    -(F(u), u) <= -||u||_L4^4 + ||u||^2
    * one-sided:     -(F(u) - F(v), u - v) <= ||u - v||^2
    * local Lipschitz: ||F(u) - F(v)|| <= ||u - v|| *
                       (1 + 1.5 ||u||_sup^2 + 1.5 ||v||_sup^2)

    Returns the worst slack (right side minus left side, so negative means a
    violation) per condition together with the offending pair index.  The
    violation count allows the two sides a relative rounding budget of 1e-12:
    in exact arithmetic every inequality holds identically for the cubic, but
    each side is quadratured separately, so u = v pairs land at slack of
    either sign within machine precision.  A genuine violation would point at
    an implementation bug, not at the math.
    """
    worst = {
        "coercivity": (np.inf, None),
        "one_sided": (np.inf, None),
        "lipschitz": (np.inf, None),
    }
    checked = 0
    violations = 0
    for idx, (u, v) in enumerate(pairs):
        u._check(v)
        basis = u.basis
        w = basis.quad_weight
        axes = tuple(range(-basis.dim, 0))
        uv = coeffs_to_grid(basis, u.coeffs)
        vv = coeffs_to_grid(basis, v.coeffs)

        fu = uv**3 - uv
        fv = vv**3 - vv
        l4 = w * np.sum(uv**4, axis=axes)
        l2 = w * np.sum(uv**2, axis=axes)
        rhs = -l4 + l2
        lhs = -w * np.sum(fu * uv, axis=axes)
        slack = rhs - lhs
        if slack < -1e-12 * max(1.0, abs(lhs), abs(rhs)):
            violations += 1
        if slack < worst["coercivity"][0]:
            worst["coercivity"] = (float(slack), idx)

        diff = uv - vv
        d2 = w * np.sum(diff**2, axis=axes)
        lhs = -w * np.sum((fu - fv) * diff, axis=axes)
        slack = d2 - lhs
        if slack < -1e-12 * max(1.0, abs(lhs), d2):
            violations += 1
        if slack < worst["one_sided"][0]:
            worst["one_sided"] = (float(slack), idx)

        lip = 1.0 + 1.5 * np.max(np.abs(uv)) ** 2 + 1.5 * np.max(np.abs(vv)) ** 2
        lhs = np.sqrt(w * np.sum((fu - fv) ** 2, axis=axes))
        rhs = lip * np.sqrt(d2)
        slack = rhs - lhs
        if slack < -1e-12 * max(1.0, lhs, rhs):
            violations += 1
        if slack < worst["lipschitz"][0]:
            worst["lipschitz"] = (float(slack), idx)
        checked += 1

    return {
        "pairs_checked": checked,
        "worst_slack": {k: worst[k][0] for k in worst},
        "worst_pair": {k: worst[k][1] for k in worst},
        "violations": violations,
    }
