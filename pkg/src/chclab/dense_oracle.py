"""Slow reference implementation used to cross-check the spectral solver.

Everything here is deliberately written against the grain of the main code
path: quadrature is Gauss-Legendre instead of the midpoint cosine rule, basis
functions are evaluated from their closed forms in explicit loops, operator
matrices are assembled densely from the weak form, and Jacobians come from
finite differences.  It only makes sense at very small mode counts; the size
guard enforces that.
"""

from __future__ import annotations

import numpy as np

from .spectral import EigenBasis

__all__ = [
    "NonConvergence",
    "dense_laplacian",
    "oracle_F",
    "oracle_step",
    "oracle_run",
]

_MAX_ORACLE_MODES = 6  # flattened truncation index; dense solves stop here


class NonConvergence(RuntimeError):
    """The damped dense Newton solve failed to reach its tolerance."""


def _gauss_axis(L: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) * (L / 2.0), w * (L / 2.0)


def _axis_factor(j: int, L: float, x: np.ndarray) -> np.ndarray:
    if j == 0:
        return np.full_like(x, 1.0 / np.sqrt(L))
    return np.sqrt(2.0 / L) * np.cos(j * np.pi * x / L)


def _axis_factor_deriv(j: int, L: float, x: np.ndarray) -> np.ndarray:
    if j == 0:
        return np.zeros_like(x)
    return -np.sqrt(2.0 / L) * (j * np.pi / L) * np.sin(j * np.pi * x / L)


def _tensor_nodes(basis: EigenBasis, n_per_axis: int):
    axes = [_gauss_axis(L, n_per_axis) for L in basis.lengths]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    weights = axes[0][1]
    for a in axes[1:]:
        weights = np.multiply.outer(weights, a[1])
    points = np.stack([g.ravel() for g in grids], axis=1)
    return points, weights.ravel()


def _mode_values(basis: EigenBasis, j: int, points: np.ndarray) -> np.ndarray:
    multi = basis.multi_indices[j]
    vals = np.ones(points.shape[0])
    for ax in range(basis.dim):
        vals = vals * _axis_factor(multi[ax], basis.lengths[ax], points[:, ax])
    return vals


def _gauss_count(basis: EigenBasis) -> int:
    # plenty of headroom for quartic products of retained cosines
    return 8 * basis.modes_per_axis + 21


def dense_laplacian(basis: EigenBasis, N: int) -> np.ndarray:
    """Stiffness matrix of the retained modes, assembled from the weak form.

    Entry (i, j) is the quadrature integral of grad e_i . grad e_j, which for
    an honest implementation must come out diagonal with the eigenvalues on
    the diagonal; callers use it to audit the eigendata.
    """
    if N > _MAX_ORACLE_MODES:
        raise ValueError(f"dense oracle is limited to N <= {_MAX_ORACLE_MODES}")
    points, weights = _tensor_nodes(basis, _gauss_count(basis))
    n = N + 1
    grads = np.zeros((n, basis.dim, points.shape[0]))
    for j in range(n):
        multi = basis.multi_indices[j]
        for ax in range(basis.dim):
            g = _axis_factor_deriv(multi[ax], basis.lengths[ax], points[:, ax])
            for other in range(basis.dim):
                if other != ax:
                    g = g * _axis_factor(
                        multi[other], basis.lengths[other], points[:, other]
                    )
            grads[j, ax] = g
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for ax in range(basis.dim):
                acc += float(np.dot(weights, grads[i, ax] * grads[j, ax]))
            A[i, j] = A[j, i] = acc
    return A


def oracle_F(basis: EigenBasis, coeffs: np.ndarray, N: int | None = None) -> np.ndarray:
    """Projected u^3 - u by direct Gauss quadrature, mode by mode.

    Accumulation runs over quadrature points in a plain loop-free dot per
    mode, a different order than the transform pipeline, so agreement with
    the pseudospectral path is a real consistency statement.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if N is None:
        N = coeffs.shape[0] - 1
    points, weights = _tensor_nodes(basis, _gauss_count(basis))
    u = np.zeros(points.shape[0])
    for j in range(N + 1):
        if coeffs[j] != 0.0:
            u = u + coeffs[j] * _mode_values(basis, j, points)
    fvals = u**3 - u
    out = np.zeros(N + 1)
    for j in range(N + 1):
        out[j] = float(np.dot(weights, fvals * _mode_values(basis, j, points)))
    return out


def _oracle_residual(basis, c, c_prev, dW, k, N, nonlinear):
    lam = basis.eigenvalues[: N + 1]
    r = c - c_prev + k * lam**2 * c - dW
    if nonlinear:
        r = r + k * lam * oracle_F(basis, c, N)
    return r


def oracle_step(
    basis: EigenBasis,
    c_prev: np.ndarray,
    dW: np.ndarray,
    k: float,
    N: int,
    nonlinear: bool = True,
    tol: float = 1e-13,
    max_iters: int = 200,
) -> np.ndarray:
    """One implicit step solved by damped dense Newton with line search.

    Works on reduced coefficient vectors of length N + 1 and uses a central
    finite-difference Jacobian, nothing shared with the production solver.
    """
    if N > _MAX_ORACLE_MODES:
        raise ValueError(f"dense oracle is limited to N <= {_MAX_ORACLE_MODES}")
    c_prev = np.asarray(c_prev, dtype=float)[: N + 1]
    dW = np.asarray(dW, dtype=float)[: N + 1]
    c = c_prev.copy()
    res = _oracle_residual(basis, c, c_prev, dW, k, N, nonlinear)
    rn = float(np.linalg.norm(res))
    for _ in range(max_iters):
        if rn <= tol:
            return c
        J = np.zeros((N + 1, N + 1))
        for i in range(N + 1):
            h = 1e-7 * max(1.0, abs(c[i]))
            cp = c.copy()
            cp[i] += h
            cm = c.copy()
            cm[i] -= h
            J[:, i] = (
                _oracle_residual(basis, cp, c_prev, dW, k, N, nonlinear)
                - _oracle_residual(basis, cm, c_prev, dW, k, N, nonlinear)
            ) / (2.0 * h)
        try:
            delta = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular finite-difference Jacobian: {exc}")
        step = 1.0
        for _ in range(40):
            trial = c + step * delta
            tres = _oracle_residual(basis, trial, c_prev, dW, k, N, nonlinear)
            trn = float(np.linalg.norm(tres))
            if trn < rn:
                c, res, rn = trial, tres, trn
                break
            step *= 0.5
        else:
            raise NonConvergence(
                f"line search stalled at residual {rn:.3e}"
            )
    if rn > tol:
        raise NonConvergence(f"no convergence after {max_iters} iterations")
    return c


def oracle_run(
    basis: EigenBasis,
    c0: np.ndarray,
    dW_all: np.ndarray,
    k: float,
    N: int,
    nonlinear: bool = True,
) -> np.ndarray:
    """Full dense trajectory; returns (M + 1, N + 1) coefficients."""
    M = dW_all.shape[0]
    out = np.zeros((M + 1, N + 1))
    out[0] = np.asarray(c0, dtype=float)[: N + 1]
    for m in range(1, M + 1):
        out[m] = oracle_step(basis, out[m - 1], dW_all[m - 1], k, N, nonlinear)
    return out
