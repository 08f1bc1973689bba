"""Truncated zonal kernels on the sphere and Gram-matrix PSD checks."""

from __future__ import annotations

import numpy as np

from .errors import AccuracyError, DomainError, ShapeError
from .harmonics import HarmonicBasis, get_basis, harmonic_space_dim, sphere_surface, zonal_table


class ZonalKernel:
    """kappa(t) = sum_l a_l P_l(t), with P_l the normalised zonal polynomial.

    With default coefficients ``a_l = N(k, l) / |S^{k-1}|`` the kernel equals
    ``Phi(x) . Phi(y)`` exactly.  Negative coefficients are accepted only with
    ``allow_negative=True`` (used to demonstrate that non-negativity matters).
    """

    def __init__(self, basis: HarmonicBasis, coefficients=None, allow_negative: bool = False):
        self.basis = basis
        if coefficients is None:
            coefficients = default_coefficients(basis.k, basis.L)
        a = np.array(coefficients, dtype=float)
        if a.shape != (basis.L + 1,):
            raise ShapeError(f"expected {basis.L + 1} coefficients, got shape {a.shape}")
        if not allow_negative and np.any(a < 0):
            raise DomainError("zonal kernel coefficients must be non-negative")
        a.flags.writeable = False
        self.coefficients = a

    @classmethod
    def default(cls, k: int, L: int) -> "ZonalKernel":
        return cls(get_basis(k, L))

    def __call__(self, t):
        return kernel_value(self, t)

    def derivative(self, t):
        """d kappa / dt."""
        t = _check_cos(t)
        _, d = zonal_table(self.basis.k, self.basis.L, t, derivative=True)
        return np.tensordot(self.coefficients, d, axes=1)


def default_coefficients(k: int, L: int) -> np.ndarray:
    s = sphere_surface(k)
    return np.array([harmonic_space_dim(k, l) / s for l in range(L + 1)])


def _check_cos(t):
    t = np.asarray(t, dtype=np.result_type(t, float))
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise DomainError("kernel argument must lie in [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def kernel_value(kern: ZonalKernel, t):
    t = _check_cos(t)
    return np.tensordot(kern.coefficients, zonal_table(kern.basis.k, kern.basis.L, t), axes=1)


def gram_matrix(kern: ZonalKernel, points) -> np.ndarray:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[-1] != kern.basis.k:
        raise ShapeError(f"points must have trailing dimension {kern.basis.k}, got {x.shape}")
    t = np.clip(x @ x.T, -1.0, 1.0)
    g = kernel_value(kern, t)
    return 0.5 * (g + g.T)


def feature_gram(basis: HarmonicBasis, points) -> np.ndarray:
    """F F^T with F[i] = Phi(x_i); the feature-space oracle for gram_matrix."""
    f = basis.eval(np.asarray(points, dtype=float))
    return f @ f.T


def jacobi_eigenvalues(a, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Uses the round-robin (parallel) ordering so each sweep is n-1 rounds of
    disjoint rotations that are applied simultaneously.  Returns eigenvalues
    in ascending order.
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    a = 0.5 * (a + a.T)
    m = n + (n % 2)
    rounds = _round_robin(m)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[offdiag] ** 2))
        if off <= tol * scale:
            return np.sort(a.diagonal())
        for p, q in rounds:
            keep = (p < n) & (q < n)
            p, q = p[keep], q[keep]
            apq = a[p, q]
            # Rotations whose off-diagonal is below rounding of both diagonal
            # entries cannot change anything; zero them explicitly.
            tiny = np.abs(apq) <= 1e-18 * (np.abs(a[p, p]) + np.abs(a[q, q])) + 1e-300
            if np.any(tiny):
                a[p[tiny], q[tiny]] = 0.0
                a[q[tiny], p[tiny]] = 0.0
            active = ~tiny
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # Rows then columns: A <- J^T A J with disjoint (p, q) pairs.
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c[None, :] - cq * s[None, :]
            a[:, q] = cp * s[None, :] + cq * c[None, :]
    raise AccuracyError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def _round_robin(m: int):
    """Pairings of 0..m-1 (m even) into m-1 rounds of m/2 disjoint pairs."""
    players = list(range(m))
    out = []
    for _ in range(m - 1):
        half = m // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        out.append((lo, hi))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return out


def min_eigenvalue(g) -> float:
    return float(jacobi_eigenvalues(g)[0])
