"""Hyperspherical harmonics on S^{k-1}.

The orthonormal basis is built by the classical dimension recursion: a
degree-l harmonic on S^{k-1} is a Gegenbauer factor in the last coordinate
times a degree-j harmonic on S^{k-2} (j <= l).  Everything is carried as
*solid* harmonics, i.e. homogeneous harmonic polynomials

    H_{lm}(x) = |x|^l Y_{lm}(x / |x|),

which makes evaluation singularity-free (no angles, no division by the
radius of the lower sphere) and gives the ambient Jacobian for free.

Features are ordered by ascending degree; within a degree the order is the
recursion order (j ascending, then the lower-sphere order), so every degree
occupies one contiguous slice of the feature vector.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import DegenerateDirectionError, DomainError, ShapeError

# Tolerance on |x| - 1 accepted by routines that require unit directions.
UNIT_TOL = 1e-9


def _binom(n: int, r: int) -> int:
    if r < 0 or n < 0 or r > n:
        return 0
    return math.comb(n, r)


def harmonic_space_dim(k: int, l: int) -> int:
    """Dimension N(k, l) of the degree-l harmonic space on S^{k-1}."""
    if k < 2:
        raise DomainError(f"ambient dimension must be >= 2, got k={k}")
    if l < 0:
        raise DomainError(f"degree must be >= 0, got l={l}")
    return _binom(k + l - 1, l) - _binom(k + l - 3, l - 2)


def feature_dim(k: int, L: int) -> int:
    """D* = sum of N(k, l) for l = 0..L."""
    if L < 0:
        raise DomainError(f"truncation degree must be >= 0, got L={L}")
    return sum(harmonic_space_dim(k, l) for l in range(L + 1))


def sphere_surface(k: int) -> float:
    """Surface measure |S^{k-1}| = 2 pi^{k/2} / Gamma(k/2)."""
    if k < 2:
        raise DomainError(f"ambient dimension must be >= 2, got k={k}")
    return _sphere_surface(k)


def _sphere_surface(k: int) -> float:
    # Also valid for k = 1 (|S^0| = 2), which Funk-Hecke needs at k = 2.
    return 2.0 * math.pi ** (k / 2.0) / math.gamma(k / 2.0)


def _clamp_unit_interval(t):
    t = np.asarray(t)
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise DomainError("argument must lie in [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def gegenbauer(l: int, alpha: float, t):
    """Gegenbauer polynomial C_l^alpha(t) by the three-term recurrence."""
    if alpha <= 0:
        raise DomainError(f"Gegenbauer index must be > 0, got alpha={alpha}")
    if l < 0:
        raise DomainError(f"degree must be >= 0, got l={l}")
    t = _clamp_unit_interval(t)
    prev = np.ones_like(t, dtype=np.result_type(t, float))
    if l == 0:
        return prev
    cur = 2.0 * alpha * t
    for n in range(2, l + 1):
        prev, cur = cur, (2.0 * (n + alpha - 1) * t * cur - (n + 2 * alpha - 2) * prev) / n
    return cur


def gegenbauer_at_one(l: int, alpha: float) -> float:
    """C_l^alpha(1) = Gamma(l + 2 alpha) / (l! Gamma(2 alpha))."""
    return math.exp(math.lgamma(l + 2 * alpha) - math.lgamma(l + 1) - math.lgamma(2 * alpha))


def zonal_table(k: int, L: int, t, derivative: bool = False):
    """Normalised zonal polynomials P_l(t) = C_l^a(t)/C_l^a(1), l = 0..L.

    ``a = (k-2)/2``.  For k = 2 the Chebyshev limit T_l is used.  Returns an
    array of shape ``(L + 1,) + t.shape``; with ``derivative=True`` a pair
    (values, d/dt values).
    """
    if k < 2:
        raise DomainError(f"ambient dimension must be >= 2, got k={k}")
    t = np.asarray(t)
    vals = np.empty((L + 1,) + t.shape, dtype=np.result_type(t, float))
    ders = np.empty_like(vals) if derivative else None
    vals[0] = 1.0
    if derivative:
        ders[0] = 0.0
    if L >= 1:
        vals[1] = t
        if derivative:
            ders[1] = 1.0
    if k == 2:
        for n in range(2, L + 1):
            vals[n] = 2.0 * t * vals[n - 1] - vals[n - 2]
            if derivative:
                ders[n] = 2.0 * vals[n - 1] + 2.0 * t * ders[n - 1] - ders[n - 2]
        return (vals, ders) if derivative else vals
    # Unnormalised recurrence on C_l^a, then rescale row by row.
    a = (k - 2) / 2.0
    c_prev = np.ones_like(vals[0])
    c_cur = 2.0 * a * t
    d_prev = np.zeros_like(vals[0])
    d_cur = np.full_like(vals[0], 2.0 * a)
    for n in range(2, L + 1):
        c_next = (2.0 * (n + a - 1) * t * c_cur - (n + 2 * a - 2) * c_prev) / n
        if derivative:
            d_next = (2.0 * (n + a - 1) * (c_cur + t * d_cur) - (n + 2 * a - 2) * d_prev) / n
            d_prev, d_cur = d_cur, d_next
            ders[n] = d_cur / gegenbauer_at_one(n, a)
        c_prev, c_cur = c_cur, c_next
        vals[n] = c_cur / gegenbauer_at_one(n, a)
    return (vals, ders) if derivative else vals


def _gegenbauer_norm_sq(n: int, lam: float) -> float:
    # int_{-1}^{1} C_n^lam(t)^2 (1 - t^2)^{lam - 1/2} dt
    log_h = (
        math.log(math.pi)
        + (1.0 - 2.0 * lam) * math.log(2.0)
        + math.lgamma(n + 2.0 * lam)
        - math.lgamma(n + 1.0)
        - math.log(n + lam)
        - 2.0 * math.lgamma(lam)
    )
    return math.exp(log_h)


def as_direction(v, axis: int = -1, eps: float = 1e-12):
    """Normalise ``v`` onto the unit sphere along ``axis``.

    Zero (or sub-``eps``) norms raise :class:`DegenerateDirectionError`.
    """
    v = np.asarray(v, dtype=np.result_type(v, float))
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm < eps):
        raise DegenerateDirectionError("cannot normalise a zero-length vector onto the sphere")
    return v / norm


class HarmonicBasis:
    """Orthonormal real harmonics of degree <= L on S^{k-1}.

    Immutable after construction.  ``degree_of_feature[m]`` is the degree of
    feature ``m``; ``degree_slices[l]`` is the contiguous slice of features of
    degree ``l``.
    """

    def __init__(self, k: int, L: int):
        if k < 2:
            raise DomainError(f"ambient dimension must be >= 2, got k={k}")
        if L < 0:
            raise DomainError(f"truncation degree must be >= 0, got L={L}")
        self.k = int(k)
        self.L = int(L)
        self.dim = feature_dim(k, L)
        self.alpha = (k - 2) / 2.0
        # One plan per recursion level k' = 3..k: blocks (l, j, slice_prev, const).
        self._levels = []
        degrees = self._level2_degrees()
        for kk in range(3, k + 1):
            starts = _slice_starts(degrees, L)
            blocks = []
            new_degrees = []
            for l in range(L + 1):
                for j in range(l + 1):
                    sl = starts[j]
                    lam = j + (kk - 2) / 2.0
                    const = 1.0 / math.sqrt(_gegenbauer_norm_sq(l - j, lam))
                    blocks.append((l, j, sl, const))
                    new_degrees.extend([l] * (sl.stop - sl.start))
            self._levels.append((kk, blocks))
            degrees = np.asarray(new_degrees, dtype=np.int64)
        self.degree_of_feature = np.asarray(degrees, dtype=np.int64)
        self.degree_of_feature.flags.writeable = False
        starts = _slice_starts(self.degree_of_feature, L)
        self.degree_slices = tuple(starts[l] for l in range(L + 1))
        self.degree_counts = np.array([s.stop - s.start for s in self.degree_slices])
        assert self.degree_of_feature.size == self.dim

    def __repr__(self):
        return f"HarmonicBasis(k={self.k}, L={self.L}, dim={self.dim})"

    def _level2_degrees(self):
        degs = [0]
        for j in range(1, self.L + 1):
            degs.extend([j, j])
        return np.asarray(degs, dtype=np.int64)

    # -- evaluation -----------------------------------------------------

    def _check(self, x):
        x = np.asarray(x)
        if not np.issubdtype(x.dtype, np.floating):
            x = x.astype(float)
        if x.shape[-1:] != (self.k,):
            raise ShapeError(f"expected trailing dimension {self.k}, got shape {x.shape}")
        return x

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        """Phi(x) for unit vectors ``x`` of shape (..., k) -> (..., D*)."""
        x = self._check(x)
        norm = np.linalg.norm(x, axis=-1)
        if np.any(np.abs(norm - 1.0) > UNIT_TOL):
            raise DegenerateDirectionError("eval_basis requires points on the unit sphere")
        return self._solid(x, with_grad=False)[0]

    def eval_solid(self, x):
        """Homogeneous harmonic-polynomial extension of Phi to all of R^k."""
        return self._solid(self._check(x), with_grad=False)[0]

    def jacobian(self, x):
        """Ambient Jacobian d Phi / d x of the solid extension, shape (..., D*, k)."""
        return self._solid(self._check(x), with_grad=True)[1]

    def eval_with_jacobian(self, x):
        return self._solid(self._check(x), with_grad=True)

    def _solid(self, x, with_grad):
        lead = x.shape[:-1]
        x = x.reshape(-1, self.k)
        n = x.shape[0]
        dt = x.dtype
        L = self.L
        # Level 2: Re/Im of (x1 + i x2)^j.
        x1, x2 = x[:, 0], x[:, 1]
        re = [np.ones(n, dtype=dt)]
        im = [np.zeros(n, dtype=dt)]
        for j in range(1, L + 1):
            re.append(x1 * re[-1] - x2 * im[-1])
            im.append(x2 * re[-2] + x1 * im[-1])
        inv2pi = 1.0 / math.sqrt(2.0 * math.pi)
        invpi = 1.0 / math.sqrt(math.pi)
        cols = [np.full(n, inv2pi, dtype=dt)]
        for j in range(1, L + 1):
            cols.append(re[j] * invpi)
            cols.append(im[j] * invpi)
        vals = np.stack(cols, axis=1)
        grads = None
        if with_grad:
            # d Re z^j = j (Re z^{j-1}, -Im z^{j-1}); d Im z^j = j (Im z^{j-1}, Re z^{j-1})
            g = [np.zeros((n, 2), dtype=dt)]
            for j in range(1, L + 1):
                g.append(j * invpi * np.stack([re[j - 1], -im[j - 1]], axis=1))
                g.append(j * invpi * np.stack([im[j - 1], re[j - 1]], axis=1))
            grads = np.stack(g, axis=1)

        for kk, blocks in self._levels:
            xs = x[:, :kk]
            xl = xs[:, kk - 1]
            r2 = np.einsum("ni,ni->n", xs, xs)
            rtab = {}
            for j in range(L + 1):
                rtab[j] = _radial_gegenbauer(L - j, j + (kk - 2) / 2.0, xl, r2, xs if with_grad else None)
            out_v = []
            out_g = []
            if with_grad:
                gpad = np.concatenate([grads, np.zeros(grads.shape[:2] + (1,), dtype=dt)], axis=2)
            for l, j, sl, const in blocks:
                R, dR = rtab[j]
                Rn = R[l - j]
                prev = vals[:, sl]
                out_v.append(const * Rn[:, None] * prev)
                if with_grad:
                    out_g.append(
                        const * (dR[l - j][:, None, :] * prev[:, :, None] + Rn[:, None, None] * gpad[:, sl, :])
                    )
            vals = np.concatenate(out_v, axis=1)
            if with_grad:
                grads = np.concatenate(out_g, axis=1)

        vals = vals.reshape(lead + (self.dim,))
        if with_grad:
            grads = grads.reshape(lead + (self.dim, self.k))
        return vals, grads

    def expand_degrees(self, per_degree, axis: int = -1):
        """Expand an (..., L+1) array of per-degree values to (..., D*)."""
        return np.take(per_degree, self.degree_of_feature, axis=axis)

    def sum_degrees(self, per_feature, axis: int = -1):
        """Reduce an (..., D*) array to (..., L+1) by summing within degrees."""
        starts = np.array([s.start for s in self.degree_slices])
        return np.add.reduceat(per_feature, starts, axis=axis)


def _slice_starts(degrees, L):
    out = {}
    for l in range(L + 1):
        idx = np.nonzero(degrees == l)[0]
        out[l] = slice(int(idx[0]), int(idx[-1]) + 1)
    return out


def _radial_gegenbauer(nmax, lam, xl, r2, xs):
    """R_n = |x|^n C_n^lam(x_l / |x|) for n = 0..nmax, plus ambient gradients.

    Homogeneous polynomials in (x_l, |x|^2), so no division by |x| occurs.
    """
    dt = xl.dtype
    n_pts = xl.shape[0]
    R = [np.ones(n_pts, dtype=dt)]
    dR = None
    if xs is not None:
        kk = xs.shape[1]
        e_last = np.zeros(kk, dtype=dt)
        e_last[-1] = 1.0
        dR = [np.zeros((n_pts, kk), dtype=dt)]
    if nmax >= 1:
        R.append(2.0 * lam * xl)
        if xs is not None:
            dR.append(np.broadcast_to(2.0 * lam * e_last, (n_pts, kk)).copy())
    for n in range(2, nmax + 1):
        a = 2.0 * (n + lam - 1) / n
        b = (n + 2 * lam - 2) / n
        R.append(a * xl * R[n - 1] - b * r2 * R[n - 2])
        if xs is not None:
            dR.append(
                a * (e_last[None, :] * R[n - 1][:, None] + xl[:, None] * dR[n - 1])
                - b * (2.0 * xs * R[n - 2][:, None] + r2[:, None] * dR[n - 2])
            )
    return R, dR


@lru_cache(maxsize=64)
def get_basis(k: int, L: int) -> HarmonicBasis:
    """Shared immutable basis instance for (k, L)."""
    return HarmonicBasis(k, L)


def eval_basis(basis: HarmonicBasis, x):
    return basis.eval(x)


def eval_basis_jacobian(basis: HarmonicBasis, x):
    return basis.jacobian(x)


def random_directions(rng: np.random.Generator, n: int, k: int):
    """``n`` points drawn uniformly on S^{k-1}."""
    v = rng.standard_normal((n, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
