"""Sphere feed-forward block.

Tokens are projected to R^k, normalised onto the sphere, lifted through the
harmonic feature map, scaled per degree and read back out to the residual
width.  The per-degree scales are the eigenvalues of a zonal activation
sigma(<u, v>) viewed as an integral operator on the sphere; they are computed
once by Gauss-Legendre quadrature, so the activation itself is never evaluated
in the forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError, DegenerateDirectionError, DomainError, ShapeError
from .harmonics import (
    HarmonicBasis,
    _sphere_surface,
    get_basis,
    harmonic_space_dim,
    random_directions,
    sphere_surface,
    zonal_table,
)

_erf = np.vectorize(math.erf, otypes=[float])


def gelu(t):
    t = np.asarray(t, dtype=float)
    return 0.5 * t * (1.0 + _erf(t / math.sqrt(2.0)))


def relu(t):
    return np.maximum(np.asarray(t, dtype=float), 0.0)


def silu(t):
    t = np.asarray(t, dtype=float)
    return t / (1.0 + np.exp(-t))


ACTIVATIONS = {
    "gelu": gelu,
    "relu": relu,
    "tanh": np.tanh,
    "square": np.square,
    "identity": lambda t: np.asarray(t, dtype=float),
    "silu": silu,
}


def resolve_activation(activation):
    if callable(activation):
        return activation
    try:
        return ACTIVATIONS[activation]
    except KeyError:
        raise DomainError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}") from None


DEFAULT_QUAD_ORDER = 64
MAX_QUAD_ORDER = 1 << 14
CONVERGENCE_TOL = 1e-10


def _funk_hecke_quadrature(sigma, k: int, L: int, order: int) -> np.ndarray:
    # Integrate over the polar angle on two panels split at pi/2, where
    # ReLU-type activations have their kink.  sin^{k-2} carries the measure.
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.25 * math.pi
    theta = np.concatenate([half * (nodes + 1.0), half * (nodes + 1.0) + 2.0 * half])
    w = np.concatenate([weights, weights]) * half
    t = np.cos(theta)
    vals = np.asarray(sigma(t), dtype=float)
    if vals.shape != t.shape or not np.all(np.isfinite(vals)):
        raise DomainError("activation must map arrays elementwise to finite values")
    measure = w * np.sin(theta) ** (k - 2)
    zon = zonal_table(k, L, t)
    return _sphere_surface(k - 1) * (zon * (vals * measure)).sum(axis=1)


def compile_zonal_coefficients(activation, k: int, L: int, quad_order: int | None = None) -> np.ndarray:
    """Per-degree eigenvalues a_l of the operator f -> int sigma(<u, v>) f(v) dv.

    With ``quad_order=None`` the order starts at 64 and doubles until two
    successive orders agree to 1e-10.  An explicit order must be at least
    ``2L + 8`` and is checked against a 4x reference.
    """
    if k < 2:
        raise DomainError(f"ambient dimension must be >= 2, got k={k}")
    sigma = resolve_activation(activation)
    if quad_order is None:
        order = DEFAULT_QUAD_ORDER
        cur = _funk_hecke_quadrature(sigma, k, L, order)
        while order < MAX_QUAD_ORDER:
            nxt = _funk_hecke_quadrature(sigma, k, L, 2 * order)
            if np.max(np.abs(nxt - cur)) <= CONVERGENCE_TOL:
                return cur
            order, cur = 2 * order, nxt
        raise AccuracyError(f"quadrature did not converge to {CONVERGENCE_TOL} by order {MAX_QUAD_ORDER}")
    if quad_order < 2 * L + 8:
        raise AccuracyError(f"quadrature order {quad_order} is below the minimum 2L+8 = {2 * L + 8}")
    coeffs = _funk_hecke_quadrature(sigma, k, L, quad_order)
    ref = _funk_hecke_quadrature(sigma, k, L, 4 * quad_order)
    err = float(np.max(np.abs(coeffs - ref)))
    if err > CONVERGENCE_TOL:
        raise AccuracyError(f"order {quad_order} differs from 4x reference by {err:.3e}")
    return coeffs


@dataclass(frozen=True)
class FunkHeckeReport:
    """Monte Carlo check of the diagonal action of a zonal operator.

    ``deviation[m]`` is the MC estimate of int sigma(<u,v>) Y_m(v) dv minus
    a_l Y_m(u); ``std_error[m]`` its standard error.  The per-degree arrays do
    the same for the zonal contraction sum_m Y_m(u) (...), which equals
    a_l N(k,l)/|S^{k-1}|.
    """

    coefficients: np.ndarray
    deviation: np.ndarray
    std_error: np.ndarray
    degree_deviation: np.ndarray
    degree_std_error: np.ndarray
    n_samples: int

    @property
    def max_abs_deviation(self) -> float:
        return float(np.max(np.abs(self.deviation)))

    @property
    def max_z(self) -> float:
        return float(np.max(_zscores(self.deviation, self.std_error)))

    @property
    def max_degree_z(self) -> float:
        return float(np.max(_zscores(self.degree_deviation, self.degree_std_error)))

    def passes(self, n_se: float = 3.0) -> bool:
        return self.max_degree_z <= n_se


def _zscores(dev, se):
    dev = np.abs(dev)
    out = np.zeros_like(dev)
    nz = se > 0
    out[nz] = dev[nz] / se[nz]
    # A zero standard error means the integrand is identically zero; any
    # deviation then is a genuine error.
    out[~nz & (dev > 1e-12)] = np.inf
    return out


def funk_hecke_mc_check(activation, k: int, L: int, n_samples: int = 200_000, rng=None, coefficients=None):
    if n_samples < 100_000:
        raise DomainError("Monte Carlo check needs at least 1e5 samples")
    rng = np.random.default_rng(0) if rng is None else rng
    sigma = resolve_activation(activation)
    basis = get_basis(k, L)
    a = compile_zonal_coefficients(sigma, k, L) if coefficients is None else np.asarray(coefficients, float)
    area = sphere_surface(k)
    u = random_directions(rng, 1, k)[0]
    v = random_directions(rng, n_samples, k)
    t = np.clip(v @ u, -1.0, 1.0)
    s = np.asarray(sigma(t), dtype=float)
    y_u = basis.eval(u)
    # Per-feature statistic, chunked to bound memory at large D*.
    total = np.zeros(basis.dim)
    total_sq = np.zeros(basis.dim)
    for start in range(0, n_samples, 20_000):
        sl = slice(start, start + 20_000)
        f = area * s[sl, None] * basis.eval(v[sl])
        total += f.sum(axis=0)
        total_sq += (f * f).sum(axis=0)
    mean = total / n_samples
    var = np.maximum(total_sq / n_samples - mean**2, 0.0)
    se = np.sqrt(var / (n_samples - 1))
    expected = basis.expand_degrees(a) * y_u
    # Zonal contraction: area * sigma(t) * (N/area) * P_l(t)
    counts = np.array([harmonic_space_dim(k, l) for l in range(L + 1)], dtype=float)
    g = s[None, :] * counts[:, None] * zonal_table(k, L, t)
    g_mean = g.mean(axis=1)
    g_se = g.std(axis=1, ddof=1) / math.sqrt(n_samples)
    g_expected = a * counts / area
    return FunkHeckeReport(
        coefficients=a,
        deviation=mean - expected,
        std_error=se,
        degree_deviation=g_mean - g_expected,
        degree_std_error=g_se,
        n_samples=n_samples,
    )


class ShFfnLayer:
    """Sphere feed-forward block with weights ``w_sphere`` (k x d), ``m`` (d x D*), ``a`` (L+1)."""

    def __init__(self, d: int, k: int, L: int, activation="gelu", adaptive: bool = False, rng=None, dtype=float):
        self.d, self.k, self.L = int(d), int(k), int(L)
        self.basis: HarmonicBasis = get_basis(k, L)
        self.adaptive = bool(adaptive)
        self.activation_name = activation if isinstance(activation, str) else getattr(activation, "__name__", "custom")
        rng = np.random.default_rng(0) if rng is None else rng
        coeffs = compile_zonal_coefficients(activation, k, L)
        bound_in = 1.0 / math.sqrt(d)
        bound_out = 1.0 / math.sqrt(self.basis.dim)
        self.params = {
            "w_sphere": rng.uniform(-bound_in, bound_in, size=(k, d)).astype(dtype),
            "m": rng.uniform(-bound_out, bound_out, size=(d, self.basis.dim)).astype(dtype),
            "a": coeffs.astype(dtype),
        }
        if not self.adaptive:
            self.params["a"].flags.writeable = False

    @property
    def trainable(self):
        return ("w_sphere", "m", "a") if self.adaptive else ("w_sphere", "m")

    def num_parameters(self) -> int:
        return sum(self.params[n].size for n in self.trainable)

    def forward(self, x):
        """x (..., d) -> y (..., d), plus a cache for :meth:`backward`."""
        x = np.asarray(x)
        if x.shape[-1] != self.d:
            raise ShapeError(f"expected trailing dimension {self.d}, got {x.shape}")
        w, m, a = self.params["w_sphere"], self.params["m"], self.params["a"]
        z = x @ w.T
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(norm < 1e-9):
            raise DegenerateDirectionError("sphere projection has near-zero norm")
        zhat = z / norm
        phi, jac = self.basis.eval_with_jacobian(zhat)
        a_exp = self.basis.expand_degrees(a)
        scaled = phi * a_exp
        y = scaled @ m.T
        return y, (x, zhat, norm, phi, jac, a_exp, scaled)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy):
        """Return (dx, grads); ``grads`` has no entry for ``a`` unless adaptive."""
        x, zhat, norm, phi, jac, a_exp, scaled = cache
        w, m = self.params["w_sphere"], self.params["m"]
        d_ = self.d
        dy2 = dy.reshape(-1, d_)
        grads = {"m": dy2.T @ scaled.reshape(-1, scaled.shape[-1])}
        d_scaled = dy @ m
        if self.adaptive:
            grads["a"] = self.basis.sum_degrees((d_scaled * phi).reshape(-1, phi.shape[-1]).sum(axis=0))
        d_phi = d_scaled * a_exp
        d_zhat = np.einsum("...m,...mi->...i", d_phi, jac)
        dz = (d_zhat - zhat * np.sum(zhat * d_zhat, axis=-1, keepdims=True)) / norm
        grads["w_sphere"] = dz.reshape(-1, self.k).T @ x.reshape(-1, d_)
        dx = dz @ w
        return dx, grads
