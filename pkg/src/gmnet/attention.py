"""Dual sphere attention: a gated linear-time moment scan fused with kernel softmax.

Layout conventions used throughout: per-head tensors are ``(B, H, T, ...)``;
moment states are ``(..., T, D*, k)`` with one state per position.

The scan state after position t is

    M_t = gamma_t * M_{t-1} + Phi(k_t) p_t^T

with per-degree gates gamma_t broadcast across features of equal degree.
The reverse-direction scan folds from the last position to the first and
reads gate ``T-2-i`` when stepping into position ``i`` (mirrored gate order).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolation, DegenerateDirectionError, ShapeError
from .harmonics import UNIT_TOL, HarmonicBasis, get_basis
from .kernel import ZonalKernel


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, float))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# -- functional pieces ------------------------------------------------------


def decay_gate(beta_deg, w_conj, conj, basis: HarmonicBasis):
    """Gate values sigma(beta_l + w_l c_t) expanded to features: (..., T, D*)."""
    c = np.asarray(conj)[..., None]
    return basis.expand_degrees(sigmoid(np.asarray(beta_deg) + np.asarray(w_conj) * c))


def mirrored_gates(gates):
    """Gates applied by the reverse scan: entry i is gate T-2-i, last entry 1."""
    ones = np.ones_like(gates[..., :1, :])
    return np.concatenate([gates[..., -2::-1, :], ones], axis=-2)


def _check_unit(dirs):
    norm = np.linalg.norm(dirs, axis=-1)
    if np.any(np.abs(norm - 1.0) > UNIT_TOL):
        raise ContractViolation("scan key directions must be unit vectors")


def scan_features(feats, values, gates, direction: str = "forward"):
    """Gated moment scan over lifted keys ``feats`` (..., T, D*)."""
    if feats.shape[:-1] != values.shape[:-1] or gates.shape != feats.shape:
        raise ShapeError("feats, values and gates must agree on (..., T) and D*")
    t_len = feats.shape[-2]
    outer = feats[..., :, None] * values[..., None, :]
    states = np.empty_like(outer)
    if direction == "forward":
        states[..., 0, :, :] = outer[..., 0, :, :]
        for t in range(1, t_len):
            states[..., t, :, :] = gates[..., t, :, None] * states[..., t - 1, :, :] + outer[..., t, :, :]
    elif direction == "backward":
        gb = mirrored_gates(gates)
        states[..., t_len - 1, :, :] = outer[..., t_len - 1, :, :]
        for i in range(t_len - 2, -1, -1):
            states[..., i, :, :] = gb[..., i, :, None] * states[..., i + 1, :, :] + outer[..., i, :, :]
    else:
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return states


def sfa_scan(key_dirs, values, gates, basis: HarmonicBasis, direction: str = "forward"):
    """All T moment states for unit key directions (..., T, k)."""
    key_dirs = np.asarray(key_dirs)
    _check_unit(key_dirs)
    return scan_features(basis.eval(key_dirs), np.asarray(values), np.asarray(gates), direction)


def sfa_output(m_fwd, m_bwd, query_feats):
    """y = 1/2 (M_fwd + M_bwd)^T Phi(q) for lifted queries (..., D*)."""
    return 0.5 * np.einsum("...mj,...m->...j", m_fwd + m_bwd, query_feats)


def multipole_bruteforce(key_dirs, values, basis: HarmonicBasis):
    """Direct sum_t Phi(k_t) p_t^T."""
    key_dirs = np.asarray(key_dirs, dtype=float)
    values = np.asarray(values, dtype=float)
    if key_dirs.shape[0] == 0:
        return np.zeros((basis.dim, values.shape[-1] if values.ndim == 2 else basis.k))
    return basis.eval(key_dirs).T @ values


def windowed_bruteforce(key_dirs, values, gates, basis: HarmonicBasis, upto: int | None = None):
    """sum_s Gamma_{s,t} * Phi(k_s) p_s^T with Gamma_{s,t} = prod_{r=s+1}^{t} gamma_r.

    Computes the terminal forward state from explicit cumulative gate
    products rather than a recursion.  ``upto`` defaults to the last position.
    """
    key_dirs = np.asarray(key_dirs, dtype=float)
    t_end = key_dirs.shape[0] - 1 if upto is None else upto
    feats = basis.eval(key_dirs)
    total = np.zeros((basis.dim, values.shape[-1]))
    for s in range(t_end + 1):
        window = np.prod(gates[s + 1 : t_end + 1], axis=0) if s < t_end else np.ones(basis.dim)
        total += (window * feats[s])[:, None] * values[s][None, :]
    return total


def ska_attention(query_dirs, key_dirs, values, basis: HarmonicBasis, mask=None):
    """Softmax attention with scores kappa(q . k) / sqrt(D*); rows renormalised.

    Shapes (..., T, k).  ``kappa`` is the default zonal kernel of ``basis``,
    which equals Phi(q) . Phi(k).  Returns (output, weights).
    """
    q = np.asarray(query_dirs)
    kd = np.asarray(key_dirs)
    p = np.asarray(values)
    mask = np.ones(q.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    out, cache = _ska_forward(q, kd, p, mask, ZonalKernel(basis), query_mask=mask)
    return out, cache["attn"]


def _ska_forward(q, kd, p, mask, kernel, query_mask):
    if np.any(~mask.any(axis=-1)):
        raise ContractViolation("every sequence needs at least one unmasked position")
    cos = np.clip(np.einsum("...ti,...si->...ts", q, kd), -1.0, 1.0)
    scale = 1.0 / math.sqrt(kernel.basis.dim)
    scores = kernel(cos) * scale
    scores = np.where(mask[..., None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    cv = w @ p
    norm = np.linalg.norm(cv, axis=-1, keepdims=True)
    small = norm[..., 0] < 1e-12
    if np.any(small & query_mask):
        raise DegenerateDirectionError("attention aggregate has near-zero norm")
    norm = np.where(small[..., None], 1.0, norm)
    out = cv / norm
    return out, {"cos": cos, "attn": w, "norm": norm, "out": out, "scale": scale, "small": small}


# -- the layer -------------------------------------------------------------


def _safe_directions(v, mask):
    """Normalise along the last axis; masked rows with zero norm get e_1."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    small = norm[..., 0] < 1e-12
    if np.any(small & mask):
        raise DegenerateDirectionError("projected direction has near-zero norm at a real token")
    norm = np.where(small[..., None], 1.0, norm)
    dirs = v / norm
    if np.any(small):
        e1 = np.zeros(v.shape[-1], dtype=v.dtype)
        e1[0] = 1.0
        dirs = np.where(small[..., None], e1, dirs)
    return dirs, norm


def _normalize_backward(dirs, norm, ddirs):
    return (ddirs - dirs * np.sum(dirs * ddirs, axis=-1, keepdims=True)) / norm


class DualSkaLayer:
    """Multi-head dual attention layer.

    Parameters: ``wk``, ``wq``, ``wp`` (H*k x d), ``wo`` (d x H*k),
    ``beta_deg`` and ``w_conj`` (H x L+1), ``beta_fus`` (H).
    """

    PARAM_NAMES = ("wk", "wq", "wp", "wo", "beta_deg", "w_conj", "beta_fus")

    def __init__(self, d: int, k: int, L: int, H: int, rng=None, dtype=float):
        self.d, self.k, self.L, self.H = int(d), int(k), int(L), int(H)
        self.basis = get_basis(k, L)
        self.kernel = ZonalKernel(self.basis)
        rng = np.random.default_rng(0) if rng is None else rng
        hk = H * k
        b_in, b_out = 1.0 / math.sqrt(d), 1.0 / math.sqrt(hk)
        self.params = {
            "wk": rng.uniform(-b_in, b_in, size=(hk, d)).astype(dtype),
            "wq": rng.uniform(-b_in, b_in, size=(hk, d)).astype(dtype),
            "wp": rng.uniform(-b_in, b_in, size=(hk, d)).astype(dtype),
            "wo": rng.uniform(-b_out, b_out, size=(d, hk)).astype(dtype),
            "beta_deg": np.full((H, L + 1), 2.0, dtype=dtype),
            "w_conj": np.zeros((H, L + 1), dtype=dtype),
            "beta_fus": np.zeros(H, dtype=dtype),
        }

    trainable = PARAM_NAMES

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def _heads(self, y):
        b, t, _ = y.shape
        return y.reshape(b, t, self.H, self.k).transpose(0, 2, 1, 3)

    def fusion_weights(self):
        return sigmoid(self.params["beta_fus"])

    def forward(self, x, conj=None, mask=None):
        """x (B, T, d) -> (B, T, d).  Also returns a cache for backward."""
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        b, t_len, d = x.shape
        if d != self.d:
            raise ShapeError(f"expected model width {self.d}, got {d}")
        mask = np.ones((b, t_len), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(b, t_len)
        conj = np.zeros((b, t_len)) if conj is None else np.asarray(conj).reshape(b, t_len)
        conj = np.where(mask, conj, 0).astype(x.dtype)
        pr = self.params
        hmask = np.broadcast_to(mask[:, None, :], (b, self.H, t_len))

        kdirs, knorm = _safe_directions(self._heads(x @ pr["wk"].T), hmask)
        qdirs, qnorm = _safe_directions(self._heads(x @ pr["wq"].T), hmask)
        vals = self._heads(x @ pr["wp"].T) * hmask[..., None]

        kfeat, kjac = self.basis.eval_with_jacobian(kdirs)
        qfeat, qjac = self.basis.eval_with_jacobian(qdirs)

        # Gates: (B, H, T, L+1) per degree, expanded to (B, H, T, D*).
        logits = pr["beta_deg"][None, :, None, :] + pr["w_conj"][None, :, None, :] * conj[:, None, :, None]
        gdeg = sigmoid(logits)
        gates = self.basis.expand_degrees(gdeg)

        m_fwd = scan_features(kfeat, vals, gates, "forward")
        m_bwd = scan_features(kfeat, vals, gates, "backward")
        y_sfa = sfa_output(m_fwd, m_bwd, qfeat)

        y_ska, ska = _ska_forward(qdirs, kdirs, vals, hmask, self.kernel, query_mask=hmask)

        alpha = self.fusion_weights()[None, :, None, None]
        z = alpha * y_sfa + (1.0 - alpha) * y_ska
        zcat = z.transpose(0, 2, 1, 3).reshape(b, t_len, self.H * self.k)
        out = zcat @ pr["wo"].T
        cache = dict(
            x=x, mask=mask, hmask=hmask, conj=conj, kdirs=kdirs, knorm=knorm, qdirs=qdirs, qnorm=qnorm,
            vals=vals, kfeat=kfeat, kjac=kjac, qfeat=qfeat, qjac=qjac, gdeg=gdeg, gates=gates,
            m_fwd=m_fwd, m_bwd=m_bwd, y_sfa=y_sfa, y_ska=y_ska, ska=ska, zcat=zcat,
        )
        return out, cache

    def __call__(self, x, conj=None, mask=None):
        return self.forward(x, conj, mask)[0]

    def backward(self, cache, dout):
        pr = self.params
        x = cache["x"]
        b, t_len, d = x.shape
        H, k = self.H, self.k
        dout = np.asarray(dout).reshape(b, t_len, d)
        grads = {"wo": dout.reshape(-1, d).T @ cache["zcat"].reshape(-1, H * k)}
        dz = (dout @ pr["wo"]).reshape(b, t_len, H, k).transpose(0, 2, 1, 3)

        alpha = self.fusion_weights()
        y_sfa, y_ska = cache["y_sfa"], cache["y_ska"]
        dalpha = np.einsum("bhtj,bhtj->h", dz, y_sfa - y_ska)
        grads["beta_fus"] = dalpha * alpha * (1.0 - alpha)
        a4 = alpha[None, :, None, None]
        dy_sfa = a4 * dz
        dy_ska = (1.0 - a4) * dz

        # SFA readout.
        kfeat, qfeat, vals, gates = cache["kfeat"], cache["qfeat"], cache["vals"], cache["gates"]
        m_fwd, m_bwd = cache["m_fwd"], cache["m_bwd"]
        dqfeat = 0.5 * np.einsum("...mj,...j->...m", m_fwd + m_bwd, dy_sfa)
        d_state = 0.5 * qfeat[..., :, None] * dy_sfa[..., None, :]

        # Adjoint of the forward scan.
        dgates = np.zeros_like(gates)
        adj_f = np.empty_like(m_fwd)
        adj_f[..., t_len - 1, :, :] = d_state[..., t_len - 1, :, :]
        for t in range(t_len - 2, -1, -1):
            adj_f[..., t, :, :] = d_state[..., t, :, :] + gates[..., t + 1, :, None] * adj_f[..., t + 1, :, :]
        dgates[..., 1:, :] += np.einsum("...tmj,...tmj->...tm", adj_f[..., 1:, :, :], m_fwd[..., :-1, :, :])

        # Adjoint of the reverse scan (mirrored gate order).
        gb = mirrored_gates(gates)
        adj_b = np.empty_like(m_bwd)
        adj_b[..., 0, :, :] = d_state[..., 0, :, :]
        for i in range(1, t_len):
            adj_b[..., i, :, :] = d_state[..., i, :, :] + gb[..., i - 1, :, None] * adj_b[..., i - 1, :, :]
        if t_len > 1:
            dgb = np.einsum("...tmj,...tmj->...tm", adj_b[..., :-1, :, :], m_bwd[..., 1:, :, :])
            # dgb[i] belongs to gate T-2-i.
            dgates[..., : t_len - 1, :] += dgb[..., ::-1, :]

        adj = adj_f + adj_b
        dkfeat = np.einsum("...tmj,...tj->...tm", adj, vals)
        dvals = np.einsum("...tmj,...tm->...tj", adj, kfeat)

        # Gate parameters.
        gdeg = cache["gdeg"]
        dgdeg = self.basis.sum_degrees(dgates)
        dlogit = dgdeg * gdeg * (1.0 - gdeg)
        grads["beta_deg"] = dlogit.sum(axis=(0, 2))
        grads["w_conj"] = np.einsum("bhtl,bt->hl", dlogit, cache["conj"])

        # SKA branch.
        ska = cache["ska"]
        w, out_ska, norm = ska["attn"], ska["out"], ska["norm"]
        hmask = cache["hmask"]
        dcv = (dy_ska - out_ska * np.sum(out_ska * dy_ska, axis=-1, keepdims=True)) / norm
        # Padding rows whose aggregate vanished were passed through unnormalised.
        dcv = np.where(ska["small"][..., None], dy_ska, dcv)
        dvals += np.swapaxes(w, -1, -2) @ dcv
        dw = dcv @ np.swapaxes(vals, -1, -2)
        dscore = w * (dw - np.sum(dw * w, axis=-1, keepdims=True))
        dcos = dscore * self.kernel.derivative(ska["cos"]) * ska["scale"]
        qdirs, kdirs = cache["qdirs"], cache["kdirs"]
        dqdirs = dcos @ kdirs
        dkdirs = np.swapaxes(dcos, -1, -2) @ qdirs

        dqdirs += np.einsum("...m,...mi->...i", dqfeat, cache["qjac"])
        dkdirs += np.einsum("...m,...mi->...i", dkfeat, cache["kjac"])
        dq = _normalize_backward(qdirs, cache["qnorm"], dqdirs)
        dk = _normalize_backward(kdirs, cache["knorm"], dkdirs)
        dv = dvals * hmask[..., None]

        def flat(g):
            return g.transpose(0, 2, 1, 3).reshape(b * t_len, H * k)

        x2 = x.reshape(-1, d)
        dq2, dk2, dv2 = flat(dq), flat(dk), flat(dv)
        grads["wq"] = dq2.T @ x2
        grads["wk"] = dk2.T @ x2
        grads["wp"] = dv2.T @ x2
        dx = (dq2 @ pr["wq"] + dk2 @ pr["wk"] + dv2 @ pr["wp"]).reshape(b, t_len, d)
        return dx, grads
