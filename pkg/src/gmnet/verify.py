"""Invariant suites run by ``gmnet verify``.

Each suite compares an implementation path against an independent oracle and
returns a :class:`SuiteResult` with the worst observed error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    DualSkaLayer,
    decay_gate,
    multipole_bruteforce,
    scan_features,
    sfa_scan,
    windowed_bruteforce,
)
from .embedding import ShEmbedding
from .encoder import GmNetModel, ModelConfig, count_parameters
from .ffn import ShFfnLayer, _funk_hecke_quadrature, compile_zonal_coefficients, funk_hecke_mc_check, resolve_activation
from .gradcheck import finite_diff_check
from .harmonics import get_basis, harmonic_space_dim, random_directions, sphere_surface, zonal_table
from .kernel import ZonalKernel, default_coefficients, gram_matrix, jacobi_eigenvalues
from .losses import loss_binary, loss_multitask, loss_regression

TINY_CONFIG = ModelConfig(k=4, L=1, d=16, H=2, n_layers=2, vocab_size=16, max_seq_len=32, dropout=0.0, preset="tiny")
TOY_CONFIG = ModelConfig(k=4, L=2, d=64, H=4, n_layers=2, vocab_size=16, max_seq_len=64, dropout=0.0, preset="toy", n_out=1)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tol: float | None
    details: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tol = f" tol={self.tol:.1e}" if self.tol is not None else ""
        return f"[{status}] {self.name:<12s} worst={self.worst:.3e}{tol}"


# -- individual suites -------------------------------------------------------


def suite_harmonics(tol=1e-8, seed=42):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in (6, 8, 10):
        basis = get_basis(k, 4)
        x = random_directions(rng, 100, k)
        y = random_directions(rng, 100, k)
        fx, fy = basis.eval(x), basis.eval(y)
        zon = zonal_table(k, 4, np.sum(x * y, axis=1))
        for l in range(5):
            s = basis.degree_slices[l]
            lhs = np.sum(fx[:, s] * fy[:, s], axis=1)
            rhs = harmonic_space_dim(k, l) / sphere_surface(k) * zon[l]
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return SuiteResult("harmonics", worst <= tol, worst, tol, ["addition theorem, k in {6,8,10}, l <= 4"])


def suite_multipole(tol=1e-10, seed=42, instances=100):
    rng = np.random.default_rng(seed)
    worst_ident, worst_window, worst_const = 0.0, 0.0, 0.0
    for _ in range(instances):
        k = int(rng.choice([4, 6, 8]))
        L = int(rng.integers(1, 4))
        t_len = int(rng.integers(1, 65))
        basis = get_basis(k, L)
        kd = random_directions(rng, t_len, k)
        p = rng.standard_normal((t_len, k))
        ones = np.ones((t_len, basis.dim))
        ref = multipole_bruteforce(kd, p, basis)
        fwd = sfa_scan(kd, p, ones, basis, "forward")[-1]
        bwd = sfa_scan(kd, p, ones, basis, "backward")[0]
        worst_ident = max(worst_ident, float(np.max(np.abs(fwd - ref))), float(np.max(np.abs(bwd - ref))))
        beta = rng.normal(size=L + 1)
        wc = rng.normal(size=L + 1)
        gates = decay_gate(beta, wc, rng.integers(0, 2, size=t_len), basis)
        scan = sfa_scan(kd, p, gates, basis)[-1]
        worst_window = max(worst_window, float(np.max(np.abs(scan - windowed_bruteforce(kd, p, gates, basis)))))
        g = float(rng.uniform(0.5, 0.99))
        scan_c = sfa_scan(kd, p, np.full((t_len, basis.dim), g), basis)[-1]
        weights = g ** (t_len - 1 - np.arange(t_len))
        ref_c = basis.eval(kd).T @ (weights[:, None] * p)
        worst_const = max(worst_const, float(np.max(np.abs(scan_c - ref_c))))
    worst = max(worst_ident, worst_window, worst_const)
    return SuiteResult(
        "multipole", worst <= tol, worst, tol,
        [f"identity {worst_ident:.2e}", f"windowed {worst_window:.2e}", f"constant gate {worst_const:.2e}"],
    )


def suite_psd(tol=1e-8, seed=42, sets=200):
    rng = np.random.default_rng(seed)
    worst_min = math.inf
    worst_factor = 0.0
    for i in range(sets):
        k = (6, 8, 10)[i % 3]
        L = (2, 3, 4)[(i // 3) % 3]
        n = int(rng.integers(1, 65))
        kern = ZonalKernel.default(k, L)
        x = random_directions(rng, n, k)
        g = gram_matrix(kern, x)
        worst_min = min(worst_min, float(jacobi_eigenvalues(g)[0]))
        f = kern.basis.eval(x)
        worst_factor = max(worst_factor, float(np.max(np.abs(g - f @ f.T))))
    coeffs = default_coefficients(6, 2).copy()
    coeffs[2] = -1.0
    bad = ZonalKernel(get_basis(6, 2), coeffs, allow_negative=True)
    counter = min(float(jacobi_eigenvalues(gram_matrix(bad, random_directions(rng, 16, 6)))[0]) for _ in range(10))
    ok = worst_min >= -tol and counter <= -1e-4 and worst_factor <= 1e-10
    return SuiteResult(
        "psd", ok, max(-worst_min, 0.0), tol,
        [f"min eigenvalue {worst_min:.3e}", f"factorisation {worst_factor:.2e}", f"counterexample min eig {counter:.3e}"],
    )


ACTIVATION_SET = ("gelu", "relu", "tanh", "square", "identity")


def sidak_z(n_tests: int, z: float = 3.0) -> float:
    """Per-test z threshold keeping the family-wise rate of a single z-sigma test."""
    from statistics import NormalDist

    nd = NormalDist()
    alpha = 2.0 * (1.0 - nd.cdf(z))
    per = 1.0 - (1.0 - alpha) ** (1.0 / n_tests)
    return nd.inv_cdf(1.0 - per / 2.0)


def suite_funk_hecke(tol=1e-10, seed=42, n_samples=200_000):
    rng = np.random.default_rng(seed)
    details = []
    ok = True
    worst_conv = 0.0
    for k, L in ((6, 2), (8, 3)):
        for act in ACTIVATION_SET:
            sigma = resolve_activation(act)
            low = compile_zonal_coefficients(sigma, k, L, quad_order=64)
            high = _funk_hecke_quadrature(sigma, k, L, 512)
            conv = float(np.max(np.abs(low - high)))
            worst_conv = max(worst_conv, conv)
            rep = funk_hecke_mc_check(sigma, k, L, n_samples, rng=rng)
            per_ok = rep.max_z <= sidak_z(rep.deviation.size)
            passed = rep.passes(3.0) and per_ok and conv <= tol
            ok &= passed
            details.append(
                f"k={k} L={L} {act:<8s} degree_z={rep.max_degree_z:.2f} entry_z={rep.max_z:.2f} "
                f"quad64v512={conv:.1e} {'ok' if passed else 'FAIL'}"
            )
    return SuiteResult("funk-hecke", ok, worst_conv, tol, details)


def suite_gradients(tol=1e-6, e2e_tol=1e-5, seed=42):
    rng = np.random.default_rng(seed)
    details = []
    worst_mod = 0.0

    def run(label, report):
        nonlocal worst_mod
        worst_mod = max(worst_mod, report.max_rel_error)
        details.append(f"{label:<10s} max_rel={report.max_rel_error:.2e}")

    # Embedding.
    emb = ShEmbedding(12, 5, 2, 10, rng=rng)
    emb.params["B_tok"] = rng.normal(size=emb.params["B_tok"].shape)
    emb.params["resid_proj"] = rng.normal(size=emb.params["resid_proj"].shape)
    emb.params["P"] = emb.params["P"] * rng.uniform(0.5, 2.0, size=(12, 1))
    ids = rng.integers(0, 12, size=(2, 5))
    up = rng.normal(size=(2, 5, 10))
    _, cache = emb.forward(ids)
    run("embedding", finite_diff_check(_bind(emb, lambda m, p: np.sum(m.forward(ids)[0] * up)), dict(emb.params),
                                       emb.backward(cache, up)))

    # Attention.
    att = DualSkaLayer(12, 4, 2, 2, rng=rng)
    for n in ("beta_deg", "w_conj", "beta_fus"):
        att.params[n] = rng.normal(size=att.params[n].shape)
    x = rng.normal(size=(2, 6, 12))
    conj = rng.integers(0, 2, size=(2, 6))
    mask = np.ones((2, 6), bool)
    mask[1, 4:] = False
    up = rng.normal(size=(2, 6, 12))
    _, cache = att.forward(x, conj, mask)
    dx, g = att.backward(cache, up)
    g["x"] = dx
    run("attention", finite_diff_check(
        _bind(att, lambda m, p: np.sum(m.forward(p["x"], conj, mask)[0] * up), extra=("x",)),
        {**att.params, "x": x}, g))

    # FFN (adaptive so the eigenvalue gradient is exercised too).
    ffn = ShFfnLayer(12, 5, 2, adaptive=True, rng=rng)
    x = rng.normal(size=(3, 4, 12))
    up = rng.normal(size=(3, 4, 12))
    _, cache = ffn.forward(x)
    dx, g = ffn.backward(cache, up)
    g["x"] = dx
    run("ffn", finite_diff_check(_bind(ffn, lambda m, p: np.sum(m.forward(p["x"])[0] * up), extra=("x",)),
                                 {**ffn.params, "x": x}, g))

    # Losses.
    logits = rng.normal(size=(5, 2))
    labels = rng.integers(0, 2, size=5)
    run("binary", finite_diff_check(lambda p: loss_binary(p["z"], labels)[0], {"z": logits},
                                    {"z": loss_binary(logits, labels)[1]}, dtype=float))
    ml = rng.normal(size=(4, 3))
    mlab = rng.integers(0, 2, size=(4, 3)).astype(float)
    mlab[0, 1] = np.nan
    run("multitask", finite_diff_check(lambda p: loss_multitask(p["z"], mlab)[0], {"z": ml},
                                       {"z": loss_multitask(ml, mlab)[1]}, dtype=float))
    pred = rng.normal(size=6)
    targ = rng.normal(size=6)
    run("regression", finite_diff_check(lambda p: loss_regression(p["z"], targ)[0], {"z": pred},
                                        {"z": loss_regression(pred, targ)[1]}, dtype=float))

    e2e = end_to_end_report(seed)
    details.append(f"end2end   max_rel={e2e.max_rel_error:.2e}")
    ok = worst_mod <= tol and e2e.max_rel_error <= e2e_tol
    return SuiteResult("gradients", ok, max(worst_mod, e2e.max_rel_error), tol, details)


def _bind(module, fn, extra=()):
    """Loss closure that evaluates ``fn`` with ``module.params`` swapped in."""

    def loss(p):
        old = module.params
        module.params = {n: p[n] for n in old}
        try:
            return fn(module, p)
        finally:
            module.params = old

    return loss


def end_to_end_report(seed=42, config: ModelConfig = TINY_CONFIG):
    """Finite-difference check of every trainable tensor of a tiny model."""
    rng = np.random.default_rng(seed)
    model = GmNetModel(config, seed=seed)
    for n, v in model.parameters().items():
        # Move zero/one-initialised tensors off their special values.
        if any(s in n for s in ("beta", "w_conj", "B_tok", "resid_proj", "ln", "bias")):
            v[...] = v + rng.normal(scale=0.3, size=v.shape)
    b, t_len = 3, 6
    ids = rng.integers(0, config.vocab_size, size=(b, t_len))
    conj = rng.integers(0, 2, size=(b, t_len))
    mask = np.ones((b, t_len), bool)
    mask[2, 4:] = False
    labels = rng.integers(0, 2, size=b)
    _, out, cache = model.forward(ids, conj, mask)
    _, dout = loss_binary(out, labels)
    grads = model.backward(cache, dout)
    trainable = model.trainable_names()

    def loss(p):
        old = model.named_tensors()
        model.set_tensors(p)
        try:
            o = model.forward(ids, conj, mask)[1]
        finally:
            model.set_tensors(old)
        o = o - o.max(axis=1, keepdims=True)
        logp = o - np.log(np.exp(o).sum(axis=1, keepdims=True))
        return -logp[np.arange(b), labels].mean()

    return finite_diff_check(loss, model.named_tensors(), {n: grads[n] for n in trainable})


def suite_fusion(tol=1e-8, seed=42):
    rng = np.random.default_rng(seed)
    att = DualSkaLayer(16, 4, 2, 2, rng=rng)
    x = rng.normal(size=(2, 7, 16))
    conj = rng.integers(0, 2, size=(2, 7))
    att.params["beta_fus"][:] = 0.0
    _, c = att.forward(x, conj)
    zcat = lambda z: z.transpose(0, 2, 1, 3).reshape(2, 7, -1)  # noqa: E731
    half = float(np.max(np.abs(c["zcat"] - zcat(0.5 * c["y_sfa"] + 0.5 * c["y_ska"]))))
    att.params["beta_fus"][:] = 20.0
    out_hi, c = att.forward(x, conj)
    sfa = float(np.max(np.abs(out_hi - zcat(c["y_sfa"]) @ att.params["wo"].T)))
    att.params["beta_fus"][:] = -20.0
    out_lo, c = att.forward(x, conj)
    ska = float(np.max(np.abs(out_lo - zcat(c["y_ska"]) @ att.params["wo"].T)))
    worst = max(sfa, ska)
    return SuiteResult(
        "fusion", half == 0.0 and worst <= tol, worst, tol,
        [f"beta=0 half-half exact diff {half:.1e}", f"beta=+20 vs SFA {sfa:.2e}", f"beta=-20 vs SKA {ska:.2e}"],
    )


def suite_permutation(tol=1e-10, seed=42):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, L in ((4, 2), (6, 3), (8, 3)):
        basis = get_basis(k, L)
        t_len = 40
        kd = random_directions(rng, t_len, k)
        p = rng.standard_normal((t_len, k))
        perm = rng.permutation(t_len)
        ones = np.ones((t_len, basis.dim))
        a = sfa_scan(kd, p, ones, basis)[-1]
        b = sfa_scan(kd[perm], p[perm], ones, basis)[-1]
        worst = max(worst, float(np.max(np.abs(a - b))))
    inert = masked_inertness(seed)
    return SuiteResult("permutation", worst <= tol and inert == 0.0, worst, tol,
                       [f"order invariance {worst:.2e}", f"masked-content change {inert:.1e}"])


def masked_inertness(seed=42, config: ModelConfig = TINY_CONFIG):
    """Max change of pooled outputs when only masked positions' content changes."""
    rng = np.random.default_rng(seed)
    model = GmNetModel(config, seed=seed)
    ids = rng.integers(0, config.vocab_size, size=(2, 8))
    conj = rng.integers(0, 2, size=(2, 8))
    mask = np.ones((2, 8), bool)
    mask[:, 5:] = False
    pooled, out, _ = model.forward(ids, conj, mask)
    ids2, conj2 = ids.copy(), conj.copy()
    ids2[:, 5:] = rng.integers(0, config.vocab_size, size=(2, 3))
    conj2[:, 5:] = 1 - conj2[:, 5:]
    pooled2, out2, _ = model.forward(ids2, conj2, mask)
    return float(max(np.max(np.abs(pooled - pooled2)), np.max(np.abs(out - out2))))


def suite_params(tol=None):
    ledger = count_parameters(ModelConfig.preset_cb10m(8, 3))
    checks = {"embedding": 216_732, "head": 148_610, "ln_f": 768}
    ok = all(ledger[n] == v for n, v in checks.items())
    worst = float(max(abs(ledger[n] - v) for n, v in checks.items()))
    return SuiteResult("params", ok, worst, None, [f"{n}={ledger[n]} expected {v}" for n, v in checks.items()])


SUITES = {
    "harmonics": suite_harmonics,
    "multipole": suite_multipole,
    "psd": suite_psd,
    "funk-hecke": suite_funk_hecke,
    "gradients": suite_gradients,
    "fusion": suite_fusion,
    "permutation": suite_permutation,
    "params": suite_params,
}


def run_suites(names=None, tol=None):
    out = []
    for name in names or list(SUITES):
        fn = SUITES[name]
        out.append(fn() if tol is None or name == "params" else fn(tol=tol))
    return out
