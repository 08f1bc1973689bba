import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmnet.attention import (
    DualSkaLayer,
    decay_gate,
    mirrored_gates,
    multipole_bruteforce,
    scan_features,
    sfa_output,
    sfa_scan,
    sigmoid,
    ska_attention,
    windowed_bruteforce,
)
from gmnet.errors import ContractViolation, ShapeError
from gmnet.gradcheck import finite_diff_check
from gmnet.harmonics import get_basis, random_directions


def loop_moment(kd, p, gates, basis):
    """Terminal forward state by an explicit double loop over (s, r)."""
    t_len = len(kd)
    f = basis.eval(kd)
    out = np.zeros((basis.dim, p.shape[1]))
    for s in range(t_len):
        w = np.ones(basis.dim)
        for r in range(s + 1, t_len):
            w = w * gates[r]
        out += np.outer(w * f[s], p[s])
    return out


class TestGates:
    def test_zero_logits_give_half(self):
        b = get_basis(4, 2)
        g = decay_gate(np.zeros(3), np.zeros(3), np.array([0, 1, 1, 0]), b)
        assert g.shape == (4, b.dim)
        assert np.all(g == 0.5)

    def test_conjugation_shift(self):
        b = get_basis(6, 2)
        g = decay_gate(np.zeros(3), np.array([0.0, 2.0, 0.0]), np.array([1, 0]), b)
        deg1 = b.degree_of_feature == 1
        np.testing.assert_allclose(g[0, deg1], 0.880797, atol=1e-6)
        assert np.all(g[0, ~deg1] == 0.5)
        assert np.all(g[1] == 0.5)

    def test_features_of_equal_degree_share_gates(self):
        b = get_basis(5, 3)
        rng = np.random.default_rng(0)
        g = decay_gate(rng.normal(size=4), rng.normal(size=4), rng.integers(0, 2, size=9), b)
        for sl in b.degree_slices:
            block = g[:, sl]
            assert np.all(block == block[:, :1])

    def test_sigmoid_is_stable(self):
        x = np.array([-800.0, -20.0, 0.0, 20.0, 800.0])
        s = sigmoid(x)
        assert np.all(np.isfinite(s))
        assert s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0

    def test_mirrored_order(self):
        g = np.arange(5.0)[:, None] * np.ones((1, 2))
        np.testing.assert_array_equal(mirrored_gates(g)[:, 0], [3.0, 2.0, 1.0, 0.0, 1.0])


class TestScan:
    def test_single_step(self):
        b = get_basis(4, 2)
        rng = np.random.default_rng(1)
        kd = random_directions(rng, 1, 4)
        p = rng.normal(size=(1, 4))
        gates = np.full((1, b.dim), 0.3)
        for direction in ("forward", "backward"):
            m = sfa_scan(kd, p, gates, b, direction)
            np.testing.assert_allclose(m[0], np.outer(b.eval(kd[0]), p[0]), atol=1e-15)

    @pytest.mark.parametrize("k,L", [(4, 1), (6, 2), (8, 3)])
    def test_ungated_equals_bruteforce(self, k, L):
        rng = np.random.default_rng(2)
        b = get_basis(k, L)
        kd = random_directions(rng, 33, k)
        p = rng.normal(size=(33, k))
        ones = np.ones((33, b.dim))
        ref = multipole_bruteforce(kd, p, b)
        np.testing.assert_allclose(sfa_scan(kd, p, ones, b)[-1], ref, atol=1e-10)
        np.testing.assert_allclose(sfa_scan(kd, p, ones, b, "backward")[0], ref, atol=1e-10)
        np.testing.assert_allclose(loop_moment(kd, p, ones, b), ref, atol=1e-10)

    def test_bruteforce_empty(self):
        b = get_basis(4, 2)
        m = multipole_bruteforce(np.zeros((0, 4)), np.zeros((0, 4)), b)
        assert m.shape == (b.dim, 4) and np.all(m == 0)

    def test_windowed_against_loop(self):
        rng = np.random.default_rng(3)
        b = get_basis(6, 2)
        kd = random_directions(rng, 20, 6)
        p = rng.normal(size=(20, 6))
        gates = decay_gate(rng.normal(size=3), rng.normal(size=3), rng.integers(0, 2, size=20), b)
        ref = loop_moment(kd, p, gates, b)
        np.testing.assert_allclose(windowed_bruteforce(kd, p, gates, b), ref, atol=1e-12)
        np.testing.assert_allclose(sfa_scan(kd, p, gates, b)[-1], ref, atol=1e-10)
        states = sfa_scan(kd, p, gates, b)
        np.testing.assert_allclose(states[9], windowed_bruteforce(kd, p, gates, b, upto=9), atol=1e-10)

    def test_constant_gate_power_weighting(self):
        rng = np.random.default_rng(4)
        b = get_basis(4, 2)
        kd = random_directions(rng, 15, 4)
        p = rng.normal(size=(15, 4))
        g = 0.8
        ref = sum(g ** (14 - s) * np.outer(b.eval(kd[s]), p[s]) for s in range(15))
        np.testing.assert_allclose(sfa_scan(kd, p, np.full((15, b.dim), g), b)[-1], ref, atol=1e-12)

    def test_backward_scan_uses_mirrored_gates(self):
        rng = np.random.default_rng(5)
        b = get_basis(4, 1)
        kd = random_directions(rng, 6, 4)
        p = rng.normal(size=(6, 4))
        gates = rng.uniform(0.2, 0.9, size=(6, b.dim))
        states = sfa_scan(kd, p, gates, b, "backward")
        gb = mirrored_gates(gates)
        f = b.eval(kd)
        ref = np.outer(f[5], p[5])
        for i in range(4, -1, -1):
            ref = gb[i][:, None] * ref + np.outer(f[i], p[i])
        np.testing.assert_allclose(states[0], ref, atol=1e-14)

    def test_contract_and_shape_errors(self):
        b = get_basis(4, 1)
        with pytest.raises(ContractViolation):
            sfa_scan(np.ones((3, 4)), np.ones((3, 4)), np.ones((3, b.dim)), b)
        with pytest.raises(ShapeError):
            scan_features(np.ones((3, b.dim)), np.ones((2, 4)), np.ones((3, b.dim)))
        with pytest.raises(ValueError):
            scan_features(np.ones((3, b.dim)), np.ones((3, 4)), np.ones((3, b.dim)), "sideways")

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 24), st.integers(0, 2**31 - 1))
    def test_ungated_scan_is_order_invariant(self, t_len, seed):
        rng = np.random.default_rng(seed)
        b = get_basis(5, 2)
        kd = random_directions(rng, t_len, 5)
        p = rng.normal(size=(t_len, 5))
        perm = rng.permutation(t_len)
        ones = np.ones((t_len, b.dim))
        np.testing.assert_allclose(sfa_scan(kd[perm], p[perm], ones, b)[-1], sfa_scan(kd, p, ones, b)[-1], atol=1e-11)


class TestReadout:
    def test_zero_state(self):
        b = get_basis(4, 2)
        m = np.zeros((b.dim, 4))
        assert np.all(sfa_output(m, m, np.ones(b.dim)) == 0)

    def test_single_token_is_kernel_weighted_value(self):
        rng = np.random.default_rng(6)
        b = get_basis(6, 2)
        kd = random_directions(rng, 1, 6)
        q = random_directions(rng, 1, 6)[0]
        p = rng.normal(size=(1, 6))
        gates = np.full((1, b.dim), 0.1)
        fwd, bwd = sfa_scan(kd, p, gates, b), sfa_scan(kd, p, gates, b, "backward")
        y = sfa_output(fwd[0], bwd[0], b.eval(q))
        np.testing.assert_allclose(y, (b.eval(q) @ b.eval(kd[0])) * p[0], atol=1e-14)

    def test_bidirectional_average_at_unit_gate(self):
        rng = np.random.default_rng(7)
        b = get_basis(4, 2)
        kd = random_directions(rng, 12, 4)
        p = rng.normal(size=(12, 4))
        ones = np.ones((12, b.dim))
        fwd, bwd = sfa_scan(kd, p, ones, b), sfa_scan(kd, p, ones, b, "backward")
        q = b.eval(random_directions(rng, 1, 4)[0])
        both = sfa_output(fwd[-1], bwd[0], q)
        np.testing.assert_allclose(both, fwd[-1].T @ q, atol=1e-12)
        np.testing.assert_allclose(both, bwd[0].T @ q, atol=1e-12)


class TestSka:
    def test_rows_sum_to_one_and_mask(self):
        rng = np.random.default_rng(8)
        b = get_basis(4, 2)
        q, kd = random_directions(rng, 7, 4), random_directions(rng, 7, 4)
        p = rng.normal(size=(7, 4))
        mask = np.array([1, 1, 0, 1, 1, 0, 1], bool)
        out, w = ska_attention(q, kd, p, b, mask)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-14)
        assert np.all(w[:, ~mask] == 0)
        np.testing.assert_allclose(np.linalg.norm(out[mask], axis=-1), 1.0, atol=1e-14)

    def test_single_key(self):
        rng = np.random.default_rng(9)
        b = get_basis(4, 2)
        p = rng.normal(size=(1, 4))
        out, w = ska_attention(random_directions(rng, 1, 4), random_directions(rng, 1, 4), p, b)
        np.testing.assert_allclose(out[0], p[0] / np.linalg.norm(p[0]), atol=1e-15)
        assert w[0, 0] == 1.0

    def test_identical_keys_give_uniform_weights(self):
        rng = np.random.default_rng(10)
        b = get_basis(6, 3)
        kd = np.repeat(random_directions(rng, 1, 6), 9, axis=0)
        _, w = ska_attention(random_directions(rng, 9, 6), kd, rng.normal(size=(9, 6)), b)
        np.testing.assert_allclose(w, 1 / 9, atol=1e-15)

    def test_scores_use_scaled_kernel(self):
        rng = np.random.default_rng(11)
        b = get_basis(4, 2)
        q, kd = random_directions(rng, 5, 4), random_directions(rng, 5, 4)
        _, w = ska_attention(q, kd, rng.normal(size=(5, 4)), b)
        s = (b.eval(q) @ b.eval(kd).T) / np.sqrt(b.dim)
        ref = np.exp(s - s.max(axis=1, keepdims=True))
        np.testing.assert_allclose(w, ref / ref.sum(axis=1, keepdims=True), atol=1e-14)

    def test_all_masked_raises(self):
        rng = np.random.default_rng(12)
        b = get_basis(4, 1)
        with pytest.raises(ContractViolation):
            ska_attention(random_directions(rng, 3, 4), random_directions(rng, 3, 4), np.ones((3, 4)), b,
                          np.zeros(3, bool))


def make_layer(seed=0, d=12, k=4, L=2, H=2, perturb=True):
    rng = np.random.default_rng(seed)
    layer = DualSkaLayer(d, k, L, H, rng=rng)
    if perturb:
        for n in ("beta_deg", "w_conj", "beta_fus"):
            layer.params[n] = rng.normal(size=layer.params[n].shape)
    return layer


class TestLayer:
    def test_output_shape_and_count(self):
        layer = make_layer()
        out = layer(np.random.default_rng(0).normal(size=(3, 5, 12)))
        assert out.shape == (3, 5, 12)
        assert layer.num_parameters() == 4 * 2 * 4 * 12 + 2 * 2 * 3 + 2

    def test_fusion_half_is_exact(self):
        layer = make_layer(perturb=False)
        x = np.random.default_rng(1).normal(size=(2, 6, 12))
        _, c = layer.forward(x)
        z = 0.5 * c["y_sfa"] + 0.5 * c["y_ska"]
        np.testing.assert_array_equal(c["zcat"], z.transpose(0, 2, 1, 3).reshape(2, 6, -1))

    @pytest.mark.parametrize("beta,branch", [(20.0, "y_sfa"), (-20.0, "y_ska")])
    def test_fusion_saturates(self, beta, branch):
        layer = make_layer()
        layer.params["beta_fus"][:] = beta
        x = np.random.default_rng(2).normal(size=(2, 6, 12))
        out, c = layer.forward(x)
        pure = c[branch].transpose(0, 2, 1, 3).reshape(2, 6, -1) @ layer.params["wo"].T
        assert np.max(np.abs(out - pure)) <= 1e-8

    def test_zero_upstream_gives_zero_gradients(self):
        layer = make_layer()
        x = np.random.default_rng(3).normal(size=(2, 5, 12))
        _, cache = layer.forward(x)
        dx, grads = layer.backward(cache, np.zeros_like(x))
        assert np.all(dx == 0)
        assert all(np.all(g == 0) for g in grads.values())

    @pytest.mark.parametrize("k,L,H", [(4, 1, 1), (4, 2, 2), (6, 2, 2)])
    def test_gradients_match_finite_differences(self, k, L, H):
        rng = np.random.default_rng(4)
        layer = make_layer(seed=5, d=16, k=k, L=L, H=H)
        x = rng.normal(size=(2, 7, 16))
        conj = rng.integers(0, 2, size=(2, 7))
        mask = np.ones((2, 7), bool)
        mask[1, 5:] = False
        up = rng.normal(size=(2, 7, 16))
        _, cache = layer.forward(x, conj, mask)
        dx, grads = layer.backward(cache, up)
        grads["x"] = dx

        def loss(p):
            old = layer.params
            layer.params = {n: p[n] for n in old}
            try:
                return np.sum(layer.forward(p["x"], conj, mask)[0] * up)
            finally:
                layer.params = old

        report = finite_diff_check(loss, {**layer.params, "x": x}, grads)
        assert report.max_rel_error <= 1e-6, report.as_text()

    def test_fusion_gradient_sign_follows_branch_preference(self):
        # With W_O = I, an upstream of +(y_sfa - y_ska) rewards the SFA branch and the
        # fusion-logit gradient is positive; swapping the roles flips its sign.
        k, H = 4, 2
        layer = make_layer(d=k * H, k=k, H=H)
        layer.params["wo"] = np.eye(k * H)
        x = np.random.default_rng(6).normal(size=(1, 6, k * H))
        _, c = layer.forward(x)
        diff = (c["y_sfa"] - c["y_ska"]).transpose(0, 2, 1, 3).reshape(1, 6, -1)
        g_plus = layer.backward(c, diff)[1]["beta_fus"]
        g_minus = layer.backward(c, -diff)[1]["beta_fus"]
        assert np.all(g_plus > 0) and np.all(g_minus < 0)
        alpha = sigmoid(layer.params["beta_fus"])
        per_head = np.sum((c["y_sfa"] - c["y_ska"]) ** 2, axis=(0, 2, 3))
        np.testing.assert_allclose(g_plus, alpha * (1 - alpha) * per_head, rtol=1e-10)

    def test_terminal_state_permutation_invariant_at_unit_gate(self):
        layer = make_layer(perturb=False)
        layer.params["beta_deg"][:] = 40.0  # sigmoid(40) rounds to exactly 1
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 9, 12))
        perm = rng.permutation(9)
        _, c1 = layer.forward(x)
        _, c2 = layer.forward(x[:, perm])
        assert np.all(c1["gates"] == 1.0)
        np.testing.assert_allclose(c2["m_fwd"][:, :, -1], c1["m_fwd"][:, :, -1], atol=1e-10)
        np.testing.assert_allclose(c2["m_bwd"][:, :, 0], c1["m_bwd"][:, :, 0], atol=1e-10)
        # Outputs at matched positions agree once each readout sees the full state.
        both1 = sfa_output(c1["m_fwd"][:, :, -1:], c1["m_bwd"][:, :, :1], c1["qfeat"])
        both2 = sfa_output(c2["m_fwd"][:, :, -1:], c2["m_bwd"][:, :, :1], c2["qfeat"])
        np.testing.assert_allclose(both2, both1[:, :, perm], atol=1e-10)

    def test_masked_content_does_not_leak(self):
        layer = make_layer()
        rng = np.random.default_rng(8)
        x = rng.normal(size=(1, 8, 12))
        mask = np.array([[1, 1, 1, 1, 1, 0, 0, 0]], bool)
        conj = rng.integers(0, 2, size=(1, 8))
        out1 = layer(x, conj, mask)
        x2 = x.copy()
        x2[:, 5:] = rng.normal(size=(1, 3, 12))
        conj2 = conj.copy()
        conj2[:, 5:] = 1 - conj2[:, 5:]
        out2 = layer(x2, conj2, mask)
        np.testing.assert_array_equal(out1[:, :5], out2[:, :5])

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            make_layer()(np.zeros((1, 3, 5)))
