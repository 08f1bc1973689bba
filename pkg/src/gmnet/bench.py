"""Wall-clock scaling of the two attention branches."""

from __future__ import annotations

import time

import numpy as np

from .attention import decay_gate, scan_features, sfa_output, ska_attention
from .harmonics import get_basis, random_directions


def _inputs(rng, heads, t_len, k):
    q = random_directions(rng, heads * t_len, k).reshape(heads, t_len, k)
    kd = random_directions(rng, heads * t_len, k).reshape(heads, t_len, k)
    p = rng.standard_normal((heads, t_len, k))
    conj = rng.integers(0, 2, size=(heads, t_len))
    return q, kd, p, conj


def sfa_branch(q, kd, p, conj, basis, beta, w_conj):
    gates = decay_gate(beta[:, None, :], w_conj[:, None, :], conj, basis)
    kf = basis.eval(kd)
    qf = basis.eval(q)
    return sfa_output(scan_features(kf, p, gates, "forward"), scan_features(kf, p, gates, "backward"), qf)


def ska_branch(q, kd, p, basis):
    return ska_attention(q, kd, p, basis)[0]


def run_bench(seq_lens=(128, 256), reps: int = 20, k: int = 8, L: int = 3, heads: int = 12, seed: int = 0):
    """Median seconds per branch for each T; returns {T: {"sfa": s, "ska": s}}."""
    rng = np.random.default_rng(seed)
    basis = get_basis(k, L)
    beta = np.full((heads, L + 1), 2.0)
    w_conj = rng.standard_normal((heads, L + 1))
    results = {}
    for t_len in seq_lens:
        q, kd, p, conj = _inputs(rng, heads, t_len, k)
        sfa_branch(q, kd, p, conj, basis, beta, w_conj)
        ska_branch(q, kd, p, basis)
        times = {"sfa": [], "ska": []}
        for _ in range(reps):
            t0 = time.perf_counter()
            sfa_branch(q, kd, p, conj, basis, beta, w_conj)
            t1 = time.perf_counter()
            ska_branch(q, kd, p, basis)
            t2 = time.perf_counter()
            times["sfa"].append(t1 - t0)
            times["ska"].append(t2 - t1)
        results[t_len] = {
            name: {
                "median": float(np.median(v)),
                "spread": float(np.std(v)) if len(v) > 1 else None,
            }
            for name, v in times.items()
        }
    return results


def scaling_ratios(results):
    """Ratios time(T_next) / time(T) for consecutive sequence lengths."""
    lens = sorted(results)
    out = []
    for a, b in zip(lens, lens[1:]):
        out.append(
            (a, b, results[b]["sfa"]["median"] / results[a]["sfa"]["median"],
             results[b]["ska"]["median"] / results[a]["ska"]["median"])
        )
    return out


def format_table(results) -> str:
    lines = [f"{'T':>6} {'sfa_median_s':>14} {'ska_median_s':>14} {'sfa_std':>10} {'ska_std':>10}"]
    for t_len in sorted(results):
        r = results[t_len]
        sd = [r[b]["spread"] for b in ("sfa", "ska")]
        sd_txt = [f"{s:10.2e}" if s is not None else f"{'-':>10}" for s in sd]
        lines.append(f"{t_len:>6} {r['sfa']['median']:14.6f} {r['ska']['median']:14.6f} {sd_txt[0]} {sd_txt[1]}")
    for a, b, rs, rk in scaling_ratios(results):
        lines.append(f"ratio T={a}->{b}: sfa {rs:.3f}  ska {rk:.3f}")
    return "\n".join(lines)
