"""Token embedding through learnable sphere directions.

Each token owns a direction P[t] in R^k.  Its embedding is

    e = W_up (Phi(P[t] / |P[t]|) + B_tok[t]) + R Phi(P[t] / |P[t]|)

where ``R`` (``resid_proj``) is a second d x D* projection that starts at
zero, so at initialisation the embedding is the up-projected lift alone.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateDirectionError, ShapeError, VocabularyError
from .harmonics import get_basis, random_directions

MIN_ROW_NORM = 1e-6


class ShEmbedding:
    PARAM_NAMES = ("P", "B_tok", "resid_proj", "W_up")

    def __init__(self, vocab_size: int, k: int, L: int, d: int, rng=None, dtype=float):
        self.V, self.k, self.L, self.d = int(vocab_size), int(k), int(L), int(d)
        self.basis = get_basis(k, L)
        rng = np.random.default_rng(0) if rng is None else rng
        D = self.basis.dim
        bound = 1.0 / math.sqrt(D)
        self.params = {
            "P": random_directions(rng, self.V, k).astype(dtype),
            "B_tok": np.zeros((self.V, D), dtype=dtype),
            "resid_proj": np.zeros((d, D), dtype=dtype),
            "W_up": rng.uniform(-bound, bound, size=(d, D)).astype(dtype),
        }

    trainable = PARAM_NAMES

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def _check_ids(self, ids):
        ids = np.asarray(ids)
        if not np.issubdtype(ids.dtype, np.integer):
            raise VocabularyError("token ids must be integers")
        if ids.size and (ids.min() < 0 or ids.max() >= self.V):
            raise VocabularyError(f"token id outside [0, {self.V})")
        return ids

    def directions(self, ids):
        """Unit directions p_hat for ``ids`` and the raw row norms."""
        rows = self.params["P"][ids]
        norm = np.linalg.norm(rows, axis=-1, keepdims=True)
        if np.any(norm < MIN_ROW_NORM):
            raise DegenerateDirectionError("direction table row has norm below 1e-6")
        return rows / norm, norm

    def forward(self, ids):
        ids = self._check_ids(ids)
        pr = self.params
        dirs, norm = self.directions(ids)
        phi, jac = self.basis.eval_with_jacobian(dirs)
        lifted = phi + pr["B_tok"][ids]
        out = lifted @ pr["W_up"].T + phi @ pr["resid_proj"].T
        return out, (ids, dirs, norm, phi, jac, lifted)

    def __call__(self, ids):
        return self.forward(ids)[0]

    def backward(self, cache, dout):
        ids, dirs, norm, phi, jac, lifted = cache
        pr = self.params
        d, D = self.d, self.basis.dim
        if dout.shape != ids.shape + (d,):
            raise ShapeError(f"upstream gradient must have shape {ids.shape + (d,)}")
        g2 = dout.reshape(-1, d)
        grads = {
            "W_up": g2.T @ lifted.reshape(-1, D),
            "resid_proj": g2.T @ phi.reshape(-1, D),
        }
        dlift = dout @ pr["W_up"]
        dphi = dlift + dout @ pr["resid_proj"]
        db = np.zeros_like(pr["B_tok"])
        np.add.at(db, ids.reshape(-1), dlift.reshape(-1, D))
        grads["B_tok"] = db
        ddir = np.einsum("...m,...mi->...i", dphi, jac)
        drow = (ddir - dirs * np.sum(dirs * ddir, axis=-1, keepdims=True)) / norm
        dp = np.zeros_like(pr["P"])
        np.add.at(dp, ids.reshape(-1), drow.reshape(-1, self.k))
        grads["P"] = dp
        return grads
