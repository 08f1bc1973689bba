"""The full encoder: embedding, attention/FFN blocks, pooling and task head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import DualSkaLayer
from .embedding import ShEmbedding
from .errors import ContractViolation, DomainError, SequenceLengthError, ShapeError
from .ffn import ShFfnLayer
from .harmonics import feature_dim

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    k: int = 8
    L: int = 3
    d: int = 384
    H: int = 12
    n_layers: int = 3
    vocab_size: int = 591
    max_seq_len: int = 514
    dropout: float = 0.144
    preset: str = "cb10m"
    n_out: int = 2
    activation: str = "gelu"
    adaptive_ffn: bool = False

    def __post_init__(self):
        for name in ("k", "d", "H", "n_layers", "vocab_size", "max_seq_len", "n_out"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.k < 2:
            raise DomainError("k must be >= 2")
        if self.L < 0:
            raise DomainError("L must be >= 0")
        if self.d % self.H:
            raise DomainError(f"d={self.d} is not divisible by H={self.H}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError("dropout must lie in [0, 1)")

    @classmethod
    def preset_cb10m(cls, k: int = 8, L: int = 3, **overrides) -> "ModelConfig":
        base = dict(d=384, n_layers=3, H=12, vocab_size=591, dropout=0.144, max_seq_len=514, preset="cb10m")
        base.update(overrides)
        return cls(k=k, L=L, **base)

    @classmethod
    def from_preset(cls, name: str, k: int, L: int, **overrides) -> "ModelConfig":
        if name != "cb10m":
            raise DomainError(f"unknown preset {name!r}")
        return cls.preset_cb10m(k, L, **overrides)

    def to_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in sorted(asdict(self).items()))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            if key not in types:
                raise DomainError(f"unknown config key {key!r}")
            t = types[key]
            if t in ("int", int):
                kw[key] = int(raw)
            elif t in ("float", float):
                kw[key] = float(raw)
            elif t in ("bool", bool):
                if raw not in ("True", "False"):
                    raise DomainError(f"bad boolean {raw!r} for {key}")
                kw[key] = raw == "True"
            else:
                kw[key] = raw
        return cls(**kw)


# Reference parameter totals for the cb10m shape over the (k, L) grid.
REFERENCE_TOTALS = {
    (6, 2): 1_688_513,
    (6, 3): 1_871_699,
    (6, 4): 2_256_350,
    (8, 2): 1_786_526,
    (8, 3): 2_196_818,
    (8, 4): 3_061_970,
    (10, 2): 1_899_191,
    (10, 3): 2_668_457,
    (10, 4): 4_401_392,
}

# Reference per-module ledger at cb10m, k=8, L=3.
REFERENCE_LEDGER = {
    "embedding": 216_732,
    "attention": 1_638_324,
    "ffn": 192_384,
    "ln_f": 768,
    "head": 148_610,
    "total": 2_196_818,
}


def count_parameters(config: ModelConfig) -> dict:
    """Trainable parameter ledger by module, computed from shapes alone."""
    k, L, d, H, V = config.k, config.L, config.d, config.H, config.vocab_size
    D = feature_dim(k, L)
    ln = 2 * d
    embedding = V * k + V * D + 2 * d * D
    # 3 projections in, 1 out; beta_deg and w_conj are H x (L+1); beta_fus is H.
    attn_layer = 4 * H * k * d + 2 * H * (L + 1) + H
    ffn_layer = d * k + d * D + ((L + 1) if config.adaptive_ffn else 0)
    ledger = {
        "embedding": embedding,
        "attention": config.n_layers * (attn_layer + ln),
        "ffn": config.n_layers * (ffn_layer + ln),
        "ln_f": ln,
        "head": d * d + d + config.n_out * d + config.n_out,
    }
    ledger["total"] = sum(ledger.values())
    return ledger


# -- small layers -----------------------------------------------------------


def layer_norm(x, weight, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * weight + bias, (xhat, inv)


def layer_norm_backward(cache, weight, dy):
    xhat, inv = cache
    n = xhat.shape[-1]
    dw = (dy * xhat).reshape(-1, n).sum(axis=0)
    db = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * weight
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dw, db


def _dropout_mask(rng, shape, rate, dtype):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


class GmNetModel:
    """Encoder with named parameters.

    Parameter names: ``emb.*``, ``layer{i}.attn.*``, ``layer{i}.ffn.*``,
    ``layer{i}.ln1.*``, ``layer{i}.ln2.*``, ``ln_f.*``, ``head.dense.*``,
    ``head.out_proj.*``.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=float):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.embedding = ShEmbedding(c.vocab_size, c.k, c.L, c.d, rng=rng, dtype=dtype)
        self.blocks = []
        for _ in range(c.n_layers):
            attn = DualSkaLayer(c.d, c.k, c.L, c.H, rng=rng, dtype=dtype)
            ffn = ShFfnLayer(c.d, c.k, c.L, activation=c.activation, adaptive=c.adaptive_ffn, rng=rng, dtype=dtype)
            ln1 = {"weight": np.ones(c.d, dtype=dtype), "bias": np.zeros(c.d, dtype=dtype)}
            ln2 = {"weight": np.ones(c.d, dtype=dtype), "bias": np.zeros(c.d, dtype=dtype)}
            self.blocks.append({"attn": attn, "ffn": ffn, "ln1": ln1, "ln2": ln2})
        self.ln_f = {"weight": np.ones(c.d, dtype=dtype), "bias": np.zeros(c.d, dtype=dtype)}
        b = 1.0 / math.sqrt(c.d)
        self.head = {
            "dense": {
                "weight": rng.uniform(-b, b, size=(c.d, c.d)).astype(dtype),
                "bias": np.zeros(c.d, dtype=dtype),
            },
            "out_proj": {
                "weight": rng.uniform(-b, b, size=(c.n_out, c.d)).astype(dtype),
                "bias": np.zeros(c.n_out, dtype=dtype),
            },
        }

    # -- parameter plumbing ----------------------------------------------

    def _slots(self):
        """(name, owning dict, key, trainable) for every tensor, in fixed order."""
        out = [(f"emb.{n}", self.embedding.params, n, True) for n in ShEmbedding.PARAM_NAMES]
        for i, blk in enumerate(self.blocks):
            out += [(f"layer{i}.attn.{n}", blk["attn"].params, n, True) for n in DualSkaLayer.PARAM_NAMES]
            ffn = blk["ffn"]
            out += [(f"layer{i}.ffn.{n}", ffn.params, n, n in ffn.trainable) for n in ("w_sphere", "m", "a")]
            for ln in ("ln1", "ln2"):
                out += [(f"layer{i}.{ln}.{n}", blk[ln], n, True) for n in ("weight", "bias")]
        out += [(f"ln_f.{n}", self.ln_f, n, True) for n in ("weight", "bias")]
        for part in ("dense", "out_proj"):
            out += [(f"head.{part}.{n}", self.head[part], n, True) for n in ("weight", "bias")]
        return out

    def named_tensors(self) -> dict:
        return {name: owner[key] for name, owner, key, _ in self._slots()}

    def trainable_names(self) -> list:
        return [name for name, _, _, tr in self._slots() if tr]

    def parameters(self) -> dict:
        """Trainable tensors by name (live references)."""
        return {name: owner[key] for name, owner, key, tr in self._slots() if tr}

    def set_tensors(self, tensors: dict, strict: bool = False):
        slots = {name: (owner, key) for name, owner, key, _ in self._slots()}
        if strict and set(tensors) != set(slots):
            missing = sorted(set(slots) - set(tensors))
            extra = sorted(set(tensors) - set(slots))
            raise ContractViolation(f"tensor set mismatch; missing={missing} unexpected={extra}")
        for name, value in tensors.items():
            if name not in slots:
                raise ContractViolation(f"unknown tensor {name!r}")
            owner, key = slots[name]
            if np.shape(value) != owner[key].shape:
                raise ShapeError(f"{name}: expected shape {owner[key].shape}, got {np.shape(value)}")
            owner[key] = value

    def num_parameters(self) -> int:
        return sum(v.size for v in self.parameters().values())

    # -- forward / backward ----------------------------------------------

    def forward(self, ids, conj=None, mask=None, train: bool = False, rng=None):
        """Returns (pooled (B, d), outputs (B, n_out), cache)."""
        c = self.config
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
        b, t_len = ids.shape
        if t_len == 0:
            raise SequenceLengthError("empty token sequence")
        if t_len > c.max_seq_len:
            raise SequenceLengthError(f"sequence length {t_len} exceeds max_seq_len {c.max_seq_len}")
        mask = np.ones((b, t_len), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(b, t_len)
        conj = np.zeros((b, t_len)) if conj is None else np.asarray(conj).reshape(b, t_len)
        if np.any(~mask.any(axis=1)):
            raise ContractViolation("every sequence needs at least one real token")
        rate = c.dropout if train else 0.0
        if rate > 0 and rng is None:
            raise ContractViolation("training-mode dropout needs an explicit generator")

        h, emb_cache = self.embedding.forward(ids)
        block_caches = []
        for blk in self.blocks:
            bc = {}
            a_in, bc["ln1"] = layer_norm(h, blk["ln1"]["weight"], blk["ln1"]["bias"])
            a_out, bc["attn"] = blk["attn"].forward(a_in, conj, mask)
            if rate > 0:
                bc["drop1"] = _dropout_mask(rng, a_out.shape, rate, a_out.dtype)
                a_out = a_out * bc["drop1"]
            h = h + a_out
            f_in, bc["ln2"] = layer_norm(h, blk["ln2"]["weight"], blk["ln2"]["bias"])
            f_out, bc["ffn"] = blk["ffn"].forward(f_in)
            if rate > 0:
                bc["drop2"] = _dropout_mask(rng, f_out.shape, rate, f_out.dtype)
                f_out = f_out * bc["drop2"]
            h = h + f_out
            block_caches.append(bc)
        hf, lnf_cache = layer_norm(h, self.ln_f["weight"], self.ln_f["bias"])
        wmask = mask.astype(hf.dtype)
        count = wmask.sum(axis=1, keepdims=True)
        pooled = np.einsum("bt,btd->bd", wmask, hf) / count
        dense = pooled @ self.head["dense"]["weight"].T + self.head["dense"]["bias"]
        out = dense @ self.head["out_proj"]["weight"].T + self.head["out_proj"]["bias"]
        cache = dict(
            emb=emb_cache, blocks=block_caches, lnf=lnf_cache, wmask=wmask, count=count,
            pooled=pooled, dense=dense, mask=mask,
        )
        return pooled, out, cache

    def __call__(self, ids, conj=None, mask=None):
        return self.forward(ids, conj, mask)[1]

    def backward(self, cache, dout, dpooled=None):
        """Gradients of a loss given d loss / d outputs (and optionally / d pooled)."""
        grads = {}
        hd, ho = self.head["dense"], self.head["out_proj"]
        grads["head.out_proj.weight"] = dout.T @ cache["dense"]
        grads["head.out_proj.bias"] = dout.sum(axis=0)
        ddense = dout @ ho["weight"]
        grads["head.dense.weight"] = ddense.T @ cache["pooled"]
        grads["head.dense.bias"] = ddense.sum(axis=0)
        dpool = ddense @ hd["weight"]
        if dpooled is not None:
            dpool = dpool + dpooled
        dhf = (cache["wmask"] / cache["count"])[:, :, None] * dpool[:, None, :]
        dh, grads["ln_f.weight"], grads["ln_f.bias"] = layer_norm_backward(cache["lnf"], self.ln_f["weight"], dhf)
        for i in range(len(self.blocks) - 1, -1, -1):
            blk, bc = self.blocks[i], cache["blocks"][i]
            df = dh * bc["drop2"] if "drop2" in bc else dh
            df_in, g = blk["ffn"].backward(bc["ffn"], df)
            for n, v in g.items():
                grads[f"layer{i}.ffn.{n}"] = v
            dx, grads[f"layer{i}.ln2.weight"], grads[f"layer{i}.ln2.bias"] = layer_norm_backward(
                bc["ln2"], blk["ln2"]["weight"], df_in
            )
            dh = dh + dx
            da = dh * bc["drop1"] if "drop1" in bc else dh
            da_in, g = blk["attn"].backward(bc["attn"], da)
            for n, v in g.items():
                grads[f"layer{i}.attn.{n}"] = v
            dx, grads[f"layer{i}.ln1.weight"], grads[f"layer{i}.ln1.bias"] = layer_norm_backward(
                bc["ln1"], blk["ln1"]["weight"], da_in
            )
            dh = dh + dx
        for n, v in self.embedding.backward(cache["emb"], dh).items():
            grads[f"emb.{n}"] = v
        return grads

    def moment_states(self, cache):
        """Per-layer (forward, backward) moment states, each (B, H, T, D*, k)."""
        return [(bc["attn"]["m_fwd"], bc["attn"]["m_bwd"]) for bc in cache["blocks"]]
