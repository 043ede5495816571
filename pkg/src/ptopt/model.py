"""Encoder-decoder attention network for daily long/short asset allocation.

The network reads two consecutive return windows of length tau: the encoder
sees the older window, the decoder the newer one, so cross-attention only
ever looks further into the past. Each decoder position is mapped to per
asset scores s and then to weights w = sign(s) * softmax(s), which makes
every weight row satisfy sum(|w|) = 1 by construction.

Time is encoded per window position (0-based) with a learned linear-plus
sinusoidal feature vector that is concatenated to the asset returns before
a shared linear projection into model width.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

import ptopt.autograd as ag
from ptopt.autograd import ContractError, ShapeError, Tensor

MASK_BLOCK = -1e9
CHECKPOINT_MAGIC = "PTCKPT1"


@dataclass(frozen=True)
class PTConfig:
    """Architecture hyperparameters of the allocation network."""

    n_assets: int
    window: int
    d_model: int
    n_heads: int
    t2v_k: int
    n_layers: int = 4
    attention_scale_mode: str = "d_model"
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_assets < 2:
            raise ValueError(f"n_assets must be >= 2, got {self.n_assets}")
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if not (self.d_model >= self.n_heads >= 1):
            raise ValueError(f"need d_model >= n_heads >= 1, got {self.d_model}/{self.n_heads}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"n_heads {self.n_heads} must divide d_model {self.d_model}")
        if self.t2v_k < 1:
            raise ValueError(f"t2v_k must be >= 1, got {self.t2v_k}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.attention_scale_mode not in ("d_model", "d_k"):
            raise ValueError(f"attention_scale_mode must be 'd_model' or 'd_k', got {self.attention_scale_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


class Dense:
    """Affine map x @ W + b on row-major activations."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = _uniform_init(rng, fan_in, (fan_in, fan_out))
        self.b = Tensor(np.zeros(fan_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.matmul(x, self.W)
        return ag.add(y, self.b) if self.b is not None else y

    def parameters(self) -> dict[str, Tensor]:
        out = {"W": self.W}
        if self.b is not None:
            out["b"] = self.b
        return out


class Time2VecLayer:
    """Learned time features: one linear component plus k sinusoids."""

    def __init__(self, k: int, rng: np.random.Generator):
        if k < 1:
            raise ValueError(f"need at least one periodic component, got k={k}")
        self.k = k
        self.omega = Tensor(rng.uniform(-1.0, 1.0, k + 1), requires_grad=True)
        self.phi = Tensor(rng.uniform(-1.0, 1.0, k + 1), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"omega": self.omega, "phi": self.phi}


def time2vec_encode(t_index: int, layer: Time2VecLayer) -> Tensor:
    """Feature vector of a window position: [w0*t+p0, sin(wi*t+pi)...]."""
    a = ag.add(ag.scale(layer.omega, float(t_index)), layer.phi)
    return ag.concat([ag.slice_(a, 0, 0, 1), ag.sin(ag.slice_(a, 0, 1, layer.k + 1))], axis=0)


def _time2vec_matrix(n_rows: int, layer: Time2VecLayer) -> Tensor:
    """Stacked time features for positions 0..n_rows-1, shape (n_rows, k+1)."""
    t = Tensor(np.arange(n_rows, dtype=np.float64).reshape(n_rows, 1))
    a = ag.add(ag.matmul(t, ag.reshape(layer.omega, (1, layer.k + 1))), layer.phi)
    return ag.concat([ag.slice_(a, 1, 0, 1), ag.sin(ag.slice_(a, 1, 1, layer.k + 1))], axis=1)


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with an optional additive mask."""
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key/value row mismatch: {k.shape} vs {v.shape}")
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / scale)
    if mask is not None:
        if mask.shape != scores.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match scores {scores.shape}")
        if np.any(np.all(mask <= MASK_BLOCK / 2, axis=1)):
            raise ContractError("attention mask blocks an entire row")
        scores = ag.add(scores, Tensor(mask))
    return ag.matmul(ag.softmax(scores, axis=-1), v)


class MHALayer:
    """Multi-head attention: per-head Q/K/V projections and output mix."""

    def __init__(self, d_model: int, n_heads: int, scale: float, rng: np.random.Generator):
        d_k = d_model // n_heads
        self.n_heads = n_heads
        self.scale = scale
        self.wq = [_uniform_init(rng, d_model, (d_model, d_k)) for _ in range(n_heads)]
        self.wk = [_uniform_init(rng, d_model, (d_model, d_k)) for _ in range(n_heads)]
        self.wv = [_uniform_init(rng, d_model, (d_model, d_k)) for _ in range(n_heads)]
        self.wo = _uniform_init(rng, n_heads * d_k, (n_heads * d_k, d_model))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i in range(self.n_heads):
            out[f"q{i}"] = self.wq[i]
            out[f"k{i}"] = self.wk[i]
            out[f"v{i}"] = self.wv[i]
        out["o"] = self.wo
        return out


def multi_head_attention(
    q_in: Tensor, k_in: Tensor, v_in: Tensor, layer: MHALayer, mask: np.ndarray | None = None
) -> Tensor:
    heads = [
        attention(
            ag.matmul(q_in, layer.wq[i]),
            ag.matmul(k_in, layer.wk[i]),
            ag.matmul(v_in, layer.wv[i]),
            layer.scale,
            mask,
        )
        for i in range(layer.n_heads)
    ]
    mixed = heads[0] if layer.n_heads == 1 else ag.concat(heads, axis=1)
    return ag.matmul(mixed, layer.wo)


class GRNLayer:
    """Gated residual block: dense pair, GLU gate, residual layer norm."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.inner = Dense(d_model, d_model, rng)
        self.outer = Dense(d_model, d_model, rng)
        self.glu_value = Dense(d_model, d_model, rng)
        self.glu_gate = Dense(d_model, d_model, rng)
        self.ln_gain = Tensor(np.ones(d_model), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(d_model), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, dense in (
            ("inner", self.inner),
            ("outer", self.outer),
            ("glu_value", self.glu_value),
            ("glu_gate", self.glu_gate),
        ):
            for name, t in dense.parameters().items():
                out[f"{prefix}.{name}"] = t
        out["ln_gain"] = self.ln_gain
        out["ln_bias"] = self.ln_bias
        return out


def grn(z: Tensor, layer: GRNLayer, drop: Callable[[Tensor], Tensor] | None = None) -> Tensor:
    g2 = ag.elu(layer.inner(z))
    g1 = layer.outer(g2)
    gated = ag.mul(layer.glu_value(g1), ag.sigmoid(layer.glu_gate(g1)))
    if drop is not None:
        gated = drop(gated)
    return ag.layer_norm(ag.add(z, gated), layer.ln_gain, layer.ln_bias)


class EncoderLayer:
    def __init__(self, d_model: int, n_heads: int, scale: float, rng: np.random.Generator):
        self.mha = MHALayer(d_model, n_heads, scale, rng)
        self.ln_gain = Tensor(np.ones(d_model), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(d_model), requires_grad=True)
        self.grn = GRNLayer(d_model, rng)

    def forward(self, x: Tensor, drop=None) -> Tensor:
        attended = multi_head_attention(x, x, x, self.mha)
        if drop is not None:
            attended = drop(attended)
        a = ag.layer_norm(ag.add(x, attended), self.ln_gain, self.ln_bias)
        return grn(a, self.grn, drop)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"mha.{k}": v for k, v in self.mha.parameters().items()}
        out["ln_gain"] = self.ln_gain
        out["ln_bias"] = self.ln_bias
        out.update({f"grn.{k}": v for k, v in self.grn.parameters().items()})
        return out


class DecoderLayer:
    def __init__(self, d_model: int, n_heads: int, scale: float, rng: np.random.Generator):
        self.self_mha = MHALayer(d_model, n_heads, scale, rng)
        self.ln1_gain = Tensor(np.ones(d_model), requires_grad=True)
        self.ln1_bias = Tensor(np.zeros(d_model), requires_grad=True)
        self.cross_mha = MHALayer(d_model, n_heads, scale, rng)
        self.ln2_gain = Tensor(np.ones(d_model), requires_grad=True)
        self.ln2_bias = Tensor(np.zeros(d_model), requires_grad=True)
        self.grn = GRNLayer(d_model, rng)

    def forward(self, x: Tensor, enc_out: Tensor, mask: np.ndarray, drop=None) -> Tensor:
        self_att = multi_head_attention(x, x, x, self.self_mha, mask)
        if drop is not None:
            self_att = drop(self_att)
        a = ag.layer_norm(ag.add(x, self_att), self.ln1_gain, self.ln1_bias)
        cross = multi_head_attention(a, enc_out, enc_out, self.cross_mha)
        if drop is not None:
            cross = drop(cross)
        b = ag.layer_norm(ag.add(a, cross), self.ln2_gain, self.ln2_bias)
        return grn(b, self.grn, drop)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"self_mha.{k}": v for k, v in self.self_mha.parameters().items()}
        out["ln1_gain"] = self.ln1_gain
        out["ln1_bias"] = self.ln1_bias
        out.update({f"cross_mha.{k}": v for k, v in self.cross_mha.parameters().items()})
        out["ln2_gain"] = self.ln2_gain
        out["ln2_bias"] = self.ln2_bias
        out.update({f"grn.{k}": v for k, v in self.grn.parameters().items()})
        return out


def causal_mask(n: int) -> np.ndarray:
    """Additive mask letting position i attend to positions j <= i only."""
    m = np.full((n, n), MASK_BLOCK)
    return np.triu(m, k=1)


def scores_to_weights(scores: Tensor) -> Tensor:
    """Per-row map s -> sign(s) * softmax(s); rows get unit gross exposure.

    The sign factor is constant in the backward pass, so gradients flow
    only through the softmax magnitudes.
    """
    return ag.mul(ag.sign_const(scores), ag.softmax(scores, axis=-1))


class PortfolioTransformer:
    """The full allocation network; see the module docstring for layout."""

    kind = "pt"

    def __init__(self, config: PTConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, h, k = config.d_model, config.n_heads, config.t2v_k
        scale = np.sqrt(float(d)) if config.attention_scale_mode == "d_model" else np.sqrt(d / h)
        self.time2vec = Time2VecLayer(k, rng)
        self.input_proj = Dense(config.n_assets + k + 1, d, rng)
        self.encoder = [EncoderLayer(d, h, scale, rng) for _ in range(config.n_layers)]
        self.decoder = [DecoderLayer(d, h, scale, rng) for _ in range(config.n_layers)]
        self.head = Dense(d, config.n_assets, rng)
        self.mask = causal_mask(config.window)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"t2v.{k}": v for k, v in self.time2vec.parameters().items()}
        out.update({f"input_proj.{k}": v for k, v in self.input_proj.parameters().items()})
        for i, layer in enumerate(self.encoder):
            out.update({f"enc{i}.{k}": v for k, v in layer.parameters().items()})
        for i, layer in enumerate(self.decoder):
            out.update({f"dec{i}.{k}": v for k, v in layer.parameters().items()})
        out.update({f"head.{k}": v for k, v in self.head.parameters().items()})
        return out

    def _drop_fn(self, rng: np.random.Generator | None):
        p = self.config.dropout
        if rng is None or p <= 0.0:
            return None

        def drop(x: Tensor) -> Tensor:
            keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
            return ag.mul(x, Tensor(keep))

        return drop

    def forward(self, x_enc: np.ndarray, x_dec: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        return pt_forward(x_enc, x_dec, self, rng=rng)

    def window_weights(self, block: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        """Weights for a training block of 2*window consecutive return rows."""
        tau = self.config.window
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (2 * tau, self.config.n_assets):
            raise ShapeError(f"block shape {block.shape} != {(2 * tau, self.config.n_assets)}")
        return self.forward(block[:tau], block[tau:], rng=rng)

    def day_weights(self, block: np.ndarray) -> np.ndarray:
        """Next-day allocation: the last decoder row, gradient-free."""
        with ag.no_grad():
            return self.window_weights(block).data[-1].copy()


def embed_window(x: np.ndarray, model: PortfolioTransformer) -> Tensor:
    """Project asset returns plus per-position time features to model width."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.n_assets:
        raise ShapeError(f"window shape {x.shape} does not match n_assets={model.config.n_assets}")
    t2v = _time2vec_matrix(x.shape[0], model.time2vec)
    return model.input_proj(ag.concat([Tensor(x), t2v], axis=1))


def pt_forward(
    x_enc: np.ndarray,
    x_dec: np.ndarray,
    model: PortfolioTransformer,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Map an (older, newer) pair of return windows to weight rows.

    Output row j is the allocation decided at the j-th position of the newer
    window; only the final row is used for live inference.
    """
    tau = model.config.window
    x_enc = np.asarray(x_enc, dtype=np.float64)
    x_dec = np.asarray(x_dec, dtype=np.float64)
    want = (tau, model.config.n_assets)
    if x_enc.shape != want or x_dec.shape != want:
        raise ShapeError(f"window shapes {x_enc.shape}/{x_dec.shape} != {want}")
    drop = model._drop_fn(rng)

    enc = embed_window(x_enc, model)
    if drop is not None:
        enc = drop(enc)
    for layer in model.encoder:
        enc = layer.forward(enc, drop)

    dec = embed_window(x_dec, model)
    if drop is not None:
        dec = drop(dec)
    for layer in model.decoder:
        dec = layer.forward(dec, enc, model.mask, drop)

    return scores_to_weights(model.head(dec))


# ---------------------------------------------------------------------------
# checkpointing

_MODEL_KINDS: dict[str, Callable[[dict], object]] = {}


def register_model_kind(kind: str, factory: Callable[[dict], object]) -> None:
    """Register a constructor taking a config dict, used by checkpoint load."""
    _MODEL_KINDS[kind] = factory


register_model_kind("pt", lambda cfg: PortfolioTransformer(PTConfig(**cfg)))


def save_checkpoint(model, path) -> None:
    """Write a self-describing parameter snapshot (versioned text format)."""
    params = {
        name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
        for name, t in model.parameters().items()
    }
    doc = {
        "kind": model.kind,
        "seed": model.config.seed,
        "config": asdict(model.config),
        "params": params,
    }
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        json.dump(doc, fh)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint file, restoring every parameter."""
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (bad magic {magic!r})")
        doc = json.load(fh)
    kind = doc["kind"]
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r} in checkpoint")
    model = _MODEL_KINDS[kind](doc["config"])
    params = model.parameters()
    if set(params) != set(doc["params"]):
        raise ValueError("checkpoint parameter names do not match the model")
    for name, t in params.items():
        entry = doc["params"][name]
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != t.shape:
            raise ShapeError(f"checkpoint shape {data.shape} != model shape {t.shape} for {name}")
        t.data = data
    return model
