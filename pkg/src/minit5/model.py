"""Small encoder-decoder transformer in float64 numpy with exact analytic
gradients.

Pre-norm blocks with RMS normalization (gain only, no bias), GELU feed-forward
without biases, multi-head attention, and either learned absolute position
embeddings (default) or T5-style relative position buckets behind a config
flag. Everything runs per example in float64, which keeps finite-difference
gradient checks tight at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .unigram import PAD_ID

LEARNED_ABSOLUTE = "learned-absolute"
RELATIVE_BUCKET = "relative-bucket"

REL_BUCKETS = 32
REL_MAX_DISTANCE = 128
NORM_EPS = 1e-6

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    max_len: int = 512
    position_scheme: str = LEARNED_ABSOLUTE
    tie_embeddings: bool = True

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved ids")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.position_scheme not in (LEARNED_ABSOLUTE, RELATIVE_BUCKET):
            raise ValueError(f"unknown position_scheme {self.position_scheme!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    cfg: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})


TrainableMask = dict[str, bool]


def embedding_only_mask(params: ModelParams) -> TrainableMask:
    """Only the token embedding (and its tied output projection) trains."""
    return {name: name == "tok_emb" for name in params.tensors}


def full_mask(params: ModelParams) -> TrainableMask:
    return {name: True for name in params.tensors}


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(cfg: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization: embeddings ~ N(0, 1/d_model), projections
    Glorot-uniform, normalization gains one, relative-bias tables zero."""
    rng = np.random.default_rng(seed)
    d, dff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    t: dict[str, np.ndarray] = {}
    t["tok_emb"] = rng.normal(0.0, 1.0 / math.sqrt(d), size=(v, d))
    if cfg.position_scheme == LEARNED_ABSOLUTE:
        t["pos_emb"] = rng.normal(0.0, 1.0 / math.sqrt(d), size=(cfg.max_len, d))
    else:
        t["enc_rel_bias"] = np.zeros((cfg.n_heads, REL_BUCKETS))
        t["dec_rel_bias"] = np.zeros((cfg.n_heads, REL_BUCKETS))

    def attn_block(prefix: str):
        for w in ("wq", "wk", "wv", "wo"):
            t[f"{prefix}.{w}"] = _glorot(rng, (d, d))

    for i in range(cfg.n_enc_layers):
        p = f"enc.{i}"
        t[f"{p}.ln1.g"] = np.ones(d)
        attn_block(f"{p}.attn")
        t[f"{p}.ln2.g"] = np.ones(d)
        t[f"{p}.ffn.w1"] = _glorot(rng, (d, dff))
        t[f"{p}.ffn.w2"] = _glorot(rng, (dff, d))
    t["enc.final_ln.g"] = np.ones(d)
    for i in range(cfg.n_dec_layers):
        p = f"dec.{i}"
        t[f"{p}.ln1.g"] = np.ones(d)
        attn_block(f"{p}.self")
        t[f"{p}.ln2.g"] = np.ones(d)
        attn_block(f"{p}.cross")
        t[f"{p}.ln3.g"] = np.ones(d)
        t[f"{p}.ffn.w1"] = _glorot(rng, (d, dff))
        t[f"{p}.ffn.w2"] = _glorot(rng, (dff, d))
    t["dec.final_ln.g"] = np.ones(d)
    if not cfg.tie_embeddings:
        t["out_proj"] = _glorot(rng, (d, v))
    t["reg.w"] = _glorot(rng, (d, 1)).reshape(d)
    t["reg.b"] = np.zeros(1)
    t["cls.w"] = _glorot(rng, (d, 2))
    t["cls.b"] = np.zeros(2)
    return ModelParams(cfg, t)


def parameter_count(params: ModelParams) -> int:
    return sum(v.size for v in params.tensors.values())


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _rmsnorm_fwd(x: np.ndarray, g: np.ndarray):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + NORM_EPS)
    return x * r * g, (x, g, r)


def _rmsnorm_bwd(dy: np.ndarray, cache):
    x, g, r = cache
    d = x.shape[-1]
    dg = np.sum(dy * x * r, axis=0)
    dyg = dy * g
    dx = dyg * r - x * (r ** 3 / d) * np.sum(dyg * x, axis=-1, keepdims=True)
    return dx, dg


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def _dgelu(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    m = np.max(s, axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    m = np.max(v, axis=-1, keepdims=True)
    z = v - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _relative_bucket_matrix(nq: int, nk: int, bidirectional: bool,
                            num_buckets: int = REL_BUCKETS,
                            max_distance: int = REL_MAX_DISTANCE) -> np.ndarray:
    """T5-style log-spaced distance buckets for relative attention bias."""
    rel = np.arange(nk)[None, :] - np.arange(nq)[:, None]
    out = np.zeros((nq, nk), dtype=np.int64)
    if bidirectional:
        num_buckets //= 2
        out += (rel > 0).astype(np.int64) * num_buckets
        rel = np.abs(rel)
    else:
        rel = -np.minimum(rel, 0)
    max_exact = num_buckets // 2
    is_small = rel < max_exact
    rel_clipped = np.maximum(rel, 1)
    large = max_exact + (
        np.log(rel_clipped / max_exact) / math.log(max_distance / max_exact)
        * (num_buckets - max_exact)
    ).astype(np.int64)
    large = np.minimum(large, num_buckets - 1)
    out += np.where(is_small, rel, large)
    return out


def _attn_fwd(h_q, h_kv, wq, wk, wv, wo, n_heads, add_bias):
    """Multi-head attention; add_bias [H-or-1, nq, nk] is added to the scaled
    scores (mask positions carry -inf)."""
    nq, d = h_q.shape
    nk = h_kv.shape[0]
    dk = d // n_heads
    scale = 1.0 / math.sqrt(dk)
    q = (h_q @ wq).reshape(nq, n_heads, dk).transpose(1, 0, 2)
    k = (h_kv @ wk).reshape(nk, n_heads, dk).transpose(1, 0, 2)
    v = (h_kv @ wv).reshape(nk, n_heads, dk).transpose(1, 0, 2)
    s = q @ k.transpose(0, 2, 1) * scale + add_bias
    p = _softmax_rows(s)
    o = (p @ v).transpose(1, 0, 2).reshape(nq, d)
    out = o @ wo
    cache = (h_q, h_kv, q, k, v, p, o, wq, wk, wv, wo, scale)
    return out, cache


def _attn_bwd(dout, cache):
    """Returns (dh_q, dh_kv, dwq, dwk, dwv, dwo, ds) where ds is the gradient
    w.r.t. the additive bias (for relative-bias tables)."""
    h_q, h_kv, q, k, v, p, o, wq, wk, wv, wo, scale = cache
    nq, d = h_q.shape
    n_heads = q.shape[0]
    dk_dim = d // n_heads
    dwo = o.T @ dout
    do = (dout @ wo.T).reshape(nq, n_heads, dk_dim).transpose(1, 0, 2)
    dp = do @ v.transpose(0, 2, 1)
    dv = p.transpose(0, 2, 1) @ do
    ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
    dq = ds @ k * scale
    dkk = ds.transpose(0, 2, 1) @ q * scale
    dq_flat = dq.transpose(1, 0, 2).reshape(nq, d)
    dk_flat = dkk.transpose(1, 0, 2).reshape(-1, d)
    dv_flat = dv.transpose(1, 0, 2).reshape(-1, d)
    dwq = h_q.T @ dq_flat
    dwk = h_kv.T @ dk_flat
    dwv = h_kv.T @ dv_flat
    dh_q = dq_flat @ wq.T
    dh_kv = dk_flat @ wk.T + dv_flat @ wv.T
    return dh_q, dh_kv, dwq, dwk, dwv, dwo, ds


def _key_mask_bias(valid: np.ndarray) -> np.ndarray:
    """[1, 1, nk] additive bias masking invalid key positions."""
    bias = np.where(valid, 0.0, -np.inf)
    return bias[None, None, :]


def _causal_bias(n: int) -> np.ndarray:
    m = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    m[iu] = -np.inf
    return m[None, :, :]


# ---------------------------------------------------------------------------
# encoder / decoder stacks
# ---------------------------------------------------------------------------

def _check_ids(cfg: ModelConfig, ids: np.ndarray, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError(f"{what} must be a non-empty 1-D id sequence")
    if ids.size > cfg.max_len:
        raise ValueError(f"{what} length {ids.size} exceeds max_len {cfg.max_len}")
    if np.any(ids < 0) or np.any(ids >= cfg.vocab_size):
        raise ValueError(f"{what} contains ids outside the vocabulary")
    return ids


def _encoder_fwd(params: ModelParams, enc_ids: np.ndarray):
    cfg, t = params.cfg, params.tensors
    n = enc_ids.size
    x = t["tok_emb"][enc_ids].copy()
    if cfg.position_scheme == LEARNED_ABSOLUTE:
        x += t["pos_emb"][:n]
        rel = None
    else:
        buckets = _relative_bucket_matrix(n, n, bidirectional=True)
        rel = (buckets, t["enc_rel_bias"][:, buckets])
    valid = enc_ids != PAD_ID
    if not np.any(valid):
        raise ValueError("encoder input is entirely padding")
    bias = _key_mask_bias(valid)
    if rel is not None:
        bias = bias + rel[1]
    layers = []
    for i in range(cfg.n_enc_layers):
        p = f"enc.{i}"
        h, c_ln1 = _rmsnorm_fwd(x, t[f"{p}.ln1.g"])
        a, c_attn = _attn_fwd(h, h, t[f"{p}.attn.wq"], t[f"{p}.attn.wk"],
                              t[f"{p}.attn.wv"], t[f"{p}.attn.wo"],
                              cfg.n_heads, bias)
        x1 = x + a
        h2, c_ln2 = _rmsnorm_fwd(x1, t[f"{p}.ln2.g"])
        u = h2 @ t[f"{p}.ffn.w1"]
        act = _gelu(u)
        x = x1 + act @ t[f"{p}.ffn.w2"]
        layers.append((c_ln1, c_attn, c_ln2, h2, u, act))
    states, c_final = _rmsnorm_fwd(x, t["enc.final_ln.g"])
    cache = {"ids": enc_ids, "valid": valid, "layers": layers,
             "final": c_final, "rel": rel}
    return states, cache


def _encoder_bwd(params: ModelParams, cache, dstates, grads):
    cfg, t = params.cfg, params.tensors
    dx, dg = _rmsnorm_bwd(dstates, cache["final"])
    grads["enc.final_ln.g"] += dg
    for i in range(cfg.n_enc_layers - 1, -1, -1):
        p = f"enc.{i}"
        c_ln1, c_attn, c_ln2, h2, u, act = cache["layers"][i]
        # ffn sublayer
        df = dx
        dact = df @ t[f"{p}.ffn.w2"].T
        grads[f"{p}.ffn.w2"] += act.T @ df
        du = dact * _dgelu(u)
        grads[f"{p}.ffn.w1"] += h2.T @ du
        dh2 = du @ t[f"{p}.ffn.w1"].T
        dx1, dg2 = _rmsnorm_bwd(dh2, c_ln2)
        grads[f"{p}.ln2.g"] += dg2
        dx1 = dx1 + dx
        # attention sublayer
        dh_q, dh_kv, dwq, dwk, dwv, dwo, ds = _attn_bwd(dx1, c_attn)
        grads[f"{p}.attn.wq"] += dwq
        grads[f"{p}.attn.wk"] += dwk
        grads[f"{p}.attn.wv"] += dwv
        grads[f"{p}.attn.wo"] += dwo
        if cache["rel"] is not None:
            buckets = cache["rel"][0]
            gb = grads["enc_rel_bias"]
            for h in range(cfg.n_heads):
                np.add.at(gb[h], buckets.ravel(), ds[h].ravel())
        dh = dh_q + dh_kv
        dx0, dg1 = _rmsnorm_bwd(dh, c_ln1)
        grads[f"{p}.ln1.g"] += dg1
        dx = dx0 + dx1
    enc_ids = cache["ids"]
    np.add.at(grads["tok_emb"], enc_ids, dx)
    if cfg.position_scheme == LEARNED_ABSOLUTE:
        grads["pos_emb"][:enc_ids.size] += dx


def _decoder_fwd(params: ModelParams, dec_ids: np.ndarray,
                 enc_states: np.ndarray, enc_valid: np.ndarray):
    cfg, t = params.cfg, params.tensors
    n = dec_ids.size
    x = t["tok_emb"][dec_ids].copy()
    if cfg.position_scheme == LEARNED_ABSOLUTE:
        x += t["pos_emb"][:n]
        rel = None
    else:
        buckets = _relative_bucket_matrix(n, n, bidirectional=False)
        rel = (buckets, t["dec_rel_bias"][:, buckets])
    self_bias = _causal_bias(n)
    if rel is not None:
        self_bias = self_bias + rel[1]
    cross_bias = _key_mask_bias(enc_valid)
    layers = []
    for i in range(cfg.n_dec_layers):
        p = f"dec.{i}"
        h, c_ln1 = _rmsnorm_fwd(x, t[f"{p}.ln1.g"])
        a, c_self = _attn_fwd(h, h, t[f"{p}.self.wq"], t[f"{p}.self.wk"],
                              t[f"{p}.self.wv"], t[f"{p}.self.wo"],
                              cfg.n_heads, self_bias)
        x1 = x + a
        hc, c_ln2 = _rmsnorm_fwd(x1, t[f"{p}.ln2.g"])
        c, c_cross = _attn_fwd(hc, enc_states, t[f"{p}.cross.wq"],
                               t[f"{p}.cross.wk"], t[f"{p}.cross.wv"],
                               t[f"{p}.cross.wo"], cfg.n_heads, cross_bias)
        x2 = x1 + c
        h2, c_ln3 = _rmsnorm_fwd(x2, t[f"{p}.ln3.g"])
        u = h2 @ t[f"{p}.ffn.w1"]
        act = _gelu(u)
        x = x2 + act @ t[f"{p}.ffn.w2"]
        layers.append((c_ln1, c_self, c_ln2, c_cross, c_ln3, h2, u, act))
    states, c_final = _rmsnorm_fwd(x, t["dec.final_ln.g"])
    cache = {"ids": dec_ids, "layers": layers, "final": c_final, "rel": rel}
    return states, cache


def _decoder_bwd(params: ModelParams, cache, dstates, grads):
    """Backprop through the decoder; returns the gradient w.r.t. enc_states."""
    cfg, t = params.cfg, params.tensors
    dx, dg = _rmsnorm_bwd(dstates, cache["final"])
    grads["dec.final_ln.g"] += dg
    d_enc = None
    for i in range(cfg.n_dec_layers - 1, -1, -1):
        p = f"dec.{i}"
        c_ln1, c_self, c_ln2, c_cross, c_ln3, h2, u, act = cache["layers"][i]
        df = dx
        dact = df @ t[f"{p}.ffn.w2"].T
        grads[f"{p}.ffn.w2"] += act.T @ df
        du = dact * _dgelu(u)
        grads[f"{p}.ffn.w1"] += h2.T @ du
        dh2 = du @ t[f"{p}.ffn.w1"].T
        dx2, dg3 = _rmsnorm_bwd(dh2, c_ln3)
        grads[f"{p}.ln3.g"] += dg3
        dx2 = dx2 + dx
        dh_q, dh_kv, dwq, dwk, dwv, dwo, _ = _attn_bwd(dx2, c_cross)
        grads[f"{p}.cross.wq"] += dwq
        grads[f"{p}.cross.wk"] += dwk
        grads[f"{p}.cross.wv"] += dwv
        grads[f"{p}.cross.wo"] += dwo
        d_enc = dh_kv if d_enc is None else d_enc + dh_kv
        dx1, dg2 = _rmsnorm_bwd(dh_q, c_ln2)
        grads[f"{p}.ln2.g"] += dg2
        dx1 = dx1 + dx2
        dh_q, dh_kv, dwq, dwk, dwv, dwo, ds = _attn_bwd(dx1, c_self)
        grads[f"{p}.self.wq"] += dwq
        grads[f"{p}.self.wk"] += dwk
        grads[f"{p}.self.wv"] += dwv
        grads[f"{p}.self.wo"] += dwo
        if cache["rel"] is not None:
            buckets = cache["rel"][0]
            gb = grads["dec_rel_bias"]
            for h in range(cfg.n_heads):
                np.add.at(gb[h], buckets.ravel(), ds[h].ravel())
        dh = dh_q + dh_kv
        dx0, dg1 = _rmsnorm_bwd(dh, c_ln1)
        grads[f"{p}.ln1.g"] += dg1
        dx = dx0 + dx1
    dec_ids = cache["ids"]
    np.add.at(grads["tok_emb"], dec_ids, dx)
    if cfg.position_scheme == LEARNED_ABSOLUTE:
        grads["pos_emb"][:dec_ids.size] += dx
    return d_enc


def _output_matrix(params: ModelParams) -> np.ndarray:
    if params.cfg.tie_embeddings:
        return params.tensors["tok_emb"].T
    return params.tensors["out_proj"]


def _forward_lm(params: ModelParams, enc_ids, dec_ids):
    cfg = params.cfg
    enc_ids = _check_ids(cfg, enc_ids, "enc_ids")
    dec_ids = _check_ids(cfg, dec_ids, "dec_ids")
    enc_states, enc_cache = _encoder_fwd(params, enc_ids)
    dec_states, dec_cache = _decoder_fwd(params, dec_ids, enc_states,
                                         enc_cache["valid"])
    logits = dec_states @ _output_matrix(params)
    cache = {"enc": enc_cache, "dec": dec_cache,
             "enc_states": enc_states, "dec_states": dec_states}
    return logits, cache


def forward(params: ModelParams, enc_ids, dec_ids) -> np.ndarray:
    """Teacher-forcing pass: next-token logits per decoder position."""
    logits, _ = _forward_lm(params, enc_ids, dec_ids)
    return logits


def _backward_lm(params: ModelParams, cache, dlogits, grads):
    cfg = params.cfg
    dec_states = cache["dec_states"]
    if cfg.tie_embeddings:
        grads["tok_emb"] += dlogits.T @ dec_states
        d_dec = dlogits @ params.tensors["tok_emb"]
    else:
        grads["out_proj"] += dec_states.T @ dlogits
        d_dec = dlogits @ params.tensors["out_proj"].T
    d_enc = _decoder_bwd(params, cache["dec"], d_dec, grads)
    _encoder_bwd(params, cache["enc"], d_enc, grads)


def loss_xent(logits: np.ndarray, target_ids, pad_mask=None) -> float:
    """Mean token-level cross-entropy over non-pad target positions."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if logits.shape[0] != target_ids.size:
        raise ValueError("logits and targets disagree in length")
    keep = target_ids != PAD_ID if pad_mask is None else np.asarray(pad_mask, bool)
    if not np.any(keep):
        raise ValueError("all target positions are padded")
    lp = log_softmax(logits)
    picked = lp[np.arange(target_ids.size), target_ids]
    return float(-np.sum(picked[keep]) / np.count_nonzero(keep))


def _xent_sum_and_dlogits(logits, target_ids, keep):
    lp = log_softmax(logits)
    rows = np.arange(target_ids.size)
    loss_sum = float(-np.sum(lp[rows, target_ids][keep]))
    dlogits = np.exp(lp)
    dlogits[rows, target_ids] -= 1.0
    dlogits[~keep] = 0.0
    return loss_sum, dlogits


def encoder_mean_pool(params: ModelParams, enc_ids) -> np.ndarray:
    """Mean of the final encoder states over non-pad positions."""
    enc_ids = _check_ids(params.cfg, enc_ids, "enc_ids")
    states, cache = _encoder_fwd(params, enc_ids)
    valid = cache["valid"]
    return states[valid].mean(axis=0)


def _pooled_fwd(params: ModelParams, enc_ids):
    enc_ids = _check_ids(params.cfg, enc_ids, "enc_ids")
    states, cache = _encoder_fwd(params, enc_ids)
    valid = cache["valid"]
    pool = states[valid].mean(axis=0)
    return pool, (cache, valid)


def _pooled_bwd(params: ModelParams, pooled_cache, dpool, grads):
    cache, valid = pooled_cache
    n_valid = np.count_nonzero(valid)
    dstates = np.zeros((valid.size, dpool.size))
    dstates[valid] = dpool / n_valid
    _encoder_bwd(params, cache, dstates, grads)


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def regression_head(pool: np.ndarray, w: np.ndarray, b: np.ndarray) -> float:
    """Similarity score: 4 * sigmoid(w . pool + b) + 1, hence in (1, 5)."""
    return 4.0 * sigmoid(float(pool @ w + b[0])) + 1.0


def classification_head(pool: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Two-class probabilities (entail, none) via softmax over a linear layer."""
    z = pool @ w + b
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def predict_similarity(params: ModelParams, enc_ids) -> float:
    pool = encoder_mean_pool(params, enc_ids)
    return regression_head(pool, params.tensors["reg.w"], params.tensors["reg.b"])


def predict_entailment(params: ModelParams, enc_ids) -> np.ndarray:
    pool = encoder_mean_pool(params, enc_ids)
    return classification_head(pool, params.tensors["cls.w"], params.tensors["cls.b"])


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def apply_trainable_mask(grads: dict[str, np.ndarray],
                         mask: TrainableMask | None) -> dict[str, np.ndarray]:
    if mask is None:
        return grads
    for name, g in grads.items():
        if not mask.get(name, False):
            g[...] = 0.0
    return grads


def accumulate_loss_and_grad(params: ModelParams, batch, objective: str,
                             grads: dict[str, np.ndarray]):
    """Add unnormalized loss and gradient sums for a (micro)batch into grads.

    Returns (loss_sum, unit_count): units are non-pad target tokens for the
    "lm" objective and examples otherwise. Accumulating microbatches into the
    same grads buffers and normalizing once reproduces a single large batch
    bit for bit, which is what makes gradient accumulation exact.
    """
    if not batch:
        raise ValueError("empty batch")
    t = params.tensors
    loss_sum = 0.0
    units = 0
    if objective == "lm":
        for enc_ids, dec_in, targets in batch:
            logits, cache = _forward_lm(params, enc_ids, dec_in)
            targets = np.asarray(targets, dtype=np.int64)
            keep = targets != PAD_ID
            if not np.any(keep):
                raise ValueError("all target positions are padded")
            part, dlogits = _xent_sum_and_dlogits(logits, targets, keep)
            loss_sum += part
            units += int(np.count_nonzero(keep))
            _backward_lm(params, cache, dlogits, grads)
    elif objective == "regression":
        for enc_ids, score in batch:
            pool, pcache = _pooled_fwd(params, enc_ids)
            z = float(pool @ t["reg.w"] + t["reg.b"][0])
            s = sigmoid(z)
            pred = 4.0 * s + 1.0
            diff = pred - float(score)
            loss_sum += diff * diff
            units += 1
            dz = 2.0 * diff * 4.0 * s * (1.0 - s)
            grads["reg.w"] += dz * pool
            grads["reg.b"] += dz
            _pooled_bwd(params, pcache, dz * t["reg.w"], grads)
    elif objective == "classification":
        for enc_ids, label in batch:
            pool, pcache = _pooled_fwd(params, enc_ids)
            z = pool @ t["cls.w"] + t["cls.b"]
            lp = log_softmax(z)
            loss_sum += float(-lp[label])
            units += 1
            dz = np.exp(lp)
            dz[label] -= 1.0
            grads["cls.w"] += np.outer(pool, dz)
            grads["cls.b"] += dz
            _pooled_bwd(params, pcache, t["cls.w"] @ dz, grads)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return loss_sum, units


def loss_and_grad(params: ModelParams, batch, objective: str = "lm",
                  trainable: TrainableMask | None = None):
    """Mean loss and exact analytic gradients over a batch of examples.

    objective "lm": items (enc_ids, dec_in_ids, target_ids); the loss is the
    token mean over non-pad targets across the whole batch.
    objective "regression": items (enc_ids, score); squared-error mean.
    objective "classification": items (enc_ids, label_index); CE mean.
    Frozen tensors (per `trainable`) get zero gradients.
    """
    grads = zero_grads(params)
    loss_sum, units = accumulate_loss_and_grad(params, batch, objective, grads)
    for g in grads.values():
        g /= units
    return loss_sum / units, apply_trainable_mask(grads, trainable)
