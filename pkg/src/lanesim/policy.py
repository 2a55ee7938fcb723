"""Policy/value network: per-category encoders, partner-road cross-attention,
attention pooling, conditioning concatenation, and discrete policy + scalar
value heads.

The network consumes the flat normalized observation vector and slices it
into ego / conditioning / neighbor / road blocks.  Set-valued blocks are
re-sorted into a canonical row order before entering the graph, which makes
outputs bitwise invariant to any permutation of the input rows; masked rows
carry exactly zero attention weight, so padding never leaks into the output.
Learned null tokens back every attention pool, keeping empty sets finite.
"""

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MAGIC = b"LNSMCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt, or incompatible checkpoint files."""


@dataclass
class NetConfig:
    width: int = 256
    heads: int = 4
    n_tokens: int = 49
    ego_dim: int = 20
    cond_dim: int = 8
    n_neighbors: int = 16
    neighbor_dim: int = 8
    n_road: int = 64
    road_dim: int = 7
    init_seed: int = 0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by the head count")

    @property
    def flat_dim(self):
        return (self.ego_dim + self.cond_dim
                + self.n_neighbors * (self.neighbor_dim + 1)
                + self.n_road * (self.road_dim + 1))


@dataclass
class PolicyOutput:
    logits: Tensor  # (batch, n_tokens)
    value: Tensor  # (batch,)


def _orthogonal(rng, shape, gain=1.0):
    flat = rng.standard_normal((shape[0], int(np.prod(shape[1:]))))
    q, r = np.linalg.qr(flat if flat.shape[0] >= flat.shape[1] else flat.T)
    q = q * np.sign(np.diag(r))
    if flat.shape[0] < flat.shape[1]:
        q = q.T
    return gain * q[: shape[0], : int(np.prod(shape[1:]))].reshape(shape)


def init_params(cfg: NetConfig) -> dict:
    """Fresh parameter dict; orthogonal matrices, zero biases, small head gains."""
    rng = np.random.default_rng(cfg.init_seed)
    d = cfg.width

    def param(name, shape, gain=1.0):
        params[name] = Tensor(_orthogonal(rng, shape, gain), requires_grad=True)

    def bias(name, size):
        params[name] = Tensor(np.zeros(size), requires_grad=True)

    params = {}
    for prefix, in_dim in (("ego", cfg.ego_dim), ("par", cfg.neighbor_dim), ("road", cfg.road_dim)):
        param(prefix + "_w1", (in_dim, d))
        bias(prefix + "_b1", d)
        param(prefix + "_w2", (d, d))
        bias(prefix + "_b2", d)
    for name in ("attn_q", "attn_k", "attn_v", "attn_o"):
        param(name + "_w", (d, d))
        bias(name + "_b", d)
    params["par_null"] = Tensor(0.1 * rng.standard_normal((1, d)), requires_grad=True)
    params["road_null"] = Tensor(0.1 * rng.standard_normal((1, d)), requires_grad=True)
    params["pool_par_q"] = Tensor(0.1 * rng.standard_normal((d, 1)), requires_grad=True)
    params["pool_road_q"] = Tensor(0.1 * rng.standard_normal((d, 1)), requires_grad=True)
    param("trunk_w", (3 * d + cfg.cond_dim, d))
    bias("trunk_b", d)
    param("pi_w", (d, cfg.n_tokens), gain=0.01)
    bias("pi_b", cfg.n_tokens)
    param("value_w", (d, 1), gain=1.0)
    bias("value_b", 1)
    return params


def parameter_count(params: dict) -> int:
    return int(sum(t.data.size for t in params.values()))


def split_observation(cfg: NetConfig, obs: np.ndarray):
    """Slice flat observations (B, D) into blocks; set rows are canonically
    re-sorted (valid rows lexicographically first, masked rows last)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    k, r = cfg.n_neighbors, cfg.neighbor_dim
    m, q = cfg.n_road, cfg.road_dim
    ofs = np.cumsum([cfg.ego_dim, cfg.cond_dim, k * r, k, m * q])
    ego = obs[:, : cfg.ego_dim]
    cond = obs[:, cfg.ego_dim: ofs[0] + cfg.cond_dim]
    nb = obs[:, ofs[1]: ofs[2]].reshape(-1, k, r)
    nbm = obs[:, ofs[2]: ofs[3]]
    rd = obs[:, ofs[3]: ofs[4]].reshape(-1, m, q)
    rdm = obs[:, ofs[4]:]
    nb, nbm = _canonical_rows(nb, nbm)
    rd, rdm = _canonical_rows(rd, rdm)
    return ego, cond, nb, nbm, rd, rdm


def _canonical_rows(feats, mask):
    """Sort set rows per batch element: valid-before-masked, then by feature
    columns lexicographically.  Identical rows are interchangeable, so any
    permutation of the input maps to the same canonical layout."""
    b, k, d = feats.shape
    keyed = np.empty((b, k, d + 1))
    keyed[:, :, 0] = 1.0 - mask
    keyed[:, :, 1:] = feats
    dt = np.dtype([("f%d" % i, "<f8") for i in range(d + 1)])
    order = np.argsort(
        np.ascontiguousarray(keyed).view(dt).reshape(b, k), axis=1, kind="stable"
    )
    rows = np.arange(b)[:, None]
    return feats[rows, order], mask[rows, order]


def _encode(params, prefix, x: Tensor) -> Tensor:
    h = ad.tanh(ad.linear(x, params[prefix + "_w1"], params[prefix + "_b1"]))
    return ad.tanh(ad.linear(h, params[prefix + "_w2"], params[prefix + "_b2"]))


def _heads(t: Tensor, n_heads):
    b, k, d = t.shape
    return ad.swapaxes(ad.reshape(t, (b, k, n_heads, d // n_heads)), 1, 2)


def _append_null(enc: Tensor, null: Tensor, batch: int):
    tile = ad.add(ad.reshape(null, (1, 1, null.shape[1])), Tensor(np.zeros((batch, 1, 1))))
    return ad.concat([enc, tile], axis=1)


def _attention_pool(kv: Tensor, mask, query: Tensor) -> Tensor:
    """Single learned query over a masked set; returns (B, d)."""
    d = kv.shape[-1]
    scores = ad.mul(ad.matmul(kv, query), 1.0 / np.sqrt(d))  # (B, K, 1)
    attn = ad.softmax(ad.swapaxes(scores, 1, 2), axis=-1, mask=mask[:, None, :])
    pooled = ad.matmul(attn, kv)  # (B, 1, d)
    return ad.reshape(pooled, (pooled.shape[0], d))


def forward(params: dict, obs: np.ndarray, cfg: NetConfig) -> PolicyOutput:
    """Batched forward pass over flat observations."""
    ego_np, cond_np, nb_np, nbm_np, rd_np, rdm_np = split_observation(cfg, obs)
    batch = ego_np.shape[0]
    d, n_heads = cfg.width, cfg.heads

    ego = _encode(params, "ego", Tensor(ego_np))
    par = _encode(params, "par", Tensor(nb_np))
    road = _encode(params, "road", Tensor(rd_np))

    road_kv = _append_null(road, params["road_null"], batch)
    road_mask = np.concatenate([rdm_np > 0.5, np.ones((batch, 1), dtype=bool)], axis=1)

    # cross-attention: partner queries attend over road keys/values
    q = _heads(ad.linear(par, params["attn_q_w"], params["attn_q_b"]), n_heads)
    k = _heads(ad.linear(road_kv, params["attn_k_w"], params["attn_k_b"]), n_heads)
    v = _heads(ad.linear(road_kv, params["attn_v_w"], params["attn_v_b"]), n_heads)
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(d // n_heads))
    attn = ad.softmax(scores, axis=-1, mask=road_mask[:, None, None, :])
    mixed = ad.matmul(attn, v)  # (B, h, K, dh)
    mixed = ad.reshape(ad.swapaxes(mixed, 1, 2), (batch, cfg.n_neighbors, d))
    par = ad.add(par, ad.linear(mixed, params["attn_o_w"], params["attn_o_b"]))

    par_kv = _append_null(par, params["par_null"], batch)
    par_mask = np.concatenate([nbm_np > 0.5, np.ones((batch, 1), dtype=bool)], axis=1)

    pooled_par = _attention_pool(par_kv, par_mask, params["pool_par_q"])
    pooled_road = _attention_pool(road_kv, road_mask, params["pool_road_q"])

    trunk_in = ad.concat([ego, pooled_par, pooled_road, Tensor(cond_np)], axis=1)
    trunk = ad.tanh(ad.linear(trunk_in, params["trunk_w"], params["trunk_b"]))
    logits = ad.linear(trunk, params["pi_w"], params["pi_b"])
    value = ad.reshape(ad.linear(trunk, params["value_w"], params["value_b"]), (batch,))
    return PolicyOutput(logits=logits, value=value)


def log_probs(logits: Tensor) -> Tensor:
    return ad.log_softmax(logits, axis=-1)


def sample_action(output: PolicyOutput, rng: np.random.Generator, mode: str = "sample"):
    """Draw (tokens, log-probabilities) per batch row.

    Greedy mode returns the argmax with lowest-index tie-break; sample mode
    inverts the cumulative distribution against one uniform draw per row.
    """
    logits = output.logits.data
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - log_z
    if mode == "greedy":
        tokens = np.argmax(logits, axis=-1)
    elif mode == "sample":
        probs = np.exp(logp)
        cdf = np.cumsum(probs, axis=-1)
        cdf /= cdf[:, -1:]
        u = rng.random(logits.shape[0])
        tokens = np.minimum((cdf < u[:, None]).sum(axis=1), logits.shape[1] - 1)
    else:
        raise ValueError("mode must be 'sample' or 'greedy'")
    chosen = np.take_along_axis(logp, tokens[:, None], axis=-1)[:, 0]
    return tokens.astype(np.intp), chosen


def gradients(params: dict, cfg: NetConfig, batch: np.ndarray, loss_fn) -> dict:
    """Exact reverse-mode gradients of a scalar loss over a forward pass.

    `loss_fn(output: PolicyOutput) -> Tensor` must produce a scalar.
    """
    for t in params.values():
        t.grad = None
    loss = loss_fn(forward(params, batch, cfg))
    loss.backward()
    return {name: (np.zeros_like(t.data) if t.grad is None else t.grad) for name, t in params.items()}


def save_params(path, params: dict, cfg: NetConfig, layout_signature: str, extra: dict = None):
    """Versioned binary checkpoint: magic, JSON header, named float64 tensors
    in little-endian byte order.  `extra` rides along in the header (e.g. the
    observation configuration used in training)."""
    names = sorted(params)
    header = {
        "net_config": asdict(cfg),
        "layout_signature": layout_signature,
        "dtype": "<f8",
        "extra": extra or {},
        "tensors": [[name, list(params[name].data.shape)] for name in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())


def load_params(path, expect_layout: str = None):
    """Load a checkpoint; returns (params, NetConfig, layout_signature)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise CheckpointError("cannot read checkpoint %s: %s" % (path, exc)) from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic bytes in %s" % path)
    try:
        version, header_len = struct.unpack_from("<II", raw, len(MAGIC))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError("unsupported checkpoint version %d" % version)
        ofs = len(MAGIC) + 8
        header = json.loads(raw[ofs: ofs + header_len].decode())
        ofs += header_len
        cfg = NetConfig(**header["net_config"])
        params = {}
        for name, shape in header["tensors"]:
            size = int(np.prod(shape)) * 8
            arr = np.frombuffer(raw[ofs: ofs + size], dtype="<f8").reshape(shape)
            if arr.size != int(np.prod(shape)):
                raise CheckpointError("truncated tensor %r" % name)
            params[name] = Tensor(arr.astype(np.float64), requires_grad=True)
            ofs += size
    except (KeyError, ValueError, TypeError, struct.error) as exc:
        raise CheckpointError("corrupt checkpoint %s: %s" % (path, exc)) from exc
    signature = header["layout_signature"]
    if expect_layout is not None and signature != expect_layout:
        raise CheckpointError(
            "layout mismatch: checkpoint %r vs expected %r" % (signature, expect_layout)
        )
    return params, cfg, signature, header.get("extra", {})
