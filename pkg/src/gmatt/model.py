"""Tree-to-sequence transformer.

Encoder: node embedding + tree positional encoding, a tree convolution block,
then layers of [self-attention, tree convolution] sublayers (post-norm
residual).  Decoder: a standard causal transformer decoder with sinusoidal
sequence positions and cross-attention to the encoded tree.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn_core as nn
from .errors import ShapeMismatch
from .nn_core import Tensor


@dataclass
class ModelConfig:
    d_model: int = 256
    heads: int = 8
    d_k: int | None = None
    encoder_layers: int = 4
    decoder_layers: int = 4
    tcb_depth: int = 2
    d_tcb: int | None = None
    d_ff: int | None = None
    dropout: float = 0.2
    max_in: int = 350
    max_out: int = 121
    path_length: int = 64
    edge_dim: int = 4
    encoder_vocab: int = 0
    decoder_vocab: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_k is None:
            if self.d_model % self.heads:
                raise ValueError("d_model must be divisible by the number of heads")
            self.d_k = self.d_model // self.heads
        if self.d_tcb is None:
            self.d_tcb = self.d_model
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.path_length * self.edge_dim != self.d_model:
            raise ValueError("path_length * edge_dim must equal d_model")
        if self.tcb_depth < 1:
            raise ValueError("tcb_depth must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class EncodedTreeBatch:
    """Padded batch of encoder inputs.

    ``parent`` is -1 for roots, class tokens and padding; ``children`` is
    padded with -1.  ``mask`` is True at real positions.
    """
    symbols: np.ndarray
    parent: np.ndarray
    children: np.ndarray
    tpe: np.ndarray
    mask: np.ndarray
    labels: list = field(default_factory=list)

    @property
    def shape(self):
        return self.symbols.shape

    def select(self, rows) -> "EncodedTreeBatch":
        rows = np.asarray(rows)
        return EncodedTreeBatch(self.symbols[rows], self.parent[rows], self.children[rows],
                                self.tpe[rows], self.mask[rows],
                                [self.labels[i] for i in rows] if self.labels else [])


def sequence_positions(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# ---- building blocks ---------------------------------------------------------

def multi_head_attention(q_in: Tensor, kv_in: Tensor, mask, w: dict, heads: int,
                         training: bool = False, rng=None, p: float = 0.0):
    """(head_1 || ... || head_h) W_o with head_i = Attention(q W_q^i, kv W_k^i, kv W_v^i).

    ``mask`` broadcasts to (B, h, Tq, Tk).  Returns (output, per-head weights).
    """
    if q_in.shape[-1] != w["W_q"].shape[0] or kv_in.shape[-1] != w["W_k"].shape[0]:
        raise ShapeMismatch(f"attention input width {q_in.shape[-1]} vs {w['W_q'].shape}")
    B, Tq = q_in.shape[:2]
    Tk = kv_in.shape[1]
    d_k = w["W_q"].shape[1] // heads
    d_v = w["W_v"].shape[1] // heads

    def split(x, T, d):
        return x.reshape(B, T, heads, d).transpose(0, 2, 1, 3)

    q = split(q_in @ w["W_q"], Tq, d_k)
    k = split(kv_in @ w["W_k"], Tk, d_k)
    v = split(kv_in @ w["W_v"], Tk, d_v)
    out, weights = nn.scaled_dot_attention(q, k, v, mask)
    out = out.transpose(0, 2, 1, 3).reshape(B, Tq, heads * d_v)
    out = out @ w["W_o"]
    return nn.dropout(out, p, training, rng), weights


def _neighbour_indices(parent, children):
    parent = np.asarray(parent)
    children = np.asarray(children)
    has_parent = (parent >= 0)[..., None]
    child_mask = children >= 0
    n_children = child_mask.sum(axis=-1)
    child_w = child_mask / np.maximum(n_children, 1)[..., None]
    has_children = (n_children > 0)[..., None]
    return (np.where(parent >= 0, parent, 0), has_parent,
            np.where(child_mask, children, 0), child_w, has_children)


def tcb_single(x: Tensor, parent, children, w: dict, _cache=None) -> Tensor:
    """ReLU(x_t W_t + x_p W_p + x_c W_c) W_2 + b_2 for every node.

    x_p is the parent state (``v_p`` at roots), x_c the mean of the children
    states (``v_c`` at leaves).
    """
    pidx, has_parent, cidx, child_w, has_children = _cache or _neighbour_indices(parent, children)
    dt = x.dtype
    x_p = nn.gather_nodes(x, pidx) * has_parent.astype(dt) + w["v_p"] * (~has_parent).astype(dt)
    gathered = nn.gather_nodes(x, cidx)
    x_c = (gathered * child_w[..., None].astype(dt)).sum(axis=2)
    x_c = x_c + w["v_c"] * (~has_children).astype(dt)
    h = nn.relu(x @ w["W_t"] + x_p @ w["W_p"] + x_c @ w["W_c"])
    return h @ w["W_2"] + w["b_2"]


def tcb(x: Tensor, parent, children, depth: int, weights: list) -> Tensor:
    """``depth`` stacked single-layer tree convolutions."""
    if len(weights) < depth:
        raise ValueError(f"need {depth} TCB weight sets, got {len(weights)}")
    cache = _neighbour_indices(parent, children)
    for i in range(depth):
        x = tcb_single(x, parent, children, weights[i], cache)
    return x


# ---- the model ---------------------------------------------------------------

class TreeTransformer:
    def __init__(self, cfg: ModelConfig, params: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))
        self.last_cross_attention: list[np.ndarray] = []
        self._dec_pe = sequence_positions(cfg.max_out + 3, cfg.d_model).astype(cfg.dtype)

    # parameter access helpers
    def _group(self, prefix: str) -> dict:
        n = len(prefix)
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix)}

    def _tcb_weights(self, prefix: str) -> list:
        return [self._group(f"{prefix}.{i}.") for i in range(self.cfg.tcb_depth)]

    def _sublayer(self, x, y, ln: str):
        return nn.layer_norm(x + y, self.params[f"{ln}.g"], self.params[f"{ln}.b"])

    def encode(self, batch: EncodedTreeBatch, training: bool = False, rng=None) -> Tensor:
        cfg, P = self.cfg, self.params
        p = cfg.dropout
        x = nn.embedding(P["enc.embed"], batch.symbols) * math.sqrt(cfg.d_model)
        x = x + Tensor(batch.tpe.astype(cfg.dtype))
        x = nn.dropout(x, p, training, rng)
        attn_mask = batch.mask[:, None, None, :]
        y = tcb(x, batch.parent, batch.children, cfg.tcb_depth, self._tcb_weights("enc.pre_tcb"))
        x = self._sublayer(x, nn.dropout(y, p, training, rng), "enc.pre_ln")
        for i in range(cfg.encoder_layers):
            pre = f"enc.{i}"
            y, _ = multi_head_attention(x, x, attn_mask, self._group(f"{pre}.attn."), cfg.heads,
                                        training, rng, p)
            x = self._sublayer(x, y, f"{pre}.ln1")
            y = tcb(x, batch.parent, batch.children, cfg.tcb_depth, self._tcb_weights(f"{pre}.tcb"))
            x = self._sublayer(x, nn.dropout(y, p, training, rng), f"{pre}.ln2")
        return x

    def decode(self, memory: Tensor, memory_mask: np.ndarray, tgt_in: np.ndarray,
               training: bool = False, rng=None, keep_attention: bool = False) -> Tensor:
        """Logits (B, T, V) for the next token at every prefix position."""
        cfg, P = self.cfg, self.params
        p = cfg.dropout
        tgt_in = np.asarray(tgt_in)
        B, T = tgt_in.shape
        x = nn.embedding(P["dec.embed"], tgt_in) * math.sqrt(cfg.d_model)
        x = nn.dropout(x + Tensor(self._dec_pe[:T]), p, training, rng)
        causal = np.tril(np.ones((T, T), dtype=bool))[None, None]
        cross_mask = np.asarray(memory_mask, dtype=bool)[:, None, None, :]
        self.last_cross_attention = []
        for i in range(cfg.decoder_layers):
            pre = f"dec.{i}"
            y, _ = multi_head_attention(x, x, causal, self._group(f"{pre}.self."), cfg.heads,
                                        training, rng, p)
            x = self._sublayer(x, y, f"{pre}.ln1")
            y, wts = multi_head_attention(x, memory, cross_mask, self._group(f"{pre}.cross."),
                                          cfg.heads, training, rng, p)
            if keep_attention:
                self.last_cross_attention.append(wts.data)
            x = self._sublayer(x, y, f"{pre}.ln2")
            h = nn.relu(x @ P[f"{pre}.ff.W_1"] + P[f"{pre}.ff.b_1"])
            y = nn.dropout(h @ P[f"{pre}.ff.W_2"] + P[f"{pre}.ff.b_2"], p, training, rng)
            x = self._sublayer(x, y, f"{pre}.ln3")
        return x @ P["out.W"] + P["out.b"]

    def forward(self, batch: EncodedTreeBatch, tgt_in, training: bool = False, rng=None,
                keep_attention: bool = False) -> Tensor:
        memory = self.encode(batch, training, rng)
        return self.decode(memory, batch.mask, tgt_in, training, rng, keep_attention)


def encoder_forward(batch: EncodedTreeBatch, model: TreeTransformer) -> Tensor:
    return model.encode(batch)


def decoder_forward(memory: Tensor, memory_mask, tgt_in, model: TreeTransformer) -> Tensor:
    return model.decode(memory, memory_mask, tgt_in)


def extract_cross_attention(model: TreeTransformer, batch: EncodedTreeBatch, tgt_in,
                            row: int = 0) -> np.ndarray:
    """Cross-attention averaged over decoder layers and heads, as (nodes, output tokens).

    Decoder position t attends while emitting output token t, so column t
    belongs to the (t+1)-th token of ``tgt_in`` shifted by one.
    """
    with nn.no_grad():
        model.forward(batch, tgt_in, keep_attention=True)
    stacked = np.stack(model.last_cross_attention)          # (layers, B, h, T, N)
    avg = stacked[:, row].mean(axis=(0, 1))                 # (T, N)
    n_real = int(batch.mask[row].sum())
    return avg[:, :n_real].T.astype(np.float64)


# ---- initialisation ----------------------------------------------------------

def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    dt = np.dtype(cfg.dtype)
    D, H = cfg.d_model, cfg.heads
    P: dict[str, Tensor] = {}

    def weight(name, fan_in, fan_out):
        P[name] = Tensor(nn.xavier_uniform(rng, fan_in, fan_out, dt), requires_grad=True)

    def vector(name, n, value=0.0):
        P[name] = Tensor(np.full(n, value, dtype=dt), requires_grad=True)

    def learned_vector(name, n):
        P[name] = Tensor(nn.xavier_uniform(rng, 1, n, dt)[0], requires_grad=True)

    def attention(pre):
        weight(f"{pre}.W_q", D, H * cfg.d_k)
        weight(f"{pre}.W_k", D, H * cfg.d_k)
        weight(f"{pre}.W_v", D, H * cfg.d_k)
        weight(f"{pre}.W_o", H * cfg.d_k, D)

    def norm(pre):
        vector(f"{pre}.g", D, 1.0)
        vector(f"{pre}.b", D)

    def tcb_block(pre):
        for i in range(cfg.tcb_depth):
            weight(f"{pre}.{i}.W_t", D, cfg.d_tcb)
            weight(f"{pre}.{i}.W_p", D, cfg.d_tcb)
            weight(f"{pre}.{i}.W_c", D, cfg.d_tcb)
            weight(f"{pre}.{i}.W_2", cfg.d_tcb, D)
            vector(f"{pre}.{i}.b_2", D)
            learned_vector(f"{pre}.{i}.v_p", D)
            learned_vector(f"{pre}.{i}.v_c", D)

    weight("enc.embed", cfg.encoder_vocab, D)
    weight("dec.embed", cfg.decoder_vocab, D)
    tcb_block("enc.pre_tcb")
    norm("enc.pre_ln")
    for i in range(cfg.encoder_layers):
        attention(f"enc.{i}.attn")
        norm(f"enc.{i}.ln1")
        tcb_block(f"enc.{i}.tcb")
        norm(f"enc.{i}.ln2")
    for i in range(cfg.decoder_layers):
        attention(f"dec.{i}.self")
        norm(f"dec.{i}.ln1")
        attention(f"dec.{i}.cross")
        norm(f"dec.{i}.ln2")
        weight(f"dec.{i}.ff.W_1", D, cfg.d_ff)
        vector(f"dec.{i}.ff.b_1", cfg.d_ff)
        weight(f"dec.{i}.ff.W_2", cfg.d_ff, D)
        vector(f"dec.{i}.ff.b_2", D)
        norm(f"dec.{i}.ln3")
    weight("out.W", D, cfg.decoder_vocab)
    vector("out.b", cfg.decoder_vocab)
    return P
