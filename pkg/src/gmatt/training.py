"""Adam, the triangular cyclic learning-rate schedule, the teacher-forced
training loop and the binary checkpoint format."""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core as nn
from .dataset import PreparedCorpus, Vocab
from .errors import ConfigMismatch, CorruptCheckpoint, EmptyBatch, NonFiniteGradient, NonFiniteLoss
from .model import ModelConfig, TreeTransformer, init_params
from .nn_core import Tensor

log = logging.getLogger(__name__)

MAGIC = b"GMAT"
FORMAT_VERSION = 1


# ---- optimiser -----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` (name -> Tensor or array)."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        data = p.data if isinstance(p, Tensor) else p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(data.dtype)


# ---- learning-rate schedule ------------------------------------------------------

@dataclass
class LrSchedule:
    eta_min: float = 1e-4
    eta_max: float = 5e-4
    cycle_epochs: float = 10
    gamma: float = 0.98


def lr_at(epoch: float, sched: LrSchedule = LrSchedule()) -> float:
    """Triangular cycle: eta_min -> peak over the first half of each cycle and back.

    The peak of cycle c is eta_min + gamma**c * (eta_max - eta_min).
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    cycle = math.floor(epoch / sched.cycle_epochs)
    frac = epoch / sched.cycle_epochs - cycle
    peak = sched.eta_min + sched.gamma ** cycle * (sched.eta_max - sched.eta_min)
    return sched.eta_min + (peak - sched.eta_min) * (1.0 - abs(2.0 * frac - 1.0))


# ---- training loop ---------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 32
    seed: int = 0
    schedule: LrSchedule = field(default_factory=LrSchedule)
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["schedule"] = LrSchedule(**data.get("schedule", {}))
        return cls(**data)


@dataclass
class TrainingState:
    model: TreeTransformer
    adam: AdamState
    epoch: int = 0
    rng_state: dict | None = None
    history: list = field(default_factory=list)


LOG_FIELDS = ("epoch", "split", "loss", "char_acc", "lr")


def token_stats(logits: np.ndarray, tgt_out: np.ndarray, pad_id: int = 0) -> tuple[int, int]:
    valid = tgt_out != pad_id
    correct = (logits.argmax(axis=-1) == tgt_out) & valid
    return int(correct.sum()), int(valid.sum())


def evaluate_teacher_forced(model: TreeTransformer, corpus: PreparedCorpus,
                            batch_size: int = 32) -> tuple[float, float]:
    """Mean token loss and character accuracy without dropout."""
    total_loss = 0.0
    correct = count = 0
    with nn.no_grad():
        for batch in corpus.batches(batch_size):
            logits = model.forward(batch.encoder, batch.tgt_in)
            loss = nn.cross_entropy(logits, batch.tgt_out, 0)
            c, n = token_stats(logits.data, batch.tgt_out)
            total_loss += float(loss.data) * n
            correct += c
            count += n
    return total_loss / count, correct / count


def new_state(cfg: ModelConfig, tcfg: TrainConfig) -> TrainingState:
    model = TreeTransformer(cfg, init_params(cfg, np.random.default_rng(tcfg.seed)))
    adam = AdamState(beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps)
    rng = np.random.default_rng([tcfg.seed, 1])
    return TrainingState(model, adam, 0, rng.bit_generator.state, [])


def train(train_corpus: PreparedCorpus, tcfg: TrainConfig, valid_corpus: PreparedCorpus | None = None,
          state: TrainingState | None = None, on_epoch=None) -> TrainingState:
    """Teacher-forced training with dropout; runs until ``tcfg.epochs`` epochs are done.

    ``state`` resumes a previous run (see ``load_checkpoint``).  ``on_epoch`` is
    called with the state after every completed epoch.
    """
    state = state or new_state(train_corpus.cfg, tcfg)
    model = state.model
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    n = len(train_corpus)
    if n == 0:
        raise EmptyBatch("training corpus is empty")
    steps = math.ceil(n / tcfg.batch_size)
    names = sorted(model.params)
    for epoch in range(state.epoch, tcfg.epochs):
        snapshot = {k: p.data.copy() for k, p in model.params.items()}
        order = rng.permutation(n)
        total_loss = 0.0
        correct = count = 0
        for step in range(steps):
            lr = lr_at(epoch + step / steps, tcfg.schedule)
            batch = train_corpus.batch(order[step * tcfg.batch_size:(step + 1) * tcfg.batch_size])
            for p in model.params.values():
                p.grad = None
            logits = model.forward(batch.encoder, batch.tgt_in, training=True, rng=rng)
            loss = nn.cross_entropy(logits, batch.tgt_out, 0)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch} step {step}", snapshot)
            nn.backward(loss)
            grads = {k: model.params[k].grad for k in names if model.params[k].grad is not None}
            if tcfg.clip_norm:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > tcfg.clip_norm:
                    grads = {k: g * (tcfg.clip_norm / norm) for k, g in grads.items()}
            adam_step(model.params, grads, state.adam, lr)
            c, k = token_stats(logits.data, batch.tgt_out)
            total_loss += float(loss.data) * k
            correct += c
            count += k
        epoch_lr = lr_at(epoch, tcfg.schedule)
        state.history.append(dict(epoch=epoch + 1, split="train", loss=total_loss / count,
                                  char_acc=correct / count, lr=epoch_lr))
        if valid_corpus is not None and len(valid_corpus):
            vloss, vacc = evaluate_teacher_forced(model, valid_corpus, tcfg.batch_size)
            state.history.append(dict(epoch=epoch + 1, split="valid", loss=vloss,
                                      char_acc=vacc, lr=epoch_lr))
        state.epoch = epoch + 1
        state.rng_state = rng.bit_generator.state
        log.info("epoch %d loss %.4f acc %.4f", epoch + 1, total_loss / count, correct / count)
        if on_epoch is not None:
            on_epoch(state)
    return state


def write_log(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# ---- checkpoints ---------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocab
    params: dict
    adam: AdamState
    epoch: int = 0
    rng_state: dict | None = None
    history: list = field(default_factory=list)
    train_config: dict | None = None
    with_class: bool = False

    def model(self) -> TreeTransformer:
        params = {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}
        return TreeTransformer(self.config, params)

    def training_state(self) -> TrainingState:
        model = self.model()
        adam = copy.deepcopy(self.adam)
        return TrainingState(model, adam, self.epoch, self.rng_state, list(self.history))


def _pack_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    dtype = le.dtype.str.encode()
    raw_name = name.encode()
    buf.write(struct.pack("<H", len(raw_name)) + raw_name)
    buf.write(struct.pack("<B", len(dtype)) + dtype)
    buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
    payload = le.tobytes()
    buf.write(struct.pack("<Q", len(payload)) + payload)


def save_checkpoint(path, state: TrainingState, vocab: Vocab, train_config: TrainConfig | None = None,
                    with_class: bool = False) -> None:
    """Write ``GMAT`` magic, version, JSON header, then named little-endian tensors."""
    header = {
        "config": state.model.cfg.to_dict(),
        "vocab": vocab.to_dict(),
        "with_class": with_class,
        "epoch": state.epoch,
        "rng_state": state.rng_state,
        "history": state.history,
        "train_config": train_config.to_dict() if train_config else None,
        "adam": {"step": state.adam.step, "beta1": state.adam.beta1,
                 "beta2": state.adam.beta2, "eps": state.adam.eps},
    }
    tensors = [(f"param/{k}", state.model.params[k].data) for k in sorted(state.model.params)]
    tensors += [(f"adam.m/{k}", state.adam.m[k]) for k in sorted(state.adam.m)]
    tensors += [(f"adam.v/{k}", state.adam.v[k]) for k in sorted(state.adam.v)]
    raw_header = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<HI", FORMAT_VERSION, len(raw_header)) + raw_header)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _pack_tensor(buf, name, arr)
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    version, header_len = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(header_len))
        cfg = ModelConfig.from_dict(header["config"])
        vocab = Vocab.from_dict(header["vocab"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"bad header: {exc}") from None
    if expected_config is not None and expected_config.to_dict() != cfg.to_dict():
        diff = {k: (v, cfg.to_dict()[k]) for k, v in expected_config.to_dict().items()
                if cfg.to_dict().get(k) != v}
        raise ConfigMismatch(f"checkpoint config differs: {diff}")
    (count,) = r.unpack("<I")
    params, m, v = {}, {}, {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (dlen,) = r.unpack("<B")
        dtype = np.dtype(r.take(dlen).decode())
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        if nbytes != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpoint(f"tensor {name}: payload size does not match shape")
        arr = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape)
        arr = arr.astype(dtype.newbyteorder("="))
        kind, _, key = name.partition("/")
        {"param": params, "adam.m": m, "adam.v": v}.get(kind, {})[key] = arr
    if r.pos != len(r.data):
        raise CorruptCheckpoint("trailing bytes after tensors")
    expected = init_params(cfg, np.random.default_rng(0))
    for k, t in expected.items():
        if k not in params or params[k].shape != t.shape:
            raise ConfigMismatch(f"parameter {k} missing or mis-shaped for the stored config")
    a = header.get("adam", {})
    adam = AdamState(m, v, a.get("step", 0), a.get("beta1", 0.9), a.get("beta2", 0.98),
                     a.get("eps", 1e-9))
    return Checkpoint(cfg, vocab, params, adam, header.get("epoch", 0), header.get("rng_state"),
                      header.get("history", []), header.get("train_config"),
                      header.get("with_class", False))
