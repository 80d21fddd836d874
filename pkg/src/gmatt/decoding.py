"""Beam search and greedy decoding from an encoded grammar tree."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn_core as nn
from .dataset import Vocab, collate_trees, prepare_tree, split_precursors
from .errors import MissingClass
from .grammar import is_in_grammar
from .model import TreeTransformer

StepFn = Callable[[list[tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    log_likelihood: float
    finished: bool = False


def _rank_key(h: BeamHypothesis):
    return (-h.log_likelihood, h.tokens)


def beam_search(step_fn: StepFn, start_id: int, end_id: int | None, beam_size: int,
                max_len: int, length_penalty: float = 0.0) -> list[BeamHypothesis]:
    """Keep the ``beam_size`` best sequences at every step.

    ``step_fn`` maps a list of token prefixes to an (n, V) array of next-token
    log-probabilities.  Each live hypothesis proposes its top ``beam_size``
    tokens; finished hypotheses stay in the candidate pool and compete for the
    same slots.  A hypothesis finishes when it emits ``end_id`` or when it holds
    ``max_len`` tokens after ``start_id``.  Ties are broken by token ids.
    ``length_penalty`` > 0 ranks the final list by ``ll / len**penalty``.
    """
    if beam_size < 1:
        raise ValueError("beam size must be >= 1")
    beam = [BeamHypothesis((start_id,), 0.0, max_len == 0)]
    while not all(h.finished for h in beam):
        live = [h for h in beam if not h.finished]
        logp = np.asarray(step_fn([h.tokens for h in live]), dtype=np.float64)
        candidates = [h for h in beam if h.finished]
        k = min(beam_size, logp.shape[1])
        for h, row in zip(live, logp):
            # stable sort: equal scores keep ascending token order
            top = np.argsort(-row, kind="stable")[:k]
            for tok in top:
                if row[tok] == -np.inf:
                    continue
                tokens = h.tokens + (int(tok),)
                done = (end_id is not None and tok == end_id) or len(tokens) - 1 >= max_len
                candidates.append(BeamHypothesis(tokens, h.log_likelihood + float(row[tok]), done))
        candidates.sort(key=_rank_key)
        beam = candidates[:beam_size]
    if length_penalty:
        beam.sort(key=lambda h: (-h.log_likelihood / max(len(h.tokens) - 1, 1) ** length_penalty,
                                 h.tokens))
    return beam


def greedy(step_fn: StepFn, start_id: int, end_id: int | None, max_len: int) -> BeamHypothesis:
    tokens = (start_id,)
    ll = 0.0
    while len(tokens) - 1 < max_len:
        row = np.asarray(step_fn([tokens]))[0]
        tok = int(np.argmax(row))
        tokens += (tok,)
        ll += float(row[tok])
        if tok == end_id:
            break
    return BeamHypothesis(tokens, ll, True)


def model_step_fn(model: TreeTransformer, encoder_batch, banned=()) -> StepFn:
    """Next-token log-probabilities from ``model`` for one encoded input.

    Token ids in ``banned`` get -inf, so beam search never proposes them.
    """
    banned = list(banned)
    with nn.no_grad():
        memory = model.encode(encoder_batch)

    def step(prefixes):
        n = len(prefixes)
        T = len(prefixes[0])
        tgt = np.array(prefixes, dtype=np.int64).reshape(n, T)
        mem = nn.Tensor(np.broadcast_to(memory.data, (n,) + memory.shape[1:]))
        mask = np.broadcast_to(encoder_batch.mask, (n, encoder_batch.mask.shape[1]))
        with nn.no_grad():
            logits = model.decode(mem, mask, tgt)
        logp = nn.log_softmax(logits.reshape(n, T, -1)).data[:, -1].astype(np.float64)
        logp[:, banned] = -np.inf
        return logp
    return step


@dataclass(frozen=True)
class Prediction:
    rank: int
    smiles: str
    precursors: tuple[str, ...]
    log_likelihood: float
    valid: bool
    tokens: tuple[int, ...]


def is_valid_prediction(text: str) -> bool:
    """Valid iff every dot-separated precursor parses under the grammar."""
    parts = split_precursors(text)
    return bool(text) and all(is_in_grammar(p, max_nodes=10**9) for p in parts)


def predict(smiles: str, model: TreeTransformer, vocab: Vocab, beam_size: int = 10,
            class_id: int | None = None, with_class: bool = False,
            max_len: int | None = None) -> list[Prediction]:
    """Ranked precursor-set predictions for ``smiles``; invalid ones are kept and flagged."""
    if with_class and class_id is None:
        raise MissingClass("this model was trained with reaction classes; pass a class id")
    prepared = prepare_tree(smiles, vocab, model.cfg, class_id, with_class)
    batch = collate_trees([prepared], model.cfg.dtype)
    max_len = model.cfg.max_out + 1 if max_len is None else max_len
    banned = (vocab.pad_id, vocab.start_id, vocab.unk_id)
    hyps = beam_search(model_step_fn(model, batch, banned), vocab.start_id, vocab.end_id,
                       beam_size, max_len)
    out = []
    for rank, h in enumerate(hyps, start=1):
        text = vocab.decode_target(h.tokens)
        out.append(Prediction(rank, text, tuple(split_precursors(text)), h.log_likelihood,
                              is_valid_prediction(text), h.tokens))
    return out

