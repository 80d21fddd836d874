"""Reaction corpus ingestion, filtering, vocabularies, splits and padded batches."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (BadClass, LengthExceeded, MalformedLine, MissingClass, ParseError,
                     UnknownCharacter)
from .grammar import MAX_NODES, GrammarTree, default_grammar, parse, preorder_nodes, tokenize
from .model import EncodedTreeBatch, ModelConfig
from .tree_encoding import edge_paths, encode_paths

log = logging.getLogger(__name__)

MAX_OUT = 121
N_CLASSES = 10
PAD, UNK, START, END = "<PAD>", "<UNK>", "<START>", "<END>"
SEPARATOR = "."

REACTION_CLASSES = {
    1: "Heteroatom alkylation and arylation",
    2: "Acylation and related processes",
    3: "C-C bond formation",
    4: "Heterocycle formation",
    5: "Protections",
    6: "Deprotections",
    7: "Reductions",
    8: "Oxidations",
    9: "Functional group interconversion (FGI)",
    10: "Functional group addition (FGA)",
}


def class_token(k: int) -> str:
    return f"<RX_{k}>"


@dataclass(frozen=True)
class ReactionRecord:
    product: str
    precursors: tuple[str, ...]
    class_id: int | None = None
    line_no: int | None = field(default=None, compare=False)

    @property
    def target(self) -> str:
        return join_precursors(self.precursors)


def order_precursors(precursors) -> list[str]:
    """Longest first, then lexicographic."""
    return sorted(precursors, key=lambda s: (-len(s), s))


def join_precursors(precursors) -> str:
    return SEPARATOR.join(order_precursors(precursors))


def split_precursors(text: str) -> list[str]:
    return [p for p in text.split(SEPARATOR)]


@lru_cache(maxsize=65536)
def cached_parse(smiles: str) -> GrammarTree:
    return parse(smiles)


# ---- vocabularies ------------------------------------------------------------

class Vocab:
    """Encoder (tree symbol) and decoder (SMILES token) vocabularies; pad id is 0."""

    def __init__(self, encoder_symbols: list[str], decoder_symbols: list[str]):
        for name, symbols in (("encoder", encoder_symbols), ("decoder", decoder_symbols)):
            if len(set(symbols)) != len(symbols) or symbols[0] != PAD:
                raise ValueError(f"{name} vocabulary must be unique and start with {PAD}")
        self.encoder_symbols = list(encoder_symbols)
        self.decoder_symbols = list(decoder_symbols)
        self.enc_index = {s: i for i, s in enumerate(self.encoder_symbols)}
        self.dec_index = {s: i for i, s in enumerate(self.decoder_symbols)}

    pad_id = 0

    @property
    def start_id(self) -> int:
        return self.dec_index[START]

    @property
    def end_id(self) -> int:
        return self.dec_index[END]

    @property
    def unk_id(self) -> int:
        return self.dec_index[UNK]

    @classmethod
    def build(cls, train_records) -> "Vocab":
        """Encoder side is fixed by the grammar; decoder side comes from the training targets."""
        g = default_grammar()
        enc = [PAD, UNK] + [class_token(k) for k in range(1, N_CLASSES + 1)]
        enc += sorted(g.nonterminals) + sorted(g.surface_terminals)
        seen = set()
        for rec in train_records:
            seen.update(target_tokens(rec.precursors))
        dec = [PAD, UNK, START, END] + sorted(seen)
        return cls(enc, dec)

    def encode_target(self, tokens: list[str]) -> list[int]:
        return [self.dec_index.get(t, self.unk_id) for t in tokens]

    def decode_target(self, ids) -> str:
        specials = {self.pad_id, self.start_id, self.end_id}
        out = []
        for i in ids:
            i = int(i)
            if i == self.end_id:
                break
            if i in specials:
                continue
            out.append(self.decoder_symbols[i])
        return "".join(out)

    def to_dict(self) -> dict:
        return {"encoder": self.encoder_symbols, "decoder": self.decoder_symbols}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(data["encoder"], data["decoder"])

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.to_dict() == other.to_dict()


def target_tokens(precursors) -> list[str]:
    toks = []
    for i, p in enumerate(order_precursors(precursors)):
        if i:
            toks.append(SEPARATOR)
        toks.extend(t.text for t in tokenize(p))
    return toks


# ---- ingestion ---------------------------------------------------------------

def parse_reaction_line(line: str, line_no: int, with_class: bool) -> ReactionRecord:
    text = line.strip()
    class_id = None
    if "\t" in text:
        cls_text, text = text.split("\t", 1)
        try:
            class_id = int(cls_text.strip())
        except ValueError:
            raise BadClass(line_no, cls_text) from None
        if not 1 <= class_id <= N_CLASSES:
            raise BadClass(line_no, cls_text)
        text = text.strip()
    elif with_class:
        raise MalformedLine(line_no, "missing reaction class column")
    if text.count(">>") != 1:
        raise MalformedLine(line_no, "expected 'precursors>>product'")
    lhs, product = (s.strip() for s in text.split(">>"))
    precursors = tuple(p for p in lhs.split(SEPARATOR) if p)
    if not product or not precursors:
        raise MalformedLine(line_no, "empty product or precursor list")
    return ReactionRecord(product, precursors, class_id, line_no)


def load_reactions(path, with_class: bool = False) -> list[ReactionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            records.append(parse_reaction_line(line, line_no, with_class))
    return records


def write_reactions(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            prefix = f"{rec.class_id}\t" if rec.class_id is not None else ""
            fh.write(f"{prefix}{rec.target}>>{rec.product}\n")


def ingest_line(line: str) -> tuple[int | None, str, str] | None:
    """Convert one exported reaction (``reactants>reagents>product`` or
    ``reactants>>product``, optionally preceded by a class column separated by
    a tab or comma) into (class, precursors, product)."""
    text = line.strip()
    if not text:
        return None
    class_id = None
    for sep in ("\t", ","):
        head, _, rest = text.partition(sep)
        if rest and head.strip().isdigit():
            class_id, text = int(head), rest.strip()
            break
    parts = text.split(">")
    if len(parts) != 3:
        return None
    reactants, _reagents, product = parts
    return class_id, reactants.strip(), product.strip()


# ---- filtering ---------------------------------------------------------------

def _check_tree(smiles: str, max_nodes: int, path_length: int) -> str | None:
    try:
        tree = cached_parse(smiles)
    except (ParseError, UnknownCharacter):
        return "NotInGrammar"
    if len(tree) > max_nodes:
        return "TooManyNodes"
    if tree.height() > path_length:
        return "TooDeep"
    return None


def filter_in_grammar(records, max_in: int = MAX_NODES, max_out: int = MAX_OUT,
                      path_length: int = 64):
    """Keep records whose product and precursors all parse and fit the caps.

    Returns ``(kept, dropped)`` where dropped holds ``(record, reason)`` pairs.
    """
    kept, dropped = [], []
    for rec in records:
        reason = _check_tree(rec.product, max_in, path_length)
        if reason is None:
            for p in rec.precursors:
                if _check_tree(p, 10**9, 10**9) is not None:
                    reason = "NotInGrammar"
                    break
        if reason is None and len(target_tokens(rec.precursors)) > max_out:
            reason = "TargetTooLong"
        if reason is None:
            kept.append(rec)
        else:
            dropped.append((rec, reason))
    return kept, dropped


def split(records, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError("fractions must be three numbers summing to 1")
    n = len(records)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    shuffled = [records[i] for i in perm]
    return (shuffled[:n_train], shuffled[n_train:n_train + n_valid],
            shuffled[n_train + n_valid:])


def class_table(train, valid, test) -> list[dict]:
    counts = [Counter(r.class_id for r in part) for part in (train, valid, test)]
    rows = []
    for k, name in REACTION_CLASSES.items():
        tr, va, te = (c.get(k, 0) for c in counts)
        rows.append(dict(cls=k, name=name, train=tr, valid=va, test=te, total=tr + va + te))
    return rows


# ---- batching ----------------------------------------------------------------

@dataclass
class PreparedTree:
    symbols: np.ndarray
    parent: np.ndarray
    children: list[tuple[int, ...]]
    tpe: np.ndarray
    labels: list[str]


def prepare_tree(smiles: str, vocab: Vocab, cfg: ModelConfig, class_id: int | None = None,
                 with_class: bool = False) -> PreparedTree:
    tree = cached_parse(smiles)
    if len(tree) > cfg.max_in:
        raise LengthExceeded(f"{smiles}: {len(tree)} nodes > {cfg.max_in}")
    order = preorder_nodes(tree)
    pos = {node: k for k, node in enumerate(order)}
    paths = edge_paths(tree, cfg.path_length, order)
    offset = 1 if with_class else 0
    n = len(order) + offset
    symbols = np.zeros(n, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    children: list[tuple[int, ...]] = [()] * n
    labels = []
    if with_class:
        tok = class_token(class_id)
        symbols[0] = vocab.enc_index[tok]
        paths = np.vstack([np.zeros((1, cfg.path_length), dtype=np.int64), paths])
        labels.append(tok)
    for k, node_id in enumerate(order):
        node = tree.nodes[node_id]
        symbols[k + offset] = vocab.enc_index.get(node.symbol, vocab.enc_index[UNK])
        if node.parent is not None:
            parent[k + offset] = pos[node.parent] + offset
        children[k + offset] = tuple(pos[c] + offset for c in node.children)
        labels.append(tree.label(node_id))
    return PreparedTree(symbols, parent, children, encode_paths(paths, cfg.edge_dim), labels)


def collate_trees(prepared: list[PreparedTree], dtype="float32") -> EncodedTreeBatch:
    B = len(prepared)
    N = max(len(p.symbols) for p in prepared)
    C = max(1, max(len(c) for p in prepared for c in p.children))
    D = prepared[0].tpe.shape[1]
    symbols = np.zeros((B, N), dtype=np.int64)
    parent = np.full((B, N), -1, dtype=np.int64)
    children = np.full((B, N, C), -1, dtype=np.int64)
    tpe = np.zeros((B, N, D), dtype=dtype)
    mask = np.zeros((B, N), dtype=bool)
    for b, p in enumerate(prepared):
        n = len(p.symbols)
        symbols[b, :n] = p.symbols
        parent[b, :n] = p.parent
        for i, ch in enumerate(p.children):
            children[b, i, :len(ch)] = ch
        tpe[b, :n] = p.tpe
        mask[b, :n] = True
    return EncodedTreeBatch(symbols, parent, children, tpe, mask, [p.labels for p in prepared])


def collate_targets(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Pad ``<START> ... <END>`` id sequences into (tgt_in, tgt_out)."""
    T = max(len(s) for s in seqs) - 1
    tgt_in = np.zeros((len(seqs), T), dtype=np.int64)
    tgt_out = np.zeros((len(seqs), T), dtype=np.int64)
    for b, s in enumerate(seqs):
        tgt_in[b, :len(s) - 1] = s[:-1]
        tgt_out[b, :len(s) - 1] = s[1:]
    return tgt_in, tgt_out


@dataclass
class Batch:
    encoder: EncodedTreeBatch
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    records: list


class PreparedCorpus:
    """Records with trees, encodings and target ids computed once."""

    def __init__(self, records, vocab: Vocab, cfg: ModelConfig, with_class: bool):
        self.records = list(records)
        self.vocab = vocab
        self.cfg = cfg
        self.with_class = with_class
        self.trees = []
        self.targets = []
        self.unknown_token_records = []
        for rec in self.records:
            if with_class and rec.class_id is None:
                raise MissingClass(f"record at line {rec.line_no} has no reaction class")
            self.trees.append(prepare_tree(rec.product, vocab, cfg, rec.class_id, with_class))
            toks = target_tokens(rec.precursors)
            if len(toks) > cfg.max_out:
                raise LengthExceeded(f"target of {rec.product} has {len(toks)} tokens > {cfg.max_out}")
            ids = vocab.encode_target(toks)
            if vocab.unk_id in ids:
                self.unknown_token_records.append(rec)
            self.targets.append([vocab.start_id] + ids + [vocab.end_id])
        if self.unknown_token_records:
            log.warning("%d records contain target tokens outside the vocabulary",
                        len(self.unknown_token_records))

    def __len__(self):
        return len(self.records)

    def batch(self, indices) -> Batch:
        enc = collate_trees([self.trees[i] for i in indices], self.cfg.dtype)
        tgt_in, tgt_out = collate_targets([self.targets[i] for i in indices])
        return Batch(enc, tgt_in, tgt_out, [self.records[i] for i in indices])

    def batches(self, batch_size: int, order=None) -> list[Batch]:
        order = np.arange(len(self)) if order is None else np.asarray(order)
        return [self.batch(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]


def make_batches(records, vocab: Vocab, cfg: ModelConfig, with_class: bool = False,
                 batch_size: int = 32) -> list[Batch]:
    return PreparedCorpus(records, vocab, cfg, with_class).batches(batch_size)


def read_smiles_file(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines()
            if line.strip() and not line.startswith("#")]

