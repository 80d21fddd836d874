"""Top-k retrosynthesis metrics and a grammar-tree fingerprint for Tanimoto similarity.

The fingerprint hashes every root-to-node label path and every contiguous
leaf n-gram (n <= 7) of the grammar tree with 64-bit FNV-1a into 2048 bits.
It is deterministic and dependency free; its similarity values are not
comparable with cheminformatics-toolkit fingerprints.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .dataset import ReactionRecord, split_precursors
from .decoding import is_valid_prediction
from .errors import LengthMismatch, ParseError, UnknownCharacter
from .grammar import GrammarTree, parse, preorder_nodes

FP_BITS = 2048
FP_VERSION = 1
MAX_NGRAM = 7
BASR_THRESHOLD = 0.85
SIMILARITY_THRESHOLDS = (0.5, 0.7, 0.85)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    source: str = ""
    size: int = FP_BITS

    def __len__(self):
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        return [i for i in range(self.size) if self.bits >> i & 1]


def tree_features(tree: GrammarTree) -> set[str]:
    feats = set()
    paths = {}
    for i in preorder_nodes(tree):
        node = tree.nodes[i]
        label = node.text if node.is_leaf else node.symbol
        prefix = paths[node.parent] + "/" if node.parent is not None else ""
        paths[i] = prefix + label
        feats.add("P:" + paths[i])
    leaves = [tree.nodes[i].text for i in tree.leaves()]
    for n in range(1, MAX_NGRAM + 1):
        for start in range(len(leaves) - n + 1):
            feats.add("G:" + " ".join(leaves[start:start + n]))
    return feats


def feature_bit(feature: str, size: int = FP_BITS) -> int:
    return fnv1a_64(feature.encode()) % size


def fingerprint(smiles: str, size: int = FP_BITS) -> Fingerprint:
    bits = 0
    for feat in tree_features(parse(smiles)):
        bits |= 1 << feature_bit(feat, size)
    return Fingerprint(bits, smiles, size)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|A & B| / |A | B|; 0 when both are empty."""
    if a.size != b.size:
        raise ValueError("fingerprints have different sizes")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 0.0
    return (a.bits & b.bits).bit_count() / union


def smiles_similarity(x: str | None, y: str | None) -> float:
    """Tanimoto similarity of two SMILES; 0 if either fails to parse."""
    if not x or not y:
        return 0.0
    try:
        return tanimoto(fingerprint(x), fingerprint(y))
    except (ParseError, UnknownCharacter):
        return 0.0


def maxfrag(precursors) -> str:
    """Longest precursor; ties go to the lexicographically smallest."""
    items = [p for p in precursors if p]
    if not items:
        raise ValueError("maxfrag of an empty precursor set")
    return min(items, key=lambda s: (-len(s), s))


def _maxfrag_or_none(precursors):
    try:
        return maxfrag(precursors)
    except ValueError:
        return None


def _as_precursors(pred) -> list[str]:
    if isinstance(pred, str):
        return split_precursors(pred)
    return list(pred)


def fractional_match(pred, truth) -> float:
    truth_c = Counter(truth)
    overlap = sum((Counter(pred) & truth_c).values())
    return overlap / sum(truth_c.values())


@dataclass
class _Counts:
    n: int = 0
    acc: int = 0
    frac: float = 0.0
    maxfrag: int = 0
    basr: int = 0
    emitted: int = 0
    invalid: int = 0

    def rates(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.acc / self.n if self.n else None,
            "fractional_accuracy": self.frac / self.n if self.n else None,
            "maxfrag_accuracy": self.maxfrag / self.n if self.n else None,
            "maxfrag_basr": self.basr / self.n if self.n else None,
            "invalid_rate": self.invalid / self.emitted if self.emitted else None,
        }


def _score_one(preds: list, truth: ReactionRecord, ks, threshold: float, counts: dict,
               cache: dict) -> None:
    truth_set = Counter(truth.precursors)
    truth_max = maxfrag(truth.precursors)
    # cumulative (exact, fractional, maxfrag, basr) after each rank
    running = []
    acc = mf = basr = False
    best_frac = 0.0
    invalid = []
    for pred in preds:
        precs = _as_precursors(pred)
        text = pred if isinstance(pred, str) else ".".join(pred)
        acc = acc or Counter(precs) == truth_set
        best_frac = max(best_frac, fractional_match(precs, truth.precursors))
        pmax = _maxfrag_or_none(precs)
        mf = mf or (pmax is not None and pmax == truth_max)
        if pmax is not None and not basr:
            key = (pmax, truth_max)
            if key not in cache:
                cache[key] = smiles_similarity(pmax, truth_max)
            basr = cache[key] >= threshold
        running.append((acc, best_frac, mf, basr))
        invalid.append(not is_valid_prediction(text))
    for k in ks:
        c = counts[k]
        c.n += 1
        upto = min(k, len(preds))
        if upto:
            a, f, m, s = running[upto - 1]
            c.acc += a
            c.frac += f
            c.maxfrag += m
            c.basr += s
        c.emitted += upto
        c.invalid += sum(invalid[:upto])


def evaluate(predictions, truths, ks=(1, 2, 3, 5, 10), basr_threshold: float = BASR_THRESHOLD) -> dict:
    """Top-k accuracy, fractional accuracy, MaxFrag accuracy, MaxFrag BASR and invalid rate.

    ``predictions[i]`` is the ranked list (strings ``"A.B"`` or precursor
    sequences) for ``truths[i]``.  Returns a report dict with overall and
    per-class results.
    """
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} prediction lists for {len(truths)} records")
    ks = sorted(set(int(k) for k in ks))
    overall = {k: _Counts() for k in ks}
    by_class: dict[int, dict] = {}
    cache: dict = {}
    for preds, truth in zip(predictions, truths):
        _score_one(list(preds), truth, ks, basr_threshold, overall, cache)
        if truth.class_id is not None:
            cls_counts = by_class.setdefault(truth.class_id, {k: _Counts() for k in ks})
            _score_one(list(preds), truth, ks, basr_threshold, cls_counts, cache)
    return {
        "ks": ks,
        "basr_threshold": basr_threshold,
        "fingerprint": {"bits": FP_BITS, "version": FP_VERSION},
        "overall": {str(k): overall[k].rates() for k in ks},
        "by_class": {str(c): {str(k): v[k].rates() for k in ks} for c, v in sorted(by_class.items())},
    }


def table_rows(report: dict) -> list[tuple[str, list]]:
    """Rows mirroring the usual metrics table: measure name followed by top-k values."""
    names = [("Accuracy", "accuracy"), ("Fractional accuracy", "fractional_accuracy"),
             ("MaxFrag accuracy", "maxfrag_accuracy"), ("MaxFrag BASR", "maxfrag_basr"),
             ("Invalid rate", "invalid_rate")]
    return [(title, [report["overall"][str(k)][key] for k in report["ks"]]) for title, key in names]


def similarity_histogram(pairs, thresholds=SIMILARITY_THRESHOLDS) -> dict | None:
    """Cumulative fraction of (predicted, true) maxfrag pairs with T_c >= each threshold.

    Pass only incorrect top-1 predictions.  Returns None for an empty input.
    """
    pairs = list(pairs)
    if not pairs:
        return None
    sims = [smiles_similarity(p, t) for p, t in pairs]
    return {t: sum(s >= t for s in sims) / len(sims) for t in thresholds}


def incorrect_top1_pairs(predictions, truths) -> list[tuple[str | None, str]]:
    pairs = []
    for preds, truth in zip(predictions, truths):
        if not preds:
            continue
        precs = _as_precursors(preds[0])
        if Counter(precs) != Counter(truth.precursors):
            pairs.append((_maxfrag_or_none(precs), maxfrag(truth.precursors)))
    return pairs
