import json

import pytest
from hypothesis import given, settings, strategies as st

from gmatt.dataset import ReactionRecord
from gmatt.errors import LengthMismatch, ParseError
from gmatt.grammar import parse
from gmatt.metrics import (FP_BITS, Fingerprint, evaluate, fingerprint, fnv1a_64, maxfrag,
                           similarity_histogram, smiles_similarity, table_rows, tanimoto)

SMILES = ["CC=C", "CCC", "C=CCCOCC=O", "NO", "c1ccccc1", "CCOC(=O)CSCCCC(O)c1ccco1",
          "COc1ccc(Br)cc1", "COc1ccc(F)cc1", "O=C(O)C1CC1", "CC(C)(C)OC(=O)N1CCNCC1"]


def _fnv(data: bytes) -> int:
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def _features(smiles):
    """Root-to-node label paths and leaf n-grams up to 7, built by a plain recursive walk."""
    tree = parse(smiles)
    feats, leaves = set(), []

    def walk(v, prefix):
        node = tree.nodes[v]
        label = node.text if node.is_leaf else node.symbol
        path = f"{prefix}/{label}" if prefix else label
        feats.add("P:" + path)
        if node.is_leaf:
            leaves.append(node.text)
        for c in node.children:
            walk(c, path)
    walk(tree.root, "")
    for n in range(1, 8):
        for i in range(len(leaves) - n + 1):
            feats.add("G:" + " ".join(leaves[i:i + n]))
    return feats


def _bits(feats):
    return {_fnv(f.encode()) % FP_BITS for f in feats}


def test_fnv_reference_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


@pytest.mark.parametrize("smiles", SMILES)
def test_fingerprint_matches_feature_oracle(smiles):
    fp = fingerprint(smiles)
    assert set(fp.on_bits()) == _bits(_features(smiles))
    assert fp == fingerprint(smiles)
    assert fp.size == FP_BITS


def test_bond_changes_fingerprint():
    assert fingerprint("CC=C").bits != fingerprint("CCC").bits


def test_disjoint_alphabets_share_only_structural_paths():
    a, b = "CCC", "O=O"
    shared = _features(a) & _features(b)
    assert shared and all(f.startswith("P:") and f.split("/")[-1].isupper() for f in shared)
    common = fingerprint(a).bits & fingerprint(b).bits
    assert set(Fingerprint(common).on_bits()) >= _bits(shared)
    # without any shared feature the only overlap left is hash collisions
    extra = set(Fingerprint(common).on_bits()) - _bits(shared)
    assert extra <= _bits(_features(a)) & _bits(_features(b))


def test_fingerprint_rejects_unparseable():
    with pytest.raises(ParseError):
        fingerprint("C(")


def _fp(bits):
    return Fingerprint(sum(1 << b for b in bits))


def test_tanimoto_examples():
    assert tanimoto(_fp({1, 5, 9}), _fp({1, 5, 9})) == 1.0
    assert tanimoto(_fp({1, 2}), _fp({3, 4})) == 0.0
    assert tanimoto(_fp({1, 2, 3}), _fp({2, 3, 4})) == 0.5
    assert tanimoto(_fp(set()), _fp(set())) == 0.0
    with pytest.raises(ValueError):
        tanimoto(Fingerprint(1, size=8), Fingerprint(1, size=16))


@settings(max_examples=200, deadline=None)
@given(st.sets(st.integers(0, FP_BITS - 1), max_size=40), st.sets(st.integers(0, FP_BITS - 1), max_size=40))
def test_tanimoto_properties(a, b):
    fa, fb = _fp(a), _fp(b)
    t = tanimoto(fa, fb)
    assert t == tanimoto(fb, fa)
    assert 0.0 <= t <= 1.0
    expected = len(a & b) / len(a | b) if a | b else 0.0
    assert t == expected
    if a:
        assert tanimoto(fa, fa) == 1.0


def test_similarity_of_unparseable_is_zero():
    assert smiles_similarity("C(", "CC") == 0.0
    assert smiles_similarity(None, "CC") == 0.0
    assert smiles_similarity("CC", "CC") == 1.0


def test_maxfrag():
    assert maxfrag(["C=CCCOCC=O", "NO"]) == "C=CCCOCC=O"
    assert maxfrag(["NO", "C=CCCOCC=O"]) == "C=CCCOCC=O"
    assert maxfrag(["CCO"]) == "CCO"
    assert maxfrag(["CO", "CC"]) == "CC"
    with pytest.raises(ValueError):
        maxfrag([])


def _rec(target, cls=None):
    return ReactionRecord("CC", tuple(target.split(".")), cls)


def test_identical_predictions_are_perfect():
    truths = [_rec("C=CCCOCC=O.NO", 6), _rec("CCO", 1), _rec("c1ccccc1.CBr", 3)]
    preds = [[t.target] for t in truths]
    report = evaluate(preds, truths)
    for k in ("1", "2", "3", "5", "10"):
        r = report["overall"][k]
        assert (r["accuracy"], r["fractional_accuracy"], r["maxfrag_accuracy"],
                r["maxfrag_basr"], r["invalid_rate"]) == (1.0, 1.0, 1.0, 1.0, 0.0)
    assert sorted(report["by_class"]) == ["1", "3", "6"]


def test_partial_overlap():
    report = evaluate([["CCO.CN"]], [_rec("CCO.CC")], ks=[1])
    r = report["overall"]["1"]
    assert r["accuracy"] == 0.0
    assert r["fractional_accuracy"] == 0.5


def test_halogen_swap_is_incorrect():
    report = evaluate([["COc1ccc(F)cc1"]], [_rec("COc1ccc(Br)cc1")], ks=[1])
    r = report["overall"]["1"]
    assert r["accuracy"] == 0.0 and r["maxfrag_accuracy"] == 0.0
    sim = smiles_similarity("COc1ccc(F)cc1", "COc1ccc(Br)cc1")
    assert r["maxfrag_basr"] == float(sim >= 0.85)


def test_topk_is_cumulative_and_invalid_is_per_hypothesis():
    truths = [_rec("CCO"), _rec("CCN")]
    preds = [["C(", "CCO", "CC"], ["CCN", "C)", "N"]]
    report = evaluate(preds, truths, ks=[1, 2, 3])
    o = report["overall"]
    assert [o[k]["accuracy"] for k in "123"] == [0.5, 1.0, 1.0]
    assert o["1"]["invalid_rate"] == 0.5          # 1 of 2 hypotheses
    assert o["2"]["invalid_rate"] == 0.5          # 2 of 4
    assert o["3"]["invalid_rate"] == pytest.approx(2 / 6)


def test_invalid_if_any_fragment_fails():
    report = evaluate([["CCO.C("]], [_rec("CCO.CC")], ks=[1])
    assert report["overall"]["1"]["invalid_rate"] == 1.0


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        evaluate([["CC"]], [])


def test_report_is_json_serialisable_and_pure():
    truths = [_rec("C=CCCOCC=O.NO", 6)]
    preds = [["C=CCCOCC=O.N", "C=CCCOCC=O.NO"]]
    a, b = evaluate(preds, truths), evaluate(preds, truths)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    rows = table_rows(a)
    assert [r[0] for r in rows] == ["Accuracy", "Fractional accuracy", "MaxFrag accuracy",
                                    "MaxFrag BASR", "Invalid rate"]
    assert all(len(v) == 5 for _, v in rows)


ranked_lists = st.lists(st.lists(st.sampled_from(SMILES + ["C(", "CCO.NO", "NO.CCC"]), max_size=6),
                        min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(ranked_lists, st.data())
def test_report_invariants(preds, data):
    truths = [_rec(data.draw(st.sampled_from(["CCC", "NO", "C=CCCOCC=O.NO", "CCO.NO"])))
              for _ in preds]
    report = evaluate(preds, truths, ks=[1, 2, 3, 5, 10])
    prev = None
    for k in ("1", "2", "3", "5", "10"):
        r = report["overall"][k]
        for key, v in r.items():
            if key != "n" and v is not None:
                assert 0.0 <= v <= 1.0
        assert r["accuracy"] <= r["fractional_accuracy"] + 1e-12
        assert r["accuracy"] <= r["maxfrag_accuracy"] <= r["maxfrag_basr"]
        if prev:
            for key in ("accuracy", "fractional_accuracy", "maxfrag_accuracy", "maxfrag_basr"):
                assert prev[key] <= r[key] + 1e-12
        prev = r


def test_similarity_histogram():
    assert similarity_histogram([]) is None
    assert similarity_histogram([("CCC", "CCC")]) == {0.5: 1.0, 0.7: 1.0, 0.85: 1.0}
    pairs = [("COc1ccc(F)cc1", "COc1ccc(Br)cc1"), ("CCC", "O=O"), ("CCCCCCO", "CCCCCCN"),
             ("C(", "CC"), ("c1ccccc1", "c1ccccc1C")]
    sims = [smiles_similarity(p, t) for p, t in pairs]
    hist = similarity_histogram(pairs)
    for t in (0.5, 0.7, 0.85):
        assert hist[t] == sum(1 for s in sims if s >= t) / len(pairs)
