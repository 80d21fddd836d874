"""Template-generated toy reactions for smoke tests and desk-scale experiments.

Each template builds product and precursor SMILES by string assembly from
small fragment pools, so every output stays inside the grammar (elements,
ring digits 1-7, simple bracket atoms).  Nothing here is chemically curated.
"""
from __future__ import annotations

import itertools
from importlib import resources

import numpy as np

from .dataset import ReactionRecord, parse_reaction_line

ACYL_GROUPS = ["C", "CC", "CCC", "CC(C)", "C1CC1", "c1ccccc1", "c1ccc(F)cc1", "c1ccc(Cl)cc1",
               "c1ccc(Br)cc1", "c1ccncc1", "c1ccco1", "c1cccs1", "COc1ccc(cc1)", "CSC"]
AMINES = ["NC", "NCC", "NCCC", "NC(C)C", "NCCO", "NCc1ccccc1", "Nc1ccccc1", "Nc1ccc(F)cc1",
          "N1CCCCC1", "N1CCOCC1", "NCC(=O)OC", "NC1CC1", "NCc1ccco1", "N1CCCC1"]
ALKYL_HALIDES = [("Br", "C"), ("Br", "CC"), ("Br", "Cc2ccccc2"), ("Cl", "CC=C"), ("I", "CCC"),
                 ("Br", "CC#N"), ("Br", "CCOC")]
ARYLS = ["c1ccccc1", "c1ccc(C)cc1", "c1ccc(F)cc1", "c1ccc(OC)cc1", "c1cccnc1", "c1ccc(Cl)cc1",
         "c1cc(C)cc(C)c1", "c1ccc2ccccc2c1", "c1ccsc1", "c1ccc(C#N)cc1"]
ALCOHOL_TAILS = ["c1ccccc1", "CC", "c1ccc(Br)cc1", "C1CCCCC1", "c1ccncc1", "CCc1ccccc1",
                 "c1ccc(OC)cc1"]
BOC = "CC(C)(C)OC(=O)"
BOC2O = "CC(C)(C)OC(=O)OC(=O)OC(C)(C)C"


def _alkylate(amine: str, group: str) -> str:
    """Insert ``(group)`` right after the amine nitrogen and its ring-bond digits."""
    i = 1
    while i < len(amine) and amine[i].isdigit():
        i += 1
    return amine[:i] + "(" + group + ")" + amine[i:]


def reactions() -> list[ReactionRecord]:
    """All template reactions, deduplicated by product, in a fixed order."""
    out = []
    for r, a in itertools.product(ACYL_GROUPS, AMINES):
        out.append(ReactionRecord(r + "C(=O)" + a, (r + "C(=O)O", a), 2))
    for a in AMINES:
        out.append(ReactionRecord(a, (BOC + a,), 6))
        out.append(ReactionRecord(BOC + a, (a, BOC2O), 5))
    for r in ACYL_GROUPS:
        out.append(ReactionRecord(r + "C(=O)O", (r + "C(=O)OC",), 6))
        out.append(ReactionRecord(r + "C(=O)Cl", (r + "C(=O)O", "O=S(Cl)Cl"), 9))
    for a, (x, g) in itertools.product(AMINES, ALKYL_HALIDES):
        out.append(ReactionRecord(_alkylate(a, g), (a, x + g), 1))
    for ar in ARYLS:
        out.append(ReactionRecord("N" + ar, ("O=[N+]([O-])" + ar,), 7))
    for ar, br in itertools.permutations(ARYLS, 2):
        out.append(ReactionRecord(ar + br, ("OB(O)" + ar, "Br" + br), 3))
    for t in ALCOHOL_TAILS:
        out.append(ReactionRecord("O=C" + t, ("OC" + t,), 8))
    seen, unique = set(), []
    for rec in out:
        if rec.product not in seen:
            seen.add(rec.product)
            unique.append(rec)
    return unique


def sample_reactions(n: int, seed: int = 0) -> list[ReactionRecord]:
    pool = reactions()
    idx = np.random.default_rng(seed).permutation(len(pool))[:n]
    return [pool[i] for i in sorted(idx)]


def molecules() -> list[str]:
    """Every distinct product and precursor of the template reactions."""
    seen = {}
    for rec in reactions():
        for s in (rec.product,) + rec.precursors:
            seen.setdefault(s, None)
    return list(seen)


def bundled_smiles() -> list[str]:
    """The shipped copy of ``molecules()``."""
    text = resources.files("gmatt.data").joinpath("toy_smiles.txt").read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


def bundled_reactions() -> list[ReactionRecord]:
    """The shipped copy of ``reactions()``, with line numbers."""
    text = resources.files("gmatt.data").joinpath("toy_reactions.txt").read_text(encoding="utf-8")
    return [parse_reaction_line(ln, i, True) for i, ln in enumerate(text.splitlines(), 1) if ln.strip()]
