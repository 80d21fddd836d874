"""SMILES context-free grammar: tokenizer, Earley chart parser and grammar trees.

The grammar is loaded from ``data/smiles_grammar.tsv`` (one production per
line, ``rule_id<TAB>LHS<TAB>RHS...`` with quoted terminals).  Parsing is done
with an Earley recognizer over the token stream followed by a deterministic
tree extraction: at every ambiguous choice the lowest rule id wins, then the
leftmost split point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import NamedTuple

from .errors import ParseError, UnknownCharacter

MAX_NODES = 350
START_SYMBOL = "SMILES"
SENTINEL_TERMINAL = "NONE"
GRAMMAR_RESOURCE = "smiles_grammar.tsv"


@dataclass(frozen=True)
class Rule:
    id: int
    lhs: str
    rhs: tuple[str, ...]

    def __str__(self):
        return f"{self.lhs} -> {' '.join(self.rhs)}"


@dataclass(frozen=True)
class GrammarSpec:
    nonterminals: frozenset[str]
    terminals: frozenset[str]
    rules: tuple[Rule, ...]
    start: str = START_SYMBOL
    by_lhs: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_text(cls, text: str) -> "GrammarSpec":
        raw = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            rid, lhs, rhs = line.split("\t")
            raw.append((int(rid), lhs, rhs.split(" ")))
        nonterminals = frozenset(lhs for _, lhs, _ in raw)
        terminals = set()
        rules = []
        for expected, (rid, lhs, rhs) in enumerate(raw):
            if rid != expected:
                raise ValueError(f"rule ids must be dense, got {rid} at {expected}")
            symbols = []
            for sym in rhs:
                if len(sym) >= 3 and sym[0] == sym[-1] == "'":
                    sym = sym[1:-1]
                    terminals.add(sym)
                elif sym == SENTINEL_TERMINAL:
                    terminals.add(sym)
                elif sym not in nonterminals:
                    raise ValueError(f"rule {rid}: undeclared symbol {sym!r}")
                symbols.append(sym)
            rules.append(Rule(rid, lhs, tuple(symbols)))
        by_lhs: dict[str, list[Rule]] = {}
        for rule in rules:
            by_lhs.setdefault(rule.lhs, []).append(rule)
        if START_SYMBOL not in nonterminals:
            raise ValueError("grammar has no SMILES start symbol")
        return cls(nonterminals, frozenset(terminals), tuple(rules), START_SYMBOL,
                   {k: tuple(v) for k, v in by_lhs.items()})

    @property
    def surface_terminals(self) -> frozenset[str]:
        """Terminals that can appear in a SMILES string."""
        return self.terminals - {SENTINEL_TERMINAL}


def grammar_text() -> str:
    return resources.files("gmatt.data").joinpath(GRAMMAR_RESOURCE).read_text()


@lru_cache(maxsize=None)
def default_grammar() -> GrammarSpec:
    return GrammarSpec.from_text(grammar_text())


class Token(NamedTuple):
    text: str
    kind: str
    position: int


def tokenize(smiles: str, grammar: GrammarSpec | None = None) -> list[Token]:
    """Split ``smiles`` into terminal tokens using maximal munch."""
    grammar = grammar or default_grammar()
    surfaces = grammar.surface_terminals
    max_len = max(len(t) for t in surfaces)
    tokens = []
    i = 0
    while i < len(smiles):
        for width in range(max_len, 0, -1):
            piece = smiles[i:i + width]
            if len(piece) == width and piece in surfaces:
                tokens.append(Token(piece, piece, i))
                i += width
                break
        else:
            raise UnknownCharacter(i, smiles[i])
    return tokens


@dataclass(frozen=True)
class Node:
    symbol: str
    rule_id: int | None = None
    parent: int | None = None
    children: tuple[int, ...] = ()
    text: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.text is not None


@dataclass(frozen=True)
class GrammarTree:
    nodes: tuple[Node, ...]
    root: int = 0

    def __len__(self):
        return len(self.nodes)

    def depth(self, index: int) -> int:
        d = 0
        while self.nodes[index].parent is not None:
            index = self.nodes[index].parent
            d += 1
        return d

    def height(self) -> int:
        depths = [0] * len(self.nodes)
        for i in preorder_nodes(self):
            p = self.nodes[i].parent
            if p is not None:
                depths[i] = depths[p] + 1
        return max(depths)

    def leaves(self) -> list[int]:
        return [i for i in preorder_nodes(self) if self.nodes[i].is_leaf]

    def label(self, index: int, grammar: GrammarSpec | None = None) -> str:
        """Human-readable node label: the production for interior nodes, the text for leaves."""
        node = self.nodes[index]
        if node.is_leaf:
            return node.text
        if node.rule_id is None:
            return node.symbol
        grammar = grammar or default_grammar()
        return str(grammar.rules[node.rule_id])

    def pretty(self) -> str:
        lines = []
        stack = [(self.root, 0)]
        while stack:
            i, indent = stack.pop()
            node = self.nodes[i]
            if node.is_leaf:
                lines.append("  " * indent + repr(node.text))
            else:
                lines.append("  " * indent + f"{node.symbol} [{node.rule_id}]")
            stack.extend((c, indent + 1) for c in reversed(node.children))
        return "\n".join(lines)


def _earley(tokens: list[str], grammar: GrammarSpec) -> tuple[set, int]:
    """Run the recognizer; returns the set of completed (symbol, start, end) spans
    and the furthest token position reached."""
    n = len(tokens)
    rules = grammar.rules
    nonterminals = grammar.nonterminals
    charts: list[list[tuple[int, int, int]]] = [[] for _ in range(n + 1)]
    seen: list[set] = [set() for _ in range(n + 1)]
    waiting: list[dict[str, list]] = [dict() for _ in range(n + 1)]
    completed: set[tuple[str, int, int]] = set()

    def add(k, item):
        if item not in seen[k]:
            seen[k].add(item)
            charts[k].append(item)

    for rule in grammar.by_lhs[grammar.start]:
        add(0, (rule.id, 0, 0))
    furthest = 0
    for k in range(n + 1):
        chart = charts[k]
        if chart:
            furthest = k
        predicted = set()
        j = 0
        while j < len(chart):
            rid, dot, origin = chart[j]
            j += 1
            rhs = rules[rid].rhs
            if dot == len(rhs):
                lhs = rules[rid].lhs
                completed.add((lhs, origin, k))
                for prid, pdot, porigin in waiting[origin].get(lhs, ()):
                    add(k, (prid, pdot + 1, porigin))
                continue
            sym = rhs[dot]
            if sym in nonterminals:
                waiting[k].setdefault(sym, []).append((rid, dot, origin))
                if sym not in predicted:
                    predicted.add(sym)
                    for rule in grammar.by_lhs[sym]:
                        add(k, (rule.id, 0, k))
            elif k < n and tokens[k] == sym:
                add(k + 1, (rid, dot + 1, origin))
    return completed, furthest


def parse(smiles: str, grammar: GrammarSpec | None = None) -> GrammarTree:
    """Parse a SMILES string into its grammar tree.

    Raises ``UnknownCharacter`` for characters outside the terminal set and
    ``ParseError`` when the token stream has no derivation.
    """
    grammar = grammar or default_grammar()
    if not smiles:
        raise ParseError(0, "empty string")
    toks = tokenize(smiles, grammar)
    texts = [t.text for t in toks]
    n = len(texts)
    completed, furthest = _earley(texts, grammar)
    if (grammar.start, 0, n) not in completed:
        pos = toks[furthest].position if furthest < n else len(smiles)
        raise ParseError(pos)

    ends: dict[tuple[str, int], list[int]] = {}
    for sym, i, j in completed:
        ends.setdefault((sym, i), []).append(j)
    for v in ends.values():
        v.sort()

    def span_ends(sym, i):
        if sym in grammar.nonterminals:
            return ends.get((sym, i), ())
        return (i + 1,) if i < n and texts[i] == sym else ()

    def split(rhs, i, j):
        # leftmost-first search for boundaries b_1..b_m with b_m == j
        if len(rhs) == 1:
            return [j] if j in span_ends(rhs[0], i) else None
        for k in span_ends(rhs[0], i):
            if k >= j:
                break
            rest = split(rhs[1:], k, j)
            if rest is not None:
                return [k] + rest
        return None

    def choose(sym, i, j):
        for rule in grammar.by_lhs[sym]:
            bounds = split(rule.rhs, i, j)
            if bounds is not None:
                return rule, bounds
        raise AssertionError(f"no derivation for completed span {sym}[{i}:{j}]")

    nodes: list[dict] = []
    # (symbol, start, end, parent); children are appended in pre-order
    stack = [(grammar.start, 0, n, None)]
    while stack:
        sym, i, j, parent = stack.pop()
        idx = len(nodes)
        if parent is not None:
            nodes[parent]["children"].append(idx)
        if sym not in grammar.nonterminals:
            nodes.append(dict(symbol=sym, rule_id=None, parent=parent, children=[], text=texts[i]))
            continue
        rule, bounds = choose(sym, i, j)
        nodes.append(dict(symbol=sym, rule_id=rule.id, parent=parent, children=[], text=None))
        starts = [i] + bounds[:-1]
        for child_sym, a, b in reversed(list(zip(rule.rhs, starts, bounds))):
            stack.append((child_sym, a, b, idx))
    return GrammarTree(tuple(
        Node(d["symbol"], d["rule_id"], d["parent"], tuple(d["children"]), d["text"])
        for d in nodes))


def reconstruct(tree: GrammarTree) -> str:
    return "".join(tree.nodes[i].text for i in tree.leaves())


def is_in_grammar(smiles: str, max_nodes: int = MAX_NODES,
                  grammar: GrammarSpec | None = None) -> bool:
    try:
        tree = parse(smiles, grammar)
    except (ParseError, UnknownCharacter):
        return False
    return len(tree) <= max_nodes


def preorder_nodes(tree: GrammarTree) -> list[int]:
    """Depth-first pre-order, children left to right."""
    order = []
    stack = [tree.root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(tree.nodes[i].children))
    return order


def check_tree(tree: GrammarTree, grammar: GrammarSpec | None = None) -> None:
    """Assert structural soundness: children match the production's rhs."""
    grammar = grammar or default_grammar()
    for i, node in enumerate(tree.nodes):
        if node.is_leaf:
            assert not node.children
            continue
        rule = grammar.rules[node.rule_id]
        assert rule.lhs == node.symbol, (i, rule, node.symbol)
        got = tuple(tree.nodes[c].symbol for c in node.children)
        assert got == rule.rhs, (i, got, rule.rhs)
        for c in node.children:
            assert tree.nodes[c].parent == i
