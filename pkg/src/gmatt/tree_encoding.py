"""Edge paths and sinusoidal tree positional encodings for grammar-tree nodes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DepthExceeded
from .grammar import GrammarTree, preorder_nodes


@dataclass(frozen=True)
class EncodingConfig:
    L: int = 64
    d: int = 4
    d_model: int = 256

    def __post_init__(self):
        if self.d % 2:
            raise ValueError("per-edge encoding dimension d must be even")
        if self.d * self.L != self.d_model:
            raise ValueError(f"d*L = {self.d * self.L} != d_model = {self.d_model}")


def sibling_index(tree: GrammarTree, node: int) -> int:
    """1-based position of ``node`` among its parent's children (0 for the root)."""
    parent = tree.nodes[node].parent
    if parent is None:
        return 0
    return tree.nodes[parent].children.index(node) + 1


def edge_path(tree: GrammarTree, node: int, L: int) -> np.ndarray:
    """Sibling indices along the path to the root, most recent edge first, zero padded."""
    path = []
    v = node
    while tree.nodes[v].parent is not None:
        path.append(sibling_index(tree, v))
        v = tree.nodes[v].parent
    if len(path) > L:
        raise DepthExceeded(f"node {node} at depth {len(path)} exceeds L={L}")
    out = np.zeros(L, dtype=np.int64)
    out[:len(path)] = path
    return out


def edge_paths(tree: GrammarTree, L: int, order: list[int] | None = None) -> np.ndarray:
    """Paths for all nodes, rows following ``order`` (pre-order by default)."""
    pre = preorder_nodes(tree)
    order = pre if order is None else order
    paths = np.zeros((len(tree.nodes), L), dtype=np.int64)
    for v in pre:
        children = tree.nodes[v].children
        if not children:
            continue
        # sibling indices are >= 1, so a full parent path puts the child at depth L + 1
        if paths[v, L - 1] != 0:
            raise DepthExceeded(f"children of node {v} are deeper than L={L}")
        for i, c in enumerate(children, start=1):
            paths[c, 0] = i
            paths[c, 1:] = paths[v, :L - 1]
    return paths[order]


def frequencies(d: int) -> np.ndarray:
    """omega_i = 1 / 10000^(2i/d) for i = 0..d/2-1."""
    i = np.arange(d // 2, dtype=np.float64)
    return 1.0 / np.power(10000.0, 2.0 * i / d)


def _encoding_table(max_value: int, d: int) -> np.ndarray:
    x = np.arange(max_value + 1, dtype=np.float64)[:, None] * frequencies(d)[None, :]
    table = np.empty((max_value + 1, d), dtype=np.float64)
    table[:, 0::2] = np.sin(x)
    table[:, 1::2] = np.cos(x)
    return table


def edge_encoding(x: int, d: int) -> np.ndarray:
    if d % 2:
        raise ValueError("d must be even")
    return _encoding_table(int(x), d)[int(x)]


def encode_paths(paths: np.ndarray, d: int) -> np.ndarray:
    """Map an (n, L) integer path matrix to (n, L*d) encodings.

    Values are looked up in a per-integer table so that equal path entries
    always produce bit-identical encodings.
    """
    n, L = paths.shape
    table = _encoding_table(int(paths.max(initial=0)), d)
    return table[paths].reshape(n, L * d)


def tree_positional_encoding(tree: GrammarTree, node: int, cfg: EncodingConfig) -> np.ndarray:
    path = edge_path(tree, node, cfg.L)
    return encode_paths(path[None, :], cfg.d)[0]


def encode_tree(tree: GrammarTree, cfg: EncodingConfig,
                order: list[int] | None = None) -> np.ndarray:
    """(num_nodes, d_model) matrix; row k encodes the k-th node of ``order``."""
    return encode_paths(edge_paths(tree, cfg.L, order), cfg.d)
