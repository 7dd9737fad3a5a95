"""Decision-tree export as a Graphviz DOT document, plus a small reader that
evaluates an exported document so exports can be checked against the tree."""
import re
from dataclasses import dataclass

import numpy as np

from droidauto.models.tree import LEAF, TreeModel

_NODE_RE = re.compile(r"^(\d+) \[(.*)\] ;$")
_EDGE_RE = re.compile(r"^(\d+) -> (\d+) \[(.*)\] ;$")
_ATTR_RE = re.compile(r'(\w+)="((?:[^"\\]|\\.)*)"')


def _quote(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _unquote(text: str) -> str:
    return re.sub(r"\\(.)", r"\1", text)


def export_tree(tree: TreeModel, feature_names) -> str:
    """
    One DOT statement per node and per edge.

    Split nodes carry ``feature`` and ``threshold`` attributes, leaves carry
    ``p_malware``; floats are written with repr() so they read back exactly.
    Edge labels are the split predicates.
    """
    names = list(feature_names)
    if len(names) != tree.n_features:
        raise ValueError(f"{len(names)} feature names for a tree over {tree.n_features} features")
    lines = ["digraph Tree {", "node [shape=box, fontname=helvetica] ;"]
    for node in range(tree.n_nodes):
        n = int(tree.n_node_samples[node])
        p0, p1 = (float(v) for v in tree.value[node])
        if tree.feature[node] == LEAF:
            label = f"samples = {n}\\np(benign) = {p0:.3f}\\np(malware) = {p1:.3f}"
            attrs = f'label="{label}", leaf="true", p_malware="{p1!r}"'
        else:
            name = names[tree.feature[node]]
            t = float(tree.threshold[node])
            label = f"{_quote(name)} <= {t:.6g}\\nsamples = {n}\\np(malware) = {p1:.3f}"
            attrs = f'label="{label}", feature="{_quote(name)}", threshold="{t!r}"'
        lines.append(f"{node} [{attrs}] ;")
    for node in range(tree.n_nodes):
        if tree.feature[node] == LEAF:
            continue
        name = _quote(names[tree.feature[node]])
        t = float(tree.threshold[node])
        lines.append(f'{node} -> {tree.left[node]} [label="{name} <= {t:.6g}", side="left"] ;')
        lines.append(f'{node} -> {tree.right[node]} [label="{name} > {t:.6g}", side="right"] ;')
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ExportedNode:
    node_id: int
    feature: str | None = None
    threshold: float | None = None
    p_malware: float | None = None
    left: int | None = None
    right: int | None = None


def parse_tree_export(document: str) -> dict[int, ExportedNode]:
    nodes: dict[int, dict] = {}
    edges: list[tuple[int, int, str]] = []
    for raw in document.splitlines():
        line = raw.strip()
        if m := _EDGE_RE.match(line):
            attrs = {k: _unquote(v) for k, v in _ATTR_RE.findall(m.group(3))}
            edges.append((int(m.group(1)), int(m.group(2)), attrs.get("side", "")))
        elif m := _NODE_RE.match(line):
            attrs = {k: _unquote(v) for k, v in _ATTR_RE.findall(m.group(2))}
            entry = {"node_id": int(m.group(1))}
            if attrs.get("leaf") == "true":
                entry["p_malware"] = float(attrs["p_malware"])
            else:
                entry["feature"] = attrs["feature"]
                entry["threshold"] = float(attrs["threshold"])
            nodes[entry["node_id"]] = entry
    for parent, child, side in edges:
        if parent not in nodes or child not in nodes:
            raise ValueError(f"edge {parent} -> {child} references an unknown node")
        if side not in ("left", "right"):
            raise ValueError(f"edge {parent} -> {child} has no side")
        nodes[parent][side] = child
    if 0 not in nodes:
        raise ValueError("document has no root node")
    return {k: ExportedNode(**v) for k, v in nodes.items()}


def evaluate_tree_export(document: str, X: np.ndarray, feature_names) -> np.ndarray:
    """Malware probability for each row of X according to an exported tree."""
    nodes = parse_tree_export(document)
    index = {name: j for j, name in enumerate(feature_names)}
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0])
    for i, row in enumerate(X):
        node = nodes[0]
        while node.p_malware is None:
            go_left = row[index[node.feature]] <= node.threshold
            node = nodes[node.left if go_left else node.right]
        out[i] = node.p_malware
    return out
