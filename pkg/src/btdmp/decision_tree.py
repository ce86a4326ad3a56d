"""CART over binary conditions, and extraction of per-label DNF rules from the tree."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence, Union

from .logic import BooleanDNF
from .trajectory import ConditionVector


@dataclass(frozen=True)
class LabeledExample:
    conditions: ConditionVector
    label: str


@dataclass(frozen=True)
class Leaf:
    label: str
    counts: tuple[tuple[str, int], ...]

    @property
    def n_samples(self) -> int:
        return sum(c for _, c in self.counts)


@dataclass(frozen=True)
class Split:
    feature: str
    false_branch: "Node"
    true_branch: "Node"
    counts: tuple[tuple[str, int], ...] = field(default=())


Node = Union[Leaf, Split]


@dataclass(frozen=True)
class DecisionTree:
    root: Node
    features: tuple[str, ...]

    def leaves(self):
        """(path, leaf) pairs in depth-first order, false branch first. A path is ((feature, value), ...)."""
        out = []

        def walk(node, path):
            if isinstance(node, Leaf):
                out.append((path, node))
            else:
                walk(node.false_branch, path + ((node.feature, False),))
                walk(node.true_branch, path + ((node.feature, True),))

        walk(self.root, ())
        return out

    @property
    def depth(self) -> int:
        return max((len(p) for p, _ in self.leaves()), default=0)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted({leaf.label for _, leaf in self.leaves()}))


def gini(counts: Mapping[str, int]) -> Fraction:
    total = sum(counts.values())
    if total == 0:
        return Fraction(0)
    return 1 - sum(Fraction(c, total) ** 2 for c in counts.values())


def _majority(counts: Counter) -> str:
    top = max(counts.values())
    return min(label for label, c in counts.items() if c == top)


def _counts_tuple(counts: Counter) -> tuple[tuple[str, int], ...]:
    return tuple(sorted(counts.items()))


def split_gain(examples: Sequence[LabeledExample], feature: str) -> Fraction:
    """Impurity decrease of splitting on ``feature``, computed exactly."""
    n = len(examples)
    parent = gini(Counter(e.label for e in examples))
    child = Fraction(0)
    for value in (False, True):
        side = Counter(e.label for e in examples if e.conditions[feature] == value)
        m = sum(side.values())
        if m:
            child += Fraction(m, n) * gini(side)
    return parent - child


def learn_tree(
    examples: Sequence[LabeledExample],
    tie_break: str = "declared",
    zero_gain_splits: bool = True,
) -> DecisionTree:
    """Greedy CART with Gini impurity.

    Equal-gain splits go to the condition declared first in the dataset
    (``tie_break="declared"``) or to the lexicographically smallest name
    (``"lexicographic"``). With ``zero_gain_splits`` an impure node whose rows
    still differ on an unused condition is split even when no condition lowers
    impurity (XOR-like data), so that consistent training data is reproduced.
    """
    if not examples:
        raise ValueError("cannot learn a tree from no examples")
    names = examples[0].conditions.names
    for e in examples:
        if set(e.conditions.names) != set(names):
            raise ValueError("examples carry different condition names")
    if tie_break == "declared":
        order = tuple(names)
    elif tie_break == "lexicographic":
        order = tuple(sorted(names))
    else:
        raise ValueError(f"unknown tie_break {tie_break!r}")

    def grow(rows: list[LabeledExample], unused: tuple[str, ...]) -> Node:
        counts = Counter(e.label for e in rows)
        if len(counts) == 1 or not unused:
            return Leaf(_majority(counts), _counts_tuple(counts))
        best, best_gain = None, Fraction(0)
        for f in unused:
            g = split_gain(rows, f)
            if g > best_gain:
                best, best_gain = f, g
        if best is None and zero_gain_splits:
            best = next((f for f in unused if len({e.conditions[f] for e in rows}) == 2), None)
        if best is None:
            return Leaf(_majority(counts), _counts_tuple(counts))
        rest = tuple(f for f in unused if f != best)
        left = [e for e in rows if not e.conditions[best]]
        right = [e for e in rows if e.conditions[best]]
        return Split(best, grow(left, rest), grow(right, rest), _counts_tuple(counts))

    return DecisionTree(grow(list(examples), order), tuple(names))


def _lookup(conditions, name: str) -> bool:
    try:
        return bool(conditions[name])
    except KeyError:
        raise KeyError(f"condition {name!r} missing from input") from None


def predict(tree: DecisionTree, conditions: ConditionVector | Mapping[str, bool]) -> str:
    node = tree.root
    while isinstance(node, Split):
        node = node.true_branch if _lookup(conditions, node.feature) else node.false_branch
    return node.label


def tree_to_dnf(tree: DecisionTree) -> dict[str, BooleanDNF]:
    """One DNF per leaf label: the disjunction of the root-to-leaf paths ending in that label."""
    terms: dict[str, list] = {}
    for path, leaf in tree.leaves():
        terms.setdefault(leaf.label, []).append(path)
    return {label: BooleanDNF(tree.features, tuple(paths)) for label, paths in sorted(terms.items())}


def export_dot(tree: DecisionTree) -> str:
    lines = ["digraph DecisionTree {", '  node [fontname="Helvetica"];']
    counter = [0]

    def emit(node) -> str:
        nid = f"n{counter[0]}"
        counter[0] += 1
        if isinstance(node, Leaf):
            counts = ", ".join(f"{k}: {v}" for k, v in node.counts)
            lines.append(f'  {nid} [label="{node.label}\\n{counts}", shape=ellipse];')
        else:
            lines.append(f'  {nid} [label="{node.feature}?", shape=box];')
            lo = emit(node.false_branch)
            hi = emit(node.true_branch)
            lines.append(f'  {nid} -> {lo} [label="false"];')
            lines.append(f'  {nid} -> {hi} [label="true"];')
        return nid

    emit(tree.root)
    lines.append("}")
    return "\n".join(lines) + "\n"
