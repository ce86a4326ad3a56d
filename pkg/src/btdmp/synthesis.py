"""Behaviour-tree synthesis from per-label minimised rules, pruning-level selection, DOT export.

A label may name a chain of primitives joined by ``>`` (e.g. ``dmp1>dmp2``);
its branch then runs the primitives in order under a single guard.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import bt
from .bt import Action, Condition, Fallback, Node, SequenceNode
from .decision_tree import DecisionTree, LabeledExample, predict
from .dmp import DMPPolicy
from .logic import BooleanDNF, Term, term_satisfied

log = logging.getLogger(__name__)

CHAIN_SEP = ">"
DEFAULT_AGREEMENT = 1.0


class SynthesisError(ValueError):
    pass


def chain_members(label: str) -> list[str]:
    return label.split(CHAIN_SEP)


def term_support(term: Term, dataset: Sequence[LabeledExample]) -> int:
    return sum(1 for e in dataset if term_satisfied(term, e.conditions))


def label_support(label: str, dataset: Sequence[LabeledExample]) -> int:
    return sum(1 for e in dataset if e.label == label)


def _conj(term: Term) -> list[Node]:
    return [Condition(name, pol) for name, pol in term]


def _guard(dnf: BooleanDNF) -> list[Node]:
    """Guard nodes placed in front of the actions; empty for constant TRUE."""
    if dnf.is_true:
        return []
    if len(dnf.terms) == 1:
        return _conj(dnf.terms[0])
    options = [Condition(*t[0]) if len(t) == 1 else SequenceNode(_conj(t)) for t in dnf.terms]
    return [Fallback(options)]


def _branch(label: str, dnf: BooleanDNF) -> Node:
    actions: list[Node] = [Action(m) for m in chain_members(label)]
    guard = _guard(dnf)
    if not guard and len(actions) == 1:
        return actions[0]
    return SequenceNode(guard + actions, name=label)


def prune(dnf: BooleanDNF, dataset: Sequence[LabeledExample], level: int) -> BooleanDNF:
    """Drop conjunctions supported by fewer than ``level`` training rows."""
    if level <= 0:
        return dnf
    kept = tuple(t for t in dnf.terms if term_support(t, dataset) >= level)
    return BooleanDNF(dnf.universe, kept)


def synthesize(
    dnfs: Mapping[str, BooleanDNF],
    registry: Mapping[str, DMPPolicy] | None,
    pruning_level: int = 0,
    dataset: Sequence[LabeledExample] = (),
    quiet: bool = False,
) -> Node:
    """Root Fallback with one guarded branch per label.

    Branch order: training support descending, then label. ``registry`` may be
    None to skip the check that every primitive is registered.
    """
    if pruning_level < 0:
        raise ValueError("pruning_level must be >= 0")
    if registry is not None:
        missing = sorted({m for lab in dnfs for m in chain_members(lab) if m not in registry})
        if missing:
            raise SynthesisError(f"labels without a registered DMP: {missing}")
    order = sorted(dnfs, key=lambda lab: (-label_support(lab, dataset), lab))
    branches = []
    for label in order:
        dnf = prune(dnfs[label], dataset, pruning_level)
        if dnf.is_false:
            (log.info if quiet else log.warning)("label %s pruned away at level %d", label, pruning_level)
            continue
        branches.append(_branch(label, dnf))
    if not branches:
        raise SynthesisError(f"every label was pruned away at level {pruning_level}")
    return bt.assign_paths(Fallback(branches))


def agreement(root: Node, tree: DecisionTree, dataset: Sequence[LabeledExample]) -> float:
    """Fraction of rows where the behaviour the BT selects equals the tree's prediction."""
    if not dataset:
        raise ValueError("empty dataset")
    hits = sum(
        1 for e in dataset
        if bt.selected_behavior(root, e.conditions.as_dict()) == predict(tree, e.conditions)
    )
    return hits / len(dataset)


@dataclass(frozen=True)
class PruningChoice:
    root: Node
    level: int
    agreement: float
    per_level: tuple[tuple[int, float], ...]


def select_pruning(
    dnfs: Mapping[str, BooleanDNF],
    registry: Mapping[str, DMPPolicy] | None,
    dataset: Sequence[LabeledExample],
    tree: DecisionTree,
    max_level: int = 3,
    threshold: float = DEFAULT_AGREEMENT,
) -> PruningChoice:
    """Highest pruning level, searched downwards from ``max_level``, whose agreement meets ``threshold``."""
    if not dataset:
        raise ValueError("empty dataset")
    scores = []
    chosen = None
    for k in range(max_level, -1, -1):
        try:
            root = synthesize(dnfs, registry, k, dataset, quiet=True)
        except SynthesisError:
            scores.append((k, 0.0))
            continue
        a = agreement(root, tree, dataset)
        scores.append((k, a))
        if a >= threshold:
            chosen = (root, k, a)
            break
    if chosen is None:
        # level 0 reproduces the tree, so this only triggers for thresholds above 1
        root = synthesize(dnfs, registry, 0, dataset)
        chosen = (root, 0, agreement(root, tree, dataset))
    return PruningChoice(*chosen, tuple(scores))


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(root: Node) -> str:
    """Graphviz digraph: control nodes as boxes, conditions as ellipses, actions as filled ellipses."""
    lines = ["digraph BehaviorTree {", '  node [fontname="Helvetica"];']
    ids: dict[int, str] = {}
    edges = []
    for i, node in enumerate(root.walk()):
        nid = f"n{i}"
        ids[id(node)] = nid
        if isinstance(node, Condition):
            text = node.key if node.expect else f"¬{node.key}"
            lines.append(f'  {nid} [label="{_dot_escape(text)}", shape=ellipse];')
        elif isinstance(node, Action):
            lines.append(f'  {nid} [label="{_dot_escape(node.label)}", shape=ellipse, style=filled, fillcolor=lightblue];')
        else:
            text = {"Sequence": "→", "Fallback": "?"}.get(node.kind, f"⇉ {getattr(node, 'success_threshold', '')}")
            if getattr(node, "name", None):
                text += f"\\n{_dot_escape(node.name)}"
            lines.append(f'  {nid} [label="{text}", shape=box];')
    for node in root.walk():
        for c in node.children:
            edges.append(f"  {ids[id(node)]} -> {ids[id(c)]};")
    lines += edges
    lines.append("}")
    return "\n".join(lines) + "\n"
