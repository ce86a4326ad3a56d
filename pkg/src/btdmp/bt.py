"""Reactive behaviour-tree engine with DMP-backed actions, XML I/O and JSONL traces.

Every tick starts at the root and re-reads conditions (no memory nodes). A
control node that stops at child ``i`` halts every child after ``i``, which is
how a branch that was Running and is no longer reached gets preempted.
"""

from __future__ import annotations

import enum
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Protocol, Sequence

import numpy as np

from .dmp import DivergedError, DMPPolicy, DMPRunner, GOAL_TOL, VEL_TOL

ABORT_FACTOR = 5.0


class Status(enum.Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    FAILURE = "Failure"

    def __str__(self) -> str:
        return self.value


class BTError(ValueError):
    """Malformed tree or tree file."""


class WorldHandle(Protocol):
    def ee_pose(self) -> np.ndarray: ...

    def move_to(self, target: np.ndarray) -> None: ...

    def conditions(self) -> dict[str, bool]: ...


@dataclass
class Blackboard:
    conditions: dict[str, bool] = field(default_factory=dict)
    world: WorldHandle | None = None
    registry: Mapping[str, DMPPolicy] = field(default_factory=dict)
    steps_per_tick: int = 1
    tick_location: tuple[int, ...] = ()
    active_action: "Action | None" = None
    # optional hook called with the tick index before conditions are refreshed
    before_tick: Callable[[int, "Blackboard"], None] | None = None

    def current_action(self) -> "Action | None":
        """The action holding live rollout state, if any."""
        act = self.active_action
        return act if act is not None and act.active else None

    def refresh(self, tick_index: int = 0) -> None:
        if self.before_tick is not None:
            self.before_tick(tick_index, self)
        if self.world is not None:
            self.conditions = dict(self.world.conditions())


class Node:
    kind = "Node"

    def __init__(self):
        self.status: Status | None = None
        self.path: tuple[int, ...] = ()
        self.ticks = 0

    @property
    def children(self) -> list["Node"]:
        return []

    def tick(self, bb: Blackboard) -> Status:
        self.ticks += 1
        self.status = self._tick(bb)
        return self.status

    def _tick(self, bb: Blackboard) -> Status:
        raise NotImplementedError

    def halt(self) -> None:
        for c in self.children:
            c.halt()
        self.status = None

    def walk(self) -> Iterator["Node"]:
        yield self
        for c in self.children:
            yield from c.walk()


class Control(Node):
    def __init__(self, children: Sequence[Node], name: str | None = None):
        super().__init__()
        if not children:
            raise BTError(f"{self.kind} needs at least one child")
        for c in children:
            if not isinstance(c, Node):
                raise BTError(f"{self.kind} child {c!r} is not a node")
        self._children = list(children)
        self.name = name

    @property
    def children(self) -> list[Node]:
        return self._children

    def _halt_after(self, i: int) -> None:
        for c in self._children[i + 1 :]:
            if c.status is not None:
                c.halt()


class Sequence_(Control):
    kind = "Sequence"

    def _tick(self, bb):
        for i, c in enumerate(self._children):
            st = c.tick(bb)
            if st is not Status.SUCCESS:
                self._halt_after(i)
                return st
        return Status.SUCCESS


class Fallback(Control):
    kind = "Fallback"

    def _tick(self, bb):
        for i, c in enumerate(self._children):
            st = c.tick(bb)
            if st is not Status.FAILURE:
                self._halt_after(i)
                return st
        return Status.FAILURE


class Parallel(Control):
    kind = "Parallel"

    def __init__(self, children: Sequence[Node], success_threshold: int, name: str | None = None):
        super().__init__(children, name)
        if not 1 <= success_threshold <= len(self._children):
            raise BTError(f"success_threshold must lie in [1, {len(self._children)}], got {success_threshold}")
        self.success_threshold = int(success_threshold)

    def _tick(self, bb):
        results = [c.tick(bb) for c in self._children]
        ok = sum(r is Status.SUCCESS for r in results)
        bad = sum(r is Status.FAILURE for r in results)
        if ok >= self.success_threshold:
            st = Status.SUCCESS
        elif bad > len(self._children) - self.success_threshold:
            st = Status.FAILURE
        else:
            return Status.RUNNING
        for c in self._children:
            c.halt()
        return st


class Condition(Node):
    kind = "Condition"

    def __init__(self, key: str, expect: bool = True):
        super().__init__()
        if not key:
            raise BTError("Condition needs a key")
        self.key = key
        self.expect = bool(expect)

    def _tick(self, bb):
        if self.key not in bb.conditions:
            raise BTError(f"condition {self.key!r} is not on the blackboard")
        return Status.SUCCESS if bool(bb.conditions[self.key]) == self.expect else Status.FAILURE


class Action(Node):
    """Runs the DMP registered under ``label`` from the current end-effector pose.

    Success latches until the node is halted, so a reactive Sequence re-ticking
    from the left does not replay finished motions.
    """

    kind = "Action"

    def __init__(self, label: str, abort_factor: float = ABORT_FACTOR):
        super().__init__()
        if not label:
            raise BTError("Action needs a dmp label")
        self.label = label
        self.abort_factor = abort_factor
        self.runner: DMPRunner | None = None
        self.latched: Status | None = None

    def _tick(self, bb):
        if self.latched is not None:
            return self.latched
        if self.runner is None:
            if bb.world is None:
                raise BTError("Action ticked without a world handle")
            policy = bb.registry.get(self.label)
            if policy is None:
                raise BTError(f"no DMP registered for label {self.label!r}")
            other = bb.current_action()
            if other is not None and other is not self:
                other.halt()
            self.runner = DMPRunner(policy, bb.world.ee_pose())
            bb.active_action = self
        bb.tick_location = self.path
        try:
            for _ in range(bb.steps_per_tick):
                bb.world.move_to(self.runner.step())
                if self.runner.converged(GOAL_TOL, VEL_TOL):
                    return self._finish(bb, Status.SUCCESS)
        except DivergedError:
            return self._finish(bb, Status.FAILURE)
        if self.runner.time > self.abort_factor * self.runner.policy.duration:
            return self._finish(bb, Status.FAILURE)
        return Status.RUNNING

    def _finish(self, bb, st: Status) -> Status:
        self.latched = st
        self.runner = None
        if bb.active_action is self:
            bb.active_action = None
        return st

    def halt(self) -> None:
        self.runner = None
        self.latched = None
        self.status = None

    @property
    def active(self) -> bool:
        return self.runner is not None


# public alias; "Sequence" would shadow typing.Sequence inside this module
SequenceNode = Sequence_


def assign_paths(root: Node) -> Node:
    def visit(node, path):
        node.path = path
        for i, c in enumerate(node.children):
            visit(c, path + (i,))

    visit(root, ())
    return root


def tick(root: Node, bb: Blackboard) -> Status:
    bb.tick_location = ()
    return root.tick(bb)


def halt(node: Node) -> None:
    node.halt()


@dataclass
class RunResult:
    status: Status | None  # None on timeout
    ticks: int
    trace: list[dict]

    @property
    def timed_out(self) -> bool:
        return self.status is None


def run_until_terminal(
    root: Node,
    bb: Blackboard,
    max_ticks: int,
    stop: Callable[[Blackboard], Status | None] | None = None,
) -> RunResult:
    """Tick until the root returns Success or Failure, ``stop`` reports an outcome, or max_ticks pass."""
    if max_ticks <= 0:
        raise ValueError("max_ticks must be positive")
    assign_paths(root)
    trace: list[dict] = []
    for k in range(max_ticks):
        bb.refresh(k)
        st = tick(root, bb)
        cur = bb.current_action()
        active = cur.label if cur is not None else None
        trace.append({
            "tick": k,
            "status": st.value,
            "active": active,
            "location": list(bb.tick_location),
            "conditions": dict(bb.conditions),
        })
        if st is not Status.RUNNING:
            return RunResult(st, k + 1, trace)
        if stop is not None:
            outcome = stop(bb)
            if outcome is not None:
                return RunResult(outcome, k + 1, trace)
    return RunResult(None, max_ticks, trace)


def write_trace(trace: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def selected_action(root: Node, conditions: Mapping[str, bool]) -> Action | None:
    """The first Action a tick would run under fixed conditions, treating actions as Running."""
    found: list[Action] = []

    def ev(node) -> Status:
        if isinstance(node, Condition):
            return Status.SUCCESS if bool(conditions[node.key]) == node.expect else Status.FAILURE
        if isinstance(node, Action):
            found.append(node)
            return Status.RUNNING
        if isinstance(node, Parallel):
            res = [ev(c) for c in node.children]
            ok = sum(r is Status.SUCCESS for r in res)
            bad = sum(r is Status.FAILURE for r in res)
            if ok >= node.success_threshold:
                return Status.SUCCESS
            return Status.FAILURE if bad > len(res) - node.success_threshold else Status.RUNNING
        stop_on = Status.FAILURE if isinstance(node, Sequence_) else Status.SUCCESS
        for c in node.children:
            st = ev(c)
            if st is Status.RUNNING or st is stop_on:
                return st
        return Status.SUCCESS if isinstance(node, Sequence_) else Status.FAILURE

    ev(root)
    return found[0] if found else None


def selected_behavior(root: Node, conditions: Mapping[str, bool]) -> str | None:
    """Name of the behaviour reached: the closest named ancestor of the selected action, else its label."""
    act = selected_action(root, conditions)
    if act is None:
        return None

    def find(node, chain):
        if node is act:
            return chain
        for c in node.children:
            r = find(c, chain + [node])
            if r is not None:
                return r
        return None

    for anc in reversed(find(root, []) or []):
        if getattr(anc, "name", None):
            return anc.name
    return act.label


# XML

_TAGS = {"Sequence": Sequence_, "Fallback": Fallback, "Parallel": Parallel, "Condition": Condition, "Action": Action}


def _to_element(node: Node) -> ET.Element:
    if isinstance(node, Condition):
        return ET.Element("Condition", {"key": node.key, "expect": "true" if node.expect else "false"})
    if isinstance(node, Action):
        return ET.Element("Action", {"dmp": node.label})
    attrs = {}
    if isinstance(node, Parallel):
        attrs["success_threshold"] = str(node.success_threshold)
    if node.name:
        attrs["name"] = node.name
    el = ET.Element(node.kind, attrs)
    for c in node.children:
        el.append(_to_element(c))
    return el


def to_xml(root: Node) -> str:
    doc = ET.Element("BehaviorTree")
    doc.append(_to_element(root))
    ET.indent(doc, space="  ")
    return ET.tostring(doc, encoding="unicode") + "\n"


def _where(el: ET.Element, path: str) -> str:
    return f"{path}/{el.tag}"


def _from_element(el: ET.Element, path: str) -> Node:
    where = _where(el, path)
    if el.tag not in _TAGS:
        raise BTError(f"{where}: unknown element <{el.tag}>")
    if el.tag == "Condition":
        if "key" not in el.attrib:
            raise BTError(f"{where}: missing attribute 'key'")
        expect = el.attrib.get("expect", "true")
        if expect not in ("true", "false"):
            raise BTError(f"{where}: expect must be 'true' or 'false', got {expect!r}")
        if len(el):
            raise BTError(f"{where}: Condition cannot have children")
        return Condition(el.attrib["key"], expect == "true")
    if el.tag == "Action":
        if not el.attrib.get("dmp"):
            raise BTError(f"{where}: missing attribute 'dmp'")
        if len(el):
            raise BTError(f"{where}: Action cannot have children")
        return Action(el.attrib["dmp"])
    children = [_from_element(c, where) for c in el]
    if not children:
        raise BTError(f"{where}: {el.tag} needs at least one child")
    name = el.attrib.get("name")
    try:
        if el.tag == "Parallel":
            raw = el.attrib.get("success_threshold")
            if raw is None:
                raise BTError(f"{where}: missing attribute 'success_threshold'")
            return Parallel(children, int(raw), name)
        return _TAGS[el.tag](children, name)
    except (BTError, ValueError) as exc:
        raise BTError(f"{where}: {exc}") from None


def from_xml(text: str) -> Node:
    try:
        doc = ET.fromstring(text)
    except ET.ParseError as exc:
        raise BTError(f"XML parse error: {exc}") from None
    if doc.tag != "BehaviorTree":
        raise BTError(f"root element must be <BehaviorTree>, got <{doc.tag}>")
    if len(doc) != 1:
        raise BTError("<BehaviorTree> must contain exactly one node")
    return assign_paths(_from_element(doc[0], ""))


def load_xml(path) -> Node:
    with open(path, encoding="utf-8") as fh:
        return from_xml(fh.read())


def save_xml(root: Node, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_xml(root))


def action_labels(root: Node) -> list[str]:
    return sorted({n.label for n in root.walk() if isinstance(n, Action)})


def condition_keys(root: Node) -> list[str]:
    return sorted({n.key for n in root.walk() if isinstance(n, Condition)})


def validate(root: Node, registry: Mapping[str, DMPPolicy] | None = None, conditions: Sequence[str] | None = None):
    """Cross-check a tree against a DMP registry and a condition name set; returns a list of problems."""
    problems = []
    if registry is not None:
        problems += [f"action references unknown dmp {lab!r}" for lab in action_labels(root) if lab not in registry]
    if conditions is not None:
        problems += [f"condition {k!r} is not provided" for k in condition_keys(root) if k not in conditions]
    return problems
