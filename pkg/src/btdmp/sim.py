"""Deterministic kinematic scoop-and-place world, disturbance scripts, episodes and demo generation.

Poses are (x, y, z, pitch). Distances for pick/place/sweep rules use the
position channels only; "lowered" means the height channel is below a threshold.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import bt
from .bt import Blackboard, Node, Status
from .dmp import DMPPolicy
from .trajectory import ConditionVector, Demonstration, Trajectory, split_on_condition_change, TimedSample

CONDITIONS = ("S0", "S1", "S2", "OBS")
LOADED = "SHOVEL_LOADED"
DIMS = ("x", "y", "z", "pitch")
UNITS = ("m", "m", "m", "rad")

# initial extra occupancy per operation; S0 always starts occupied by the payload
OPERATIONS: dict[str, dict[str, bool]] = {
    "O1": {"S1": False, "S2": False, "OBS": False},
    "O2": {"S1": True, "S2": False, "OBS": False},
    "O3": {"S1": False, "S2": False, "OBS": True},
}


class Payload(enum.Enum):
    AT_START = "AtStart"
    ON_SHOVEL = "OnShovel"
    AT_S1 = "AtS1"
    AT_S2 = "AtS2"
    DROPPED = "Dropped"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    stations: Mapping[str, tuple[float, ...]] = field(default_factory=lambda: {
        "S0": (0.0, 0.0, 0.02, 0.0),
        "S1": (0.35, 0.25, 0.03, 0.0),
        "S2": (0.35, -0.25, 0.03, 0.0),
    })
    home: tuple[float, ...] = (-0.15, 0.0, 0.25, 0.0)
    obstacle_lo: tuple[float, float, float] = (0.15, 0.05, 0.0)
    obstacle_hi: tuple[float, float, float] = (0.25, 0.20, 0.25)
    pick_tol: float = 0.03
    place_tol: float = 0.03
    lowered_z: float = 0.05
    sweep_end: tuple[float, ...] = (-0.06, 0.0, 0.03, 0.0)
    sweep_tol: float = 0.03
    position_dims: int = 3
    height_dim: int = 2
    dt: float = 0.01
    initial: Mapping[str, bool] = field(default_factory=lambda: dict(OPERATIONS["O1"]))
    shovel_condition: bool = False
    start_jitter: float = 0.005
    max_ticks: int = 6000

    def __post_init__(self):
        for name in ("S0", "S1", "S2"):
            if name not in self.stations:
                raise ScenarioError(f"scenario lacks station {name}")
        d = len(self.home)
        for name, pose in self.stations.items():
            if len(pose) != d:
                raise ScenarioError(f"station {name} has {len(pose)} values, expected {d}")
        if len(self.sweep_end) != d:
            raise ScenarioError("sweep_end dimension mismatch")
        for key in ("pick_tol", "place_tol", "sweep_tol", "dt"):
            if not getattr(self, key) > 0:
                raise ScenarioError(f"{key} must be positive")
        unknown = set(self.initial) - {"S1", "S2", "OBS"}
        if unknown:
            raise ScenarioError(f"unknown initial conditions {sorted(unknown)}")
        if not 1 <= self.position_dims <= d or not 0 <= self.height_dim < self.position_dims:
            raise ScenarioError("position_dims/height_dim out of range")

    @property
    def condition_names(self) -> tuple[str, ...]:
        return CONDITIONS + ((LOADED,) if self.shovel_condition else ())

    def station(self, name: str) -> np.ndarray:
        return np.asarray(self.stations[name], dtype=float)

    def for_operation(self, op: str) -> "Scenario":
        if op not in OPERATIONS:
            raise ScenarioError(f"unknown operation {op!r}")
        return replace(self, initial=dict(OPERATIONS[op]))

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["stations"] = {k: list(v) for k, v in self.stations.items()}
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = list(v)
        doc["initial"] = dict(self.initial)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
        kw = dict(doc)
        if "stations" in kw:
            kw["stations"] = {k: tuple(float(x) for x in v) for k, v in kw["stations"].items()}
        for key in ("home", "obstacle_lo", "obstacle_hi", "sweep_end"):
            if key in kw:
                kw[key] = tuple(float(x) for x in kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_json(doc)


@dataclass(frozen=True)
class WorldState:
    ee_pose: np.ndarray
    payload: Payload
    s1_blocked: bool = False
    s2_blocked: bool = False
    obstacle: bool = False
    collided: bool = False
    time: float = 0.0

    def occupancy(self, scenario: Scenario) -> ConditionVector:
        vals = {
            "S0": self.payload is Payload.AT_START,
            "S1": self.payload is Payload.AT_S1 or self.s1_blocked,
            "S2": self.payload is Payload.AT_S2 or self.s2_blocked,
            "OBS": self.obstacle,
        }
        if scenario.shovel_condition:
            vals[LOADED] = self.payload is Payload.ON_SHOVEL
        return ConditionVector.from_mapping(vals, scenario.condition_names)

    @property
    def delivered(self) -> bool:
        return self.payload in (Payload.AT_S1, Payload.AT_S2)


def initial_world(scenario: Scenario, ee_pose=None) -> WorldState:
    pose = np.array(scenario.home if ee_pose is None else ee_pose, dtype=float)
    init = scenario.initial
    return WorldState(pose, Payload.AT_START, bool(init.get("S1", False)), bool(init.get("S2", False)),
                      bool(init.get("OBS", False)))


def _near(pose: np.ndarray, target: np.ndarray, tol: float, p: int) -> bool:
    return float(np.linalg.norm(pose[:p] - target[:p])) <= tol


def in_obstacle(pose: np.ndarray, scenario: Scenario) -> bool:
    pos = pose[:3]
    return bool(np.all(pos >= scenario.obstacle_lo) and np.all(pos <= scenario.obstacle_hi))


def step(world: WorldState, ee_target, scenario: Scenario) -> tuple[WorldState, list[str]]:
    """Move the end effector to the target (perfect tracking) and fire event rules."""
    pose = np.array(ee_target, dtype=float)
    if pose.shape != world.ee_pose.shape or not np.all(np.isfinite(pose)):
        raise ValueError("ee_target must be finite with the pose dimension")
    p = scenario.position_dims
    lowered = pose[scenario.height_dim] < scenario.lowered_z
    payload = world.payload
    events = []
    if payload is Payload.AT_START and _near(pose, scenario.station("S0"), scenario.pick_tol, p):
        payload = Payload.ON_SHOVEL
        events.append("pick")
    elif payload is Payload.ON_SHOVEL and lowered:
        for name, dest in (("S1", Payload.AT_S1), ("S2", Payload.AT_S2)):
            blocked = world.s1_blocked if name == "S1" else world.s2_blocked
            if not blocked and _near(pose, scenario.station(name), scenario.place_tol, p):
                payload = dest
                events.append(f"place_{name}")
                break
    elif payload is Payload.DROPPED and lowered and _near(pose, np.asarray(scenario.sweep_end), scenario.sweep_tol, p):
        payload = Payload.AT_START
        events.append("sweep")
    collided = world.collided
    if world.obstacle and in_obstacle(pose, scenario):
        if not collided:
            events.append("collision")
        collided = True
    return replace(world, ee_pose=pose, payload=payload, collided=collided, time=world.time + scenario.dt), events


# disturbances

_EFFECT_KEYS = {"S1": "s1_blocked", "S2": "s2_blocked", "OBS": "obstacle"}


@dataclass(frozen=True)
class Trigger:
    """When to fire (exactly one of at_time / at_tick / during_dmp / after_event) and what to change.

    ``during_dmp`` fires ``offset`` ticks after an action with that label starts;
    the label ``"*"`` matches the first action of the episode. ``after_event``
    fires ``offset`` ticks after a world event such as ``"pick"``.
    ``offset_range`` makes the offset trial-dependent (see ``resolve``).
    """

    at_time: float | None = None
    at_tick: int | None = None
    during_dmp: str | None = None
    after_event: str | None = None
    offset: int = 0
    offset_range: tuple[int, int] | None = None
    set: Mapping[str, bool] = field(default_factory=dict)
    payload: str | None = None

    def __post_init__(self):
        kinds = [k for k in ("at_time", "at_tick", "during_dmp", "after_event") if getattr(self, k) is not None]
        if len(kinds) != 1:
            raise ScenarioError(f"trigger needs exactly one 'when' clause, got {kinds}")
        bad = set(self.set) - set(_EFFECT_KEYS)
        if bad:
            raise ScenarioError(f"trigger cannot set {sorted(bad)}; settable: {sorted(_EFFECT_KEYS)}")
        if self.payload is not None and self.payload != Payload.DROPPED.value:
            raise ScenarioError("the only payload effect is 'Dropped'")
        if self.offset_range is not None and not 0 <= self.offset_range[0] <= self.offset_range[1]:
            raise ScenarioError("offset_range must be an ordered non-negative pair")

    def resolve(self, rng: np.random.Generator | None) -> "Trigger":
        if self.offset_range is None or rng is None:
            return self
        lo, hi = self.offset_range
        return replace(self, offset=int(rng.integers(lo, hi + 1)), offset_range=None)

    def to_json(self) -> dict:
        when = {}
        for k in ("at_time", "at_tick", "during_dmp", "after_event"):
            if getattr(self, k) is not None:
                when[k] = getattr(self, k)
        if self.during_dmp is not None or self.after_event is not None:
            when["offset"] = self.offset
            if self.offset_range is not None:
                when["offset_range"] = list(self.offset_range)
        doc = {"when": when, "set": dict(self.set)}
        if self.payload:
            doc["payload"] = self.payload
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "Trigger":
        if "when" not in doc:
            raise ScenarioError("trigger lacks 'when'")
        when = dict(doc["when"])
        unknown = set(when) - {"at_time", "at_tick", "during_dmp", "after_event", "offset", "offset_range"}
        if unknown:
            raise ScenarioError(f"unknown trigger keys {sorted(unknown)}")
        rng = when.pop("offset_range", None)
        return cls(**when, offset_range=tuple(rng) if rng is not None else None,
                   set={k: bool(v) for k, v in doc.get("set", {}).items()}, payload=doc.get("payload"))


@dataclass(frozen=True)
class DisturbanceScript:
    triggers: tuple[Trigger, ...] = ()
    name: str = "none"

    def resolve(self, rng) -> "DisturbanceScript":
        return replace(self, triggers=tuple(t.resolve(rng) for t in self.triggers))

    def to_json(self) -> dict:
        return {"name": self.name, "triggers": [t.to_json() for t in self.triggers]}

    @classmethod
    def from_json(cls, doc: Mapping) -> "DisturbanceScript":
        return cls(tuple(Trigger.from_json(t) for t in doc.get("triggers", [])), doc.get("name", "none"))


def apply_trigger(world: WorldState, trig: Trigger) -> WorldState:
    changes = {_EFFECT_KEYS[k]: bool(v) for k, v in trig.set.items()}
    if trig.payload == Payload.DROPPED.value and world.payload is Payload.ON_SHOVEL:
        changes["payload"] = Payload.DROPPED
    return replace(world, **changes)


class SimHandle:
    """Connects a world to a blackboard: pose/motion access, condition mirror, due triggers."""

    def __init__(self, world: WorldState, scenario: Scenario, script: DisturbanceScript | None = None):
        self.world = world
        self.scenario = scenario
        self.pending = list(script.triggers) if script else []
        self.events: list[tuple[int, str]] = []
        self.tick_index = 0
        self._starts: dict[str, int] = {}
        self._first_action: str | None = None
        self._last_action: str | None = None
        self._tick_events: list[str] = []

    def ee_pose(self) -> np.ndarray:
        return self.world.ee_pose.copy()

    def move_to(self, target) -> None:
        self.world, ev = step(self.world, target, self.scenario)
        for e in ev:
            self.events.append((self.tick_index, e))
            self._tick_events.append(e)

    def conditions(self) -> dict[str, bool]:
        return self.world.occupancy(self.scenario).as_dict()

    def _due(self, trig: Trigger, k: int) -> bool:
        if trig.at_tick is not None:
            return k >= trig.at_tick
        if trig.at_time is not None:
            return self.world.time >= trig.at_time - 1e-12
        if trig.during_dmp is not None:
            label = self._first_action if trig.during_dmp == "*" else trig.during_dmp
            start = self._starts.get(label) if label else None
            return start is not None and k - start >= trig.offset and self._last_action == label
        first = next((t for t, e in self.events if e == trig.after_event), None)
        return first is not None and k - first >= trig.offset

    def before_tick(self, k: int, bb: Blackboard) -> None:
        self.tick_index = k
        self._tick_events = []
        cur = bb.current_action()
        label = cur.label if cur is not None else None
        if label is not None and label != self._last_action:
            self._starts[label] = k - 1
            if self._first_action is None:
                self._first_action = label
        self._last_action = label
        for trig in list(self.pending):
            if self._due(trig, k):
                self.world = apply_trigger(self.world, trig)
                self.events.append((k, "disturbance"))
                self.pending.remove(trig)


@dataclass
class EpisodeOutcome:
    result: str  # "Success" | "Failure" | "Timeout"
    final_world: WorldState
    trace: list[dict]
    achieved_operation: str  # "O1" | "O2" | "O3" | "none"
    ticks: int
    events: list[tuple[int, str]]

    @property
    def success(self) -> bool:
        return self.result == "Success"


def classify(world: WorldState, trace: Sequence[dict]) -> str:
    """Operation achieved: the delivery station, and for S1 whether an obstacle was present at delivery."""
    if world.payload is Payload.AT_S2:
        return "O2"
    if world.payload is Payload.AT_S1:
        return "O3" if world.obstacle else "O1"
    return "none"


def run_episode(
    root: Node,
    world: WorldState,
    scenario: Scenario,
    registry: Mapping[str, DMPPolicy],
    script: DisturbanceScript | None = None,
    max_ticks: int | None = None,
    steps_per_tick: int = 1,
) -> EpisodeOutcome:
    """Tick the tree against the world until delivery, collision, root termination or timeout."""
    root.halt()
    handle = SimHandle(world, scenario, script)
    bb = Blackboard(world=handle, registry=registry, steps_per_tick=steps_per_tick, before_tick=handle.before_tick)

    def stop(_bb):
        if handle.world.collided:
            return Status.FAILURE
        if handle.world.delivered:
            return Status.SUCCESS
        return None

    res = bt.run_until_terminal(root, bb, max_ticks or scenario.max_ticks, stop)
    root.halt()
    by_tick: dict[int, list[str]] = {}
    for k, e in handle.events:
        by_tick.setdefault(k, []).append(e)
    for rec in res.trace:
        rec["events"] = by_tick.get(rec["tick"], [])
    final = handle.world
    if res.timed_out:
        result = "Timeout"
    elif final.delivered and not final.collided:
        result = "Success"
    else:
        result = "Failure"
    op = classify(final, res.trace) if result == "Success" else "none"
    return EpisodeOutcome(result, final, res.trace, op, res.ticks, handle.events)


def trial_world(scenario: Scenario, seed: int, trial: int) -> WorldState:
    """Initial world for one trial: home pose with seeded position jitter."""
    rng = np.random.default_rng([seed, trial])
    pose = np.array(scenario.home, dtype=float)
    p = scenario.position_dims
    pose[:p] += rng.uniform(-scenario.start_jitter, scenario.start_jitter, p)
    return initial_world(scenario, pose)


def trial_script(script: DisturbanceScript | None, seed: int, trial: int) -> DisturbanceScript | None:
    if script is None:
        return None
    return script.resolve(np.random.default_rng([seed, trial, 1]))


# synthetic demonstrations

RECORD_TOL_FACTOR = 0.5
SHAKE_AMPLITUDE = 0.25
SHAKE_PERIOD = 0.12
SCOOP_T = (1.5, 1.5)
LIFT_HEIGHT = 0.18
TRANSPORT_T = 3.0
PLACE_T = 4.0
PLACE_TILT = 0.6
ARC_HEIGHT = 0.40


def _minjerk(a: np.ndarray, b: np.ndarray, duration: float, dt: float) -> np.ndarray:
    n = int(round(duration / dt))
    u = np.arange(1, n + 1) / n
    s = 10 * u**3 - 15 * u**4 + 6 * u**5
    return a + np.outer(s, b - a)


def _chain(points: Sequence[np.ndarray], durations: Sequence[float], dt: float) -> np.ndarray:
    parts = [np.asarray(points[0], dtype=float)[None]]
    for a, b, T in zip(points, points[1:], durations):
        parts.append(_minjerk(np.asarray(a, float), np.asarray(b, float), T, dt))
    return np.vstack(parts)


def demo_path(op: str, scenario: Scenario) -> np.ndarray:
    """Noise-free pose path for one operation: scoop through S0, lift, transport, tilt-and-shake place.

    The lift and transport share one half of the post-pick motion and the place
    the other; the shake sits in the place so that the two halves need separate
    primitives at the default grid resolution.
    """
    dt = scenario.dt
    s0 = scenario.station("S0")
    home = np.asarray(scenario.home, dtype=float)
    approach = s0 + np.array([-0.08, 0.0, 0.01, -0.3])
    through = s0 + np.array([0.06, 0.0, 0.0, -0.3])
    scoop = _chain([home, approach, through], SCOOP_T, dt)

    dest = "S2" if op == "O2" else "S1"
    st = scenario.station(dest)
    tilt = -PLACE_TILT if dest == "S2" else PLACE_TILT
    lifted = through + np.array([0.0, 0.0, LIFT_HEIGHT - through[2], 0.5])
    above = np.array([st[0], st[1], LIFT_HEIGHT, lifted[3]])
    final = np.array([st[0], st[1], st[2], tilt])

    # post-pick part starts at the first sample inside the recording tolerance of S0
    tol = scenario.pick_tol * RECORD_TOL_FACTOR
    p = scenario.position_dims
    dist = np.linalg.norm(scoop[:, :p] - s0[:p], axis=1)
    k_pick = int(np.argmax(dist <= tol))
    slide_left = (len(scoop) - 1 - k_pick) * dt
    lift_t = max(PLACE_T - TRANSPORT_T - slide_left, 0.5)
    if op == "O3":
        lo, hi = np.asarray(scenario.obstacle_lo), np.asarray(scenario.obstacle_hi)
        mid = 0.5 * (lo + hi)
        over = np.array([mid[0], mid[1], ARC_HEIGHT, lifted[3]])
        carry = _chain([through, lifted, over, above], (lift_t, TRANSPORT_T / 2, TRANSPORT_T / 2), dt)
    else:
        carry = _chain([through, lifted, above], (lift_t, TRANSPORT_T), dt)
    place = _chain([above, final], (PLACE_T,), dt)
    n = len(place)
    t = np.arange(n) * dt
    window = np.sin(np.pi * np.arange(n) / (n - 1)) ** 2
    place[:, 3] += SHAKE_AMPLITUDE * np.sin(2 * np.pi * t / SHAKE_PERIOD) * window
    return np.vstack([scoop, carry[1:], place[1:]])


def record_stream(path: np.ndarray, scenario: Scenario) -> list[tuple[TimedSample, ConditionVector]]:
    """Label a pose path with the world occupancy as the recording operator sees it.

    The recording uses tighter pick/place tolerances than the runtime world, so
    recorded segment endpoints lie well inside the runtime trigger regions.
    Recording stops at delivery.
    """
    rec_scn = replace(scenario, pick_tol=scenario.pick_tol * RECORD_TOL_FACTOR,
                      place_tol=scenario.place_tol * RECORD_TOL_FACTOR)
    world = initial_world(rec_scn, path[0])
    out = []
    for k, pose in enumerate(path):
        world, _ = step(world, pose, rec_scn)
        if world.delivered:
            break
        out.append((TimedSample(round(k * scenario.dt, 10), tuple(float(v) for v in pose)),
                    world.occupancy(scenario)))
    return out


def generate_synthetic_demos(
    op: str,
    noise_seed: int | None = 0,
    scenario: Scenario | None = None,
    noise_std: float = 0.0005,
) -> list[Demonstration]:
    """Demonstrations of one operation, split wherever the recorded conditions change."""
    scenario = (scenario or Scenario()).for_operation(op)
    path = demo_path(op, scenario)
    if noise_seed is not None and noise_std > 0:
        rng = np.random.default_rng(noise_seed)
        path = path + rng.normal(0.0, noise_std, path.shape)
    stream = record_stream(path, scenario)
    return split_on_condition_change(stream, demo_id=op)


def replay(path: np.ndarray, scenario: Scenario) -> tuple[WorldState, list[str]]:
    """Drive the runtime world open-loop through a pose path."""
    world = initial_world(scenario, path[0])
    events = []
    for pose in path:
        world, ev = step(world, pose, scenario)
        events += ev
    return world, events


SWEEP_LABEL = "sweep"


def sweep_policy(scenario: Scenario | None = None, n_basis: int = 10, alpha: float = 4.0) -> DMPPolicy:
    """Hand-written recovery primitive: a minimum-jerk move from above the start area down to the sweep pose."""
    from .dmp import DMPHyper, fit_weights

    scenario = scenario or Scenario()
    end = np.asarray(scenario.sweep_end, dtype=float)
    start = end + np.array([0.15, 0.0, LIFT_HEIGHT - end[2]] + [0.0] * (len(end) - 3))
    path = _chain([start, end], (2.0,), scenario.dt)
    return fit_weights(Trajectory.uniform(path, scenario.dt), DMPHyper(n_basis, alpha))


RECOVERY_BRANCH = (
    '<Sequence name="recover">'
    f'<Condition key="{LOADED}" expect="false" />'
    '<Condition key="S0" expect="false" />'
    f'<Action dmp="{SWEEP_LABEL}" />'
    "</Sequence>"
)
