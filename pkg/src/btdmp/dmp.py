"""Discrete dynamic movement primitives.

Each channel follows the transformation system

    tau * dv/dt = K (g - x) - D v - K (g - x0) s + K f(s)
    tau * dx/dt = v

with D = 2 sqrt(K) (critical damping), driven by the canonical phase
``tau * ds/dt = -alpha * s``. The forcing term ``f`` is a normalised mixture of
Gaussian basis functions of the phase whose weights are fitted to a demonstration.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numba
import numpy as np

from .dtw import fastdtw_distance
from .trajectory import Trajectory

DEFAULT_K = 1050.0
DEFAULT_DT = 0.01
GOAL_TOL = 1e-2
VEL_TOL = 1e-2
RIDGE = 1e-8
UNDERFLOW = 1e-300
HORIZON_FACTOR = 1.5

DEFAULT_N_BASIS = tuple(range(10, 101, 10))
DEFAULT_ALPHA = tuple(float(a) for a in range(1, 21))


class DMPError(RuntimeError):
    pass


class DivergedError(DMPError):
    def __init__(self, step: int):
        super().__init__(f"rollout diverged (non-finite state) at step {step}")
        self.step = step


@dataclass(frozen=True)
class DMPHyper:
    n_basis: int
    alpha: float
    spring_k: float = DEFAULT_K
    tau: float = 1.0

    def __post_init__(self):
        if int(self.n_basis) != self.n_basis or self.n_basis < 2:
            raise ValueError(f"n_basis must be an integer >= 2, got {self.n_basis}")
        for name in ("alpha", "spring_k", "tau"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    @property
    def damping(self) -> float:
        return 2.0 * math.sqrt(self.spring_k)


def canonical_phase(alpha: float, tau: float, t):
    """Closed-form phase s(t) = exp(-alpha t / tau)."""
    return np.exp(-alpha * np.asarray(t, dtype=float) / tau) if np.ndim(t) else math.exp(-alpha * t / tau)


def basis_layout(n_basis: int, alpha: float, duration: float, tau: float):
    """Centres evenly spaced in time over the demonstration, mapped through the phase."""
    i = np.arange(n_basis)
    centers = np.exp(-alpha * i * duration / (n_basis - 1) / tau)
    gaps = np.diff(centers)
    widths = np.empty(n_basis)
    widths[:-1] = 1.0 / (2.0 * gaps**2)
    widths[-1] = widths[-2]
    return centers, widths


def basis_matrix(centers: np.ndarray, widths: np.ndarray, s) -> np.ndarray:
    """Rows of normalised basis activations psi_i(s) / sum(psi); all-zero where the sum underflows."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    psi = np.exp(-widths[None, :] * (s[:, None] - centers[None, :]) ** 2)
    total = psi.sum(axis=1, keepdims=True)
    ok = total > UNDERFLOW
    return np.where(ok, psi / np.where(ok, total, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class DMPPolicy:
    hyper: DMPHyper
    weights: np.ndarray  # (d, N)
    centers: np.ndarray
    widths: np.ndarray
    x0: np.ndarray
    g: np.ndarray
    duration: float
    dt: float = DEFAULT_DT

    def __post_init__(self):
        for name in ("weights", "centers", "widths", "x0", "g"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.hyper.n_basis:
            raise ValueError(f"weights must have shape (d, {self.hyper.n_basis})")
        if not (self.x0.shape == self.g.shape == (self.weights.shape[0],)):
            raise ValueError("x0 and g must have one entry per dimension")
        if np.any(self.widths <= 0):
            raise ValueError("basis widths must be positive")

    @property
    def dims(self) -> int:
        return self.weights.shape[0]

    @property
    def end_phase(self) -> float:
        return canonical_phase(self.hyper.alpha, self.hyper.tau, self.duration)

    def forcing(self, s) -> np.ndarray:
        """Forcing vector(s) with the tail rule used during rollout.

        Past the end of the demonstration (s below the end phase) the forcing
        keeps the part that cancels the (g - x0) s term, and the remainder fades
        at the spring's own rate, so the primitive settles on its goal within a
        few tau / sqrt(K) whatever alpha is.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        s_end = self.end_phase
        clipped = np.maximum(s, s_end)
        f = basis_matrix(self.centers, self.widths, clipped) @ self.weights.T
        tail = s < s_end
        if np.any(tail):
            span = self.g - self.x0
            rest = f[tail][0] - span * s_end
            rate = math.sqrt(self.hyper.spring_k) / self.hyper.alpha
            fade = (s[tail] / s_end) ** rate
            f[tail] = np.outer(s[tail], span) + np.outer(fade, rest)
        return f

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DMPPolicy):
            return NotImplemented
        return (
            self.hyper == other.hyper
            and self.duration == other.duration
            and self.dt == other.dt
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("weights", "centers", "widths", "x0", "g")
            )
        )

    __hash__ = None

    def to_json(self) -> dict:
        return {
            "hyper": {
                "n_basis": self.hyper.n_basis,
                "alpha": self.hyper.alpha,
                "spring_k": self.hyper.spring_k,
                "tau": self.hyper.tau,
            },
            "weights": self.weights.tolist(),
            "centers": self.centers.tolist(),
            "widths": self.widths.tolist(),
            "x0": self.x0.tolist(),
            "g": self.g.tolist(),
            "duration": self.duration,
            "dt": self.dt,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DMPPolicy":
        h = doc["hyper"]
        return cls(
            DMPHyper(int(h["n_basis"]), float(h["alpha"]), float(h["spring_k"]), float(h["tau"])),
            np.array(doc["weights"], dtype=float),
            np.array(doc["centers"], dtype=float),
            np.array(doc["widths"], dtype=float),
            np.array(doc["x0"], dtype=float),
            np.array(doc["g"], dtype=float),
            float(doc["duration"]),
            float(doc.get("dt", DEFAULT_DT)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DMPPolicy":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def forcing_term(policy: DMPPolicy, dim: int, s: float) -> float:
    """f(s) for one channel, straight from the normalised basis mixture."""
    if not 0 <= dim < policy.dims:
        raise IndexError(f"dimension {dim} out of range")
    row = basis_matrix(policy.centers, policy.widths, s)[0]
    return float(row @ policy.weights[dim])


def zero_policy(x0, g, hyper: DMPHyper, duration: float, dt: float = DEFAULT_DT) -> DMPPolicy:
    """Unforced attractor from x0 to g; also the fallback for segments too short to fit."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    duration = max(float(duration), dt)
    hyper = replace(hyper, tau=duration)
    centers, widths = basis_layout(hyper.n_basis, hyper.alpha, duration, hyper.tau)
    return DMPPolicy(hyper, np.zeros((x0.size, hyper.n_basis)), centers, widths, x0, g, duration, dt)


def fit_weights(demo: Trajectory, hyper: DMPHyper, ridge: float = RIDGE) -> DMPPolicy:
    """Fit forcing weights to a uniformly sampled demonstration.

    Velocities and accelerations are forward differences, which makes the fitted
    target exactly consistent with the explicit Euler rollout at the same step.
    """
    n = len(demo)
    if n < 2 * hyper.n_basis:
        raise DMPError(f"need at least {2 * hyper.n_basis} samples for {hyper.n_basis} basis functions, got {n}")
    if not demo.is_uniform(rtol=1e-6):
        raise DMPError("demonstration must be uniformly sampled; use resample_uniform")
    dt = demo.dt
    duration = demo.duration
    hyper = replace(hyper, tau=duration)
    K, D, tau = hyper.spring_k, hyper.damping, hyper.tau

    x = demo.values
    x0, g = x[0].copy(), x[-1].copy()
    xd = np.diff(x, axis=0) / dt
    xd = np.vstack([xd, xd[-1:]])
    xdd = np.vstack([np.diff(xd, axis=0) / dt, np.zeros((1, x.shape[1]))])
    s = canonical_phase(hyper.alpha, tau, dt * np.arange(n))
    target = (tau**2 * xdd + D * tau * xd) / K - (g - x) + np.outer(s, g - x0)

    centers, widths = basis_layout(hyper.n_basis, hyper.alpha, duration, tau)
    phi = basis_matrix(centers, widths, s)
    # the last two rows lack the samples their forward differences need
    usable = slice(0, n - 2) if n > 2 else slice(0, n)
    N = hyper.n_basis
    A = np.vstack([phi[usable], math.sqrt(ridge) * np.eye(N)])
    rhs = np.vstack([target[usable], np.zeros((N, target.shape[1]))])
    w, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return DMPPolicy(hyper, w.T, centers, widths, x0, g, duration, dt)


@numba.njit(cache=True)
def _euler(x0, g, start, forcing, phase, K, D, tau, dt):
    steps = forcing.shape[0] - 1
    d = x0.shape[0]
    xs = np.empty((steps + 1, d))
    x = start.copy()
    v = np.zeros(d)
    xs[0] = x
    h = dt / tau
    for k in range(steps):
        s = phase[k]
        for i in range(d):
            acc = K * (g[i] - x[i]) - D * v[i] - K * (g[i] - x0[i]) * s + K * forcing[k, i]
            x[i] = x[i] + h * v[i]
            v[i] = v[i] + h * acc
        xs[k + 1] = x
        for i in range(d):
            if not (np.isfinite(x[i]) and np.isfinite(v[i])):
                return xs, v, k + 1
    return xs, v, -1


class RolloutResult(NamedTuple):
    trajectory: Trajectory
    final_phase: float
    converged: bool
    final_velocity: np.ndarray


def _rk4(policy, x0, g, steps, dt):
    K, D, tau, a = policy.hyper.spring_k, policy.hyper.damping, policy.hyper.tau, policy.hyper.alpha
    half = dt * 0.5 * np.arange(2 * steps + 1)
    s = canonical_phase(a, tau, half)
    f = policy.forcing(s)

    def deriv(x, v, k2):
        acc = (K * (g - x) - D * v - K * (g - x0) * s[k2] + K * f[k2]) / tau
        return v / tau, acc

    x, v = x0.copy(), np.zeros_like(x0)
    xs = [x.copy()]
    for k in range(steps):
        k1x, k1v = deriv(x, v, 2 * k)
        k2x, k2v = deriv(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v, 2 * k + 1)
        k3x, k3v = deriv(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v, 2 * k + 1)
        k4x, k4v = deriv(x + dt * k3x, v + dt * k3v, 2 * k + 2)
        x = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise DivergedError(k + 1)
        xs.append(x.copy())
    return np.array(xs), v


def rollout(
    policy: DMPPolicy,
    x0=None,
    g=None,
    dt: float | None = None,
    horizon: float | None = None,
    goal_tol: float = GOAL_TOL,
    vel_tol: float = VEL_TOL,
    method: str = "euler",
) -> RolloutResult:
    """Integrate the primitive from (x0, v=0, s=1) for ``horizon`` seconds at fixed step ``dt``.

    Defaults: the fitted start/goal, the fitting step, and 1.5x the demonstrated duration.
    Convergence is judged on the final state (position error and dx/dt).
    """
    x0 = policy.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    g = policy.g if g is None else np.atleast_1d(np.asarray(g, dtype=float))
    dt = policy.dt if dt is None else float(dt)
    horizon = HORIZON_FACTOR * policy.duration if horizon is None else float(horizon)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < policy.duration - 1e-9:
        raise ValueError("horizon must cover the demonstrated duration")
    if x0.shape != policy.x0.shape or g.shape != policy.g.shape:
        raise ValueError("start/goal dimension mismatch")
    steps = max(1, int(round(horizon / dt)))
    tau, alpha = policy.hyper.tau, policy.hyper.alpha
    if method == "euler":
        s = canonical_phase(alpha, tau, dt * np.arange(steps + 1))
        f = policy.forcing(s)
        xs, v, bad = _euler(
            np.ascontiguousarray(x0, dtype=np.float64), np.ascontiguousarray(g, dtype=np.float64),
            np.ascontiguousarray(x0, dtype=np.float64), np.ascontiguousarray(f), s,
            policy.hyper.spring_k, policy.hyper.damping, tau, dt,
        )
        if bad >= 0:
            raise DivergedError(bad)
    elif method == "rk4":
        xs, v = _rk4(policy, x0, g, steps, dt)
    else:
        raise ValueError(f"unknown integration method {method!r}")
    xdot = v / tau
    converged = bool(np.max(np.abs(xs[-1] - g)) <= goal_tol and np.max(np.abs(xdot)) <= vel_tol)
    final_phase = float(canonical_phase(alpha, tau, steps * dt))
    return RolloutResult(Trajectory.uniform(xs, dt), final_phase, converged, xdot)


class DMPRunner:
    """Incremental rollout used by behaviour-tree actions: advance a few steps per tick."""

    def __init__(self, policy: DMPPolicy, start, goal=None, dt: float | None = None):
        self.policy = policy
        self.start = np.array(start, dtype=float)
        self.goal = policy.g.copy() if goal is None else np.array(goal, dtype=float)
        self.dt = policy.dt if dt is None else float(dt)
        self.x = self.start.copy()
        self.v = np.zeros_like(self.x)
        self.k = 0

    @property
    def time(self) -> float:
        return self.k * self.dt

    @property
    def phase(self) -> float:
        return canonical_phase(self.policy.hyper.alpha, self.policy.hyper.tau, self.time)

    @property
    def velocity(self) -> np.ndarray:
        return self.v / self.policy.hyper.tau

    def step(self) -> np.ndarray:
        p = self.policy
        K, D, tau = p.hyper.spring_k, p.hyper.damping, p.hyper.tau
        s = self.phase
        f = p.forcing(s)[0]
        acc = K * (self.goal - self.x) - D * self.v - K * (self.goal - self.start) * s + K * f
        self.x = self.x + self.dt / tau * self.v
        self.v = self.v + self.dt / tau * acc
        self.k += 1
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise DivergedError(self.k)
        return self.x

    def converged(self, goal_tol: float = GOAL_TOL, vel_tol: float = VEL_TOL) -> bool:
        return bool(
            np.max(np.abs(self.x - self.goal)) <= goal_tol
            and np.max(np.abs(self.velocity)) <= vel_tol
        )


@dataclass(frozen=True)
class HyperGrid:
    n_basis: Sequence[int] = DEFAULT_N_BASIS
    alpha: Sequence[float] = DEFAULT_ALPHA
    spring_k: float = DEFAULT_K

    def __iter__(self):
        # n_basis-major order doubles as the deterministic tie-break order
        for n, a in product(sorted(self.n_basis), sorted(self.alpha)):
            yield DMPHyper(int(n), float(a), self.spring_k)

    def __len__(self) -> int:
        return len(self.n_basis) * len(self.alpha)


class GridSearchResult(NamedTuple):
    policy: DMPPolicy
    score: float
    evaluations: tuple  # ((DMPHyper, score or None), ...) in grid order

    @property
    def n_evaluated(self) -> int:
        return len(self.evaluations)

    @property
    def n_failed(self) -> int:
        return sum(1 for _, sc in self.evaluations if sc is None)


def score_fit(demo: Trajectory, policy: DMPPolicy, dtw_fn: Callable) -> float:
    """DTW between the demonstration and a rollout over the same duration and step."""
    res = rollout(policy, dt=demo.dt, horizon=demo.duration)
    return float(dtw_fn(demo.values, res.trajectory.values))


def grid_search(
    demo: Trajectory,
    grid: Iterable[DMPHyper] | None = None,
    dtw_fn: Callable = fastdtw_distance,
    workers: int = 1,
) -> GridSearchResult:
    """Fit every grid point, score its rollout against the demo, keep the lowest score.

    Ties go to the smaller n_basis, then the smaller alpha. Points whose fit or
    rollout fails are recorded with score None and skipped.
    """
    points = list(HyperGrid() if grid is None else grid)
    if not points:
        raise ValueError("empty hyperparameter grid")

    def evaluate(hyper: DMPHyper):
        try:
            pol = fit_weights(demo, hyper)
            return pol, score_fit(demo, pol, dtw_fn)
        except (DMPError, np.linalg.LinAlgError):
            return None, None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, points))
    else:
        results = [evaluate(h) for h in points]

    best = None
    for hyper, (pol, sc) in zip(points, results):
        if sc is None or not math.isfinite(sc):
            continue
        key = (sc, hyper.n_basis, hyper.alpha)
        if best is None or key < best[0]:
            best = (key, pol)
    if best is None:
        raise DMPError("every grid point failed to fit")
    evaluations = tuple((h, sc) for h, (_, sc) in zip(points, results))
    return GridSearchResult(best[1], best[0][0], evaluations)
