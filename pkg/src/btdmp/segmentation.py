"""Recursive halving of demonstrations into DMP-representable segments, and label merging.

Every demonstration is resampled to a uniform step first; segment index ranges refer
to that resampled trajectory and are half-open ``[start, end)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Sequence

import numpy as np

from . import dmp
from .dmp import DMPHyper, DMPPolicy, HyperGrid
from .dtw import DEFAULT_RADIUS, fastdtw_distance
from .trajectory import ConditionVector, Demonstration, Trajectory, resample_uniform

log = logging.getLogger(__name__)

DEFAULT_EPS_RATE = 0.02
DEFAULT_MIN_SPLIT = 25
MERGE_FACTOR = 2.0


@dataclass(frozen=True)
class SegmentationConfig:
    epsilon: float = DEFAULT_EPS_RATE
    min_split: int = DEFAULT_MIN_SPLIT
    grid: HyperGrid = field(default_factory=HyperGrid)
    dtw_radius: int = DEFAULT_RADIUS
    # "rate": threshold is epsilon * segment length; "absolute": epsilon as is
    epsilon_mode: str = "rate"
    dt: float = dmp.DEFAULT_DT

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.min_split < 2:
            raise ValueError("min_split must be >= 2")
        if self.epsilon_mode not in ("rate", "absolute"):
            raise ValueError(f"unknown epsilon_mode {self.epsilon_mode!r}")

    def threshold(self, n_samples: int) -> float:
        return self.epsilon * n_samples if self.epsilon_mode == "rate" else self.epsilon

    def dtw_fn(self) -> Callable:
        return partial(fastdtw_distance, radius=self.dtw_radius)


@dataclass(frozen=True)
class SegmentRecord:
    policy: DMPPolicy
    conditions: ConditionVector
    demo_id: str
    start: int
    end: int
    dtw_score: float
    label: str = ""

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def source(self) -> tuple[str, int, int]:
        return self.demo_id, self.start, self.end


@dataclass(frozen=True)
class FitAttempt:
    demo_id: str
    start: int
    end: int
    n_evaluated: int
    n_failed: int
    score: float
    threshold: float
    accepted: bool
    n_basis: int
    alpha: float


def attempt_cap(n: int, min_split: int) -> int:
    """Hard cap on fit attempts for a demonstration of n samples."""
    ratio = max(n / min_split, 2.0)
    return max(1, math.ceil(2 * ratio * math.ceil(math.log2(ratio))))


def _fit_segment(seg: Trajectory, cfg: SegmentationConfig, dtw_fn):
    """Grid-search a segment; too-short segments fall back to a small or unforced primitive."""
    grid = list(cfg.grid)
    try:
        res = dmp.grid_search(seg, grid, dtw_fn)
        return res.policy, res.score, res.n_evaluated, res.n_failed
    except dmp.DMPError:
        pass
    base = min(grid, key=lambda h: (h.n_basis, h.alpha))
    if len(seg) >= 4:
        pol = dmp.fit_weights(seg, DMPHyper(max(2, len(seg) // 2), base.alpha, base.spring_k))
    else:
        pol = dmp.zero_policy(seg.values[0], seg.values[-1], base, seg.duration, cfg.dt)
    if len(seg) >= 2:
        score = dmp.score_fit(seg, pol, dtw_fn)
    else:
        score = 0.0
    return pol, score, len(grid), len(grid)


def segment_demo(demo: Demonstration, cfg: SegmentationConfig):
    """Segment one demonstration. Returns (records, attempts)."""
    dtw_fn = cfg.dtw_fn()
    raw = demo.trajectory
    traj = resample_uniform(raw, cfg.dt) if len(raw) >= 2 and raw.duration >= cfg.dt else raw
    n = len(traj)
    if n <= cfg.min_split:
        log.warning("demo %s has %d samples (<= min_split=%d); accepting it whole", demo.demo_id, n, cfg.min_split)
    records: list[SegmentRecord] = []
    attempts: list[FitAttempt] = []
    cap = attempt_cap(n, cfg.min_split)
    start, active = 0, n
    while start < n:
        if len(attempts) >= cap:
            raise RuntimeError(f"segmentation of {demo.demo_id} exceeded {cap} fit attempts")
        seg = traj[start : start + active]
        pol, score, n_eval, n_fail = _fit_segment(seg, cfg, dtw_fn)
        eps = cfg.threshold(active)
        ok = score <= eps or active <= cfg.min_split
        attempts.append(
            FitAttempt(demo.demo_id, start, start + active, n_eval, n_fail, score, eps, ok,
                       pol.hyper.n_basis, pol.hyper.alpha)
        )
        if ok:
            records.append(SegmentRecord(pol, demo.conditions, demo.demo_id, start, start + active, score))
            start += active
            active = n - start
        else:
            active //= 2
    return records, attempts


def segment_and_fit(demos: Sequence[Demonstration], cfg: SegmentationConfig | None = None) -> list[SegmentRecord]:
    cfg = cfg or SegmentationConfig()
    out: list[SegmentRecord] = []
    for demo in demos:
        out.extend(segment_demo(demo, cfg)[0])
    return [replace(r, label=r.label or f"seg{k}") for k, r in enumerate(out)]


def _translated_rollout(policy: DMPPolicy) -> np.ndarray:
    xs = dmp.rollout(policy, horizon=policy.duration).trajectory.values
    return xs - xs[0]


def pairwise_rollout_distances(records: Sequence[SegmentRecord], dtw_fn=fastdtw_distance) -> np.ndarray:
    paths = [_translated_rollout(r.policy) for r in records]
    n = len(paths)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = dtw_fn(paths[i], paths[j])
    return out


def merge_equivalent_dmps(
    records: Sequence[SegmentRecord],
    merge_threshold: float | None = None,
    dtw_fn: Callable = fastdtw_distance,
    epsilon_rate: float = DEFAULT_EPS_RATE,
) -> list[SegmentRecord]:
    """Single-linkage clustering of segments by DTW between start-aligned rollouts.

    Without an explicit threshold a pair links when its distance is within
    ``MERGE_FACTOR * epsilon_rate * max(len_a, len_b)``. Clusters are named
    ``dmp0, dmp1, ...`` in order of their first record.
    """
    records = list(records)
    if not records:
        return []
    dist = pairwise_rollout_distances(records, dtw_fn)
    parent = list(range(len(records)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            if merge_threshold is None:
                thr = MERGE_FACTOR * epsilon_rate * max(records[i].length, records[j].length)
            else:
                thr = merge_threshold
            if dist[i, j] <= thr:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    names: dict[int, str] = {}
    out = []
    for i, rec in enumerate(records):
        root = find(i)
        if root not in names:
            names[root] = f"dmp{len(names)}"
        out.append(replace(rec, label=names[root]))
    return out


def label_registry(records: Sequence[SegmentRecord]) -> dict[str, DMPPolicy]:
    """One representative policy per label: the member with the lowest DTW score."""
    best: dict[str, SegmentRecord] = {}
    for rec in records:
        cur = best.get(rec.label)
        if cur is None or rec.dtw_score < cur.dtw_score:
            best[rec.label] = rec
    return {label: rec.policy for label, rec in best.items()}


def behavior_chains(records: Sequence[SegmentRecord]) -> dict[str, str]:
    """Map each demo id to its behaviour label: its segment labels in order, joined by '>'."""
    per_demo: dict[str, list[SegmentRecord]] = {}
    for rec in records:
        per_demo.setdefault(rec.demo_id, []).append(rec)
    return {
        demo_id: ">".join(r.label for r in sorted(recs, key=lambda r: r.start))
        for demo_id, recs in per_demo.items()
    }
