import numpy as np
import pytest

from btdmp import dmp, segmentation
from btdmp.dmp import HyperGrid
from btdmp.dtw import dtw_distance
from btdmp.segmentation import SegmentationConfig, attempt_cap, merge_equivalent_dmps, segment_demo
from btdmp.trajectory import ConditionVector, Demonstration, Trajectory
from oracles import min_jerk

SMALL = HyperGrid((10,), (2.0, 4.0))
COND = ConditionVector(("A",), (True,))


def arc(sign, n=100):
    u = np.linspace(0, 1, n)
    s = 10 * u**3 - 15 * u**4 + 6 * u**5
    return np.column_stack([s, sign * 0.5 * np.sin(np.pi * s)])


def two_arcs():
    return Trajectory.uniform(np.vstack([arc(1), arc(-1) + [1.0, 0.0]]), 0.01)


def check_coverage(records, n):
    ranges = [(r.start, r.end) for r in records]
    assert ranges[0][0] == 0 and ranges[-1][1] == n
    assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))
    assert all(s < e for s, e in ranges)


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SegmentationConfig(epsilon=0)
        with pytest.raises(ValueError):
            SegmentationConfig(min_split=1)
        with pytest.raises(ValueError):
            SegmentationConfig(epsilon_mode="relative")

    def test_threshold_modes(self):
        assert SegmentationConfig(0.02).threshold(200) == pytest.approx(4.0)
        assert SegmentationConfig(0.5, epsilon_mode="absolute").threshold(200) == 0.5


class TestSegmentDemo:
    def test_single_segment_when_whole_fits(self):
        demo = Demonstration(Trajectory.uniform(min_jerk(0.0, 1.0, 150), 0.01), COND, "mj")
        recs, att = segment_demo(demo, SegmentationConfig(grid=SMALL))
        assert len(recs) == 1 and len(att) == 1 and recs[0].length == 150

    def test_two_arcs_split_at_midpoint(self):
        traj = two_arcs()
        full = dmp.grid_search(traj, SMALL).score
        halves = max(dmp.grid_search(traj[:100], SMALL).score, dmp.grid_search(traj[100:], SMALL).score)
        assert halves < full
        eps = (full + halves) / 2
        cfg = SegmentationConfig(eps, grid=SMALL, epsilon_mode="absolute")
        recs, att = segment_demo(Demonstration(traj, COND, "arcs"), cfg)
        assert [(r.start, r.end) for r in recs] == [(0, 100), (100, 200)]
        assert [a.accepted for a in att] == [False, True, True]

    def test_short_demo_forced(self):
        noise = np.random.default_rng(0).normal(size=(20, 2))
        demo = Demonstration(Trajectory.uniform(noise, 0.01), COND, "short")
        recs, _ = segment_demo(demo, SegmentationConfig(epsilon=1e-9, grid=SMALL, epsilon_mode="absolute"))
        assert len(recs) == 1 and recs[0].length == 20

    def test_acceptance_rule_coverage_and_cap(self):
        rng = np.random.default_rng(3)
        vals = np.cumsum(rng.normal(scale=0.05, size=(230, 2)), axis=0)
        cfg = SegmentationConfig(0.005, grid=SMALL)
        recs, att = segment_demo(Demonstration(Trajectory.uniform(vals, 0.01), COND, "walk"), cfg)
        check_coverage(recs, 230)
        for r in recs:
            assert r.dtw_score <= cfg.threshold(r.length) or r.length <= cfg.min_split
        assert len(att) <= attempt_cap(230, cfg.min_split)
        assert all(a.n_evaluated == len(SMALL) for a in att)

    def test_deterministic(self):
        demo = Demonstration(two_arcs(), COND, "arcs")
        cfg = SegmentationConfig(0.001, grid=SMALL)
        a, _ = segment_demo(demo, cfg)
        b, _ = segment_demo(demo, cfg)
        assert [(r.start, r.end, r.dtw_score) for r in a] == [(r.start, r.end, r.dtw_score) for r in b]
        assert all(x.policy == y.policy for x, y in zip(a, b))

    def test_segment_and_fit_labels(self):
        demo = Demonstration(two_arcs(), COND, "arcs")
        recs = segmentation.segment_and_fit([demo], SegmentationConfig(0.001, grid=SMALL))
        assert [r.label for r in recs] == [f"seg{k}" for k in range(len(recs))]


class TestMerge:
    def _records(self, demos, eps=0.02):
        cfg = SegmentationConfig(eps, grid=SMALL)
        return [r for d in demos for r in segment_demo(d, cfg)[0]]

    def test_identical_demos_share_labels(self):
        traj = two_arcs()
        cfg = SegmentationConfig(0.001, grid=SMALL)
        recs = [r for k in range(2) for r in segment_demo(Demonstration(traj, COND, f"d{k}"), cfg)[0]]
        merged = merge_equivalent_dmps(recs)
        per_demo = len(recs) // 2
        assert [r.label for r in merged[:per_demo]] == [r.label for r in merged[per_demo:]]
        assert len({r.label for r in merged}) <= per_demo

    def test_zero_threshold_keeps_distinct(self):
        demos = [Demonstration(Trajectory.uniform(min_jerk([0, 0], end, 120), 0.01), COND, f"d{k}")
                 for k, end in enumerate(([1, 0], [0, 1], [-1, -1]))]
        merged = merge_equivalent_dmps(self._records(demos), 0.0)
        assert [r.label for r in merged] == ["dmp0", "dmp1", "dmp2"]

    def test_clusters_match_brute_force_components(self):
        """Shared scoop prefix merges; the three distinct continuations do not."""
        scoop = min_jerk([0, 0], [0.3, -0.1], 120)
        ends = ([1.0, 0.5], [1.0, -0.5], [0.2, 0.9])
        demos = []
        for k, end in enumerate(ends):
            demos.append(Demonstration(Trajectory.uniform(scoop, 0.01), COND, f"pre{k}"))
            demos.append(Demonstration(Trajectory.uniform(min_jerk(scoop[-1], end, 140), 0.01), COND, f"post{k}"))
        recs = self._records(demos)
        thr = 0.5
        merged = merge_equivalent_dmps(recs, thr, dtw_fn=dtw_distance)
        # oracle: connected components over an independently built exact-DTW graph
        paths = []
        for r in recs:
            xs = dmp.rollout(r.policy, horizon=r.policy.duration).trajectory.values
            paths.append(xs - xs[0])
        n = len(recs)
        adj = {i: [j for j in range(n) if j != i and dtw_distance(paths[i], paths[j]) <= thr] for i in range(n)}
        comp, seen = {}, set()
        for i in range(n):
            if i in seen:
                continue
            stack, members = [i], []
            while stack:
                k = stack.pop()
                if k in seen:
                    continue
                seen.add(k)
                members.append(k)
                stack.extend(adj[k])
            for k in members:
                comp[k] = min(members)
        for i in range(n):
            for j in range(n):
                assert (merged[i].label == merged[j].label) == (comp[i] == comp[j])
        scoop_labels = {r.label for r in merged if r.demo_id.startswith("pre")}
        post_labels = [r.label for r in merged if r.demo_id.startswith("post")]
        assert len(scoop_labels) == 1
        assert len(set(post_labels)) == 3 and scoop_labels.isdisjoint(post_labels)

    def test_registry_keeps_lowest_score(self):
        demos = [Demonstration(Trajectory.uniform(min_jerk([0, 0], [1, 1], n), 0.01), COND, f"d{n}") for n in (100, 101)]
        merged = merge_equivalent_dmps(self._records(demos), 10.0)
        reg = segmentation.label_registry(merged)
        best = min(merged, key=lambda r: r.dtw_score)
        assert list(reg) == ["dmp0"] and reg["dmp0"] is best.policy

    def test_behavior_chains(self):
        traj = two_arcs()
        recs = self._records([Demonstration(traj, COND, "x")], eps=0.001)
        merged = merge_equivalent_dmps(recs, 0.0)
        assert segmentation.behavior_chains(merged)["x"] == ">".join(r.label for r in merged)


class TestStationScenario:
    def test_three_segments_per_operation(self, combined):
        fit, _ = combined
        for op in ("O1", "O2", "O3"):
            assert sum(1 for r in fit.records if r.demo_id.startswith(op)) == 3

    def test_scoop_shared_placements_distinct(self, combined):
        fit, _ = combined
        chains = fit.chains
        pre = {chains[d] for d in chains if d.endswith(".0")}
        post = [chains[d] for d in chains if not d.endswith(".0")]
        assert len(pre) == 1
        assert len(set(post)) == 3
        members = [set(c.split(">")) for c in post]
        assert all(not (a & b) for i, a in enumerate(members) for b in members[i + 1:])
