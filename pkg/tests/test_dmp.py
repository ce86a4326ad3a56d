import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btdmp import dmp
from btdmp.dmp import DMPHyper, DMPPolicy, HyperGrid, canonical_phase, fit_weights, forcing_term, rollout, zero_policy
from btdmp.dtw import dtw_exact, fastdtw_distance
from btdmp.trajectory import Trajectory
from oracles import min_jerk, naive_forcing


def min_jerk_demo(x0=0.0, x1=1.0, n=101, dt=0.01):
    return Trajectory.uniform(min_jerk(x0, x1, n), dt)


class TestPhase:
    def test_values(self):
        assert canonical_phase(1, 1, 0) == 1.0
        assert canonical_phase(1, 1, 1) == pytest.approx(0.367879, abs=1e-6)
        assert canonical_phase(4, 2, 1) == pytest.approx(0.135335, abs=1e-6)

    @given(st.floats(0.1, 20), st.floats(0.2, 5))
    def test_positive_decreasing(self, alpha, tau):
        s = canonical_phase(alpha, tau, np.linspace(0, 5, 50))
        assert np.all(s > 0) and np.all(np.diff(s) < 0)


class TestHyper:
    def test_damping_is_critical(self):
        assert DMPHyper(10, 1.0, 25.0).damping == 10.0

    @pytest.mark.parametrize("kw", [dict(n_basis=1, alpha=1), dict(n_basis=10, alpha=0), dict(n_basis=10, alpha=1, spring_k=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DMPHyper(**kw)

    def test_basis_layout(self):
        c, h = dmp.basis_layout(10, 4.0, 2.0, 2.0)
        assert c[0] == 1.0 and np.all(np.diff(c) < 0) and np.all(h > 0)
        assert h[-1] == h[-2]


class TestForcing:
    def test_zero_weights(self):
        p = zero_policy([0.0], [1.0], DMPHyper(10, 2.0), 1.0)
        assert all(forcing_term(p, 0, s) == 0.0 for s in np.linspace(0.01, 1, 20))

    def test_single_basis_weight_cancels(self):
        p = DMPPolicy(DMPHyper(2, 1.0), np.array([[3.0, 3.0]]), np.array([1.0, 0.5]), np.array([2.0, 2.0]),
                      np.zeros(1), np.ones(1), 1.0)
        for s in (0.1, 0.5, 0.9):
            assert forcing_term(p, 0, s) == pytest.approx(3.0, rel=1e-14)

    def test_matches_naive_sum(self):
        t = np.linspace(0, 1, 101)
        demo = Trajectory.uniform(np.column_stack([np.sin(3 * t), t**2]), 0.01)
        p = fit_weights(demo, DMPHyper(20, 3.0))
        for s in np.linspace(p.end_phase, 1.0, 37):
            for d in range(2):
                ref = naive_forcing(p.weights[d], p.centers, p.widths, s)
                assert forcing_term(p, d, s) == pytest.approx(ref, rel=1e-10, abs=1e-10)

    def test_dimension_out_of_range(self):
        p = zero_policy([0.0], [1.0], DMPHyper(10, 2.0), 1.0)
        with pytest.raises(IndexError):
            forcing_term(p, 1, 0.5)


class TestFit:
    def test_unforced_response_gives_zero_weights(self):
        # long enough for the phase to vanish, so the last sample is the goal
        hyper = DMPHyper(20, 20.0, 1050.0)
        base = zero_policy([0.2, -0.3], [1.0, 0.5], hyper, 3.0)
        demo = rollout(base, horizon=3.0).trajectory
        assert np.max(np.abs(demo.values[-1] - [1.0, 0.5])) < 1e-6
        p = fit_weights(demo, hyper)
        assert np.max(np.abs(p.weights)) < 1e-6

    def test_constant_demo(self):
        demo = Trajectory.uniform(np.full((50, 2), 0.7), 0.01)
        assert np.all(fit_weights(demo, DMPHyper(10, 2.0)).weights == 0.0)

    def test_min_jerk_below_epsilon(self):
        demo = min_jerk_demo()
        p = fit_weights(demo, DMPHyper(30, 4.0))
        res = rollout(p, dt=demo.dt, horizon=demo.duration)
        assert dtw_exact(demo.values, res.trajectory.values)[0] <= 0.02 * len(demo)

    def test_too_few_samples(self):
        with pytest.raises(dmp.DMPError):
            fit_weights(min_jerk_demo(n=19), DMPHyper(10, 1.0))

    def test_non_uniform_rejected(self):
        tr = Trajectory(np.concatenate([np.linspace(0, 1, 40), [1.5]]), np.zeros(41))
        with pytest.raises(dmp.DMPError):
            fit_weights(tr, DMPHyper(10, 1.0))

    def test_tau_is_duration(self):
        p = fit_weights(min_jerk_demo(n=151), DMPHyper(10, 1.0, tau=7.0))
        assert p.hyper.tau == pytest.approx(1.5) and p.duration == pytest.approx(1.5)

    def test_refit_of_own_rollout(self):
        t = np.linspace(0, 1, 121)
        demo = Trajectory.uniform(np.column_stack([np.sin(2 * t), 0.5 * t]), 0.01)
        p = fit_weights(demo, DMPHyper(30, 3.0))
        first = rollout(p, horizon=p.duration).trajectory
        again = rollout(fit_weights(first, p.hyper), horizon=p.duration).trajectory
        assert dtw_exact(first.values, again.values)[0] <= 1e-6

    def test_json_round_trip(self, tmp_path):
        p = fit_weights(min_jerk_demo(), DMPHyper(20, 5.0))
        p.save(tmp_path / "p.dmp.json")
        assert DMPPolicy.load(tmp_path / "p.dmp.json") == p


class TestRollout:
    def test_critically_damped_no_overshoot(self):
        p = zero_policy([0.0], [1.0], DMPHyper(10, 1.0, 25.0), 1.0)
        x = rollout(p, horizon=3.0).trajectory.values[:, 0]
        assert np.max(x - 1.0) <= 1e-3
        assert np.all(np.diff(x) >= -1e-12)
        assert abs(x[-1] - 1.0) <= 1e-2

    def test_equilibrium(self):
        p = zero_policy([0.4, 0.4], [0.4, 0.4], DMPHyper(10, 2.0), 1.0)
        x = rollout(p).trajectory.values
        assert np.all(x == 0.4)

    def test_goal_generalisation(self):
        p = fit_weights(min_jerk_demo(), DMPHyper(30, 4.0))
        res = rollout(p, g=[2.0])
        assert abs(res.trajectory.values[-1, 0] - 2.0) <= dmp.GOAL_TOL

    def test_uniform_output(self):
        p = zero_policy([0.0], [1.0], DMPHyper(10, 1.0), 1.0)
        tr = rollout(p, dt=0.005, horizon=1.2).trajectory
        assert tr.is_uniform(0.005) and len(tr) == 241

    def test_horizon_too_short(self):
        p = zero_policy([0.0], [1.0], DMPHyper(10, 1.0), 1.0)
        with pytest.raises(ValueError):
            rollout(p, horizon=0.5)

    def test_divergence_names_step(self):
        p = zero_policy([0.0], [1.0], DMPHyper(10, 1.0, 1e6), 0.1)
        with pytest.raises(dmp.DivergedError) as exc:
            rollout(p, dt=0.05, horizon=100.0)
        assert exc.value.step > 0

    def test_rk4_agrees_with_euler(self):
        p = fit_weights(min_jerk_demo(), DMPHyper(20, 3.0))
        a = rollout(p, dt=0.001, horizon=1.5).trajectory.values
        b = rollout(p, dt=0.001, horizon=1.5, method="rk4").trajectory.values
        assert np.max(np.abs(a - b)) < 0.01

    def test_runner_matches_rollout(self):
        p = fit_weights(min_jerk_demo(), DMPHyper(20, 3.0))
        ref = rollout(p, horizon=1.5).trajectory.values
        r = dmp.DMPRunner(p, p.x0)
        xs = [r.x.copy()] + [r.step().copy() for _ in range(len(ref) - 1)]
        np.testing.assert_allclose(np.array(xs), ref, atol=1e-12)


class TestZeroForcingMatrix:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(25, 2000), st.floats(0.5, 3), st.floats(1, 20),
           st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
    def test_converges_without_overshoot(self, K, tau, alpha, x0, g):
        x0, g = np.array(x0), np.array(g)
        dt = min(0.01, tau / math.sqrt(K) / 20)
        p = zero_policy(x0, g, DMPHyper(10, alpha, K, tau), tau, dt)
        x = rollout(p, horizon=tau + 10 * tau / math.sqrt(K)).trajectory.values
        assert np.max(np.abs(x[-1] - g)) <= 1e-2
        span = np.abs(g - x0)
        over = np.max(np.sign(g - x0) * (x - g), axis=0)
        assert np.all(over <= 1e-3 * span + 1e-15)


class TestGridSearch:
    def test_default_grid_size(self):
        assert len(HyperGrid()) == 200
        res = dmp.grid_search(min_jerk_demo())
        assert res.n_evaluated == 200
        assert [h.n_basis for h, _ in res.evaluations][:21] == [10] * 20 + [20]

    def test_single_point(self):
        demo = min_jerk_demo()
        h = DMPHyper(20, 2.0)
        res = dmp.grid_search(demo, [h])
        assert res.policy == fit_weights(demo, h)

    def test_exact_rollout_scores_zero(self):
        base = zero_policy([0.0], [1.0], DMPHyper(10, 20.0), 3.0)
        demo = rollout(base, horizon=3.0).trajectory
        res = dmp.grid_search(demo, [DMPHyper(10, 3.0), DMPHyper(10, 20.0)], dtw_fn=lambda a, b: dtw_exact(a, b)[0])
        assert res.score < 1e-5 and res.policy.hyper.alpha == 20.0

    def test_tie_break_smaller_n_then_alpha(self):
        demo = Trajectory.uniform(np.full((60, 1), 0.3), 0.01)  # every point scores 0
        res = dmp.grid_search(demo, HyperGrid((20, 10), (3.0, 2.0)))
        assert (res.policy.hyper.n_basis, res.policy.hyper.alpha) == (10, 2.0)

    def test_failed_points_skipped(self):
        demo = min_jerk_demo(n=50)
        res = dmp.grid_search(demo, HyperGrid((10, 30), (1.0,)))
        assert res.n_failed == 1 and res.policy.hyper.n_basis == 10

    def test_all_failed(self):
        with pytest.raises(dmp.DMPError):
            dmp.grid_search(min_jerk_demo(n=30), HyperGrid((30,), (1.0,)))

    def test_parallel_equals_serial(self):
        demo = min_jerk_demo()
        grid = HyperGrid((10, 20), (1.0, 5.0, 9.0))
        a = dmp.grid_search(demo, grid, workers=1)
        b = dmp.grid_search(demo, grid, workers=3)
        assert a.score == b.score and a.policy == b.policy
        assert a.evaluations == b.evaluations

    def test_default_dtw_is_fast(self):
        demo = min_jerk_demo()
        res = dmp.grid_search(demo, HyperGrid((30,), (4.0,)))
        ref = rollout(res.policy, dt=demo.dt, horizon=demo.duration).trajectory.values
        assert res.score == fastdtw_distance(demo.values, ref)
