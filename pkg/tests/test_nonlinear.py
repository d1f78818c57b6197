import math

import numpy as np
import pytest

from hybridfg import (DiscreteKey, HybridNonlinearFactor, NonlinearFactor,
                      OptimizationDiverged, OptimizeConfig, Pose2, between,
                      compose, linearize, local, max_product, optimize,
                      restrict, retract)
from hybridfg.nonlinear import (BetweenResidual, FuncResidual,
                                HybridNonlinearFactorGraph, LinearResidual,
                                PriorResidual, numerical_jacobians, wrap_angle)
from hybridfg.oracle import enumerate_posterior


def _random_pose(rng):
    return Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5),
                 rng.uniform(-math.pi, math.pi))


class TestPoseOps:
    def test_compose_identity(self):
        p = Pose2(1.2, -0.7, 0.3)
        q = compose(Pose2(), p)
        assert (q.x, q.y, q.theta) == (p.x, p.y, p.theta)

    def test_compose_translations(self):
        q = compose(Pose2(1, 0, 0), Pose2(1, 0, 0))
        np.testing.assert_allclose(q.as_vector(), [2.0, 0.0, 0.0], atol=1e-15)

    def test_compose_quarter_turn(self):
        """(0,0,90deg) then forward 1: rotation matrix sends +x to +y."""
        q = compose(Pose2(0, 0, math.pi / 2), Pose2(1, 0, 0))
        R = Pose2(0, 0, math.pi / 2).rotation()
        want = R @ np.array([1.0, 0.0])
        np.testing.assert_allclose([q.x, q.y], want, atol=1e-15)
        assert q.theta == pytest.approx(math.pi / 2)

    def test_between_recovers_delta(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = _random_pose(rng)
            d = _random_pose(rng)
            q = compose(p, d)
            rel = between(p, q)
            np.testing.assert_allclose(rel.as_vector(), d.as_vector(), atol=1e-12)

    def test_retract_local_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            p = _random_pose(rng)
            q = _random_pose(rng)
            np.testing.assert_allclose(
                retract(p, local(p, q)).as_vector(), q.as_vector(), atol=1e-12)

    def test_theta_normalized(self):
        assert Pose2(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(math.pi) == pytest.approx(math.pi)


class TestJacobians:
    def test_between_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            values = {"a": _random_pose(rng), "b": _random_pose(rng)}
            res = BetweenResidual("a", "b", _random_pose(rng))
            analytic = res.jacobians(values)
            numeric = numerical_jacobians(res.evaluate, values, ("a", "b"))
            for vid in ("a", "b"):
                np.testing.assert_allclose(analytic[vid], numeric[vid], atol=1e-6)

    def test_prior_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            values = {"a": _random_pose(rng)}
            res = PriorResidual("a", _random_pose(rng))
            analytic = res.jacobians(values)
            numeric = numerical_jacobians(res.evaluate, values, ("a",))
            np.testing.assert_allclose(analytic["a"], numeric["a"], atol=1e-6)


class TestLinearize:
    def test_linear_residual_exact_anywhere(self):
        res = LinearResidual({"x": [[2.0]]}, [3.0])
        f = NonlinearFactor(res, 1.0)
        jf1 = linearize(f, {"x": np.array([0.0])})
        jf2 = linearize(f, {"x": np.array([10.0])})
        np.testing.assert_allclose(jf1.blocks["x"], jf2.blocks["x"])
        # Same minimizer in absolute coordinates: x0 + delta*.
        d1 = np.linalg.lstsq(jf1.blocks["x"], jf1.rhs, rcond=None)[0]
        d2 = np.linalg.lstsq(jf2.blocks["x"], jf2.rhs, rcond=None)[0]
        assert 0.0 + d1[0] == pytest.approx(10.0 + d2[0], abs=1e-12)

    def test_hybrid_leaves_share_jacobian_scale(self):
        """Leaves differing only in noise scale whiten the same Jacobian and
        carry different constants."""
        m = DiscreteKey("m", 2)
        res = BetweenResidual("a", "b", Pose2(1, 0, 0))
        f = HybridNonlinearFactor.from_components(
            [m], [(res, np.array([1.0, 1.0, 1.0])),
                  (res, np.array([4.0, 4.0, 4.0]))])
        values = {"a": Pose2(), "b": Pose2(1.2, 0.1, 0.05)}
        lin = linearize(f, values)
        jf0, c0 = lin.component({"m": 0})
        jf1, c1 = lin.component({"m": 1})
        np.testing.assert_allclose(jf0.blocks["a"], 2.0 * jf1.blocks["a"], atol=1e-12)
        assert c1 - c0 == pytest.approx(3 * math.log(2.0), abs=1e-12)

    def test_hybrid_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(4)
        m = DiscreteKey("m", 2)
        for _ in range(20):
            values = {"a": _random_pose(rng), "b": _random_pose(rng)}
            r0 = BetweenResidual("a", "b", _random_pose(rng))
            r1 = BetweenResidual("a", "b", _random_pose(rng))
            f = HybridNonlinearFactor.from_components(
                [m], [(r0, 0.5), (r1, 2.0)])
            lin = linearize(f, values)
            for mode, res in ((0, r0), (1, r1)):
                jf, _ = lin.component({"m": mode})
                sd = math.sqrt(0.5) if mode == 0 else math.sqrt(2.0)
                numeric = numerical_jacobians(res.evaluate, values, ("a", "b"))
                for vid in ("a", "b"):
                    np.testing.assert_allclose(jf.blocks[vid] * sd,
                                               numeric[vid], atol=1e-6)

    def test_non_finite_jacobian_raises(self):
        res = FuncResidual(("x",), 1, lambda v: np.array([math.sqrt(abs(float(v["x"][0])))]))
        f = NonlinearFactor(res, 1.0)
        with pytest.raises(ValueError, match="linearization failure"):
            linearize(f, {"x": np.array([float("nan")])})


class TestRestrict:
    def _factor(self):
        m = DiscreteKey("m", 2)
        r0 = BetweenResidual("a", "b", Pose2(1, 0, 0))
        r1 = BetweenResidual("a", "b", Pose2(2, 0, 0))
        return HybridNonlinearFactor.from_components(
            [m], [(r0, 1.0), (r1, 1.0)]), m

    def test_empty_fixed_unchanged(self):
        f, m = self._factor()
        assert restrict(f, {}) is f

    def test_full_fix_gives_plain_factor(self):
        f, m = self._factor()
        out = restrict(f, {"m": 1})
        assert isinstance(out, NonlinearFactor)
        assert out.residual.measurement.x == 2.0

    def test_restricted_error_matches_hybrid_error(self):
        """Plain error of the restricted factor differs from the hybrid error
        at the fixed assignment only by the unit-noise normalizer constant."""
        f, m = self._factor()
        values = {"a": Pose2(), "b": Pose2(1.4, -0.2, 0.1)}
        out = restrict(f, {"m": 1})
        normalizer = 0.5 * 3 * math.log(2 * math.pi)
        assert out.error(values) == pytest.approx(
            f.error(values, {"m": 1}) - normalizer, abs=1e-12)


class TestOptimize:
    def test_linear_graph_converges_immediately(self):
        g = HybridNonlinearFactorGraph()
        g.add(NonlinearFactor(LinearResidual({"x": [[1.0]]}, [3.0]), 1.0))
        g.add(NonlinearFactor(LinearResidual({"x": [[1.0]]}, [5.0]), 1.0))
        init = {"x": np.array([0.0])}
        est, bn = optimize(g, init, OptimizeConfig(max_iters=5))
        lin = g.linearize(init)
        step = max_product(lin)
        np.testing.assert_allclose(est.continuous["x"],
                                   init["x"] + step.continuous["x"], atol=1e-12)
        np.testing.assert_allclose(est.continuous["x"], [4.0], atol=1e-12)

    def _three_pose_graph(self):
        """Chain with one two-hypothesis odometry; a prior on both ends makes
        hypothesis 1 (the +2 step) the only consistent choice."""
        g = HybridNonlinearFactorGraph()
        sigma = np.array([1e-4, 1e-4, 1e-6])
        g.add(NonlinearFactor(PriorResidual("a", Pose2()), sigma))
        m = DiscreteKey("m", 2)
        r_bad = BetweenResidual("a", "b", Pose2(1, 0, 0))
        r_good = BetweenResidual("a", "b", Pose2(2, 0, 0))
        g.add(HybridNonlinearFactor.from_components(
            [m], [(r_bad, sigma), (r_good, sigma)]))
        g.add(NonlinearFactor(BetweenResidual("b", "c", Pose2(1, 0, 0)), sigma))
        g.add(NonlinearFactor(PriorResidual("c", Pose2(3, 0, 0)), sigma))
        return g, m

    def test_three_pose_chain_selects_consistent_mode(self):
        g, m = self._three_pose_graph()
        init = {"a": Pose2(), "b": Pose2(1, 0, 0), "c": Pose2(2, 0, 0)}
        est, bn = optimize(g, init)
        assert est.discrete["m"] == 1
        np.testing.assert_allclose(est.continuous["b"].as_vector(),
                                   [2.0, 0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(est.continuous["c"].as_vector(),
                                   [3.0, 0.0, 0.0], atol=1e-6)

    def test_mode_fixed_equals_restricted_optimization(self):
        """Fixing the discrete mode then optimizing equals optimizing the
        restricted graph directly."""
        g, m = self._three_pose_graph()
        init = {"a": Pose2(), "b": Pose2(0.5, 0.3, 0.1), "c": Pose2(2, -0.2, 0)}
        est_full, _ = optimize(g, init)
        fixed_graph = g.restrict({"m": est_full.discrete["m"]})
        est_fixed, _ = optimize(fixed_graph, init)
        for vid in ("a", "b", "c"):
            np.testing.assert_allclose(est_full.continuous[vid].as_vector(),
                                       est_fixed.continuous[vid].as_vector(),
                                       atol=1e-9)

    def test_error_non_increasing(self):
        rng = np.random.default_rng(5)
        g = HybridNonlinearFactorGraph()
        sigma = np.array([0.01, 0.01, 0.001])
        g.add(NonlinearFactor(PriorResidual("p0", Pose2()), sigma))
        truth = [Pose2()]
        for i in range(4):
            step = Pose2(1.0, 0.1 * rng.normal(), 0.2 * rng.normal())
            truth.append(compose(truth[-1], step))
            g.add(NonlinearFactor(
                BetweenResidual(f"p{i}", f"p{i+1}", step), sigma))
        init = {f"p{i}": retract(truth[i], rng.normal(scale=0.3, size=3))
                for i in range(5)}
        errors = []
        values = dict(init)
        for _ in range(8):
            lin = g.linearize(values)
            step = max_product(lin)
            errors.append(g.error(values, {}))
            from hybridfg.nonlinear import retract_values
            values = retract_values(values, step.continuous)
        errors.append(g.error(values, {}))
        assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))

    def test_dmr_inside_optimize(self):
        g, m = self._three_pose_graph()
        init = {"a": Pose2(), "b": Pose2(2, 0, 0), "c": Pose2(3, 0, 0)}
        est, bn = optimize(g, init, OptimizeConfig(dmr_delta=0.8))
        assert est.discrete["m"] == 1
        assert bn.discrete_joint() is None  # mode removed before the final pass

    def test_divergence_reports_best(self):
        """A residual engineered to worsen under full Gauss-Newton steps
        triggers the divergence guard and carries the best iterate."""
        calls = {"n": 0}

        def nasty(v):
            x = float(v["x"][0])
            return np.array([math.atan(5.0 * x) - 1.4])

        g = HybridNonlinearFactorGraph()
        g.add(NonlinearFactor(FuncResidual(("x",), 1, nasty), 1e-6))
        with pytest.raises(OptimizationDiverged) as exc:
            optimize(g, {"x": np.array([2.0])}, OptimizeConfig(max_iters=20))
        assert "x" in exc.value.best_values


class TestHybridNonlinearFactor:
    def test_leaves_must_share_variables(self):
        m = DiscreteKey("m", 2)
        r0 = BetweenResidual("a", "b", Pose2())
        r1 = BetweenResidual("a", "c", Pose2())
        with pytest.raises(ValueError, match="share variables"):
            HybridNonlinearFactor.from_components([m], [(r0, 1.0), (r1, 1.0)])

    def test_linearized_graph_matches_oracle(self):
        """Linearizing a hybrid nonlinear chain and eliminating matches the
        brute-force posterior of the linearized system."""
        from hybridfg import sum_product
        rng = np.random.default_rng(6)
        g, m = self._small_slam_graph(rng)
        values = {"a": Pose2(), "b": Pose2(0.9, 0.1, 0.02)}
        lin = g.linearize(values)
        probs, _ = enumerate_posterior(lin)
        bn = sum_product(lin)
        np.testing.assert_allclose(np.asarray(bn.discrete_joint().leaves),
                                   np.asarray(probs.leaves), atol=1e-12)

    @staticmethod
    def _small_slam_graph(rng):
        g = HybridNonlinearFactorGraph()
        sigma = np.array([0.01, 0.01, 0.001])
        g.add(NonlinearFactor(PriorResidual("a", Pose2()), sigma))
        m = DiscreteKey("m", 2)
        r0 = BetweenResidual("a", "b", Pose2(1, 0, 0))
        r1 = BetweenResidual("a", "b", Pose2(1.5, 0, 0))
        g.add(HybridNonlinearFactor.from_components([m], [(r0, sigma), (r1, sigma)]))
        g.add(NonlinearFactor(PriorResidual("b", Pose2(1, 0, 0)), sigma))
        return g, m
