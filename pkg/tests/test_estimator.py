import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choquet_probit.choquet import CiAttribute, CutoffRule, UtilitySpec, choquet_rows
from choquet_probit.estimator import (
    LikelihoodEvaluator,
    OptimizerConfig,
    PackingMap,
    aic,
    estimate,
    feasible_start,
    hessian_from_gradient,
    kkt_residual,
    numerical_gradient,
    numerical_hessian,
    project_feasible,
    standard_errors,
)
from choquet_probit.fuzzy_measures import Capacity, capacity_to_mobius
from choquet_probit.membership import MinMaxRange, cumulative_points
from choquet_probit.mnp import ErrorKind, ErrorStructure, HaltonPlan
from choquet_probit.simulation import design_dgp, generate_dataset


def random_capacity(g, rng):
    vals = np.zeros(1 << g)
    for b in sorted(range(1, 1 << g), key=lambda b: bin(b).count("1")):
        lower = max(vals[b & ~(1 << i)] for i in range(g) if b >> i & 1)
        vals[b] = lower + rng.uniform(0, 1)
    return Capacity(g, vals / vals[-1])


@pytest.fixture(scope="module")
def small_fe():
    cfg = design_dgp("CIC-FE", n_individuals=60)
    ds, truth = generate_dataset(cfg, 3)
    spec = cfg.estimation_spec()
    err = ErrorStructure(ErrorKind.FULL, 5)
    return cfg, ds, truth, PackingMap(spec, err)


class TestAic:
    def test_published_row(self):
        assert aic(-8736.36, 15) == 17502.72

    def test_counts_free_parameters(self, small_fe):
        cfg, ds, truth, pmap = small_fe
        # 15 Möbius, two half-triangular and two trapezoidal cut-off sets, 4 ASCs, 9 Cholesky entries
        assert pmap.n_params == 15 + (2 + 2 + 4 + 4) + 4 + 9


class TestPacking:
    def test_segments_in_order(self, small_fe):
        pmap = small_fe[3]
        names = list(pmap.segments)
        assert names == ["mobius[1]", "cutoff[x1]", "cutoff[x2]", "cutoff[x3]", "cutoff[x4]", "beta", "error"]
        assert pmap.segments["mobius[1]"].start == 0
        stops = [s.stop for s in pmap.segments.values()]
        assert stops[-1] == pmap.n_params and stops == sorted(stops)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_round_trip_feasible_vectors(self, seed):
        cfg = design_dgp("CIC-FE")
        pmap = PackingMap(cfg.estimation_spec(), ErrorStructure(ErrorKind.FULL, 5))
        rng = np.random.default_rng(seed)
        theta = rng.normal(size=pmap.n_params)
        theta[pmap.group_segment(0)] = capacity_to_mobius(random_capacity(4, rng)).free
        assert pmap.max_violation(theta) < 1e-12
        params, err = pmap.unpack(theta)
        np.testing.assert_array_equal(pmap.pack(params, err), theta)

    def test_truth_round_trip(self, small_fe):
        pmap, truth = small_fe[3], small_fe[2]
        params, err = pmap.unpack(truth)
        np.testing.assert_allclose(err.differenced_cov(), small_fe[0].error_cov, atol=1e-12)
        np.testing.assert_allclose(pmap.pack(params, err), truth, atol=1e-15)

    def test_wrong_length(self, small_fe):
        with pytest.raises(ValueError):
            small_fe[3].unpack(np.zeros(3))

    def test_alternative_specific_groups_replicate_constraints(self):
        attrs = tuple(CiAttribute(n, n, MinMaxRange()) for n in ("a", "b", "c"))
        spec = UtilitySpec(3, attrs, capacity_groups=((1, 2), (3,)))
        pmap = PackingMap(spec, ErrorStructure(ErrorKind.IID, 3))
        a_eq, b_eq, a_in, labels = pmap.constraint_matrices()
        assert a_eq.shape == (2, pmap.n_params) and a_in.shape[0] == 2 * 12 == len(labels)
        np.testing.assert_array_equal(b_eq, [1.0, 1.0])
        # the two groups touch disjoint parameters
        assert not np.any((a_in[:12] != 0) & (a_in[12:] != 0))

    def test_estimated_scale(self):
        cfg = design_dgp("CI-IID", utility="weighted_sum")
        pmap = PackingMap(cfg.estimation_spec(), ErrorStructure(ErrorKind.IID, 5))
        assert pmap.names[-1] == "log_ci_scale"
        params, _ = pmap.unpack(cfg.true_theta())
        assert params.ci_scale == pytest.approx(sum(cfg.ws_betas))


class TestFeasibleStart:
    @pytest.mark.parametrize("g", [2, 3, 4, 6])
    def test_constraint_slack(self, g):
        attrs = tuple(CiAttribute(f"x{k}", f"x{k}", MinMaxRange()) for k in range(g))
        spec = UtilitySpec(3, attrs)
        pmap = PackingMap(spec, ErrorStructure(ErrorKind.IID, 3))
        theta = feasible_start(spec, pmap.error)
        a_eq, b_eq, a_in, _ = pmap.constraint_matrices()
        assert np.max(np.abs(a_eq @ theta - b_eq)) <= 1e-15
        assert np.min(a_in @ theta) >= 1 / g - 1e-15
        singles = [(1 << i) - 1 for i in range(g)]
        np.testing.assert_allclose(theta[singles], 1 / g)

    def test_three_attributes_is_arithmetic_mean(self):
        attrs = tuple(CiAttribute(n, n, MinMaxRange()) for n in ("a", "b", "c"))
        spec = UtilitySpec(2, attrs)
        mu = PackingMap(spec, ErrorStructure(ErrorKind.IID, 2)).capacities(feasible_start(spec, ErrorStructure(ErrorKind.IID, 2)))[0]
        x = np.random.default_rng(0).uniform(size=(20, 3))
        np.testing.assert_allclose(choquet_rows(x, mu.values), x.mean(axis=1), atol=1e-15)

    def test_cutoffs_span_empirical_range(self, small_fe):
        cfg, ds, _, pmap = small_fe
        theta = feasible_start(pmap.spec, pmap.error, ds)
        params, err = pmap.unpack(theta)
        np.testing.assert_allclose(err.differenced_cov(), ErrorStructure(ErrorKind.IID, 5).differenced_cov())
        assert all(v == 0 for v in params.betas.values())
        for key, attr, rule, _ in pmap.cutoff_rules:
            raw = ds.column(attr.column).ravel()
            pts = cumulative_points(params.cutoffs[key])
            assert pts[0] == pytest.approx(np.quantile(raw, 0.1)) and pts[-1] == pytest.approx(np.quantile(raw, 0.9))

    def test_trapezoid_points_ordered(self):
        attrs = (CiAttribute("a", "a", CutoffRule("trapezoidal")), CiAttribute("b", "b", MinMaxRange()))
        spec = UtilitySpec(2, attrs)
        pmap = PackingMap(spec, ErrorStructure(ErrorKind.IID, 2))
        params, _ = pmap.unpack(feasible_start(spec, pmap.error))
        pts = cumulative_points(params.cutoffs["a"])
        assert np.all(np.diff(pts) > 0)


class TestGradient:
    def test_chain_rule_matches_direct_differences(self, small_fe):
        _, ds, truth, pmap = small_fe
        ev = LikelihoodEvaluator(pmap, ds, HaltonPlan(n_draws=100))
        for theta in (feasible_start(pmap.spec, pmap.error, ds), truth):
            chain = ev.gradient(theta, 1e-4)
            direct = numerical_gradient(ev.loglik, theta, 1e-4)
            np.testing.assert_allclose(chain, direct, rtol=1e-4, atol=1e-4)

    def test_richardson_consistency(self, small_fe):
        _, ds, truth, pmap = small_fe
        ev = LikelihoodEvaluator(pmap, ds, HaltonPlan(n_draws=100))
        g1, g2, g4 = (ev.gradient(truth, h) for h in (4e-4, 2e-4, 1e-4))
        # central differences: error shrinks roughly fourfold per halving
        assert np.max(np.abs(g2 - g4)) <= 0.5 * np.max(np.abs(g1 - g2)) + 1e-6

    def test_likelihood_deterministic(self, small_fe):
        _, ds, truth, pmap = small_fe
        a = LikelihoodEvaluator(pmap, ds).loglik(truth)
        b = LikelihoodEvaluator(pmap, ds, threads=3).loglik(truth)
        assert a == b and np.isfinite(a)


class FakeEvaluator:
    """Quadratic log-likelihood ``-0.5 (x - c)' H (x - c)`` with linear constraints."""

    class Map:
        def __init__(self, n, a_eq, a_in):
            self.n_params = n
            self._c = (a_eq, np.ones(a_eq.shape[0]), a_in, [])

        def constraint_matrices(self):
            return self._c

    def __init__(self, hess, centre, a_eq=None, a_in=None):
        n = len(centre)
        self.hess, self.centre = hess, centre
        self.pmap = self.Map(n, np.zeros((0, n)) if a_eq is None else a_eq, np.zeros((0, n)) if a_in is None else a_in)

    def gradient(self, x, step):
        return -self.hess @ (x - self.centre)


class TestHessianAndErrors:
    hess = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])

    def test_numerical_hessian_on_quadratic(self):
        f = lambda x: 0.5 * x @ self.hess @ x + x.sum()
        x0 = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(numerical_hessian(f, x0, 1e-3), self.hess, atol=1e-6)
        np.testing.assert_allclose(hessian_from_gradient(lambda x: self.hess @ x + 1, x0, 1e-3), self.hess, atol=1e-9)

    def test_unconstrained_inverse_diagonal(self):
        ev = FakeEvaluator(self.hess, np.array([0.2, 0.4, 0.6]))
        se, flagged, status, active = standard_errors(ev.centre, ev, OptimizerConfig())
        assert status == "ok" and not flagged.any() and active == []
        np.testing.assert_allclose(se, np.sqrt(np.diag(np.linalg.inv(self.hess))), atol=1e-4)

    def test_equality_projected(self):
        a_eq = np.array([[1.0, 1.0, 1.0]])
        ev = FakeEvaluator(self.hess, np.array([0.2, 0.3, 0.5]), a_eq=a_eq)
        se, *_ = standard_errors(ev.centre, ev, OptimizerConfig())
        z = np.array([[1, 0], [0, 1], [-1, -1]], dtype=float)
        cov = z @ np.linalg.inv(z.T @ self.hess @ z) @ z.T
        np.testing.assert_allclose(se, np.sqrt(np.diag(cov)), atol=1e-4)

    def test_active_inequality_flags(self):
        a_in = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        ev = FakeEvaluator(self.hess, np.array([0.0, 0.7, 0.1]), a_in=a_in)
        se, flagged, status, active = standard_errors(ev.centre, ev, OptimizerConfig())
        assert active == [0] and list(flagged) == [True, False, False]
        assert np.isnan(se[0]) and np.all(np.isfinite(se[1:]))

    def test_singular(self):
        ev = FakeEvaluator(np.zeros((2, 2)), np.zeros(2))
        se, flagged, status, _ = standard_errors(ev.centre, ev, OptimizerConfig())
        assert status == "singular" and flagged.all() and np.isnan(se).all()


class TestConstraintHelpers:
    def test_kkt_residual(self):
        a_eq = np.array([[1.0, 1.0]])
        assert kkt_residual(np.array([2.0, 2.0]), a_eq, np.zeros((0, 2))) == pytest.approx(0, abs=1e-9)
        assert kkt_residual(np.array([1.0, -1.0]), a_eq, np.zeros((0, 2))) == pytest.approx(1.0)
        # an active lower bound absorbs a gradient pointing into it only with a nonnegative multiplier
        act = np.array([[1.0, 0.0]])
        assert kkt_residual(np.array([3.0, 0.0]), np.zeros((0, 2)), act) == pytest.approx(0, abs=1e-9)
        assert kkt_residual(np.array([-3.0, 0.0]), np.zeros((0, 2)), act) == pytest.approx(3.0)

    def test_project_feasible(self):
        a_eq = np.array([[1.0, 1.0, 1.0]])
        a_in = np.eye(3)
        x = project_feasible(np.array([1.2, 0.5, -0.4]), a_eq, np.ones(1), a_in)
        np.testing.assert_allclose(x, [0.85, 0.15, 0.0], atol=1e-8)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(fd_step=0)
        with pytest.raises(ValueError):
            OptimizerConfig(max_iterations=0)


@pytest.fixture(scope="module")
def fitted_small():
    cfg = design_dgp("CI-IID", n_individuals=400)
    ds, truth = generate_dataset(cfg, 0)
    spec = cfg.estimation_spec()
    err = ErrorStructure(ErrorKind.IID, 5)
    config = OptimizerConfig(draws=HaltonPlan(n_draws=100))
    return cfg, ds, truth, spec, err, config, estimate(ds, spec, err, config)


class TestEstimate:
    def test_converges_feasible(self, fitted_small):
        *_, res = fitted_small
        assert res.converged, res.message
        assert res.max_violation < 1e-8
        assert res.kkt_residual < OptimizerConfig().kkt_tol

    def test_progress_monotone(self, fitted_small):
        *_, res = fitted_small
        assert res.loglik >= res.start_loglik
        assert np.all(np.diff(res.loglik_trace) >= 0)
        assert res.loglik_trace[-1] == res.loglik

    def test_likelihood_dominates_truth(self, fitted_small):
        cfg, ds, truth, spec, err, config, res = fitted_small
        ll_true = LikelihoodEvaluator(PackingMap(spec, err), ds, config.draws).loglik(truth)
        assert res.loglik >= ll_true - 1e-6

    def test_standard_errors_reported(self, fitted_small):
        *_, res = fitted_small
        assert res.se_status == "ok"
        ok = ~res.se_flagged
        assert np.all(np.isfinite(res.std_errors[ok])) and np.all(res.std_errors[ok] > 0)
        assert np.all(np.isnan(res.std_errors[res.se_flagged]))

    def test_report_contents(self, fitted_small):
        *_, res = fitted_small
        d = res.to_dict()
        assert d["aic"] == pytest.approx(2 * res.n_params - 2 * res.loglik)
        grp = d["capacity_groups"][0]
        assert sum(grp["shapley"].values()) == pytest.approx(1.0)
        assert list(grp["interactions"]) == ["1,2", "1,3", "1,4", "2,3", "2,4", "3,4"]
        assert "AIC" in res.summary()

    def test_reproducible_trace(self, fitted_small):
        cfg, ds, truth, spec, err, config, _ = fitted_small
        quick = OptimizerConfig(draws=HaltonPlan(n_draws=50), max_iterations=5, compute_standard_errors=False)
        a, b = estimate(ds, spec, err, quick), estimate(ds, spec, err, quick)
        assert a.status == "iteration_limit"
        assert a.loglik_trace == b.loglik_trace
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_infeasible_start_repaired(self, fitted_small):
        cfg, ds, truth, spec, err, _, _ = fitted_small
        start = truth.copy()
        start[0] += 0.3
        res = estimate(ds, spec, err, OptimizerConfig(draws=HaltonPlan(n_draws=30), max_iterations=3, compute_standard_errors=False), start)
        assert res.max_violation < 1e-8

    def test_alternative_count_mismatch(self, fitted_small):
        _, ds, *_ = fitted_small
        attrs = (CiAttribute("x1", "x1", MinMaxRange()),)
        with pytest.raises(Exception):
            estimate(ds, UtilitySpec(3, attrs), ErrorStructure(ErrorKind.IID, 3))
