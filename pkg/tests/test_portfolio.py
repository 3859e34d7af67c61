"""First-order conditions, solvers, closed forms and the grid oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imamarket.chain import RegimeChain
from imamarket.errors import SpecError
from imamarket.jumps import LevyJumpSpec, SwitchJumpSpec
from imamarket.market import MarketSpec
from imamarket.portfolio import (
    FocProblem,
    RegimeModel,
    closed_form_markov_weight,
    coordinate_names,
    foc_residual,
    grid_oracle,
    merton_closed_form,
    original_foc,
    original_interval,
    solution_csv,
    solve_enlarged,
    solve_original,
)
from imamarket.wealth import (
    AdmissibilityError,
    PortfolioWeights,
    UtilitySpec,
    deterministic_expected_log,
    regime_log_rate,
    regime_power_rate,
)

from specs import jumpy_spec, no_jump_spec, oracle_spec, random_spec

LOG = UtilitySpec()
POW = UtilitySpec("power", 0.5)


def one_regime_jumpy(gamma=(-0.2, 0.1), probs=(0.4, 0.6)):
    return MarketSpec(RegimeChain([[0.0]]), LevyJumpSpec(2.0, list(range(len(gamma))), list(probs), [list(gamma)]),
                      SwitchJumpSpec.none(1), r=[0.03], mu0=[0.09], sigma0=[0.2])


class TestModel:
    def test_coordinate_names(self):
        assert coordinate_names(2, 3, 1) == ["pi0", "pi_1", "pi_2", "pi^(2)", "pi^(3)", "pi_1^(1)", "pi_2^(1)"]

    def test_log_rate_matches_wealth(self):
        spec = jumpy_spec()
        w = PortfolioWeights(0.8, [0.3, -0.4], [0.2, -0.1], np.array([[0.1, 0.05], [-0.2, 0.1]]))
        for a in range(2):
            model = RegimeModel(spec, a, LOG, 3, 2)
            assert model.objective(w.to_vector()) == pytest.approx(regime_log_rate(spec, w, a), abs=1e-14)

    def test_power_rate_matches_wealth(self):
        spec = jumpy_spec()
        w = PortfolioWeights(0.8, [0.3, -0.4], [0.2, -0.1], np.array([[0.1, 0.05], [-0.2, 0.1]]))
        for a in range(2):
            model = RegimeModel(spec, a, POW, 3, 2)
            assert model.objective(w.to_vector()) == pytest.approx(regime_power_rate(spec, w, a, 0.5), abs=1e-14)

    def test_inadmissible_is_minus_infinity(self):
        model = RegimeModel(jumpy_spec(), 0, LOG, 3, 2)
        v = np.zeros(model.dim)
        v[0] = 20.0
        assert model.objective(v) == -np.inf
        with pytest.raises(AdmissibilityError):
            model.gradient(v)

    def test_residual_dimension(self):
        problem = FocProblem(jumpy_spec(), 0, LOG, 3, 2)
        res = foc_residual(problem, PortfolioWeights.zeros(2, 3, 2))
        assert res.shape == (1 + 2 + 2 + 4,)
        with pytest.raises(ValueError):
            foc_residual(problem, PortfolioWeights.zeros(2, 2, 2))

    def test_problem_validation(self):
        with pytest.raises(SpecError):
            FocProblem(jumpy_spec(), 0, LOG, tol=0.0)
        with pytest.raises(SpecError):
            FocProblem(jumpy_spec(), 0, LOG, 4, 0).model()


class TestClosedForms:
    def test_merton_values(self):
        spec = no_jump_spec(1)
        assert merton_closed_form(spec, 0, LOG) == pytest.approx(1.25, abs=1e-14)
        assert merton_closed_form(spec, 0, POW) == pytest.approx(2.5, abs=1e-14)
        assert merton_closed_form(spec, 0, UtilitySpec("power", 0.99)) > merton_closed_form(spec, 0, LOG)

    def test_merton_stationary(self):
        spec = no_jump_spec(1)
        pi = PortfolioWeights(1.25, [0.0], [0.0], np.zeros((1, 2)))
        assert foc_residual(FocProblem(spec, 0, LOG, 2, 2), pi)[0] == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("util", [LOG, POW], ids=["log", "power"])
    def test_markov_closed_form_zeroes_component(self, util):
        spec = jumpy_spec()
        for a, j in [(0, 1), (1, 0)]:
            pj = closed_form_markov_weight(spec, a, j, util)
            v = np.zeros(2)
            v[j] = pj
            res = foc_residual(FocProblem(spec, a, util, 3, 2), PortfolioWeights(0.5, v, [0.1, 0.0], np.zeros((2, 2))))
            assert res[1 + j] == pytest.approx(0.0, abs=1e-14)

    def test_markov_closed_form_own_regime(self):
        with pytest.raises(ValueError):
            closed_form_markov_weight(jumpy_spec(), 0, 0, LOG)

    def test_markov_closed_form_infeasible(self):
        spec = jumpy_spec(mu_markov=[[0.03, 0.02], [0.5, 0.01]], sigma_markov=0.3)
        assert np.isnan(closed_form_markov_weight(spec, 0, 1, POW))


class TestSolveEnlarged:
    @pytest.mark.parametrize("util,expected", [(LOG, 1.25), (POW, 2.5)], ids=["log", "power"])
    def test_merton_limit(self, util, expected):
        sol = solve_enlarged(FocProblem(no_jump_spec(1), 0, util, 2, 2))
        assert sol.converged
        assert sol.weights.pi0 == pytest.approx(expected, abs=1e-10)
        np.testing.assert_array_equal(sol.weights.to_vector()[1:], 0.0)

    def test_no_jump_regimes(self):
        spec = no_jump_spec(2)
        for a in range(2):
            for util in (LOG, POW):
                sol = solve_enlarged(FocProblem(spec, a, util, 3, 2))
                assert sol.converged
                assert sol.weights.pi0 == pytest.approx(merton_closed_form(spec, a, util), abs=1e-10)

    @pytest.mark.parametrize("util", [LOG, POW], ids=["log", "power"])
    def test_jumpy_converges(self, util):
        spec = jumpy_spec()
        for a in range(2):
            problem = FocProblem(spec, a, util, 3, 2)
            sol = solve_enlarged(problem)
            assert sol.converged and sol.residual_norm <= problem.tol
            assert problem.model().admissible(sol.weights.to_vector())
            assert np.max(np.abs(foc_residual(problem, sol.weights))) <= 1e-10

    def test_markov_weight_matches_closed_form(self):
        spec = jumpy_spec()
        sol = solve_enlarged(FocProblem(spec, 0, LOG, 3, 2))
        assert sol.weights.pij[1] == pytest.approx(closed_form_markov_weight(spec, 0, 1, LOG), abs=1e-9)

    def test_unbounded_reported(self):
        spec = no_jump_spec(2, mu_power=[[0.05, 0.01], [0.03, 0.01]])
        sol = solve_enlarged(FocProblem(spec, 0, LOG, 2, 0))
        assert not sol.converged
        assert "pi^(2)" in sol.message

    def test_iteration_cap_is_honest(self):
        sol = solve_enlarged(FocProblem(jumpy_spec(), 0, LOG, 3, 2, max_iter=1))
        assert not sol.converged and sol.residual_norm > 1e-10 and sol.message

    @pytest.mark.parametrize("util", [LOG, POW], ids=["log", "power"])
    def test_scale_invariance(self, util):
        spec = jumpy_spec()
        sols = [solve_enlarged(FocProblem(spec, 1, util, 3, 2, z0=z)) for z in (0.5, 1.0, 7.0)]
        for s in sols[1:]:
            np.testing.assert_allclose(s.weights.to_vector(), sols[0].weights.to_vector(), atol=1e-9)

    def test_log_objective_shift(self):
        spec = jumpy_spec()
        a = solve_enlarged(FocProblem(spec, 0, LOG, 3, 2, z0=1.0)).objective
        b = solve_enlarged(FocProblem(spec, 0, LOG, 3, 2, z0=7.0)).objective
        assert b - a == pytest.approx(np.log(7.0), abs=1e-12)


class TestSolveOriginal:
    @pytest.mark.parametrize("util,expected", [(LOG, 1.25), (POW, 2.5)], ids=["log", "power"])
    def test_no_jumps(self, util, expected):
        assert solve_original(no_jump_spec(1), 0, util) == pytest.approx(expected, abs=1e-10)

    def test_interval_bound(self):
        spec = one_regime_jumpy(gamma=(-0.5,), probs=(1.0,))
        lo, hi = original_interval(spec, 0)
        assert hi == pytest.approx(2.0) and lo == -np.inf
        p = solve_original(spec, 0, LOG)
        assert p < 2.0
        assert abs(original_foc(spec, 0, LOG, p)[0]) < 1e-12

    @pytest.mark.parametrize("util", [LOG, POW], ids=["log", "power"])
    def test_residual_tolerance(self, util):
        spec = jumpy_spec()
        for a in range(2):
            p = solve_original(spec, a, util)
            assert abs(original_foc(spec, a, util, p)[0]) < 1e-12

    def test_matches_one_dimensional_grid(self):
        spec = one_regime_jumpy()
        p = solve_original(spec, 0, LOG)
        grid = np.arange(p - 0.05, p + 0.05, 1e-4)
        vals = [deterministic_expected_log(spec, PortfolioWeights(g, [0.0], [], np.zeros((1, 0)))) for g in grid]
        assert abs(grid[int(np.argmax(vals))] - p) <= 1e-4

    def test_derivative_matches_difference(self):
        spec = jumpy_spec()
        for util in (LOG, POW):
            h = 1e-6
            _, der = original_foc(spec, 0, util, 0.7)
            fd = (original_foc(spec, 0, util, 0.7 + h)[0] - original_foc(spec, 0, util, 0.7 - h)[0]) / (2 * h)
            assert der == pytest.approx(fd, rel=1e-6)

    def test_interval_contains_zero(self):
        lo, hi = original_interval(jumpy_spec(), 1)
        assert lo < 0.0 < hi


class TestOracle:
    def test_merton_grid(self):
        res = grid_oracle(no_jump_spec(1), 0, LOG, {"pi0": (0.0, 2.0)}, 41)
        assert abs(res.weights.pi0 - 1.25) <= res.steps["pi0"]

    def test_zero_return(self):
        spec = one_regime_jumpy().replace(mu0=np.array([0.03]), require_premium=False)
        res = grid_oracle(spec, 0, LOG, {"pi0": (-1.0, 1.0)}, 41)
        assert abs(res.weights.pi0) <= res.steps["pi0"]

    @pytest.mark.parametrize("util", [LOG, POW], ids=["log", "power"])
    def test_dominance(self, util):
        spec = oracle_spec()
        for a in range(2):
            sol = solve_enlarged(FocProblem(spec, a, util, 2, 1))
            assert sol.converged
            bounds = {"pi0": (-1.0, 3.0), "pi_%d" % (2 - a): (-2.0, 2.0), "pi^(2)": (0.0, 20.0)}
            res = grid_oracle(spec, a, util, bounds, 31, 2, 1)
            assert res.objective <= sol.objective + 1e-9

    def test_guard(self):
        with pytest.raises(ValueError, match="guard"):
            grid_oracle(jumpy_spec(), 0, LOG, {n: (-1, 1) for n in ["pi0", "pi_1", "pi_2", "pi^(2)", "pi^(3)"]},
                        50, 3, 2)

    def test_unknown_coordinate(self):
        with pytest.raises(KeyError):
            grid_oracle(jumpy_spec(), 0, LOG, {"pi_7": (0, 1)}, 5, 3, 2)


class TestReport:
    def test_solution_csv(self):
        sol = solve_enlarged(FocProblem(no_jump_spec(1), 0, LOG, 1, 0))
        lines = solution_csv([(0, LOG, 1, 0, sol, None)]).splitlines()
        assert lines[0] == "regime,utility,K,L,pi0,pi_1,residual_norm,objective,converged,oracle_gap"
        cells = lines[1].split(",")
        assert cells[:4] == ["1", "log", "1", "0"] and float(cells[4]) == pytest.approx(1.25, abs=1e-12)
        assert lines[1].endswith(",true,")


def _random_point(rng, model):
    for _ in range(100):
        v = rng.uniform(-0.8, 0.8, model.dim)
        if model.admissible(v):
            return v
    return np.zeros(model.dim)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([LOG, POW, UtilitySpec("power", 0.2)]))
def test_gradient_matches_central_differences(seed, util):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    spec = random_spec(rng, n, 3, 2)
    a = int(rng.integers(0, n))
    model = RegimeModel(spec, a, util, 3, 2, z0=float(rng.uniform(0.5, 3)))
    v = _random_point(rng, model)
    h = 1e-5
    fd = np.array([(model.objective(v + h * e) - model.objective(v - h * e)) / (2 * h) for e in np.eye(model.dim)])
    if not np.all(np.isfinite(fd)):
        return
    assert np.max(np.abs(model.gradient(v) - fd)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_solver_beats_random_points(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 2, 2, 1)
    problem = FocProblem(spec, 0, LOG, 2, 1)
    sol = solve_enlarged(problem)
    if not sol.converged:
        return
    model = problem.model()
    pts = rng.uniform(-2, 2, (2000, model.dim))
    assert np.max(model.objective(pts)) <= sol.objective + 1e-9
