"""Measure-change parameters, the density process and martingale z-tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imamarket.chain import RegimeChain
from imamarket.errors import SpecError
from imamarket.jumps import LevyJumpSpec, SwitchJumpSpec
from imamarket.market import MarketSpec, asset_names, simulate_assets
from imamarket.measure import (
    density_moments,
    density_path,
    girsanov_parameters,
    martingale_ztest,
    switch_mark_drift,
    ztest_csv,
)

from specs import jumpy_spec, no_jump_spec


def single_regime(r=0.03, mu0=0.08, sigma0=0.2):
    return MarketSpec(RegimeChain([[0.0]]), LevyJumpSpec.none(1), SwitchJumpSpec.none(1),
                      r=[r], mu0=[mu0], sigma0=[sigma0], require_premium=False)


class TestParameters:
    def test_psi0(self):
        assert girsanov_parameters(single_regime()).psi0[0] == pytest.approx(-0.25, abs=1e-15)

    def test_psij_example(self):
        chain = RegimeChain([[-2.0, 2.0], [1.0, -1.0]], 0)
        spec = MarketSpec(chain, LevyJumpSpec.none(2), SwitchJumpSpec.none(2), r=[0.05, 0.05], mu0=[0.1, 0.1],
                          sigma0=[0.2, 0.2], mu_markov=[[0.05, 0.05], [0.02, 0.05]], sigma_markov=0.5)
        gir = girsanov_parameters(spec)
        assert gir.psi_j(0, 1) == pytest.approx(0.03, abs=1e-15)

    def test_psij_zero_when_drift_is_rate(self):
        gir = girsanov_parameters(no_jump_spec())
        assert gir.psij[0, 1] == 0.0 and gir.psij[1, 0] == 0.0

    def test_diagonal_not_applicable(self):
        gir = girsanov_parameters(jumpy_spec())
        assert np.all(np.isnan(np.diag(gir.psij)))
        with pytest.raises(ValueError):
            gir.psi_j(1, 1)

    def test_factor_must_stay_positive(self):
        with pytest.raises(SpecError) as err:
            girsanov_parameters(jumpy_spec(mu_markov=[[0.03, 0.02], [0.5, 0.01]]))
        assert err.value.field == "mu_markov"


class TestDensity:
    def test_identity_change(self):
        spec = single_regime(r=0.05, mu0=0.05)
        path = simulate_assets(spec, 1.0, 0.01, seed=2)
        np.testing.assert_array_equal(density_path(girsanov_parameters(spec), path).values, 1.0)

    def test_identity_change_two_regimes(self):
        spec = no_jump_spec(mu0=[0.03, 0.01], require_premium=False)
        path = next(p for p in (simulate_assets(spec, 3.0, 0.01, seed=s) for s in range(50))
                    if p.chain_path.epochs.size > 0)
        np.testing.assert_allclose(density_path(girsanov_parameters(spec), path).values, 1.0, rtol=1e-15)

    def test_scalar_exponential_martingale(self):
        spec = single_regime()
        path = simulate_assets(spec, 1.0, 0.01, seed=6)
        ell = density_path(girsanov_parameters(spec), path).values
        np.testing.assert_allclose(ell, np.exp(-0.25 * path.brownian - 0.5 * 0.0625 * path.time), rtol=1e-13)

    def test_stepwise_product(self):
        """Product of per-step factors along the merged grid, computed independently."""
        spec = jumpy_spec()
        gir = girsanov_parameters(spec)
        path = simulate_assets(spec, 2.0, 0.01, seed=13)
        lam = spec.chain.intensity
        vals = [1.0]
        for g in range(1, path.time.size):
            a = path.regime[g - 1]
            dt = path.time[g] - path.time[g - 1]
            dw = path.brownian[g] - path.brownian[g - 1]
            comp = sum(gir.psij[a, j] * lam[a, j] for j in range(2) if j != a)
            step = np.exp(gir.psi0[a] * dw - 0.5 * gir.psi0[a] ** 2 * dt - comp * dt)
            if path.event[g] == 1:
                step *= 1.0 + gir.psij[a, path.event_target[g]]
            vals.append(vals[-1] * step)
        np.testing.assert_allclose(density_path(gir, path).values, vals, rtol=1e-11)

    def test_mean_one(self):
        spec = jumpy_spec()
        mean, se = density_moments(spec, girsanov_parameters(spec), 1.0, 100_000, 17)
        assert abs(mean - 1.0) < 3 * se


class TestZTest:
    def test_money_market_exact(self):
        spec = jumpy_spec()
        rows = martingale_ztest(spec, girsanov_parameters(spec), "B", [0.5, 1.0], 200, 0)
        assert all(r.z == 0.0 and r.stderr == 0.0 for r in rows)

    def test_too_few_paths(self):
        spec = jumpy_spec()
        with pytest.raises(SpecError) as err:
            martingale_ztest(spec, girsanov_parameters(spec), "S0", [1.0], 99, 0)
        assert err.value.field == "n_paths"

    def test_unknown_asset(self):
        spec = jumpy_spec()
        with pytest.raises(KeyError):
            martingale_ztest(spec, girsanov_parameters(spec), "S9", [1.0], 200, 0)

    def test_compliant_stock(self):
        spec = jumpy_spec(switch=SwitchJumpSpec.none(2))
        rows = martingale_ztest(spec, girsanov_parameters(spec), "S0", [0.25, 0.5, 1.0], 100_000, 3)
        assert all(abs(r.z) < 3 for r in rows)

    def test_markov_violation_grows(self):
        spec = jumpy_spec(mu_markov=[[0.05, 0.02], [0.05, 0.01]])
        rows = martingale_ztest(spec, girsanov_parameters(spec), "S_1", [0.5, 1.0, 2.0], 100_000, 3)
        z = [abs(r.z) for r in rows]
        assert z[-1] > 3 and z[0] < z[-1]

    def test_thread_independence(self):
        spec = jumpy_spec()
        gir = girsanov_parameters(spec)
        one = martingale_ztest(spec, gir, "all", [0.5, 1.0], 20_000, 8, threads=1)
        four = martingale_ztest(spec, gir, "all", [0.5, 1.0], 20_000, 8, threads=4)
        assert ztest_csv(one) == ztest_csv(four)

    def test_csv_header(self):
        spec = jumpy_spec()
        text = ztest_csv(martingale_ztest(spec, girsanov_parameters(spec), ["B"], [1.0], 100, 0))
        assert text.splitlines()[0] == "checkpoint,asset,mean,stderr,z"


class TestSwitchMarkDrift:
    def test_zero_without_marks(self):
        spec = jumpy_spec(switch=SwitchJumpSpec.none(2))
        drift = switch_mark_drift(spec, girsanov_parameters(spec))
        assert all(np.all(v == 0) for v in drift.values())

    def test_zero_without_tilt(self):
        spec = jumpy_spec(mu_markov=[[0.03, 0.01], [0.03, 0.01]])
        drift = switch_mark_drift(spec, girsanov_parameters(spec))
        assert all(np.all(v == 0) for v in drift.values())

    def test_predicts_weighted_mean(self):
        """The weighted stock mean moves by the predicted residual drift."""
        spec = jumpy_spec(switch=SwitchJumpSpec(([-0.3], [0.3]), ([1.0], [1.0])),
                          mu_markov=[[0.03, -0.1], [0.25, 0.01]], sigma_markov=0.3)
        gir = girsanov_parameters(spec)
        drift = switch_mark_drift(spec, gir)["S0"]
        assert np.all(drift != 0)
        row = martingale_ztest(spec, gir, "S0", [0.1], 400_000, 5)[0]
        assert abs(row.mean - (1.0 + 0.1 * drift[0])) < 4 * row.stderr + 0.002
        assert abs(row.z) > 3

    def test_keys(self):
        spec = jumpy_spec()
        assert set(switch_mark_drift(spec, girsanov_parameters(spec))) == set(asset_names(spec))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_density_positive_and_starts_at_one(seed):
    spec = jumpy_spec()
    ell = density_path(girsanov_parameters(spec), simulate_assets(spec, 1.0, 0.05, seed=seed)).values
    assert ell[0] == 1.0
    assert np.all(ell > 0)
