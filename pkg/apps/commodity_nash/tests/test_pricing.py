"""Tests for indifference prices and the agreement search."""

import numpy as np
import pytest
from commodity_nash.errors import BlowUp, ConfigError, NoSignChange
from commodity_nash.pricing import (
    AgreementProblem,
    Bracket,
    agreement_gap,
    agreement_identity,
    find_lambda_star,
    indifference_prices,
    risk_premium_report,
    trading_feasible,
)


@pytest.fixture
def problem(base_params, fast_settings):
    return AgreementProblem.from_settings(base_params, fast_settings)


@pytest.fixture
def asymmetric(base_params, fast_settings):
    """Producer more risk averse than the consumer."""
    p = base_params.replace(eta_p=0.05, eta_c=0.01)
    problem = AgreementProblem.from_settings(p, fast_settings)
    return p, problem, find_lambda_star(p, settings=fast_settings, problem=problem)


def test_bracket_validation():
    """Test bracket bounds are checked."""
    assert Bracket().lo == 1e-3
    with pytest.raises(ConfigError):
        Bracket(1e-4, 10.0)
    with pytest.raises(ConfigError):
        Bracket(2.0, 1.0)


def test_prices_vanish_without_contract(problem):
    """Test F_p(0) = F_c(0) = 0 and g(0) = 0."""
    assert problem.indifference(0.0) == (0.0, 0.0)
    assert agreement_gap(problem, 0.0) == 0.0


def test_indifference_prices_function(base_params, fast_settings, problem):
    """Test the one-shot helper agrees with the cached problem."""
    assert indifference_prices(base_params, 2.0, settings=fast_settings) == pytest.approx(
        problem.indifference(2.0), rel=1e-12
    )


def test_symmetric_gap(base_params, problem):
    """Test g(lam) = 2 (lam s0 - F_p(lam)) for symmetric players."""
    for lam in (0.5, 2.0, 4.0):
        f_p, _ = problem.indifference(lam)
        expected = 2.0 * (lam * base_params.s0 - f_p)
        assert problem.gap(lam) == pytest.approx(expected, abs=1e-8 * (1.0 + abs(f_p)))


def test_reports_are_cached(problem):
    """Test repeated quantities reuse the solved report."""
    assert problem.report(1.0) is problem.report(1.0)
    assert problem.report(0.0) is problem.baseline
    assert problem.report(1.0, F=5.0) is not problem.report(1.0)


def test_symmetric_agreement(base_params, fast_settings, problem):
    """Test F* = lambda* s0 and a vanishing premium for symmetric players."""
    res = find_lambda_star(base_params, settings=fast_settings, problem=problem)
    assert res.lambda_star > 0
    assert res.F_star == pytest.approx(res.lambda_star * base_params.s0, rel=1e-6)
    assert abs(res.risk_premium) < 1e-4 * base_params.s0
    assert res.expected_spot_T == pytest.approx(base_params.s0, rel=1e-9)
    f_p, f_c = problem.indifference(0.5 * res.lambda_star)
    assert trading_feasible(base_params, 0.5 * res.lambda_star, settings=fast_settings) == (
        f_p <= f_c
    )


def test_indifference_identity_at_agreement(asymmetric):
    """Test both payoffs at (lambda*, F*) equal the no-contract payoffs."""
    _, problem, res = asymmetric
    assert res.J_p_at_agreement == pytest.approx(problem.baseline.J_p_star, rel=1e-6)
    assert res.J_c_at_agreement == pytest.approx(problem.baseline.J_c_star, rel=1e-6)
    at_star = problem.report(res.lambda_star, res.F_star)
    assert at_star.J_p_star == pytest.approx(problem.baseline.J_p_star, rel=1e-6)
    assert at_star.J_c_star == pytest.approx(problem.baseline.J_c_star, rel=1e-6)


def test_reduced_agreement_equation(asymmetric):
    """Test the reduced scalar identity holds at lambda* and not elsewhere."""
    _, problem, res = asymmetric
    at_zero, at_star = agreement_identity(problem, res.lambda_star)
    assert at_star == pytest.approx(at_zero, rel=1e-6)
    # g is the difference of the two sides
    at_zero, at_half = agreement_identity(problem, 0.5 * res.lambda_star)
    assert at_half - at_zero == pytest.approx(
        problem.gap(0.5 * res.lambda_star), rel=1e-8, abs=1e-8
    )


def test_premium_row(asymmetric):
    """Test the premium report row."""
    p, _, res = asymmetric
    row = risk_premium_report(res, p)
    assert row.eta_p == 0.05
    assert row.premium == pytest.approx(res.unit_price - res.expected_spot_T)
    assert set(row.as_row()) >= {"lambda_star", "F_star", "unit_price", "premium"}
    assert res.as_row()["bracket_lo"] == 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("ell", [5.0, 0.7])
@pytest.mark.parametrize(
    ("eta_p", "eta_c", "sign"),
    [(0.05, 0.01, 1), (0.01, 0.05, -1), (0.01, 0.01, 0)],
)
def test_premium_sign_follows_relative_risk_aversion(
    base_params, fast_settings, ell, eta_p, eta_c, sign
):
    """Test the more risk-averse side obtains the premium."""
    p = base_params.replace(eta_p=eta_p, eta_c=eta_c, l_p=ell, l_c=ell)
    res = find_lambda_star(p, settings=fast_settings)
    if sign == 0:
        assert abs(res.risk_premium) < 1e-4 * p.s0
    else:
        assert np.sign(res.risk_premium) == sign
        assert abs(res.risk_premium) >= 1e-4 * p.s0


def test_no_sign_change(base_params, fast_settings, problem):
    """Test a bracket below the root raises NoSignChange."""
    res = find_lambda_star(base_params, settings=fast_settings, problem=problem)
    with pytest.raises(NoSignChange) as info:
        find_lambda_star(
            base_params,
            Bracket(1e-3, 0.25 * res.lambda_star),
            settings=fast_settings,
            problem=problem,
        )
    assert info.value.g_lo * info.value.g_hi > 0


def test_baseline_failure_is_tagged(base_params, fast_settings):
    """Test solver errors from the baseline carry lambda = 0."""
    settings = fast_settings.with_overrides(blow_up_threshold=1e-6)
    with pytest.raises(BlowUp) as info:
        AgreementProblem.from_settings(base_params, settings)
    assert info.value.lam == 0.0


@pytest.mark.slow
def test_cheaper_producer_volatility_raises_agreement(base_params, fast_settings):
    """Test lowering l_p raises both the agreed volume and the agreed price.

    The consumer is frozen at eta_c = 0.01, l_c = 5 and the producer keeps
    eta_p = 0.01, so l_p = 5 is the symmetric, premium-free point.
    """
    results = [
        find_lambda_star(base_params.replace(l_p=ell), settings=fast_settings)
        for ell in (5.0, 2.0, 0.7)
    ]
    lams = [res.lambda_star for res in results]
    prices = [res.F_star for res in results]
    assert lams == sorted(lams)
    assert prices == sorted(prices)
    assert abs(results[0].risk_premium) < 1e-4 * base_params.s0
    assert results[-1].risk_premium > results[0].risk_premium
