import math

import numpy as np
import pytest

from qhedge.model import (
    DriverKind,
    DriverSpec,
    MarketModel,
    Payoff,
    SchemeParams,
    check_assumptions,
    check_cfl,
    driver_lipschitz,
    driver_lipschitz_components,
    eval_driver,
)

MU, SIGMA, T = 0.01875, 0.25, 1.0


def linear():
    return MarketModel.linear(MU, SIGMA, T)


def borrow():
    return MarketModel.borrow_spread(MU, SIGMA, T, R=0.05)


def test_model_validation():
    with pytest.raises(ValueError):
        MarketModel.linear(MU, -0.1, T)
    with pytest.raises(ValueError):
        MarketModel.linear(MU, SIGMA, 0.0)
    with pytest.raises(ValueError):
        MarketModel(MU, SIGMA, T, DriverSpec(DriverKind.LINEAR, 0.5, SIGMA))


def test_driver_linear_vanishes_at_zero_z():
    spec = linear().driver
    for t, x, y in [(0.0, 3.0, -1.0), (0.5, 0.0, 2.0), (1.0, -2.0, 0.0)]:
        assert eval_driver(spec, t, x, y, 0.0) == 0.0


def test_driver_borrow_spread_values():
    spec = borrow().driver
    # y = -1, z = 0: only the spread term fires, (-1)^- = 1
    assert eval_driver(spec, 0.0, 0.0, -1.0, 0.0) == pytest.approx(0.05)
    # y = 1, z = 0.25: short part is zero, pure advection term
    assert eval_driver(spec, 0.0, 0.0, 1.0, 0.25) == pytest.approx(-0.01875)


def test_driver_two_rates_matches_formula():
    spec = MarketModel.two_rates(MU, SIGMA, T, r=0.01, R=0.05).driver
    y, z = 0.3, -0.2
    expected = -0.01 * y - z * MU / SIGMA + 0.04 * max(z / SIGMA - y, 0.0)
    assert eval_driver(spec, 0.0, 0.0, y, z) == pytest.approx(expected, rel=1e-14)


def test_driver_accepts_arrays():
    spec = borrow().driver
    y = np.array([[-1.0, 1.0]])
    z = np.array([[0.0, 0.25]])
    out = eval_driver(spec, 0.0, 0.0, y, z)
    assert out.shape == (1, 2)
    assert out[0, 0] == pytest.approx(0.05)
    assert out[0, 1] == pytest.approx(-0.01875)


def test_working_lipschitz_constants():
    assert driver_lipschitz(linear().driver) == pytest.approx(0.01875)
    assert driver_lipschitz(borrow().driver) == pytest.approx(0.06875)
    two = MarketModel.two_rates(MU, SIGMA, T, r=0.05, R=0.05).driver
    assert driver_lipschitz(two) == pytest.approx(driver_lipschitz(borrow().driver))


def test_exact_lipschitz_bound_per_kind():
    rng = np.random.default_rng(5)
    specs = [
        linear().driver,
        borrow().driver,
        MarketModel.two_rates(MU, SIGMA, T, r=0.01, R=0.05).driver,
    ]
    for spec in specs:
        cy, cz = driver_lipschitz_components(spec)
        for _ in range(200):
            y1, y2 = rng.uniform(-3, 3, 2)
            z1, z2 = rng.uniform(-3, 3, 2)
            gap = abs(
                float(eval_driver(spec, 0.0, 0.0, y1, z1))
                - float(eval_driver(spec, 0.0, 0.0, y2, z2))
            )
            assert gap <= cy * abs(y1 - y2) + cz * abs(z1 - z2) + 1e-12


def test_driver_zero_at_origin_every_kind():
    specs = [
        linear().driver,
        borrow().driver,
        MarketModel.two_rates(MU, SIGMA, T, r=0.01, R=0.05).driver,
    ]
    for spec in specs:
        for t in np.linspace(0, T, 5):
            for x in np.linspace(-1, 4, 5):
                assert eval_driver(spec, t, x, 0.0, 0.0) == 0.0


def test_driver_monotone_in_y_when_valid():
    rng = np.random.default_rng(11)
    specs = [
        borrow().driver,
        MarketModel.two_rates(MU, SIGMA, T, r=0.01, R=0.05).driver,
    ]
    for spec in specs:
        for _ in range(100):
            y1 = rng.uniform(-2, 2)
            y2 = y1 + rng.uniform(0, 1)
            z = rng.uniform(-2, 2)
            assert float(eval_driver(spec, 0.0, 0.0, y1, z)) >= float(
                eval_driver(spec, 0.0, 0.0, y2, z)
            ) - 1e-14


def test_payoff_put():
    put = Payoff.put(30.0)
    assert put.bound == 30.0
    assert float(put(math.log(20.0))) == pytest.approx(10.0, rel=1e-12)
    assert float(put(math.log(45.0))) == 0.0


def test_payoff_custom_lipschitz_consistency():
    with pytest.raises(ValueError):
        Payoff.custom([0.0, 1.0], [0.0, 5.0], lipschitz=1.0)
    ok = Payoff.custom([0.0, 1.0, 2.0], [0.0, 1.0, 0.5], lipschitz=1.0)
    assert ok.bound == 1.0
    assert float(ok(0.5)) == pytest.approx(0.5)
    # constant continuation outside the table
    assert float(ok(5.0)) == pytest.approx(0.5)


def test_check_assumptions_linear_put_passes():
    report = check_assumptions(linear(), Payoff.put(30.0))
    assert report.ok
    assert report.upwind == "forward"


def test_check_assumptions_negative_drift_backward_upwind():
    model = MarketModel.linear(-0.01, SIGMA, T)
    report = check_assumptions(model, Payoff.put(30.0))
    assert report.ok
    assert report.upwind == "backward"


def test_check_assumptions_flags_bad_two_rates():
    # R < r with a negative lending rate makes f increasing in y
    model = MarketModel.two_rates(MU, SIGMA, T, r=-0.05, R=-0.1)
    report = check_assumptions(model, Payoff.put(30.0))
    names = [c.name for c in report.failures()]
    assert "driver_monotone_in_y" in names
    failing = report.failures()[0]
    assert failing.sample is not None
    with pytest.raises(ValueError):
        model.driver.validate()


def test_scheme_params_invariants():
    with pytest.raises(ValueError):
        SchemeParams(theta=0.3)
    with pytest.raises(ValueError):
        SchemeParams(theta=0.0)
    with pytest.raises(ValueError):
        SchemeParams(picard_tol=0.0)
    with pytest.raises(ValueError):
        SchemeParams(M=0.0)


def test_check_cfl_benchmark_pair_ok():
    params = SchemeParams(theta=0.2, M=1.0, lipschitz_L=0.06875)
    report = check_cfl(0.05, 0.05, params, borrow())
    assert report.ok


def test_check_cfl_violating_pair_flags_ratio_condition():
    params = SchemeParams(theta=0.2, M=1.0, lipschitz_L=0.06875)
    report = check_cfl(0.1, 0.005, params, borrow())
    assert not report.ok
    assert len(report.violations) == 1
    assert "theta" in report.violations[0]


def test_check_cfl_rejects_wide_spacing():
    params = SchemeParams(theta=0.2, M=50.0, lipschitz_L=0.06875)
    report = check_cfl(1.0, 2.0, params, borrow())
    assert any("exceeds 1" in v for v in report.violations)


def test_check_cfl_monotone_in_h():
    # shrinking h with |mu|*h <= delta keeps the ratio condition satisfied
    rng = np.random.default_rng(3)
    params = SchemeParams(theta=0.2, M=1.0, lipschitz_L=0.06875)
    model = borrow()
    for _ in range(50):
        delta = rng.uniform(0.005, 0.5)
        h = rng.uniform(0.001, delta / max(MU, 1e-9))
        if not check_cfl(h, delta, params, model).ok:
            continue
        h2 = h * rng.uniform(0.1, 1.0)
        if abs(MU) * h2 > delta:
            continue
        report = check_cfl(h2, delta, params, model)
        assert not any("theta" in v for v in report.violations)
        assert not any("|mu|" in v for v in report.violations)
