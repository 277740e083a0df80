"""Battery model unit tests.

Expected values for the lossy step were computed by hand from the update rule
e' = e + (eta_c*[p]+ - [-p]+/eta_d)*dt and frozen as literals.
"""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcrbess.model import (
    BatteryConfig,
    PriceSet,
    TimeGrid,
    battery_step,
    config_from_dict,
    config_to_dict,
    efficiency_fold,
    simulate_trajectory,
)

SQRT90 = math.sqrt(0.90)


def case_battery(**kw):
    base = dict(e_min=0.0, e_max=10.0, p_min=-7.0, p_max=7.0,
                eta_c=SQRT90, eta_d=SQRT90, e_0=5.0)
    base.update(kw)
    return BatteryConfig(**base)


class TestBatteryStep:
    def test_charge_quarter_hour(self):
        # 5 kWh + sqrt(0.90) * 2 kW * 0.25 h
        e = battery_step(5.0, 2.0, case_battery(), 0.25)
        assert e == pytest.approx(5.4743416490252566, abs=1e-12)

    def test_discharge_quarter_hour(self):
        # 5 kWh - (2 kW / sqrt(0.90)) * 0.25 h
        e = battery_step(5.0, -2.0, case_battery(), 0.25)
        assert e == pytest.approx(4.47295372330527, abs=1e-12)

    def test_zero_power_is_identity(self):
        assert battery_step(5.0, 0.0, case_battery(), 0.25) == 5.0

    def test_no_clamping_beyond_bounds(self):
        # the pure step must not clip, even far outside the physical window
        cfg = case_battery()
        assert battery_step(10.0, 7.0, cfg, 4.0) > cfg.e_max
        assert battery_step(0.0, -7.0, cfg, 4.0) < cfg.e_min

    def test_vectorized_over_powers(self):
        cfg = case_battery()
        p = np.array([2.0, -2.0, 0.0])
        e = battery_step(5.0, p, cfg, 0.25)
        assert np.allclose(e, [5.4743416490252566, 4.47295372330527, 5.0])

    @given(p=st.floats(0.001, 7.0), dt=st.floats(0.01, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_loses_energy(self, p, dt):
        cfg = case_battery()
        e1 = battery_step(5.0, p, cfg, dt)
        e2 = battery_step(e1, -p, cfg, dt)
        assert e2 < 5.0

    @given(p1=st.floats(-7.0, 7.0), p2=st.floats(-7.0, 7.0))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_power(self, p1, p2):
        cfg = case_battery()
        lo, hi = sorted([p1, p2])
        assert battery_step(5.0, lo, cfg, 0.25) <= battery_step(5.0, hi, cfg, 0.25)


class TestEfficiencyFold:
    def test_positive_branch(self):
        assert efficiency_fold(1.0, SQRT90, SQRT90) == pytest.approx(0.9486832980505138)

    def test_negative_branch(self):
        assert efficiency_fold(-0.5, SQRT90, SQRT90) == pytest.approx(-0.5270462766947299)

    def test_unit_efficiency_is_identity(self):
        x = np.linspace(-1, 1, 11)
        assert np.array_equal(efficiency_fold(x, 1.0, 1.0), x)


class TestSimulateTrajectory:
    def test_lengths_and_start(self):
        grid = TimeGrid(n_t=8, dt=0.25)
        tr = simulate_trajectory(np.zeros(8), case_battery(), grid)
        assert tr.energy.shape == (9,)
        assert tr.energy[0] == 5.0
        assert tr.feasible

    def test_flags_energy_violation_without_clamping(self):
        grid = TimeGrid(n_t=4, dt=1.0)
        cfg = case_battery()
        tr = simulate_trajectory(np.full(4, 7.0), cfg, grid)
        assert tr.energy_violation.any()
        assert not tr.power_violation.any()
        assert tr.energy[-1] > cfg.e_max  # kept raw

    def test_flags_power_violation(self):
        grid = TimeGrid(n_t=2, dt=0.25)
        tr = simulate_trajectory(np.array([8.0, 0.0]), case_battery(), grid)
        assert list(tr.power_violation) == [True, False]

    def test_matches_scalar_steps(self):
        grid = TimeGrid(n_t=5, dt=0.25)
        cfg = case_battery()
        rng = np.random.default_rng(3)
        p = rng.uniform(-7, 7, 5)
        tr = simulate_trajectory(p, cfg, grid)
        e = cfg.e_0
        for k in range(5):
            e = battery_step(e, p[k], cfg, grid.dt)
            assert tr.energy[k + 1] == pytest.approx(e, abs=1e-12)

    def test_wrong_length_raises(self):
        with pytest.raises(ValueError):
            simulate_trajectory(np.zeros(3), case_battery(), TimeGrid(n_t=4, dt=0.25))


class TestConfigs:
    def test_case_battery_c_rate(self):
        assert case_battery().c_rate == pytest.approx(0.7)

    def test_grid_horizon(self):
        assert TimeGrid(n_t=96, dt=0.25).horizon_h == pytest.approx(24.0)

    @pytest.mark.parametrize("bad", [
        dict(e_0=11.0), dict(e_min=10.0, e_max=10.0), dict(p_min=1.0),
        dict(p_max=-1.0), dict(eta_c=0.0), dict(eta_d=1.5),
    ])
    def test_battery_validation(self, bad):
        with pytest.raises(ValueError):
            case_battery(**bad)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(n_t=0, dt=0.25)
        with pytest.raises(ValueError):
            TimeGrid(n_t=4, dt=-1.0)

    def test_price_validation(self):
        with pytest.raises(ValueError):
            PriceSet(c_cons=10.0, c_inj=10.0, c_r=14.71)
        with pytest.raises(ValueError):
            PriceSet(c_cons=10.0, c_inj=-1.0, c_r=14.71)

    def test_price_unit_conversion(self):
        p = PriceSet(c_cons=28.73, c_inj=12.20, c_r=14.71)
        assert p.c_cons_eur == pytest.approx(0.2873)
        assert p.c_inj_eur == pytest.approx(0.1220)

    @given(e0=st.floats(0.0, 10.0), eta=st.floats(0.5, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_json_round_trip_exact(self, e0, eta):
        cfg = case_battery(e_0=e0, eta_c=eta)
        blob = json.dumps(config_to_dict(cfg))
        back = config_from_dict(json.loads(blob))
        assert back == cfg  # bit-exact float round trip

    def test_round_trip_all_kinds(self):
        for cfg in (case_battery(), TimeGrid(96, 0.25), PriceSet(28.73, 12.20, 14.71)):
            assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_unknown_field_rejected(self):
        d = config_to_dict(TimeGrid(4, 0.5))
        d["bogus"] = 1
        with pytest.raises(ValueError):
            config_from_dict(d)
