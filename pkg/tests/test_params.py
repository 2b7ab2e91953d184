"""Parameter validation, derivation, and config parsing tests."""

import math
from fractions import Fraction

import pytest

from planesync.errors import ConfigurationError
from planesync.params import (
    SystemParams,
    TTSchedule,
    as_fraction,
    derive,
    load_system_config,
    q1_closed_form_floor,
    resolve,
    validate,
)

SCHED = TTSchedule(vc_send=(6, 10), mc_recv=(14, 24), c_send=(30, 34), c_recv=(38, 48))


def make_params(**over):
    base = dict(
        n0=4, n1=3, f0=1, f1=1,
        tau_max=4096, T_H=Fraction(1), rho=Fraction(1, 100),
        d_max=Fraction(2), T0=100, a0=3,
    )
    base.update(over)
    return SystemParams(**base)


class TestValidate:
    def test_reference_shape_passes(self):
        assert validate(make_params(), SCHED).ok

    def test_n0_boundary(self):
        rep = validate(make_params(n0=3), SCHED)
        assert not rep.ok
        assert any("n0>3f0" in v for v in rep.violations)

    def test_n1_boundary(self):
        rep = validate(make_params(n1=2), SCHED)
        assert not rep.ok
        assert any("n1>2f1" in v for v in rep.violations)

    def test_schedule_ordering(self):
        bad = TTSchedule(vc_send=(6, 10), mc_recv=(14, 24), c_send=(30, 34), c_recv=(28, 48))
        assert not validate(make_params(), bad).ok

    def test_small_tau_max(self):
        rep = validate(make_params(tau_max=128), SCHED)
        assert any("tau_max" in v for v in rep.violations)


class TestDerive:
    def test_c0_reference(self):
        dv = derive(make_params(), SCHED)
        assert dv.c0 == (4 - 2 - 1) // 1 + 1 == 2

    def test_closed_forms_large_n0(self):
        # n0 big enough that one contraction round suffices: g0 = a0 + 1.
        p = make_params(n0=40, tau_max=8192)
        dv = derive(p, SCHED)
        assert dv.k0 == 1 and dv.g0 == 4
        assert dv.q0 == Fraction(1, 9)
        assert dv.p0 == Fraction(4, 5)
        floor = q1_closed_form_floor(dv.g0)
        assert floor == pytest.approx(1 / (90 * math.e**2), rel=1e-15)
        assert float(dv.q1_bound) >= floor
        assert dv.stb_exp_windows == 2 / dv.q1_bound + 4

    def test_k0_solves_log_inequality(self):
        dv = derive(make_params(), SCHED)
        ratio = Fraction(2 * dv.eps2 + 8 * Fraction(1, 100) * Fraction(101, 100) * dv.T, dv.eps0)
        assert dv.c0 ** dv.k0 >= ratio
        assert dv.k0 == 1 or dv.c0 ** (dv.k0 - 1) < ratio

    def test_k0_monotone_in_n0(self):
        prev = None
        for n0 in (4, 5, 7, 10, 16, 40):
            dv = derive(make_params(n0=n0, tau_max=8192), SCHED)
            if prev is not None:
                assert dv.k0 <= prev
            prev = dv.k0

    def test_pure_function(self):
        a = derive(make_params(), SCHED)
        b = derive(make_params(), SCHED)
        assert a == b

    def test_delta_offsets(self):
        dv = derive(make_params(), SCHED)
        tau = 4096
        assert dv.delta_tt0 == (34 - 38) % tau
        assert dv.delta_tt1 == (34 - 6) % tau
        assert dv.delta_tt2 == (48 - 34) % tau
        assert dv.delta_tt3 == (34 - 24) % tau

    def test_c0_at_node_count_boundary(self):
        # n0 = 3*f0 + 1 is the tightest valid count and still contracts.
        dv = derive(make_params(n0=10, f0=3, tau_max=8192), SCHED)
        assert dv.c0 == 2

    def test_invalid_params_rejected(self):
        with pytest.raises(ConfigurationError):
            derive(make_params(n0=3), SCHED)

    def test_stabilization_tail_probability(self):
        # With the closed-form floor, 10^4 failed attempts are vanishing.
        q1 = q1_closed_form_floor(4)
        assert (1 - q1) ** 10_000 < 3e-7


class TestFractions:
    def test_as_fraction_forms(self):
        assert as_fraction(0.01) == Fraction(1, 100)
        assert as_fraction("1/3") == Fraction(1, 3)
        assert as_fraction(5) == Fraction(5)
        with pytest.raises(ConfigurationError):
            as_fraction(object())


class TestConfigFile:
    CONFIG = """
system:
  n0: 4
  n1: 3
  f0: 1
  f1: 1
  tau_max: 4096
  T_H: 1
  rho: 1/100
  d_max: 2
  T0: 100
  a0: 3
schedule:
  vc_send: [6, 10]
  mc_recv: [14, 24]
  c_send: [30, 34]
  c_recv: [38, 48]
"""

    def test_load_and_resolve(self, tmp_path):
        path = tmp_path / "scenario.yaml"
        path.write_text(self.CONFIG)
        params, sched, doc = load_system_config(str(path))
        rp = resolve(params, sched)
        assert rp.T == rp.sys.T0 + rp.eps2

    def test_env_override(self, tmp_path, monkeypatch):
        path = tmp_path / "scenario.yaml"
        path.write_text(self.CONFIG)
        monkeypatch.setenv("PLANESYNC_CONFIG", str(path))
        params, _, _ = load_system_config()
        assert params.n0 == 4

    def test_strict_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "scenario.yaml"
        path.write_text(self.CONFIG.replace("a0: 3", "a0: 3\n  bogus: 1"))
        with pytest.raises(ConfigurationError):
            load_system_config(str(path), strict=True)
        params, _, _ = load_system_config(str(path), strict=False)
        assert params.a0 == 3
