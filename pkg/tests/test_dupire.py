import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from djl.errors import BoundaryPoint, DegenerateDensity, SingularDensity
from djl.models import JumpToRuinParams, ModelSpec
from djl.pricing import SurfaceGrid, build_surface
from djl.dupire import (
    LocalVolSurface,
    TimeChange,
    fokker_planck_refinement,
    fokker_planck_residual,
    local_vol_fd,
    local_vol_fd_surface,
    local_vol_fourier,
    ruin_local_vol,
    shifted_local_vol,
)

from conftest import BS, KOU, MERTON, RUIN, VG

# grid on which the three-point stencils are accurate to a few 1e-5 for BS
FLAT_K = np.round(np.arange(0.7, 1.4 + 1e-9, 0.0025), 10)
FLAT_T = np.round(np.arange(0.25, 1.0 + 1e-9, 0.005), 10)


@pytest.fixture(scope="module")
def bs_surface():
    return build_surface(BS, FLAT_K, FLAT_T)


class TestFiniteDifference:
    def test_bs_flat(self, bs_surface):
        lv = local_vol_fd_surface(bs_surface)
        assert lv.valid.all()
        assert np.max(np.abs(lv.local_variance - 0.04)) < 1e-4

    def test_single_point(self, bs_surface):
        assert local_vol_fd(bs_surface, 1.0, 0.5) == pytest.approx(0.04, abs=1e-4)

    def test_merton_matches_fourier(self):
        K = 1.2 + 0.01 * np.arange(-3, 4)
        T = 0.5 + 0.02 * np.arange(-3, 4)
        s = build_surface(MERTON, K, T)
        fd = local_vol_fd(s, 1.2, 0.5)
        assert fd == pytest.approx(local_vol_fourier(MERTON, 1.2, 0.5), rel=1e-3)

    def test_second_order_against_fourier(self):
        K0, T0 = 1.1, 0.5
        ref = local_vol_fourier(MERTON, K0, T0)
        errs = []
        for hK, hT in [(0.04, 0.1), (0.02, 0.05), (0.01, 0.025)]:
            s = build_surface(MERTON, K0 + hK * np.arange(-1, 2), T0 + hT * np.arange(-1, 2))
            errs.append(abs(local_vol_fd(s, K0, T0) - ref))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 1.8)

    def test_non_uniform_grid(self):
        K = np.geomspace(0.8, 1.25, 41)
        T = np.geomspace(0.4, 0.6, 21)
        s = build_surface(BS, K, T)
        lv = local_vol_fd_surface(s)
        assert np.max(np.abs(lv.local_variance - 0.04)) < 1e-3

    def test_degenerate_wing(self):
        K = np.array([3.9, 4.0, 4.1])
        s = build_surface(BS, K, [0.05, 0.1, 0.15])
        with pytest.raises(DegenerateDensity):
            local_vol_fd(s, 4.0, 0.1)

    def test_boundary(self, bs_surface):
        with pytest.raises(BoundaryPoint):
            local_vol_fd(bs_surface, 0.7, 0.5)
        with pytest.raises(BoundaryPoint):
            local_vol_fd(bs_surface, 1.0, 1.0)
        with pytest.raises(BoundaryPoint):
            local_vol_fd(bs_surface, 1.00111, 0.5)

    def test_excluded_points_flagged(self):
        K = np.array([1.0, 1.1, 1.2, 3.9, 4.0, 4.1])
        s = build_surface(BS, K, [0.05, 0.1, 0.15])
        lv = local_vol_fd_surface(s)
        assert lv.valid[0, 0] and not lv.valid[-1, 0]
        assert np.isnan(lv.local_variance[-1, 0])


class TestFourier:
    def test_bs(self):
        K = np.array([0.5, 0.8, 1.0, 1.3, 2.0])
        for T in (0.05, 0.5, 2.0):
            np.testing.assert_allclose(local_vol_fourier(BS, K, T), 0.04, atol=1e-8)

    def test_ruin_closed_form(self):
        v = local_vol_fourier(RUIN, 1.25, 0.25)
        assert v == pytest.approx(ruin_local_vol(RUIN.params, 1.25, 0.25), rel=1e-6)

    def test_ruin_grid(self):
        K = np.linspace(0.9, 1.6, 8)
        for T in (0.25, 1.0):
            np.testing.assert_allclose(local_vol_fourier(RUIN, K, T), ruin_local_vol(RUIN.params, K, T), rtol=1e-6)

    @pytest.mark.parametrize("model", [MERTON, KOU], ids=["merton", "kou"])
    def test_atm_limit(self, model):
        Ts = [0.1, 0.05, 0.025, 0.0125]
        gap = np.array([abs(local_vol_fourier(model, 1.0, T) - 0.04) for T in Ts])
        assert np.all(np.diff(gap) < 0)
        assert gap[-1] < 0.15 * 0.04

    def test_vg_gate(self):
        with pytest.raises(SingularDensity):
            local_vol_fourier(VG, 1.0, 0.2)

    def test_positive_on_surface(self):
        K = np.linspace(0.6, 1.8, 13)
        for T in (0.1, 0.5, 1.0):
            for model in (MERTON, KOU):
                assert np.all(local_vol_fourier(model, K, T) > 0)


class TestRuinClosedForm:
    def test_no_default(self):
        p = JumpToRuinParams(0.2, 0.0)
        K, T = np.meshgrid(np.linspace(0.5, 2, 7), np.linspace(0.1, 2, 5))
        np.testing.assert_array_equal(ruin_local_vol(p, K, T), 0.2**2)

    def test_otm_decreases_to_sigma2(self):
        v = ruin_local_vol(RUIN.params, 1.25, np.array([0.2, 0.1, 0.05, 0.025]))
        assert np.all(np.diff(v) < 0)
        assert abs(v[-1] - 0.04) < 0.002

    def test_itm_exponential_blowup(self):
        T = np.array([0.1, 0.05, 0.025, 0.0125])
        excess = ruin_local_vol(RUIN.params, 0.8, T) - 0.04
        slopes = np.diff(np.log(excess)) / np.diff(1.0 / T)
        assert np.all(slopes > 0)
        # stabilizing: successive slopes move less and less
        assert abs(slopes[2] - slopes[1]) < abs(slopes[1] - slopes[0])

    def test_as_printed_variant_differs(self):
        a = ruin_local_vol(RUIN.params, 1.25, 0.25)
        b = ruin_local_vol(RUIN.params, 1.25, 0.25, as_printed=True)
        assert a == pytest.approx(0.0415506, abs=1e-7)
        assert abs(a - b) > 1e-5

    @settings(max_examples=100, deadline=None)
    @given(
        K1=st.floats(0.3, 3.0),
        K2=st.floats(0.3, 3.0),
        T=st.floats(0.01, 3.0),
        lam=st.floats(1e-3, 0.5),
    )
    def test_monotone_and_above_sigma2(self, K1, K2, T, lam):
        p = JumpToRuinParams(0.2, lam)
        lo, hi = sorted((K1, K2))
        v_lo, v_hi = ruin_local_vol(p, lo, T), ruin_local_vol(p, hi, T)
        assert v_hi > 0.04 and v_lo > 0.04
        if hi - lo > 1e-9:
            assert v_hi <= v_lo


class TestTimeChange:
    def test_shift(self):
        tc = TimeChange.shift(0.05)
        assert float(tc.tau(0.0)) == 0.05
        assert float(tc.dtau(1.3)) == 1.0

    def test_affine_parse(self):
        tc = TimeChange.parse("affine:0.05,2", 0.05)
        assert float(tc.tau(1.0)) == pytest.approx(2.05)
        assert float(tc.dtau(0.3)) == 2.0
        with pytest.raises(ValueError):
            TimeChange.parse("affine:0.1,2", 0.05)
        with pytest.raises(ValueError):
            TimeChange.parse("cubic", 0.05)
        with pytest.raises(ValueError):
            TimeChange.affine(0.05, 0.0)


class TestShifted:
    def test_bs_flat(self):
        f = shifted_local_vol(BS, 0.1)
        np.testing.assert_array_equal(f(np.array([0.5, 1.0, 2.0]), 0.0), 0.2**2)
        np.testing.assert_array_equal(f.slice(0.7)(np.array([0.9, 1.1])), 0.2**2)

    def test_merton_at_zero(self):
        f = shifted_local_vol(MERTON, 0.05)
        K = np.array([0.9, 1.0, 1.2])
        np.testing.assert_allclose(f(K, 0.0), local_vol_fourier(MERTON, K, 0.05), rtol=1e-9, atol=0)

    @settings(max_examples=15, deadline=None)
    @given(T=st.floats(0.0, 1.0), eps=st.floats(0.02, 0.3), K=st.floats(0.6, 1.6))
    def test_shift_consistency(self, T, eps, K):
        f = shifted_local_vol(MERTON, eps)
        assert abs(f(K, T) - local_vol_fourier(MERTON, K, T + eps)) <= 1e-12 * abs(f(K, T))

    def test_affine_doubles(self):
        base = shifted_local_vol(MERTON, 0.05)
        aff = shifted_local_vol(MERTON, 0.05, TimeChange.affine(0.05, 2.0))
        K = np.array([0.9, 1.0, 1.2])
        np.testing.assert_allclose(aff(K, 0.0), 2.0 * base(K, 0.0), rtol=1e-12)
        np.testing.assert_allclose(aff(K, 0.2), 2.0 * local_vol_fourier(MERTON, K, 0.45), rtol=1e-12)

    def test_slice_matches_direct(self):
        f = shifted_local_vol(MERTON, 0.05)
        S = np.linspace(0.7, 1.4, 29)
        np.testing.assert_allclose(f.slice(0.3)(S), f(S, 0.3), rtol=1e-3)
        assert f.slice(0.3) is f.slice(0.3)

    def test_slice_outside_table_exact(self):
        f = shifted_local_vol(MERTON, 0.05)
        S = np.array([1e-3, 50.0])
        np.testing.assert_allclose(f.slice(0.1)(S), f(S, 0.1), rtol=1e-12)

    def test_ruin_closed_form_field(self):
        f = shifted_local_vol(RUIN, 0.1)
        assert f.provenance == "closed-form-ruin"
        assert f(0.8, 0.2) == pytest.approx(ruin_local_vol(RUIN.params, 0.8, 0.3), rel=1e-15)

    def test_vg_below_gate_rejected(self):
        with pytest.raises(SingularDensity):
            shifted_local_vol(VG, 0.1)

    def test_surface_materialized(self):
        lv = shifted_local_vol(MERTON, 0.05).surface([0.9, 1.0, 1.1], [0.0, 0.25, 0.5])
        assert isinstance(lv, LocalVolSurface)
        assert lv.eps == 0.05 and lv.time_change == "shift" and lv.provenance == "fourier"
        assert np.all(lv.local_variance > 0)

    def test_surface_source(self, bs_surface):
        f = shifted_local_vol(bs_surface, 0.1)
        assert f(1.0, 0.3) == pytest.approx(0.04, abs=1e-4)
        with pytest.raises(BoundaryPoint):
            f(1.0, 2.0)
        with pytest.raises(BoundaryPoint):
            f(2.0, 0.3)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            shifted_local_vol(BS, 0.1)(1.0, -0.1)


class TestFokkerPlanck:
    @pytest.mark.parametrize("model", [BS, MERTON], ids=["bs", "merton"])
    def test_second_order(self, model):
        _, _, ratio = fokker_planck_refinement(model, 0.05, (0.6, 1.6), (0.1, 1.0), 101, 21)
        assert 3.0 <= ratio <= 5.0

    @pytest.mark.xfail(strict=True, reason="stencil truncation error on 101x21 is about 0.2, not 1e-3")
    def test_bs_absolute_bound(self):
        r = fokker_planck_residual(BS, 0.1, np.linspace(0.6, 1.6, 101), np.linspace(0.1, 1.0, 21))
        assert r.max_residual < 1e-3
