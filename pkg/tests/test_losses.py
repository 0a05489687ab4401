import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinytarget import losses
from tinytarget.errors import BranchPointError, DomainError
from tinytarget.losses import (
    EPS,
    LossConfig,
    SmoothingState,
    adaptive_eta,
    adaptive_gamma,
    atfl,
    atfl_grad,
    bce,
    focal,
    focal_grad,
    loss_curve,
    tfl,
    tfl_grad,
    update_smoothing,
)

prob = st.floats(1e-6, 1 - 1e-6)
CFG = LossConfig()


def central_diff(fn, x, step=1e-6):
    return (fn(x + step) - fn(x - step)) / (2 * step)


class TestConfig:
    def test_defaults(self):
        assert CFG.lam == 3.5 and CFG.threshold == 0.5

    @pytest.mark.parametrize("lam,thr", [(1.0, 0.5), (0.5, 0.5), (3.5, 0.0), (3.5, 1.0)])
    def test_invalid(self, lam, thr):
        with pytest.raises(DomainError):
            LossConfig(lam, thr)


class TestBce:
    def test_half(self):
        assert bce(0.5, 1) == pytest.approx(math.log(2), abs=1e-15)

    def test_confident_correct(self):
        assert bce(1.0, 1) == 0.0

    def test_label_symmetry_at_extremes(self):
        assert bce(0.0, 0) == bce(1.0, 1) == 0.0
        assert bce(1.0, 0) == bce(0.0, 1) == pytest.approx(-math.log(EPS), rel=1e-12)

    def test_negative_label(self):
        assert bce(0.9, 0) == pytest.approx(-math.log(0.1), rel=1e-12)

    def test_vectorised(self):
        out = bce(np.array([0.5, 0.9]), np.array([1, 0]))
        np.testing.assert_allclose(out, [math.log(2), -math.log(0.1)], rtol=1e-12)

    @pytest.mark.parametrize("p", [-0.1, 1.1, math.nan])
    def test_out_of_range(self, p):
        with pytest.raises(DomainError):
            bce(p, 1)

    def test_bad_label(self):
        with pytest.raises(DomainError):
            bce(0.5, 2)


class TestFocal:
    def test_gamma_zero_is_bce(self):
        assert focal(0.5, 0) == pytest.approx(math.log(2), abs=1e-15)

    def test_gamma_two(self):
        assert focal(0.9, 2) == pytest.approx(0.01 * -math.log(0.9), rel=1e-12)
        assert focal(0.9, 2) == pytest.approx(1.0536e-3, rel=1e-4)

    def test_certain(self):
        assert focal(1.0, 3.0) == 0.0

    def test_negative_gamma(self):
        with pytest.raises(DomainError):
            focal(0.5, -1)

    @given(prob)
    def test_gamma_zero_identity_exact(self, p):
        assert focal(p, 0.0) == bce(p, 1)

    @given(prob, st.floats(0.01, 10))
    def test_below_bce(self, p, g):
        assert focal(p, g) < bce(p, 1)

    def test_grad_vs_fd(self):
        for p in np.linspace(0.02, 0.98, 40):
            for g in (0.0, 0.5, 2.0, 5.0):
                fd = central_diff(lambda x: focal(x, g), p)
                assert focal_grad(p, g) == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestTfl:
    def test_hard_branch(self):
        expected = 3.25 * -math.log(0.25)
        assert tfl(0.25, 1, 2, CFG) == pytest.approx(expected, rel=1e-12)
        assert tfl(0.25, 1, 2, CFG) == pytest.approx(4.5055, rel=1e-4)

    def test_easy_branch_is_focal(self):
        assert tfl(0.9, 1, 2, CFG) == focal(0.9, 2)

    def test_certain(self):
        assert tfl(1.0, 1, 2, CFG) == 0.0

    def test_threshold_goes_hard(self):
        assert tfl(0.5, 1, 2, CFG) == pytest.approx(3.0 * math.log(2), rel=1e-12)

    def test_grad_vs_fd(self):
        for p in np.concatenate([np.linspace(0.03, 0.49, 20), np.linspace(0.51, 0.97, 20)]):
            fd = central_diff(lambda x: tfl(x, 1.5, 2.0, CFG), p)
            assert tfl_grad(p, 1.5, 2.0, CFG) == pytest.approx(fd, rel=1e-5)


class TestAdaptiveExponents:
    def test_gamma(self):
        assert adaptive_gamma(1 / math.e) == pytest.approx(1.0, abs=1e-15)
        assert adaptive_gamma(0.5) == pytest.approx(math.log(2), abs=1e-15)
        assert adaptive_gamma(1.0) == 0.0

    def test_eta(self):
        assert adaptive_eta(1 / math.e) == pytest.approx(1.0, abs=1e-15)
        assert adaptive_eta(0.5) == pytest.approx(math.log(2), abs=1e-15)
        assert adaptive_eta(1.0) == 0.0

    @given(prob, prob)
    def test_positive_and_decreasing(self, a, b):
        assert adaptive_gamma(a) > 0
        if a < b:
            assert adaptive_gamma(a) > adaptive_gamma(b)


class TestAtfl:
    def test_hard_at_threshold(self):
        expected = 3.0 ** math.log(2) * math.log(2)
        assert atfl(0.5, 0.5, CFG) == pytest.approx(expected, rel=1e-12)
        assert atfl(0.5, 0.5, CFG) == pytest.approx(1.48437, rel=1e-5)

    def test_easy(self):
        expected = 0.1 ** math.log(2) * -math.log(0.9)
        assert atfl(0.9, 0.5, CFG) == pytest.approx(expected, rel=1e-12)
        assert atfl(0.9, 0.5, CFG) == pytest.approx(0.0213565, rel=1e-5)

    def test_certain(self):
        assert atfl(1.0, 0.5, CFG) == 0.0

    @given(prob, prob)
    def test_equals_tfl_with_adaptive_exponents(self, p, c):
        assert atfl(p, c, CFG) == tfl(p, adaptive_eta(p), adaptive_gamma(c), CFG)

    @given(st.floats(1e-6, 0.5), st.floats(0, 20))
    def test_hard_sample_amplification(self, p, g):
        assert atfl(p, 0.5, CFG) > focal(p, g)

    def test_discontinuous_at_threshold(self):
        left = atfl(0.5, 0.5, CFG)
        right = atfl(np.nextafter(0.5, 1.0), 0.5, CFG)
        assert left - right > 1.0

    def test_grad_reduces_to_bce_when_forecast_certain(self):
        for p in (0.6, 0.75, 0.9):
            assert atfl_grad(p, 1.0, CFG) == pytest.approx(-1 / p, rel=1e-6)

    @pytest.mark.parametrize("p,c", [(0.9, 0.5), (0.25, 0.5), (0.1, 0.3), (0.7, 0.05)])
    def test_grad_examples(self, p, c):
        fd = central_diff(lambda x: atfl(x, c, CFG), p)
        assert abs(atfl_grad(p, c, CFG) - fd) / max(1.0, abs(fd)) <= 1e-5

    def test_grad_branch_point(self):
        with pytest.raises(BranchPointError):
            atfl_grad(0.5, 0.5, CFG)
        with pytest.raises(BranchPointError):
            atfl_grad(np.array([0.2, 0.5 + 1e-10]), 0.5, CFG)

    def test_onesided_grad_uses_hard_branch(self):
        near = losses.atfl_grad(0.5 - 1e-6, 0.4, CFG)
        assert losses.atfl_grad_onesided(0.5, 0.4, CFG) == pytest.approx(near, rel=1e-4)


class TestSmoothing:
    def test_first_epoch(self):
        s = update_smoothing(SmoothingState(), 0.3)
        assert s.p_hat_c == 0.3 and s.epoch_means == (0.3,)

    def test_second_epoch(self):
        s = update_smoothing(SmoothingState((0.2,), 0.2), 0.4)
        assert s.p_hat_c == 0.39
        assert s.epoch_means == (0.2, 0.4)

    def test_third_epoch(self):
        s = update_smoothing(SmoothingState((0.2, 0.4)), 0.6)
        assert s.p_hat_c == 0.585

    def test_chain(self):
        s = SmoothingState()
        for m in (0.2, 0.4, 0.6):
            s = update_smoothing(s, m)
        assert s.p_hat_c == pytest.approx(0.585, abs=1e-15)

    @given(st.floats(1e-6, 1 - 1e-6), st.integers(2, 30))
    def test_constant_fixed_point(self, m, n):
        s = SmoothingState()
        for _ in range(n):
            s = update_smoothing(s, m)
            assert s.p_hat_c == m

    @given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=40))
    def test_bounded_by_observations(self, means):
        s = SmoothingState()
        for m in means:
            s = update_smoothing(s, m)
        assert min(means) <= s.p_hat_c <= max(means)

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, math.nan])
    def test_invalid_mean(self, bad):
        with pytest.raises(DomainError):
            update_smoothing(SmoothingState(), bad)

    def test_state_is_not_mutated(self):
        s0 = SmoothingState((0.2,), 0.2)
        update_smoothing(s0, 0.4)
        assert s0.epoch_means == (0.2,)


class TestCurves:
    def test_shape_and_endpoints(self):
        c = loss_curve("focal", {"gamma": 2}, 11)
        assert c.shape == (11, 2)
        assert c[0, 0] == EPS and c[-1, 0] == 1 - EPS
        assert c[0, 1] == focal(EPS, 2)

    def test_two_points(self):
        assert loss_curve("bce", None, 2).shape == (2, 2)

    @pytest.mark.parametrize("lid,params", [("bce", {}), ("focal", {"gamma": 0.5}), ("focal", {"gamma": 5})])
    def test_monotone(self, lid, params):
        c = loss_curve(lid, params, 200)
        assert np.all(np.diff(c[:, 1]) <= 0)

    def test_focal_below_bce(self):
        f = loss_curve("focal", {"gamma": 2}, 101)
        b = loss_curve("bce", {}, 101)
        assert np.all(f[:, 1] <= b[:, 1])

    def test_atfl_hard_side_above_focal(self):
        a = loss_curve("atfl", {"lam": 3.5, "p_hat_c": 0.5}, 101)
        f = loss_curve("focal", {"gamma": 2}, 101)
        hard = a[:, 0] < 0.5
        # pointwise oracle: evaluate both formulas directly
        p = a[hard, 0]
        direct_atfl = (3.5 - p) ** (-np.log(p)) * -np.log(p)
        direct_focal = (1 - p) ** 2 * -np.log(p)
        np.testing.assert_allclose(a[hard, 1], direct_atfl, rtol=1e-12)
        assert np.all(direct_atfl > direct_focal)
        assert np.all(a[hard, 1] > f[hard, 1])

    def test_errors(self):
        with pytest.raises(DomainError):
            loss_curve("bce", {}, 1)
        with pytest.raises(DomainError):
            loss_curve("hinge", {}, 5)

    def test_csv(self, tmp_path):
        path = tmp_path / "c.csv"
        losses.write_curve_csv(loss_curve("bce", {}, 3), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "p_t,loss"
        assert len(lines) == 4
        assert lines[2] == "0.5,0.693147"
