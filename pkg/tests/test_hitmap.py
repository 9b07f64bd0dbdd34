"""hit-map module: influence kernel, inverse sensor model, Bayes filter."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plumesearch.errors import PlumesearchError
from plumesearch.grid import build_partition
from plumesearch.hitmap import (
    LOG_ODDS_LIMIT,
    HitMap,
    KernelParams,
    Measurement,
    conditional_hit,
    expit,
    influence,
    kernel_covariance,
    logit,
    validate_belief_params,
)

from oracles import bayes_posterior_odds
from test_grid import make_grid

FREE7 = ["." * 7] * 7


def wide_kernel(sigma0=50.0):
    # influence ~1 everywhere on a small map; used when testing the filter
    return KernelParams(sigma0=sigma0, stretch_gain=0.0)


def meas(cell, hit, wind=(0.0, 0.0), t=0):
    return Measurement(cell=cell, hit=hit, wind=np.array(wind, float), t=t)


class TestKernel:
    def test_covariance_aligned_with_wind(self):
        p = KernelParams(sigma0=0.5, stretch_gain=1.0)
        cov = kernel_covariance(np.array([1.0, 0.0]), p)
        # speed 1 -> along-wind std 1.0, cross-wind std 0.5
        assert np.allclose(cov, np.diag([1.0, 0.25]))

    def test_covariance_rotates_with_wind(self):
        p = KernelParams(sigma0=0.5, stretch_gain=1.0)
        cov = kernel_covariance(np.array([0.0, 2.0]), p)
        assert np.allclose(cov, np.diag([0.25, 2.25]))

    def test_zero_wind_isotropic(self):
        p = KernelParams(sigma0=0.7, stretch_gain=3.0)
        assert np.allclose(kernel_covariance(np.zeros(2), p), np.eye(2) * 0.49)

    def test_influence_matches_covariance_form(self):
        # lambda must equal exp(-0.5 d^T Sigma^-1 d) with d = delta * v_n
        grid = make_grid(FREE7, cell_size=0.5)
        part = build_partition(grid, (3, 3))
        wind = np.array([0.8, -0.3])
        p = KernelParams(sigma0=0.5, stretch_gain=1.0, max_influence_radius=100.0)
        sigma_inv = np.linalg.inv(kernel_covariance(wind, p))
        for cell in [(0, 0), (6, 3), (3, 6), (5, 1), (2, 4)]:
            d = part.delta(cell) * part.direction(cell)
            expected = math.exp(-0.5 * d @ sigma_inv @ d)
            assert influence(cell, (3, 3), wind, part, p) == pytest.approx(expected, rel=1e-12)

    def test_influence_is_one_at_measurement_cell(self):
        grid = make_grid(FREE7)
        part = build_partition(grid, (2, 2))
        p = KernelParams(sigma0=0.4)
        assert influence((2, 2), (2, 2), np.array([1.0, 0.0]), part, p) == 1.0

    def test_influence_zero_beyond_cutoff(self):
        grid = make_grid(FREE7, cell_size=1.0)
        part = build_partition(grid, (0, 0))
        p = KernelParams(sigma0=0.4, stretch_gain=0.0, max_influence_radius=1.5)
        assert influence((3, 0), (0, 0), np.zeros(2), part, p) == 0.0
        assert influence((1, 0), (0, 0), np.zeros(2), part, p) > 0.0

    def test_influence_zero_when_unreachable(self):
        grid = make_grid(["...", "###", "..."], cell_size=0.5)
        part = build_partition(grid, (1, 0))
        assert influence((1, 2), (1, 0), np.zeros(2), part, KernelParams()) == 0.0

    def test_influence_requires_matching_root(self):
        grid = make_grid(FREE7)
        part = build_partition(grid, (1, 1))
        with pytest.raises(PlumesearchError):
            influence((0, 0), (2, 2), np.zeros(2), part, KernelParams())

    def test_obstacle_lengthens_path_and_weakens_influence(self):
        wall = [
            ".....",
            ".....",
            "####.",
            ".....",
            ".....",
        ]
        grid = make_grid(wall, cell_size=0.5)
        free = make_grid(["....."] * 5, cell_size=0.5)
        p = KernelParams(sigma0=1.0, stretch_gain=0.0, max_influence_radius=1e6)
        wind = np.zeros(2)
        around = influence((0, 3), (0, 1), wind, build_partition(grid, (0, 1)), p)
        direct = influence((0, 3), (0, 1), wind, build_partition(free, (0, 1)), p)
        assert around < direct

    def test_default_cutoff_tracks_wind_speed(self):
        p = KernelParams(sigma0=0.5, stretch_gain=1.0)
        assert p.cutoff_radius(np.zeros(2)) == pytest.approx(2.0)
        assert p.cutoff_radius(np.array([3.0, 0.0])) == pytest.approx(8.0)

    def test_bad_params_rejected(self):
        assert KernelParams(sigma0=-1.0).validate()
        assert KernelParams(sigma0=1.0, max_influence_radius=1.0).validate()
        assert not KernelParams(sigma0=1.0, max_influence_radius=3.0).validate()


class TestConditionalHit:
    def test_direct_observation(self):
        assert conditional_hit(0.1, 1.0, 1, 0.8, 0.02) == 0.8
        assert conditional_hit(0.1, 1.0, 0, 0.8, 0.02) == 0.02

    def test_no_influence_returns_prior(self):
        assert conditional_hit(0.1, 0.0, 1, 0.8, 0.02) == 0.1

    def test_interpolation_example(self):
        assert conditional_hit(0.1, 0.5, 0, 0.8, 0.02) == pytest.approx(0.06)

    @given(
        lam=st.floats(0.0, 1.0),
        z=st.booleans(),
        prior=st.floats(0.05, 0.5),
    )
    def test_stays_between_prior_and_extreme(self, lam, z, prior):
        p_hit, p_miss = 0.9, 0.01
        c = conditional_hit(prior, lam, int(z), p_hit, p_miss)
        lo, hi = sorted((prior, p_hit if z else p_miss))
        assert lo - 1e-12 <= c <= hi + 1e-12


class TestFilter:
    def test_single_hit_on_measured_cell(self):
        grid = make_grid(FREE7)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (3, 3))
        hm.update(meas((3, 3), 1), part, None, wide_kernel())
        assert hm.probability_at((3, 3)) == pytest.approx(0.8, abs=1e-12)

    def test_two_hits_match_direct_bayes(self):
        grid = make_grid(FREE7)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (3, 3))
        for _ in range(2):
            hm.update(meas((3, 3), 1), part, None, wide_kernel())
        got = hm.probability_at((3, 3))
        # direct odds arithmetic: (0.1/0.9) * 4^2 / (1/9)^2 -> 144/145
        assert got == pytest.approx(bayes_posterior_odds(0.1, [0.8, 0.8]), abs=1e-9)
        assert got == pytest.approx(0.9931034482758621, abs=1e-9)

    def test_hit_then_miss_matches_direct_bayes(self):
        grid = make_grid(FREE7)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (3, 3))
        hm.update(meas((3, 3), 1), part, None, wide_kernel())
        hm.update(meas((3, 3), 0), part, None, wide_kernel())
        expected = bayes_posterior_odds(0.1, [0.8, 0.02])
        assert hm.probability_at((3, 3)) == pytest.approx(expected, abs=1e-12)

    def test_partial_influence_matches_direct_bayes(self):
        # neighbor cell gets an interpolated conditional; verify the whole
        # chain against plain odds arithmetic with that conditional
        grid = make_grid(FREE7, cell_size=0.5)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (3, 3))
        p = KernelParams(sigma0=0.5, stretch_gain=0.0, max_influence_radius=10.0)
        wind = np.zeros(2)
        lam = influence((4, 3), (3, 3), wind, part, p)
        assert 0.0 < lam < 1.0
        hm.update(meas((3, 3), 1, wind=wind), part, None, p)
        conds = [conditional_hit(0.1, lam, 1, 0.8, 0.02)]
        assert hm.probability_at((4, 3)) == pytest.approx(
            bayes_posterior_odds(0.1, conds), abs=1e-12
        )

    def test_update_order_does_not_matter(self):
        grid = make_grid(FREE7, cell_size=0.5)
        p = KernelParams(sigma0=0.8, stretch_gain=1.0, max_influence_radius=10.0)
        ms = [
            meas((1, 1), 1, wind=(0.5, 0.1)),
            meas((5, 2), 0, wind=(-0.2, 0.4)),
            meas((3, 4), 1, wind=(0.0, 0.0)),
            meas((2, 5), 0, wind=(0.3, -0.3)),
        ]
        parts = {m.cell: build_partition(grid, m.cell) for m in ms}

        def run(order):
            hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
            for m in order:
                hm.update(m, parts[m.cell], None, p)
            return hm

        a = run(ms)
        b = run(ms[::-1])
        np.testing.assert_allclose(a.log_odds, b.log_odds, rtol=0.0, atol=1e-12)
        np.testing.assert_allclose(a.omega, b.omega, rtol=0.0, atol=1e-12)

    def test_hits_raise_and_misses_lower_in_influence_zone(self):
        grid = make_grid(FREE7, cell_size=0.5)
        part = build_partition(grid, (3, 3))
        p = KernelParams(sigma0=0.5, stretch_gain=0.0, max_influence_radius=1.6)
        before = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        hit_map = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        hit_map.update(meas((3, 3), 1), part, None, p)
        miss_map = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        miss_map.update(meas((3, 3), 0), part, None, p)
        xs, ys = grid.free_cells()[:, 0], grid.free_cells()[:, 1]
        touched = part.path_length[ys, xs] <= 1.6
        assert np.all(hit_map.log_odds[touched] > before.log_odds[touched])
        assert np.all(miss_map.log_odds[touched] < before.log_odds[touched])

    def test_untouched_cells_keep_prior_bitwise(self):
        grid = make_grid(FREE7, cell_size=1.0)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (0, 0))
        p = KernelParams(sigma0=0.4, stretch_gain=0.0, max_influence_radius=1.5)
        hm.update(meas((0, 0), 1), part, None, p)
        far = grid.free_index()[6, 6]
        assert hm.log_odds[far] == logit(0.1)
        assert hm.omega[far] == 0.0
        assert hm.alpha[far] == 0.0

    def test_log_odds_clamped_and_probability_strictly_inside_unit(self):
        grid = make_grid(["..."], cell_size=0.5)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (1, 0))
        for _ in range(100):
            hm.update(meas((1, 0), 1), part, None, wide_kernel())
        assert hm.log_odds[1] == LOG_ODDS_LIMIT
        assert 0.0 < hm.probability_at((1, 0)) < 1.0
        for _ in range(200):
            hm.update(meas((1, 0), 0), part, None, wide_kernel())
        assert hm.log_odds[1] == -LOG_ODDS_LIMIT
        assert 0.0 < hm.probability_at((1, 0)) < 1.0

    def test_unreachable_cells_never_touched(self):
        grid = make_grid(["...", "###", "..."], cell_size=0.5)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (1, 0))
        hm.update(meas((1, 0), 1), part, None, wide_kernel())
        idx = grid.free_index()
        for x in range(3):
            assert hm.log_odds[idx[2, x]] == logit(0.1)

    def test_kernel_wind_taken_from_field_at_measurement_cell(self):
        from plumesearch.wind import WindField

        grid = make_grid(FREE7, cell_size=0.5)
        part = build_partition(grid, (3, 3))
        p = KernelParams(sigma0=0.5, stretch_gain=1.0, max_influence_radius=10.0)
        field = WindField.uniform(grid, np.array([1.0, 0.0]))
        a = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        # stale local reading disagrees with the field; the field wins
        a.update(meas((3, 3), 1, wind=(0.0, 9.0)), part, field, p)
        b = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        b.update(meas((3, 3), 1, wind=(1.0, 0.0)), part, None, p)
        np.testing.assert_array_equal(a.log_odds, b.log_odds)


class TestConfidence:
    def test_alpha_bounds_and_growth(self):
        grid = make_grid(FREE7, cell_size=0.5)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (3, 3))
        prev = hm.alpha.copy()
        for _ in range(12):
            hm.update(meas((3, 3), 1), part, None, wide_kernel())
            assert np.all(hm.alpha >= prev)
            assert np.all((hm.alpha >= 0.0) & (hm.alpha < 1.0))
            prev = hm.alpha.copy()
        assert hm.alpha_at((3, 3)) > 0.9

    def test_omega_is_gaussian_density_of_path_length(self):
        grid = make_grid(FREE7, cell_size=0.5)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02, sigma_conf=1.0)
        part = build_partition(grid, (3, 3))
        hm.update(meas((3, 3), 0), part, None, wide_kernel())
        d = part.delta((5, 3))  # 2 cardinal steps = 1.0 m
        expected = math.exp(-0.5 * d * d) / math.sqrt(2.0 * math.pi)
        assert hm.omega[grid.free_index()[3, 5]] == pytest.approx(expected, rel=1e-12)

    def test_alpha_formula(self):
        grid = make_grid(["..."], cell_size=0.5)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02,
                    sigma_conf=1.0, sigma_omega=0.5)
        part = build_partition(grid, (0, 0))
        hm.update(meas((0, 0), 1), part, None, wide_kernel())
        w = hm.omega[0]
        assert hm.alpha[0] == pytest.approx(1.0 - math.exp(-w * w / 0.25), rel=1e-12)

    def test_confidence_independent_of_hit_value(self):
        grid = make_grid(FREE7, cell_size=0.5)
        part = build_partition(grid, (3, 3))
        a = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        a.update(meas((3, 3), 1), part, None, wide_kernel())
        b = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        b.update(meas((3, 3), 0), part, None, wide_kernel())
        np.testing.assert_array_equal(a.alpha, b.alpha)


class TestValidation:
    def test_probability_ordering_enforced(self):
        assert validate_belief_params(0.1, 0.8, 0.02) == []
        assert validate_belief_params(0.1, 0.05, 0.02)   # p_hit below prior
        assert validate_belief_params(0.1, 0.8, 0.3)     # p_miss above prior
        assert validate_belief_params(0.0, 0.8, 0.02)
        assert validate_belief_params(0.1, 1.0, 0.02)

    def test_hitmap_constructor_rejects_bad_params(self):
        grid = make_grid(["..."])
        with pytest.raises(PlumesearchError):
            HitMap(grid, prior=0.5, p_hit=0.4, p_miss=0.02)
        with pytest.raises(PlumesearchError):
            HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02, sigma_omega=0.0)

    def test_measurement_rejects_nonfinite_wind(self):
        with pytest.raises(PlumesearchError):
            Measurement(cell=(0, 0), hit=1, wind=np.array([np.nan, 0.0]), t=0)

    def test_update_rejects_mismatched_partition(self):
        grid = make_grid(FREE7)
        hm = HitMap(grid, prior=0.1, p_hit=0.8, p_miss=0.02)
        part = build_partition(grid, (0, 0))
        with pytest.raises(PlumesearchError):
            hm.update(meas((3, 3), 1), part, None, wide_kernel())


@given(st.floats(-LOG_ODDS_LIMIT, LOG_ODDS_LIMIT))
def test_expit_stays_strictly_inside_unit_interval(l):
    # the clamp value is chosen so float64 never rounds to 0 or 1
    p = float(expit(np.array(l)))
    assert 0.0 < p < 1.0


@given(st.floats(-15.0, 15.0))
def test_expit_logit_round_trip(l):
    # near the clamp p sits eps-close to 1 and the inverse loses digits,
    # so exactness is only claimed in the moderate range
    assert logit(float(expit(np.array(l)))) == pytest.approx(l, abs=1e-6)
