"""Conic steps against closed forms, grid searches and set containment."""
import numpy as np
import pytest

from conftest import rand_complex
from rsris.channel import FadingSet, ThetaSet
from rsris.rates import (
    Impairments,
    PowerModel,
    build_real_links,
    common_rate_cap,
    private_rate,
    rate_bundle,
    uniform_covariances,
)
from rsris.realdec import is_proper_structured
from rsris.rispace import random_theta
from rsris.subproblems import (
    InfeasibleTargetError,
    solve_p_step_gee,
    solve_p_step_maxmin,
    solve_p_step_maxmin_ee,
    solve_p_step_powermin,
    solve_theta_step,
)
from rsris.surrogates import CovExpansion, ThetaExpansion, ThetaLinearMaps


def siso_links(hs, sigma2=1.0, imp=None):
    hs = np.asarray(hs, dtype=complex)
    l_cells, k_users = hs.shape[0], hs.shape[1]
    n_u, n_bs = hs.shape[3], hs.shape[4]
    fs = FadingSet(
        hs,
        np.zeros((l_cells, k_users, l_cells, n_u, 1), complex),
        np.zeros((l_cells, l_cells, 1, n_bs), complex),
    )
    if imp is None:
        imp = Impairments.ideal(l_cells, k_users, n_bs, n_u, sigma2)
    return build_real_links(fs, ThetaSet(np.zeros((l_cells, 1))), imp)


def iterate_maxmin(links, budgets, iters=14, **kw):
    cov = uniform_covariances(
        links.shape[0], links.shape[1], links.h.shape[-1] // 2, budgets,
        common=kw.get("scheme", "rs") == "rs",
    )
    r_c = None
    for _ in range(iters):
        cov, r_c, rep = solve_p_step_maxmin(CovExpansion(cov, links), budgets, **kw)
    return cov, r_c, rep


class TestSingleUserClosedForms:
    def test_maxmin_reaches_shannon_capacity(self):
        h, sigma2, p = 0.9 - 0.2j, 0.6, 4.0
        links = siso_links(np.array(h).reshape(1, 1, 1, 1, 1), sigma2)
        cov, r_c, _ = iterate_maxmin(links, [p])
        b = rate_bundle(cov, links)
        want = np.log2(1 + p * abs(h) ** 2 / sigma2)
        assert b.private[0, 0] + r_c[0, 0] == pytest.approx(want, rel=1e-3)
        assert cov.total_power() <= p * (1 + 1e-6)

    def test_powermin_inverts_capacity(self):
        h, sigma2, target = 1.2 + 0.7j, 0.8, 1.7
        links = siso_links(np.array(h).reshape(1, 1, 1, 1, 1), sigma2)
        cov = uniform_covariances(1, 1, 1, [5.0])
        for _ in range(14):
            cov, r_c, _ = solve_p_step_powermin(
                CovExpansion(cov, links), [[target]]
            )
        want = (2.0**target - 1.0) * sigma2 / abs(h) ** 2
        assert cov.total_power() == pytest.approx(want, rel=1e-3)

    def test_powermin_zero_target_spends_nothing(self):
        """A single step keeps residual power (the common-cap surrogate must
        stay feasible away from the expansion point) but iterating drains it."""
        links = siso_links(np.full((1, 1, 1, 1, 1), 1.0 + 0j))
        cov = uniform_covariances(1, 1, 1, [1.0])
        for _ in range(6):
            cov, _, _ = solve_p_step_powermin(CovExpansion(cov, links), [[0.0]])
        assert cov.total_power() == pytest.approx(0.0, abs=1e-6)


class TestProfileControl:
    def _two_user_links(self, phase=0.7):
        h = np.array([1.0, np.exp(1j * phase)]).reshape(1, 2, 1, 1, 1)
        return siso_links(h, sigma2=0.5)

    def test_symmetric_users_get_equal_rates(self):
        links = self._two_user_links()
        cov, r_c, _ = iterate_maxmin(links, [4.0])
        b = rate_bundle(cov, links)
        rates = b.private[0] + r_c[0]
        assert rates[0] == pytest.approx(rates[1], abs=1e-3)

    def test_profile_weights_steer_the_split(self):
        links = self._two_user_links()
        cov, r_c, _ = iterate_maxmin(links, [4.0], weights=[[0.75, 0.25]])
        b = rate_bundle(cov, links)
        rates = b.private[0] + r_c[0]
        assert rates[0] / rates[1] == pytest.approx(3.0, rel=0.05)


class TestSignalingAndSchemeContainment:
    def _instance(self, seed=3):
        rng = np.random.default_rng(seed)
        hs = rand_complex(rng, 2, 2, 2, 1, 1)
        return siso_links(hs, sigma2=0.7)

    def test_pgs_blocks_are_proper_structured_and_dominated(self):
        links = self._instance()
        budgets = [3.0, 3.0]
        cov0 = uniform_covariances(2, 2, 1, budgets)
        ep = CovExpansion(cov0, links)
        cov_i, _, rep_i = solve_p_step_maxmin(ep, budgets, signaling="igs")
        cov_p, _, rep_p = solve_p_step_maxmin(ep, budgets, signaling="pgs")
        for l in range(2):
            assert is_proper_structured(cov_p.common[l], tol=1e-6)
            for k in range(2):
                assert is_proper_structured(cov_p.private[l, k], tol=1e-6)
        # the circular-structure set sits inside the unstructured one
        assert rep_i.objective >= rep_p.objective - 1e-7

    def test_tin_is_rs_without_common_power(self):
        links = self._instance(4)
        budgets = [3.0, 3.0]
        ep = CovExpansion(uniform_covariances(2, 2, 1, budgets), links)
        cov_rs, _, rep_rs = solve_p_step_maxmin(ep, budgets, scheme="rs")
        cov_tin, r_c_tin, rep_tin = solve_p_step_maxmin(ep, budgets, scheme="tin")
        assert np.all(cov_tin.common == 0)
        assert np.all(r_c_tin == 0)
        assert rep_rs.objective >= rep_tin.objective - 1e-7


class TestFractionalObjectives:
    def test_gee_descent_trace_and_grid_search(self):
        h, sigma2, budget = 1.4 - 0.5j, 1.0, 10.0
        links = siso_links(np.array(h).reshape(1, 1, 1, 1, 1), sigma2)
        pm = PowerModel()
        cov = uniform_covariances(1, 1, 1, [budget])
        for _ in range(14):
            cov, r_c, rep = solve_p_step_gee(CovExpansion(cov, links), pm, [budget])
        f_trace = rep.extras["dinkelbach_f"]
        assert all(
            f_trace[i + 1] <= f_trace[i] + 1e-6 for i in range(len(f_trace) - 1)
        )
        assert f_trace[-1] < 1e-6
        b = rate_bundle(cov, links)
        got = (b.private[0, 0] + r_c[0, 0]) / (
            pm.static_watts + pm.amp_slope * cov.total_power()
        )
        g = abs(h) ** 2 / sigma2
        p_grid = np.linspace(1e-6, budget, 200_001)
        want = np.max(np.log2(1 + p_grid * g) / (pm.static_watts + pm.amp_slope * p_grid))
        assert got == pytest.approx(want, rel=1e-2)

    def test_maxmin_ee_equalizes_symmetric_users(self):
        h = np.array([1.0, 1.0j]).reshape(1, 2, 1, 1, 1)
        links = siso_links(h, sigma2=0.5)
        pm = PowerModel()
        cov = uniform_covariances(1, 2, 1, [6.0])
        for _ in range(14):
            cov, r_c, rep = solve_p_step_maxmin_ee(
                CovExpansion(cov, links), pm, [6.0]
            )
        b = rate_bundle(cov, links)
        rates = b.private[0] + r_c[0]
        ee = [
            rates[k]
            / (
                pm.static_watts
                + pm.amp_slope * np.trace(cov.private[0, k])
                + pm.amp_slope / 2 * np.trace(cov.common[0])
            )
            for k in range(2)
        ]
        assert ee[0] == pytest.approx(ee[1], abs=1e-3)


class TestThetaStep:
    def test_single_coefficient_matches_alignment_optimum(self):
        """One surface element, one user: the converged coefficient aligns
        the reflected path with the direct one; capacity has a closed form."""
        rng = np.random.default_rng(6)
        f0, g_ru, g_br, sigma2, p = 0.6 + 0.3j, 0.9 - 0.4j, 0.5 + 0.8j, 1.0, 3.0
        fs = FadingSet(
            np.array(f0).reshape(1, 1, 1, 1, 1),
            np.array(g_ru).reshape(1, 1, 1, 1, 1),
            np.array(g_br).reshape(1, 1, 1, 1),
        )
        imp = Impairments.ideal(1, 1, 1, 1, sigma2)
        maps = ThetaLinearMaps(fs, imp)
        cov = uniform_covariances(1, 1, 1, [p], common=False)
        ts = ThetaSet(np.zeros((1, 1), complex))
        for _ in range(25):
            ep = ThetaExpansion(maps, cov, maps.theta_to_vec(ts))
            ts, _, rep = solve_theta_step(ep, ts, "disk", scheme="tin")
        links = build_real_links(fs, ts, imp)
        got = private_rate(cov, links, 0, 0)
        amp = abs(f0) + abs(g_ru * g_br)
        want = np.log2(1 + cov.total_power() * amp**2 / sigma2)
        assert got == pytest.approx(want, rel=1e-2)
        assert abs(ts.theta[0, 0]) <= 1 + 1e-7

    def test_zero_surface_links_reduce_to_covariance_value(self):
        rng = np.random.default_rng(7)
        hs = rand_complex(rng, 2, 2, 2, 1, 1)
        fs = FadingSet(
            hs, np.zeros((2, 2, 2, 1, 3), complex), np.zeros((2, 2, 3, 1), complex)
        )
        imp = Impairments.ideal(2, 2, 1, 1, 1.0)
        links = build_real_links(fs, ThetaSet(np.zeros((2, 3))), imp)
        cov, r_c, _ = iterate_maxmin(links, [2.0, 2.0], iters=6)
        maps = ThetaLinearMaps(fs, imp)
        ts = random_theta("unit", 2, 3, rng)
        ep = ThetaExpansion(maps, cov, maps.theta_to_vec(ts))
        cand, r_c2, rep = solve_theta_step(ep, ts, "unit")
        b = rate_bundle(cov, links)
        # coefficients cannot matter: the step just re-allocates common rate
        assert rep.objective * 0.25 == pytest.approx(
            min((b.private + r_c2).ravel()), abs=1e-6
        )

    def test_star_step_returns_both_sides(self):
        rng = np.random.default_rng(8)
        from rsris.channel import UserSpaceMap

        fs = FadingSet(
            rand_complex(rng, 1, 2, 1, 1, 1),
            0.5 * rand_complex(rng, 1, 2, 1, 1, 3),
            0.5 * rand_complex(rng, 1, 1, 3, 1),
        )
        imp = Impairments.ideal(1, 2, 1, 1, 1.0)
        space = UserSpaceMap(np.array([[False, True]]))
        maps = ThetaLinearMaps(fs, imp, space, star=True)
        ts = random_theta("star", 1, 3, rng)
        cov = uniform_covariances(1, 2, 1, [4.0])
        ep = ThetaExpansion(maps, cov, maps.theta_to_vec(ts))
        cand, r_c, rep = solve_theta_step(ep, ts, "star")
        assert cand.theta_t is not None and cand.theta.shape == (1, 3)
        assert rep.ok


def test_powermin_raises_on_unreachable_targets():
    """From a white expansion point, two interfering users on one shared
    complex dimension cannot both clear 1 bit/s/Hz in a single step."""
    h = np.array([1.0, 1.0]).reshape(1, 2, 1, 1, 1)
    links = siso_links(h, sigma2=1.0)
    cov = uniform_covariances(1, 2, 1, [10.0], common=False)
    with pytest.raises(InfeasibleTargetError):
        solve_p_step_powermin(
            CovExpansion(cov, links), [[1.0, 1.0]], scheme="tin"
        )
