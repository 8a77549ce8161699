"""Minorant properties: tightness, shared gradient, global domination."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import links_from_direct, rand_complex, rand_covariances, rand_psd
from rsris.channel import FadingSet, ThetaSet, UserSpaceMap
from rsris.rates import (
    CovarianceSet,
    Impairments,
    build_real_links,
    common_rate_cap,
    private_rate,
)
from rsris.surrogates import (
    CovExpansion,
    ThetaExpansion,
    ThetaLinearMaps,
    logdet_linear_upper,
    psd_sqrt,
    quadratic_modulus_lower,
)


def mix_covs(a: CovarianceSet, b: CovarianceSet, w: float) -> CovarianceSet:
    return CovarianceSet(
        (1 - w) * a.private + w * b.private, (1 - w) * a.common + w * b.common
    )


def test_psd_sqrt_roundtrip_and_clamp(rng):
    m = rand_psd(rng, 5)
    s = psd_sqrt(m)
    np.testing.assert_allclose(s @ s, m, atol=1e-10)
    # a slightly indefinite input is treated as its PSD part
    w, v = np.linalg.eigh(m)
    w[0] = -1e-14
    dented = (v * w) @ v.T
    s2 = psd_sqrt(dented)
    assert np.all(np.isreal(s2))
    assert np.linalg.eigvalsh(s2 @ s2).min() >= -1e-12


def test_logdet_linear_upper_is_tight_affine_dominating(rng):
    n, m = 3, 2
    a = rand_psd(rng, n) + np.eye(n)
    bs = [("x", rng.normal(size=(n, m))), ("y", rng.normal(size=(n, m)))]
    exp = {"x": rand_psd(rng, m), "y": rand_psd(rng, m)}

    def f(blocks):
        s = a + sum(b @ blocks[k] @ b.T for k, b in bs)
        return np.linalg.slogdet(s)[1]

    bound = logdet_linear_upper(a, bs, exp)
    assert bound.value(exp) == pytest.approx(f(exp), abs=1e-9)
    for _ in range(100):
        pt = {"x": rand_psd(rng, m), "y": rand_psd(rng, m)}
        assert bound.value(pt) >= f(pt) - 1e-9
    # affine: exact second difference cancellation
    d = {"x": rand_psd(rng, m), "y": rand_psd(rng, m)}
    v0, v1, v2 = (
        bound.value({k: exp[k] + t * d[k] for k in exp}) for t in (0.0, 0.5, 1.0)
    )
    assert v2 - 2 * v1 + v0 == pytest.approx(0.0, abs=1e-10)


class TestCovarianceStepSurrogates:
    def _instance(self, seed):
        rng = np.random.default_rng(seed)
        l_cells, k_users, n_u, n_bs = 2, 2, 1, 2
        hs = rand_complex(rng, l_cells, k_users, l_cells, n_u, n_bs)
        links = links_from_direct(hs, sigma2=1.1)
        cov = rand_covariances(rng, l_cells, k_users, n_bs, scale=0.4)
        return rng, links, cov, l_cells, k_users

    def _true(self, which, cov, links, l, k):
        fn = private_rate if which == "private" else common_rate_cap
        return fn(cov, links, l, k)

    @pytest.mark.parametrize("which", ["private", "common"])
    def test_tight_at_expansion(self, which):
        rng, links, cov, l_cells, k_users = self._instance(11)
        ep = CovExpansion(cov, links)
        for l in range(l_cells):
            for k in range(k_users):
                sur = getattr(ep, f"{which}_surrogate")(l, k)
                assert sur.value(cov) == pytest.approx(
                    self._true(which, cov, links, l, k), abs=1e-9
                )

    @pytest.mark.parametrize("which", ["private", "common"])
    def test_never_exceeds_true_rate(self, which):
        rng, links, cov, *_ = self._instance(12)
        ep = CovExpansion(cov, links)
        sur = getattr(ep, f"{which}_surrogate")(0, 1)
        for _ in range(200):
            probe = rand_covariances(rng, 2, 2, 2, scale=float(rng.uniform(0.05, 2.0)))
            assert sur.value(probe) <= self._true(which, probe, links, 0, 1) + 1e-9

    @pytest.mark.parametrize("which", ["private", "common"])
    def test_gradient_matches_true_rate(self, which):
        """Directional derivatives agree at the expansion point."""
        rng, links, cov, *_ = self._instance(13)
        ep = CovExpansion(cov, links)
        sur = getattr(ep, f"{which}_surrogate")(1, 0)
        h = 1e-6
        for _ in range(10):
            d = rand_covariances(rng, 2, 2, 2, scale=1.0)
            lo, hi = mix_covs(cov, d, -h), mix_covs(cov, d, h)
            g_sur = (sur.value(hi) - sur.value(lo)) / (2 * h)
            g_true = (
                self._true(which, hi, links, 1, 0) - self._true(which, lo, links, 1, 0)
            ) / (2 * h)
            assert abs(g_sur - g_true) <= 1e-5 * max(1.0, abs(g_true))

    @pytest.mark.parametrize("which", ["private", "common"])
    def test_concave_midpoint(self, which):
        rng, links, cov, *_ = self._instance(14)
        ep = CovExpansion(cov, links)
        sur = getattr(ep, f"{which}_surrogate")(0, 0)
        for _ in range(50):
            a = rand_covariances(rng, 2, 2, 2, scale=0.8)
            b = rand_covariances(rng, 2, 2, 2, scale=0.8)
            mid = mix_covs(a, b, 0.5)
            assert sur.value(mid) >= 0.5 * (sur.value(a) + sur.value(b)) - 1e-9


def _theta_instance(seed, star=False):
    rng = np.random.default_rng(seed)
    l_cells, k_users, n_u, n_bs, m_ris, n_ris = 2, 2, 1, 2, 2, 3
    fs = FadingSet(
        rand_complex(rng, l_cells, k_users, l_cells, n_u, n_bs) * 0.6,
        rand_complex(rng, l_cells, k_users, m_ris, n_u, n_ris) * 0.4,
        rand_complex(rng, m_ris, l_cells, n_ris, n_bs) * 0.4,
    )
    imp = Impairments.uniform(
        l_cells, k_users, n_bs, n_u, sigma2=1.3, eps_tx=1.1, phi_tx=0.15, eps_rx=0.9, phi_rx=-0.1
    )
    cov = rand_covariances(rng, l_cells, k_users, n_bs, scale=0.5)
    space = UserSpaceMap(np.array([[False, True], [True, False]])) if star else None
    maps = ThetaLinearMaps(fs, imp, space, star=star)
    theta = rand_complex(rng, m_ris, n_ris) * 0.5
    ts = ThetaSet(theta, rand_complex(rng, m_ris, n_ris) * 0.5) if star else ThetaSet(theta)
    return rng, fs, imp, cov, space, maps, ts


class TestThetaStepSurrogates:
    def _true_rate(self, fs, imp, cov, space, ts, l, k, which):
        links = build_real_links(fs, ts, imp, space)
        fn = private_rate if which == "private" else common_rate_cap
        return fn(cov, links, l, k)

    @pytest.mark.parametrize("star", [False, True])
    def test_affine_maps_match_channel_assembly(self, star):
        """The stacked-coefficient parametrization reproduces the channels
        built through the full composition path."""
        rng, fs, imp, cov, space, maps, ts = _theta_instance(21, star)
        v = maps.theta_to_vec(ts)
        links = build_real_links(fs, ts, imp, space)
        got = maps.links_at(v)
        np.testing.assert_allclose(got.h, links.h, atol=1e-12)
        np.testing.assert_allclose(got.cn, links.cn, atol=1e-12)
        back = maps.vec_to_theta(v)
        np.testing.assert_allclose(back.theta, ts.theta)
        if star:
            np.testing.assert_allclose(back.theta_t, ts.theta_t)

    @pytest.mark.parametrize("which", ["private", "common"])
    def test_tight_at_expansion(self, which):
        rng, fs, imp, cov, space, maps, ts = _theta_instance(22)
        v = maps.theta_to_vec(ts)
        ep = ThetaExpansion(maps, cov, v)
        for l in range(2):
            for k in range(2):
                sur = ep.surrogate(l, k, which)
                want = self._true_rate(fs, imp, cov, space, ts, l, k, which)
                assert sur.value(v) == pytest.approx(want, abs=1e-8)

    @pytest.mark.parametrize("which", ["private", "common"])
    def test_never_exceeds_true_rate(self, which):
        rng, fs, imp, cov, space, maps, ts = _theta_instance(23)
        ep = ThetaExpansion(maps, cov, maps.theta_to_vec(ts))
        sur = ep.surrogate(0, 1, which)
        for _ in range(200):
            v = rng.uniform(-1, 1, size=maps.n_vars)
            want = self._true_rate(fs, imp, cov, space, maps.vec_to_theta(v), 0, 1, which)
            assert sur.value(v) <= want + 1e-9

    @pytest.mark.parametrize("which", ["private", "common"])
    def test_gradient_matches_true_rate(self, which):
        rng, fs, imp, cov, space, maps, ts = _theta_instance(24)
        v0 = maps.theta_to_vec(ts)
        ep = ThetaExpansion(maps, cov, v0)
        sur = ep.surrogate(1, 1, which)
        h = 1e-6
        for _ in range(10):
            d = rng.normal(size=maps.n_vars)
            d /= np.linalg.norm(d)

            def true_at(v):
                return self._true_rate(
                    fs, imp, cov, space, maps.vec_to_theta(v), 1, 1, which
                )

            g_sur = (sur.value(v0 + h * d) - sur.value(v0 - h * d)) / (2 * h)
            g_true = (true_at(v0 + h * d) - true_at(v0 - h * d)) / (2 * h)
            assert abs(g_sur - g_true) <= 1e-5 * max(1.0, abs(g_true))

    def test_concave_midpoint_in_coefficients(self):
        rng, fs, imp, cov, space, maps, ts = _theta_instance(25)
        ep = ThetaExpansion(maps, cov, maps.theta_to_vec(ts))
        sur = ep.surrogate(0, 0, "private")
        for _ in range(100):
            a = rng.uniform(-1, 1, size=maps.n_vars)
            b = rng.uniform(-1, 1, size=maps.n_vars)
            mid = sur.value(0.5 * (a + b))
            assert mid >= 0.5 * (sur.value(a) + sur.value(b)) - 1e-9

    def test_star_tightness_and_domination(self):
        rng, fs, imp, cov, space, maps, ts = _theta_instance(26, star=True)
        v0 = maps.theta_to_vec(ts)
        ep = ThetaExpansion(maps, cov, v0)
        for (l, k) in [(0, 1), (1, 0)]:  # one transmission, one reflection user
            sur = ep.surrogate(l, k, "private")
            want = self._true_rate(fs, imp, cov, space, ts, l, k, "private")
            assert sur.value(v0) == pytest.approx(want, abs=1e-8)
            for _ in range(50):
                v = rng.uniform(-1, 1, size=maps.n_vars)
                true = self._true_rate(
                    fs, imp, cov, space, maps.vec_to_theta(v), l, k, "private"
                )
                assert sur.value(v) <= true + 1e-9

    def test_zero_surface_links_make_surrogate_constant(self):
        rng, fs, imp, cov, space, maps, ts = _theta_instance(27)
        dead = FadingSet(fs.direct, np.zeros_like(fs.ris_user), np.zeros_like(fs.bs_ris))
        maps0 = ThetaLinearMaps(dead, imp)
        ep = ThetaExpansion(maps0, cov, maps0.theta_to_vec(ts))
        sur = ep.surrogate(0, 0, "private")
        vals = {sur.value(rng.uniform(-1, 1, size=maps0.n_vars)) for _ in range(5)}
        assert max(vals) - min(vals) < 1e-12


class TestQuadraticModulusBound:
    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_elementwise_domination_and_tightness(self, seed):
        rng = np.random.default_rng(seed)
        tp = rand_complex(rng, 6)
        bound = quadratic_modulus_lower(tp)
        np.testing.assert_allclose(bound.elementwise(tp), np.abs(tp) ** 2, atol=1e-12)
        t = rand_complex(rng, 6) * rng.uniform(0, 3)
        assert np.all(bound.elementwise(t) <= np.abs(t) ** 2 + 1e-12)
        assert bound.value(t) <= float(np.sum(np.abs(t) ** 2)) + 1e-12

    def test_affine_in_reals(self):
        tp = np.array([0.3 - 0.2j, 1.0 + 0.5j])
        bound = quadratic_modulus_lower(tp)
        a, b = np.array([1.0 + 1j, -2j]), np.array([0.5, 0.25 + 1j])
        v0 = bound.value(a)
        v1 = bound.value((a + b) / 2)
        v2 = bound.value(b)
        assert v1 == pytest.approx(0.5 * (v0 + v2), abs=1e-12)
