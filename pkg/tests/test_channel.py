"""Scenario sampling against geometric and statistical oracles."""
import numpy as np
import pytest

from rsris.channel import (
    FadingParams,
    ThetaSet,
    UserSpaceMap,
    assemble_effective_channel,
    default_node_positions,
    effective_channels,
    make_topology,
    path_gain,
    sample_scenario,
)


def test_default_geometry_distances():
    bs, ris = default_node_positions(2)
    # hand-computed: sqrt(180^2 + (25-15)^2)
    assert np.linalg.norm(bs[0] - ris[0]) == pytest.approx(np.sqrt(180.0**2 + 10.0**2))
    assert np.linalg.norm(bs[1] - ris[1]) == pytest.approx(np.sqrt(180.0**2 + 10.0**2))
    assert np.linalg.norm(bs[0] - bs[1]) == pytest.approx(400.0)


def test_users_dropped_in_square_around_surface():
    top = make_topology(2, 5, 2, 2, 8, seed=123)
    for l in range(2):
        offsets = top.user_positions[l, :, :2] - top.ris_positions[l][:2]
        assert np.all(np.abs(offsets) <= 10.0)
        assert np.all(top.user_positions[l, :, 2] == 1.5)


def test_dimensions_for_asymmetric_antenna_counts():
    top = make_topology(2, 3, 4, 2, 7, seed=5)
    fs = sample_scenario(top, FadingParams(), seed=9)
    assert fs.direct.shape == (2, 3, 2, 2, 4)
    assert fs.ris_user.shape == (2, 3, 2, 2, 7)
    assert fs.bs_ris.shape == (2, 2, 7, 4)


def test_same_seed_reproduces_bitwise():
    top = make_topology(2, 2, 2, 1, 4, seed=77)
    a = sample_scenario(top, FadingParams(), seed=42)
    b = sample_scenario(top, FadingParams(), seed=42)
    c = sample_scenario(top, FadingParams(), seed=43)
    assert np.array_equal(a.direct, b.direct)
    assert np.array_equal(a.ris_user, b.ris_user)
    assert np.array_equal(a.bs_ris, b.bs_ris)
    assert not np.array_equal(a.direct, c.direct)


def test_mean_link_power_follows_path_loss_law():
    """Empirical mean |entry|^2 must match the configured power law."""
    fp = FadingParams()
    top = make_topology(1, 1, 2, 2, 6, seed=3)
    d_direct = np.linalg.norm(top.user_positions[0, 0] - top.bs_positions[0])
    d_hop = np.linalg.norm(top.user_positions[0, 0] - top.ris_positions[0])
    acc_direct, acc_hop = 0.0, 0.0
    n_trials = 3000
    for s in range(n_trials):
        fs = sample_scenario(top, fp, seed=s)
        acc_direct += np.mean(np.abs(fs.direct[0, 0, 0]) ** 2)
        acc_hop += np.mean(np.abs(fs.ris_user[0, 0, 0]) ** 2)
    got_direct = acc_direct / n_trials
    got_hop = acc_hop / n_trials
    want_direct = 1e-3 * d_direct**-3.75
    want_hop = 1e-3 * d_hop**-2.2
    assert got_direct == pytest.approx(want_direct, rel=0.1)
    assert got_hop == pytest.approx(want_hop, rel=0.1)


def test_path_gain_slope():
    d = np.array([10.0, 100.0])
    g = path_gain(d, 3.75)
    assert np.log10(g[0] / g[1]) == pytest.approx(3.75)
    assert path_gain(1.0, 3.75) == pytest.approx(1e-3)


def test_blocked_users_lose_surface_links_only():
    top = make_topology(1, 4, 2, 1, 5, seed=8)
    blocked = np.array([[False, True, False, True]])
    fs = sample_scenario(top, FadingParams(), seed=11, blocked=blocked)
    assert np.all(fs.ris_user[0, 1] == 0) and np.all(fs.ris_user[0, 3] == 0)
    assert np.any(fs.ris_user[0, 0] != 0) and np.any(fs.ris_user[0, 2] != 0)
    assert np.all(fs.direct[0, 1] != 0)


class TestEffectiveChannel:
    def _setup(self):
        top = make_topology(2, 2, 3, 2, 4, seed=21)
        fs = sample_scenario(top, FadingParams(), seed=22)
        rng = np.random.default_rng(23)
        theta = np.exp(1j * rng.uniform(-np.pi, np.pi, size=(2, 4)))
        return fs, ThetaSet(theta)

    def test_matches_brute_force_sum(self):
        fs, ts = self._setup()
        for l, k, i in [(0, 0, 0), (0, 1, 1), (1, 0, 0), (1, 1, 1)]:
            want = fs.direct[l, k, i].copy()
            for m in range(2):
                want = want + fs.ris_user[l, k, m] @ np.diag(ts.theta[m]) @ fs.bs_ris[m, i]
            got = assemble_effective_channel(fs, ts, l, k, i)
            np.testing.assert_allclose(got, want, atol=1e-14)

    def test_zero_coefficients_leave_direct_link(self):
        fs, ts = self._setup()
        h = assemble_effective_channel(fs, ThetaSet(np.zeros_like(ts.theta)), 0, 1, 0)
        np.testing.assert_allclose(h, fs.direct[0, 1, 0], atol=0.0)

    def test_affine_in_each_coefficient(self):
        """Second differences in any single coefficient vanish."""
        fs, ts = self._setup()
        base = ts.theta.copy()
        for m, n in [(0, 0), (1, 3)]:
            vals = []
            for step in (0.0, 0.3, 0.6):
                th = base.copy()
                th[m, n] += step * (1 + 1j)
                vals.append(assemble_effective_channel(fs, ThetaSet(th), 1, 0, 1))
            second_diff = vals[2] - 2 * vals[1] + vals[0]
            np.testing.assert_allclose(second_diff, 0.0, atol=1e-13)

    def test_star_routes_transmission_users_to_theta_t(self):
        fs, ts = self._setup()
        rng = np.random.default_rng(30)
        theta_t = np.exp(1j * rng.uniform(-np.pi, np.pi, size=ts.theta.shape))
        star = ThetaSet(ts.theta, theta_t)
        space = UserSpaceMap(np.array([[False, True], [False, False]]))
        got = assemble_effective_channel(fs, star, 0, 1, 0, space)
        want = assemble_effective_channel(fs, ThetaSet(theta_t), 0, 1, 0)
        np.testing.assert_allclose(got, want, atol=0.0)
        # reflection user unaffected by theta_t
        got_r = assemble_effective_channel(fs, star, 0, 0, 0, space)
        want_r = assemble_effective_channel(fs, ts, 0, 0, 0)
        np.testing.assert_allclose(got_r, want_r, atol=0.0)

    def test_effective_channels_table(self):
        fs, ts = self._setup()
        table = effective_channels(fs, ts)
        np.testing.assert_allclose(
            table[1, 1, 0], assemble_effective_channel(fs, ts, 1, 1, 0), atol=0.0
        )


def test_topology_validation():
    with pytest.raises(ValueError):
        make_topology(3, 2, 2, 2, 4, seed=0)  # no default 3-cell layout
    bs, ris = default_node_positions(2)
    with pytest.raises(ValueError):
        make_topology(2, 2, 2, 2, 4, seed=0, bs_positions=bs, ris_positions=ris[:1])
