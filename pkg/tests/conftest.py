"""Shared helpers for building small synthetic instances."""
import numpy as np
import pytest

from rsris.channel import FadingSet, ThetaSet
from rsris.rates import CovarianceSet, Impairments, build_real_links


def rand_complex(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def links_from_direct(hs, sigma2=1.0, imp=None):
    """RealLinks for given direct channels ``hs[l, k, i]`` and no surfaces."""
    hs = np.asarray(hs, dtype=complex)
    l_cells, k_users = hs.shape[0], hs.shape[1]
    n_u, n_bs = hs.shape[3], hs.shape[4]
    fs = FadingSet(
        hs,
        np.zeros((l_cells, k_users, l_cells, n_u, 1), dtype=complex),
        np.zeros((l_cells, l_cells, 1, n_bs), dtype=complex),
    )
    ts = ThetaSet(np.zeros((l_cells, 1)))
    if imp is None:
        imp = Impairments.ideal(l_cells, k_users, n_bs, n_u, sigma2)
    return build_real_links(fs, ts, imp)


def rand_psd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T) / n


def rand_covariances(rng, l_cells, k_users, n_bs, scale=1.0, common=True):
    d = 2 * n_bs
    private = np.empty((l_cells, k_users, d, d))
    com = np.zeros((l_cells, d, d))
    for l in range(l_cells):
        for k in range(k_users):
            private[l, k] = rand_psd(rng, d, scale)
        if common:
            com[l] = rand_psd(rng, d, scale)
    return CovarianceSet(private, com)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
