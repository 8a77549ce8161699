"""Achievable rates of the rate-splitting downlink in the real domain.

Every user decodes the cell-wide common stream first (privates of its own
cell and everything from other cells act as noise), strips it, then decodes
its private stream.  Rates are ``0.5 * log2`` determinant ratios of real
covariances; the half compensates the doubled dimensions, so with proper
signaling and ideal hardware they equal the familiar complex-domain values.

Real channels are noise-normalized at construction (divided by the thermal
noise standard deviation) so covariance entries stay in watts while the
conic solvers see well-scaled data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FadingSet, ThetaSet, UserSpaceMap, assemble_effective_channel
from .realdec import IqiParams, NoiseModel, iqi_equivalent_channel, noise_covariance

__all__ = [
    "Impairments",
    "RealLinks",
    "CovarianceSet",
    "RateBundle",
    "PowerModel",
    "build_real_links",
    "interference_matrix",
    "private_rate",
    "common_rate_cap",
    "rate_bundle",
    "user_rates",
    "allocate_common_maxmin",
    "gee",
    "ee_user",
    "uniform_covariances",
]

LN2 = float(np.log(2.0))


@dataclass(frozen=True, eq=False)
class Impairments:
    """Front-end imperfections of every node plus the thermal noise power."""

    tx: tuple  # L transmit-side IqiParams, one per base station
    rx: tuple  # L tuples of K receive-side IqiParams
    sigma2: float

    @classmethod
    def ideal(cls, l_cells: int, k_users: int, n_bs: int, n_u: int, sigma2: float):
        return cls(
            tuple(IqiParams.ideal(n_bs, "tx") for _ in range(l_cells)),
            tuple(
                tuple(IqiParams.ideal(n_u, "rx") for _ in range(k_users))
                for _ in range(l_cells)
            ),
            sigma2,
        )

    @classmethod
    def uniform(
        cls,
        l_cells: int,
        k_users: int,
        n_bs: int,
        n_u: int,
        sigma2: float,
        eps_tx: float = 1.0,
        phi_tx: float = 0.0,
        eps_rx: float = 1.0,
        phi_rx: float = 0.0,
    ):
        """Same imbalance on every antenna of every node."""
        return cls(
            tuple(IqiParams.uniform(n_bs, eps_tx, phi_tx, "tx") for _ in range(l_cells)),
            tuple(
                tuple(IqiParams.uniform(n_u, eps_rx, phi_rx, "rx") for _ in range(k_users))
                for _ in range(l_cells)
            ),
            sigma2,
        )


@dataclass(frozen=True, eq=False)
class RealLinks:
    """Noise-normalized real channels and per-user noise covariances.

    ``h[l, k, i]`` maps the stacked transmit vector of base station ``i`` to
    user ``(l, k)``'s stacked observation; ``cn[l, k]`` is the unit-scale
    noise covariance (identity/2 for an ideal receive front end).
    """

    h: np.ndarray  # (L, K, L, 2*N_u, 2*N_BS)
    cn: np.ndarray  # (L, K, 2*N_u, 2*N_u)

    @property
    def shape(self) -> tuple[int, int]:
        return self.h.shape[0], self.h.shape[1]


def build_real_links(
    fs: FadingSet,
    ts: ThetaSet,
    imp: Impairments,
    space: UserSpaceMap | None = None,
) -> RealLinks:
    """Compose surfaces, apply the front ends and normalize by the noise."""
    l_cells, k_users = fs.direct.shape[0], fs.direct.shape[1]
    n_u, n_bs = fs.direct.shape[3], fs.direct.shape[4]
    scale = 1.0 / np.sqrt(imp.sigma2)
    h = np.empty((l_cells, k_users, l_cells, 2 * n_u, 2 * n_bs))
    cn = np.empty((l_cells, k_users, 2 * n_u, 2 * n_u))
    for l in range(l_cells):
        for k in range(k_users):
            rx = imp.rx[l][k]
            cn[l, k] = noise_covariance(NoiseModel(imp.sigma2, rx)) / imp.sigma2
            for i in range(l_cells):
                hc = assemble_effective_channel(fs, ts, l, k, i, space)
                h[l, k, i] = scale * iqi_equivalent_channel(hc, imp.tx[i], rx)
    return RealLinks(h, cn)


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """Real transmit covariances: one private block per user, one common
    block per cell.  Proper (complex-circular) signaling corresponds to the
    blocks carrying the real-composite structure; improper signaling is the
    general symmetric PSD case."""

    private: np.ndarray  # (L, K, 2*N_BS, 2*N_BS)
    common: np.ndarray  # (L, 2*N_BS, 2*N_BS)

    @property
    def n_cells(self) -> int:
        return self.private.shape[0]

    @property
    def n_users(self) -> int:
        return self.private.shape[1]

    def cell_total(self, i: int) -> np.ndarray:
        """Aggregate covariance radiated by base station ``i``."""
        return self.common[i] + self.private[i].sum(axis=0)

    def cell_power(self, l: int) -> float:
        return float(np.trace(self.cell_total(l)))

    def total_power(self) -> float:
        return float(sum(self.cell_power(l) for l in range(self.n_cells)))

    def validate(self, budgets: np.ndarray | None = None, tol: float = 1e-7) -> None:
        for l in range(self.n_cells):
            blocks = [self.common[l]] + [self.private[l, k] for k in range(self.n_users)]
            for b in blocks:
                if not np.allclose(b, b.T, atol=tol):
                    raise ValueError("covariance blocks must be symmetric")
                if np.linalg.eigvalsh(0.5 * (b + b.T)).min() < -tol:
                    raise ValueError("covariance blocks must be PSD")
            if budgets is not None and self.cell_power(l) > budgets[l] * (1 + tol) + tol:
                raise ValueError(f"cell {l} exceeds its power budget")


def uniform_covariances(
    l_cells: int, k_users: int, n_bs: int, budgets, *, common: bool = True
) -> CovarianceSet:
    """Equal power split over the K+1 streams, white over real dimensions."""
    budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (l_cells,))
    d = 2 * n_bs
    private = np.zeros((l_cells, k_users, d, d))
    com = np.zeros((l_cells, d, d))
    for l in range(l_cells):
        share = budgets[l] / (k_users + 1.0)
        for k in range(k_users):
            private[l, k] = share / d * np.eye(d)
        if common:
            com[l] = share / d * np.eye(d)
    return CovarianceSet(private, com)


def _logdet(m: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(m)
    if sign <= 0:
        raise np.linalg.LinAlgError("matrix inside a rate log-det is not PD")
    return float(val)


def interference_matrix(cov: CovarianceSet, links: RealLinks, l: int, k: int) -> np.ndarray:
    """Interference-plus-noise covariance seen by user ``(l, k)`` when
    decoding its private stream: everything from other cells (common and
    private), the other private streams of its own cell, and the front-end
    noise.  The own-cell common stream is absent — it was already removed."""
    d = links.cn[l, k].copy()
    for i in range(links.h.shape[2]):
        if i == l:
            continue
        h = links.h[l, k, i]
        d += h @ cov.cell_total(i) @ h.T
    h_own = links.h[l, k, l]
    for j in range(cov.n_users):
        if j != k:
            d += h_own @ cov.private[l, j] @ h_own.T
    return 0.5 * (d + d.T)


def private_rate(cov: CovarianceSet, links: RealLinks, l: int, k: int) -> float:
    """Rate of the private stream, ``0.5*log2 |D + H P Ht| - 0.5*log2 |D|``."""
    d = interference_matrix(cov, links, l, k)
    h = links.h[l, k, l]
    s = d + h @ cov.private[l, k] @ h.T
    return 0.5 * (_logdet(s) - _logdet(d)) / LN2


def common_rate_cap(cov: CovarianceSet, links: RealLinks, l: int, k: int) -> float:
    """Largest common rate user ``(l, k)`` can decode, with every private
    stream still unresolved."""
    d = interference_matrix(cov, links, l, k)
    h = links.h[l, k, l]
    e = d + h @ cov.private[l, k] @ h.T
    s = e + h @ cov.common[l] @ h.T
    return 0.5 * (_logdet(s) - _logdet(e)) / LN2


@dataclass(frozen=True, eq=False)
class RateBundle:
    """All decoding-rate ingredients at a fixed operating point."""

    private: np.ndarray  # (L, K)
    common_cap: np.ndarray  # (L, K) per-user caps on the common stream
    cell_common_cap: np.ndarray  # (L,) min over the cell's users

    @property
    def max_sum_rate(self) -> float:
        return float(self.private.sum() + self.cell_common_cap.sum())


def rate_bundle(cov: CovarianceSet, links: RealLinks) -> RateBundle:
    l_cells, k_users = links.shape
    priv = np.empty((l_cells, k_users))
    cap = np.empty((l_cells, k_users))
    for l in range(l_cells):
        for k in range(k_users):
            priv[l, k] = private_rate(cov, links, l, k)
            cap[l, k] = common_rate_cap(cov, links, l, k)
    return RateBundle(priv, cap, cap.min(axis=1))


def user_rates(bundle: RateBundle, r_c: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Total per-user rates for a common-rate allocation ``r_c``.

    The allocation must be nonnegative and sum within each cell to at most
    the cell's common cap (every user must be able to decode the whole
    common stream)."""
    r_c = np.asarray(r_c, dtype=float)
    if r_c.shape != bundle.private.shape:
        raise ValueError("allocation shape must match (L, K)")
    if np.any(r_c < -tol):
        raise ValueError("common-rate allocation must be nonnegative")
    sums = r_c.sum(axis=1)
    if np.any(sums > bundle.cell_common_cap + tol):
        raise ValueError("common-rate allocation exceeds a cell's decodable cap")
    return bundle.private + r_c


def allocate_common_maxmin(
    private: np.ndarray, cap: float, weights: np.ndarray, tol: float = 1e-12
) -> tuple[np.ndarray, float]:
    """Split a cell's common rate ``cap`` to maximize ``min_k (p_k + c_k) / w_k``.

    Water-filling by bisection on the attained value: target ``v`` is
    feasible iff ``sum_k max(0, w_k v - p_k) <= cap``.
    """
    private = np.asarray(private, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    lo = float(np.min(private / weights))
    hi = float((private.sum() + cap) / weights.min()) + 1.0

    def need(v):
        return np.maximum(0.0, weights * v - private).sum()

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if need(mid) <= cap:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * max(1.0, abs(hi)):
            break
    r_c = np.maximum(0.0, weights * lo - private)
    return r_c, lo


@dataclass(frozen=True)
class PowerModel:
    """Linear power-consumption model: static draw per user plus a slope on
    the radiated power (inverse amplifier efficiency)."""

    static_watts: float = 1.0
    amp_slope: float = 1.0 / 0.35


def gee(cov: CovarianceSet, total_rate: float, pm: PowerModel) -> float:
    """Network rate over network consumed power (bits/Joule per unit BW)."""
    consumed = (
        cov.n_cells * cov.n_users * pm.static_watts + pm.amp_slope * cov.total_power()
    )
    return total_rate / consumed


def ee_user(cov: CovarianceSet, rate_lk: float, l: int, k: int, pm: PowerModel) -> float:
    """Per-user rate over the power spent on that user: its private stream
    plus an equal share of the cell's common stream and one static unit."""
    spent = (
        pm.static_watts
        + pm.amp_slope * float(np.trace(cov.private[l, k]))
        + pm.amp_slope / cov.n_users * float(np.trace(cov.common[l]))
    )
    return rate_lk / spent
