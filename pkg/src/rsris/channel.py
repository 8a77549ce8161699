"""Geometry, fading and surface composition for the multicell downlink.

The deployment follows a two-cell corridor: base stations at the ends,
one surface per cell mounted near the cell edge, and the served users
dropped in a square around their cell's surface.  Direct links are
Rayleigh with a steep loss exponent; the two surface hops are Rician.
All small-scale draws are reproducible from a single integer seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Topology",
    "FadingParams",
    "FadingSet",
    "ThetaSet",
    "UserSpaceMap",
    "default_node_positions",
    "make_topology",
    "sample_scenario",
    "assemble_effective_channel",
    "effective_channels",
    "path_gain",
]


@dataclass(frozen=True, eq=False)
class Topology:
    """Node coordinates (meters) and antenna/element counts."""

    bs_positions: np.ndarray  # (L, 3)
    ris_positions: np.ndarray  # (M, 3)
    user_positions: np.ndarray  # (L, K, 3)
    n_bs: int
    n_u: int
    n_ris: int

    def __post_init__(self):
        l, m = self.bs_positions.shape[0], self.ris_positions.shape[0]
        if m < l:
            raise ValueError(f"need at least one surface per cell, got M={m} < L={l}")
        if self.user_positions.shape[0] != l or self.user_positions.shape[2] != 3:
            raise ValueError("user_positions must have shape (L, K, 3)")
        if min(self.n_bs, self.n_u, self.n_ris) < 1:
            raise ValueError("antenna and element counts must be positive")

    @property
    def n_cells(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[1]

    @property
    def n_surfaces(self) -> int:
        return self.ris_positions.shape[0]


@dataclass(frozen=True)
class FadingParams:
    """Large- and small-scale fading constants.

    ``ref_loss_db`` is the path loss at 1 m.  Direct base-station/user links
    are Rayleigh with exponent ``direct_exponent``; both surface hops are
    Rician with factor ``rician_k_db`` and exponent ``ris_exponent``.
    """

    ref_loss_db: float = -30.0
    direct_exponent: float = 3.75
    ris_exponent: float = 2.2
    rician_k_db: float = 3.0


@dataclass(frozen=True, eq=False)
class FadingSet:
    """One realization of every link in the network.

    ``direct[l, k, i]`` is the channel from base station ``i`` to user
    ``(l, k)``; ``ris_user[l, k, m]`` from surface ``m`` to that user;
    ``bs_ris[m, i]`` from base station ``i`` to surface ``m``.
    """

    direct: np.ndarray  # (L, K, L, N_u, N_BS)
    ris_user: np.ndarray  # (L, K, M, N_u, N_RIS)
    bs_ris: np.ndarray  # (M, L, N_RIS, N_BS)

    def __post_init__(self):
        for name in ("direct", "ris_user", "bs_ris"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=complex)
            )


@dataclass(frozen=True, eq=False)
class ThetaSet:
    """Per-surface coefficient vectors.

    ``theta[m]`` holds surface ``m``'s reflection coefficients.  For
    simultaneously transmitting/reflecting surfaces ``theta_t`` carries the
    transmission-side coefficients; it is ``None`` for reflect-only surfaces.
    """

    theta: np.ndarray  # (M, N_RIS) complex
    theta_t: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=complex))
        if self.theta_t is not None:
            tt = np.asarray(self.theta_t, dtype=complex)
            if tt.shape != self.theta.shape:
                raise ValueError("transmission coefficients must match theta's shape")
            object.__setattr__(self, "theta_t", tt)

    @property
    def is_star(self) -> bool:
        return self.theta_t is not None


@dataclass(frozen=True, eq=False)
class UserSpaceMap:
    """Which side of a transmitting/reflecting surface serves each user."""

    transmission: np.ndarray  # (L, K) bool

    @classmethod
    def all_reflection(cls, l_cells: int, k_users: int) -> "UserSpaceMap":
        return cls(np.zeros((l_cells, k_users), dtype=bool))


def path_gain(distance_m: np.ndarray, exponent: float, ref_loss_db: float = -30.0):
    """Average power gain ``10^(ref/10) * d^-exponent`` of a link."""
    return 10.0 ** (ref_loss_db / 10.0) * np.asarray(distance_m, dtype=float) ** (-exponent)


def default_node_positions(l_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Corridor layout: base stations 400 m apart, surfaces near the middle."""
    if l_cells == 1:
        bs = np.array([[0.0, 0.0, 25.0]])
        ris = np.array([[180.0, 0.0, 15.0]])
    elif l_cells == 2:
        bs = np.array([[0.0, 0.0, 25.0], [400.0, 0.0, 25.0]])
        ris = np.array([[180.0, 0.0, 15.0], [220.0, 0.0, 15.0]])
    else:
        raise ValueError("default layout covers 1 or 2 cells; pass positions explicitly")
    return bs, ris


def make_topology(
    l_cells: int,
    k_users: int,
    n_bs: int,
    n_u: int,
    n_ris: int,
    seed: int,
    *,
    square_side: float = 20.0,
    user_height: float = 1.5,
    bs_positions: np.ndarray | None = None,
    ris_positions: np.ndarray | None = None,
) -> Topology:
    """Drop ``k_users`` users per cell uniformly in a square centred on the
    cell's surface and return the resulting topology."""
    if bs_positions is None or ris_positions is None:
        bs_positions, ris_positions = default_node_positions(l_cells)
    bs_positions = np.asarray(bs_positions, dtype=float)
    ris_positions = np.asarray(ris_positions, dtype=float)
    if ris_positions.shape[0] < l_cells:
        raise ValueError("need at least one surface per cell to centre the user drops")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    users = np.empty((l_cells, k_users, 3))
    for l in range(l_cells):
        centre = ris_positions[l][:2]
        xy = rng.uniform(-square_side / 2.0, square_side / 2.0, size=(k_users, 2)) + centre
        users[l, :, :2] = xy
        users[l, :, 2] = user_height
    return Topology(bs_positions, ris_positions, users, n_bs, n_u, n_ris)


def _steering(n: int, direction: np.ndarray) -> np.ndarray:
    """Half-wavelength linear-array response for a propagation direction."""
    return np.exp(1j * np.pi * np.arange(n) * direction[0])


def _rician(rng, gain, n_rx, n_tx, k_lin, direction):
    los = np.outer(_steering(n_rx, -direction), np.conj(_steering(n_tx, direction)))
    nlos = (rng.normal(size=(n_rx, n_tx)) + 1j * rng.normal(size=(n_rx, n_tx))) / np.sqrt(2)
    return np.sqrt(gain) * (
        np.sqrt(k_lin / (1 + k_lin)) * los + np.sqrt(1 / (1 + k_lin)) * nlos
    )


def sample_scenario(
    top: Topology,
    fp: FadingParams,
    seed: int,
    *,
    blocked: np.ndarray | None = None,
) -> FadingSet:
    """Draw one fading realization for every link.

    ``blocked`` optionally marks users (shape ``(L, K)``) that no surface can
    reach; their surface/user links are zeroed while direct links remain.
    The same seed reproduces the same realization bit for bit.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    l_cells, k_users, m_ris = top.n_cells, top.n_users, top.n_surfaces
    k_lin = 10.0 ** (fp.rician_k_db / 10.0)

    direct = np.empty((l_cells, k_users, l_cells, top.n_u, top.n_bs), dtype=complex)
    ris_user = np.empty((l_cells, k_users, m_ris, top.n_u, top.n_ris), dtype=complex)
    bs_ris = np.empty((m_ris, l_cells, top.n_ris, top.n_bs), dtype=complex)

    for l in range(l_cells):
        for k in range(k_users):
            pu = top.user_positions[l, k]
            for i in range(l_cells):
                d = np.linalg.norm(pu - top.bs_positions[i])
                gain = path_gain(d, fp.direct_exponent, fp.ref_loss_db)
                w = rng.normal(size=(top.n_u, top.n_bs)) + 1j * rng.normal(
                    size=(top.n_u, top.n_bs)
                )
                direct[l, k, i] = np.sqrt(gain / 2.0) * w
            for m in range(m_ris):
                vec = pu - top.ris_positions[m]
                d = np.linalg.norm(vec)
                gain = path_gain(d, fp.ris_exponent, fp.ref_loss_db)
                ris_user[l, k, m] = _rician(rng, gain, top.n_u, top.n_ris, k_lin, vec / d)
    for m in range(m_ris):
        for i in range(l_cells):
            vec = top.ris_positions[m] - top.bs_positions[i]
            d = np.linalg.norm(vec)
            gain = path_gain(d, fp.ris_exponent, fp.ref_loss_db)
            bs_ris[m, i] = _rician(rng, gain, top.n_ris, top.n_bs, k_lin, vec / d)

    if blocked is not None:
        ris_user = ris_user.copy()
        ris_user[np.asarray(blocked, dtype=bool)] = 0.0

    return FadingSet(direct, ris_user, bs_ris)


def _user_theta(ts: ThetaSet, space: UserSpaceMap | None, l: int, k: int) -> np.ndarray:
    if ts.is_star and space is not None and space.transmission[l, k]:
        return ts.theta_t
    return ts.theta


def assemble_effective_channel(
    fs: FadingSet,
    ts: ThetaSet,
    l: int,
    k: int,
    i: int,
    space: UserSpaceMap | None = None,
) -> np.ndarray:
    """Composite channel from base station ``i`` to user ``(l, k)``.

    Sum over surfaces of (surface-to-user) diag(theta) (station-to-surface),
    plus the direct link.  The result is affine in every coefficient.  Users
    on the transmission side of a two-sided surface see its transmission
    coefficients instead.
    """
    th = _user_theta(ts, space, l, k)
    h = fs.direct[l, k, i].copy()
    for m in range(fs.bs_ris.shape[0]):
        h += fs.ris_user[l, k, m] @ (th[m][:, None] * fs.bs_ris[m, i])
    return h


def effective_channels(
    fs: FadingSet, ts: ThetaSet, space: UserSpaceMap | None = None
) -> np.ndarray:
    """All composite channels, indexed ``[l, k, i]``."""
    l_cells, k_users = fs.direct.shape[0], fs.direct.shape[1]
    out = np.empty_like(fs.direct)
    for l in range(l_cells):
        for k in range(k_users):
            for i in range(l_cells):
                out[l, k, i] = assemble_effective_channel(fs, ts, l, k, i, space)
    return out
