"""Real-composite algebra for widely linear transceivers.

A complex matrix ``M`` acts on the stacked real vector ``[Re x; Im x]``
through its real composite ``[[Re M, -Im M], [Im M, Re M]]``.  Front ends
with I/Q imbalance are widely linear (``x -> a x + b conj(x)``), which is
still linear over the reals, so the whole impaired link collapses to one
real matrix and one (generally improper) real noise covariance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "IqiParams",
    "NoiseModel",
    "to_real_composite",
    "from_real_composite",
    "real_vec",
    "complex_vec",
    "is_proper_structured",
    "proper_covariance",
    "wl_real_matrix",
    "iqi_equivalent_channel",
    "noise_covariance",
]


def to_real_composite(m: np.ndarray) -> np.ndarray:
    """Real composite ``[[Re m, -Im m], [Im m, Re m]]`` of a complex matrix."""
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


def from_real_composite(mr: np.ndarray) -> np.ndarray:
    """Recover the complex matrix from a proper-structured real composite."""
    rows, cols = mr.shape
    r, c = rows // 2, cols // 2
    return mr[:r, :c] + 1j * mr[r:, :c]


def real_vec(x: np.ndarray) -> np.ndarray:
    """Stack ``[Re x; Im x]`` of a complex vector."""
    x = np.asarray(x, dtype=complex)
    return np.concatenate([x.real, x.imag], axis=0)


def complex_vec(xr: np.ndarray) -> np.ndarray:
    """Inverse of :func:`real_vec`."""
    n = xr.shape[0] // 2
    return xr[:n] + 1j * xr[n:]


def is_proper_structured(mr: np.ndarray, tol: float = 0.0) -> bool:
    """True when ``mr`` has the block pattern of a complex (proper) operator.

    Top-left must equal bottom-right and top-right must equal minus the
    bottom-left, entrywise within ``tol``.
    """
    rows, cols = mr.shape
    if rows % 2 or cols % 2:
        return False
    r, c = rows // 2, cols // 2
    return bool(
        np.all(np.abs(mr[:r, :c] - mr[r:, c:]) <= tol)
        and np.all(np.abs(mr[:r, c:] + mr[r:, :c]) <= tol)
    )


def proper_covariance(c: np.ndarray) -> np.ndarray:
    """Real covariance of the stacked vector of a proper signal with cov ``c``."""
    return 0.5 * to_real_composite(c)


def wl_real_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Real matrix of the widely linear map ``x -> a x + b conj(x)``.

    Acts on ``[Re x; Im x]`` and returns ``[Re y; Im y]``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    return np.block(
        [
            [a.real + b.real, -a.imag + b.imag],
            [a.imag + b.imag, a.real - b.real],
        ]
    )


@dataclass(frozen=True, eq=False)
class IqiParams:
    """Per-antenna I/Q imbalance of one side of a link.

    ``epsilon`` is the amplitude imbalance (ideal 1) and ``phi`` the phase
    imbalance in radians (ideal 0).  The branch mismatch enters through the
    widely linear coefficients ``mu = (1 + epsilon*exp(j*phi)) / 2`` and
    ``nu = (1 - epsilon*exp(-j*phi)) / 2`` applied per antenna.
    """

    epsilon: np.ndarray
    phi: np.ndarray
    side: str  # "tx" or "rx"

    def __post_init__(self):
        object.__setattr__(self, "epsilon", np.atleast_1d(np.asarray(self.epsilon, dtype=float)))
        object.__setattr__(self, "phi", np.atleast_1d(np.asarray(self.phi, dtype=float)))
        if self.side not in ("tx", "rx"):
            raise ValueError(f"side must be 'tx' or 'rx', got {self.side!r}")
        if self.epsilon.shape != self.phi.shape:
            raise ValueError("epsilon and phi must have matching shapes")
        if np.any(self.epsilon <= 0):
            raise ValueError("amplitude imbalance epsilon must be positive")
        if np.any(np.abs(self.phi) >= np.pi / 2):
            raise ValueError("phase imbalance phi must lie in (-pi/2, pi/2)")

    @classmethod
    def ideal(cls, n: int, side: str) -> "IqiParams":
        return cls(np.ones(n), np.zeros(n), side)

    @classmethod
    def uniform(cls, n: int, epsilon: float, phi: float, side: str) -> "IqiParams":
        return cls(np.full(n, float(epsilon)), np.full(n, float(phi)), side)

    @property
    def n_antennas(self) -> int:
        return self.epsilon.shape[0]

    @property
    def mu(self) -> np.ndarray:
        return (1.0 + self.epsilon * np.exp(1j * self.phi)) / 2.0

    @property
    def nu(self) -> np.ndarray:
        return (1.0 - self.epsilon * np.exp(-1j * self.phi)) / 2.0

    @property
    def is_ideal(self) -> bool:
        return bool(np.all(self.epsilon == 1.0) and np.all(self.phi == 0.0))


def iqi_equivalent_channel(h: np.ndarray, tx: IqiParams, rx: IqiParams) -> np.ndarray:
    """Real equivalent of a complex channel wrapped by imbalanced front ends.

    The transmit side radiates ``mu_t*x + nu_t*conj(x)`` per antenna, the
    receive side mixes the antenna signal with its conjugate likewise, and
    the cascade of widely linear maps is the product of their real
    matrices.  Ideal parameters on both sides reduce to
    :func:`to_real_composite` exactly.
    """
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    n_rx, n_tx = h.shape
    if tx.side != "tx" or rx.side != "rx":
        raise ValueError("pass transmit-side params first, receive-side second")
    if tx.n_antennas != n_tx or rx.n_antennas != n_rx:
        raise ValueError(
            f"IQI antenna counts ({tx.n_antennas} tx, {rx.n_antennas} rx) do not "
            f"match channel shape {h.shape}"
        )
    w_tx = wl_real_matrix(h * tx.mu, h * tx.nu)
    w_rx = wl_real_matrix(np.diag(rx.mu), np.diag(rx.nu))
    return w_rx @ w_tx


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Thermal noise power and the receive front end that distorts it."""

    sigma2: float
    rx: IqiParams

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("noise power sigma2 must be positive")
        if self.rx.side != "rx":
            raise ValueError("NoiseModel needs receive-side IqiParams")

    @classmethod
    def ideal(cls, sigma2: float, n_rx: int) -> "NoiseModel":
        return cls(sigma2, IqiParams.ideal(n_rx, "rx"))


def noise_covariance(nm: NoiseModel) -> np.ndarray:
    """Real covariance of the noise after the receive front end.

    Proper thermal noise with power ``sigma2`` has stacked covariance
    ``sigma2/2 * I``; the receive mixing matrix then acts by congruence.
    The result is symmetric PSD, and exactly ``sigma2/2 * I`` for an ideal
    front end.
    """
    g = wl_real_matrix(np.diag(nm.rx.mu), np.diag(nm.rx.nu))
    cn = 0.5 * nm.sigma2 * (g @ g.T)
    return 0.5 * (cn + cn.T)
