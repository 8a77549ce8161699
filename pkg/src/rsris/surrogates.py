"""Concave minorants of the decoding rates.

Each rate is a difference of log-dets.  For the covariance step the
concave half is kept and the convex half is replaced by its tangent plane
(an affine upper bound on ``ln|A + sum_i B X_i Bt|``).  For the surface
step both halves are replaced by a quadratic minorant that is concave in
the coefficients because the matrix weighting the square,
``inv(Yb) - inv(Vb Vbt + Yb)``, is PSD.

All minorants are tight at the expansion point, share its gradient and
never exceed the true rate — the three properties that make the iterates
of the outer loops monotone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FadingSet, ThetaSet, UserSpaceMap
from .rates import LN2, CovarianceSet, Impairments, RealLinks, interference_matrix
from .realdec import iqi_equivalent_channel, noise_covariance, NoiseModel

__all__ = [
    "JITTER",
    "psd_sqrt",
    "LogDetUpperBound",
    "logdet_linear_upper",
    "ConcaveRateSurrogate",
    "CovExpansion",
    "ThetaLinearMaps",
    "ThetaRateSurrogate",
    "ThetaExpansion",
    "QuadraticModulusBound",
    "quadratic_modulus_lower",
]

#: Relative ridge added before inverting interference covariances.
JITTER = 1e-10


def psd_sqrt(m: np.ndarray, clamp: float = 1e-12) -> np.ndarray:
    """Symmetric square root; eigenvalues below ``clamp`` count as zero."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    w = np.where(w < clamp, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def _inv_psd(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    return np.linalg.inv(0.5 * (m + m.T) + JITTER * np.eye(n))


def _cov_block(cov: CovarianceSet, key: tuple) -> np.ndarray:
    if key[0] == "p":
        return cov.private[key[1], key[2]]
    return cov.common[key[1]]


@dataclass(frozen=True, eq=False)
class LogDetUpperBound:
    """Affine upper bound on ``f({X}) = ln|A + sum_b B_b X_kb B_bt|``.

    ``value`` equals ``f`` at the expansion covariances and dominates it
    everywhere else (concavity of log-det in the PSD cone).
    """

    value_at_expansion: float
    coeffs: tuple  # ((key, Q), ...) with Q = Bt S^-1 B at the expansion
    expansion: dict  # key -> covariance block at the expansion

    def value(self, blocks: dict) -> float:
        out = self.value_at_expansion
        for key, q in self.coeffs:
            out += float(np.sum(q * (blocks[key] - self.expansion[key])))
        return out


def logdet_linear_upper(a: np.ndarray, terms, expansion: dict) -> LogDetUpperBound:
    """Tangent plane of ``ln|A + sum B X Bt|`` at ``expansion``.

    ``terms`` is a sequence of ``(key, B)`` pairs; several pairs may share a
    key and a key may appear under several maps.
    """
    s = a.copy()
    for key, b in terms:
        s = s + b @ expansion[key] @ b.T
    s_inv = _inv_psd(s)
    sign, f0 = np.linalg.slogdet(0.5 * (s + s.T))
    if sign <= 0:
        raise np.linalg.LinAlgError("expansion matrix must be positive definite")
    coeffs = tuple((key, b.T @ s_inv @ b) for key, b in terms)
    return LogDetUpperBound(float(f0), coeffs, {k: v.copy() for k, v in expansion.items()})


@dataclass(frozen=True, eq=False)
class ConcaveRateSurrogate:
    """Concave-in-covariances minorant of one decoding rate (bits/s/Hz).

    ``0.5/ln2 * ln|base + sum_B B (sum of its blocks) Bt|`` plus trace-affine
    terms.  ``logdet_terms`` is a tuple of ``(B, keys)``; ``lin_terms`` a
    tuple of ``(key, C)`` contributing ``tr(C X_key)``.
    """

    base: np.ndarray
    logdet_terms: tuple
    lin_terms: tuple
    offset: float

    def logdet_arg(self, cov: CovarianceSet) -> np.ndarray:
        arg = self.base.copy()
        for b, keys in self.logdet_terms:
            acc = sum(_cov_block(cov, key) for key in keys)
            arg = arg + b @ acc @ b.T
        return arg

    def value(self, cov: CovarianceSet) -> float:
        sign, ld = np.linalg.slogdet(self.logdet_arg(cov))
        if sign <= 0:
            raise np.linalg.LinAlgError("surrogate log-det argument not PD")
        out = 0.5 * ld / LN2 + self.offset
        for key, c in self.lin_terms:
            out += float(np.sum(c * _cov_block(cov, key)))
        return out


class CovExpansion:
    """Per-user interference state frozen at the current covariances.

    Exposes the covariance-step minorants: the private rate keeps its joint
    log-det and linearizes the interference log-det; the common-stream cap
    does the same one decoding stage earlier.
    """

    def __init__(self, cov: CovarianceSet, links: RealLinks):
        self.cov = cov
        self.links = links
        l_cells, k_users = links.shape
        self.l_cells, self.k_users = l_cells, k_users
        dim = links.cn.shape[-1]
        self.d = np.empty((l_cells, k_users, dim, dim))
        self.e = np.empty_like(self.d)
        for l in range(l_cells):
            for k in range(k_users):
                d = interference_matrix(cov, links, l, k)
                h = links.h[l, k, l]
                self.d[l, k] = d
                self.e[l, k] = d + h @ cov.private[l, k] @ h.T

    def _blocks(self) -> dict:
        out = {}
        for l in range(self.l_cells):
            out[("c", l)] = self.cov.common[l]
            for k in range(self.k_users):
                out[("p", l, k)] = self.cov.private[l, k]
        return out

    def _interference_terms(self, l: int, k: int, include_own: bool):
        """(key, B) pairs of every covariance that interferes with user
        (l, k); ``include_own`` adds its own private block (common-cap case)."""
        terms = []
        for i in range(self.l_cells):
            h = self.links.h[l, k, i]
            if i == l:
                for j in range(self.k_users):
                    if j != k or include_own:
                        terms.append((("p", l, j), h))
            else:
                terms.append((("c", i), h))
                for j in range(self.k_users):
                    terms.append((("p", i, j), h))
        return terms

    def _signal_logdet_terms(self, l: int, k: int, with_common: bool):
        """(B, keys) groups for the kept log-det of user (l, k)."""
        groups = []
        for i in range(self.l_cells):
            h = self.links.h[l, k, i]
            if i == l:
                keys = [("p", l, j) for j in range(self.k_users)]
                if with_common:
                    keys.append(("c", l))
            else:
                keys = [("c", i)] + [("p", i, j) for j in range(self.k_users)]
            groups.append((h, tuple(keys)))
        return tuple(groups)

    def _surrogate(self, l: int, k: int, with_common: bool) -> ConcaveRateSurrogate:
        bound = logdet_linear_upper(
            self.links.cn[l, k],
            self._interference_terms(l, k, include_own=with_common),
            self._blocks(),
        )
        scale = 0.5 / LN2
        lin: dict = {}
        offset = -scale * bound.value_at_expansion
        for key, q in bound.coeffs:
            lin[key] = lin.get(key, 0.0) - scale * q
            offset += scale * float(np.sum(q * bound.expansion[key]))
        return ConcaveRateSurrogate(
            base=self.links.cn[l, k],
            logdet_terms=self._signal_logdet_terms(l, k, with_common),
            lin_terms=tuple(lin.items()),
            offset=offset,
        )

    def private_surrogate(self, l: int, k: int) -> ConcaveRateSurrogate:
        return self._surrogate(l, k, with_common=False)

    def common_surrogate(self, l: int, k: int) -> ConcaveRateSurrogate:
        return self._surrogate(l, k, with_common=True)


class ThetaLinearMaps:
    """Affine dependence of every real equivalent channel on the surface
    coefficients, with the front ends folded in.

    Coefficients are stacked as ``[Re r; Im r]`` (reflect-only) or
    ``[Re r; Im r; Re t; Im t]`` (two-sided surfaces), each block in
    surface-major, element-minor order.  For channel key ``(l, k, i)``,
    ``h_real(key, v) = base[key] + unflatten(t_mat[key] @ v)``.
    """

    def __init__(self, fs: FadingSet, imp: Impairments, space: UserSpaceMap | None = None, star: bool = False):
        l_cells, k_users = fs.direct.shape[0], fs.direct.shape[1]
        m_ris, n_ris = fs.bs_ris.shape[0], fs.bs_ris.shape[2]
        n_u, n_bs = fs.direct.shape[3], fs.direct.shape[4]
        self.l_cells, self.k_users = l_cells, k_users
        self.m_ris, self.n_ris = m_ris, n_ris
        self.star = star
        self.n_coeff = m_ris * n_ris
        self.n_vars = (4 if star else 2) * self.n_coeff
        self.rows = 2 * n_u
        self.cols = 2 * n_bs
        scale = 1.0 / np.sqrt(imp.sigma2)

        self.base: dict = {}
        self.t_mat: dict = {}
        self.cn = np.empty((l_cells, k_users, 2 * n_u, 2 * n_u))
        for l in range(l_cells):
            for k in range(k_users):
                rx = imp.rx[l][k]
                self.cn[l, k] = noise_covariance(NoiseModel(imp.sigma2, rx)) / imp.sigma2
                use_t = bool(star and space is not None and space.transmission[l, k])
                block = 2 * self.n_coeff if use_t else 0
                for i in range(l_cells):
                    tx = imp.tx[i]
                    key = (l, k, i)
                    self.base[key] = scale * iqi_equivalent_channel(fs.direct[l, k, i], tx, rx)
                    t = np.zeros((self.rows * self.cols, self.n_vars))
                    for m in range(m_ris):
                        for n in range(n_ris):
                            r1 = np.outer(fs.ris_user[l, k, m][:, n], fs.bs_ris[m, i][n, :])
                            col = block + m * n_ris + n
                            t[:, col] = (scale * iqi_equivalent_channel(r1, tx, rx)).ravel()
                            t[:, col + self.n_coeff] = (
                                scale * iqi_equivalent_channel(1j * r1, tx, rx)
                            ).ravel()
                    self.t_mat[key] = t

    def theta_to_vec(self, ts: ThetaSet) -> np.ndarray:
        parts = [ts.theta.real.ravel(), ts.theta.imag.ravel()]
        if self.star:
            if ts.theta_t is None:
                raise ValueError("two-sided maps need transmission coefficients")
            parts += [ts.theta_t.real.ravel(), ts.theta_t.imag.ravel()]
        return np.concatenate(parts)

    def vec_to_theta(self, v: np.ndarray) -> ThetaSet:
        nc = self.n_coeff
        shape = (self.m_ris, self.n_ris)
        theta = (v[:nc] + 1j * v[nc : 2 * nc]).reshape(shape)
        if not self.star:
            return ThetaSet(theta)
        theta_t = (v[2 * nc : 3 * nc] + 1j * v[3 * nc :]).reshape(shape)
        return ThetaSet(theta, theta_t)

    def h_real(self, key: tuple, v: np.ndarray) -> np.ndarray:
        return self.base[key] + (self.t_mat[key] @ v).reshape(self.rows, self.cols)

    def links_at(self, v: np.ndarray) -> RealLinks:
        h = np.empty((self.l_cells, self.k_users, self.l_cells, self.rows, self.cols))
        for key in self.base:
            h[key] = self.h_real(key, v)
        return RealLinks(h, self.cn)


@dataclass(frozen=True, eq=False)
class ThetaRateSurrogate:
    """Concave-in-coefficients quadratic minorant of one decoding rate.

    value(v) = const + tr(Wt V)/ln2
             - (noise_quad + sum_a ||Msqrt H_a(v) S_a||_F^2) / (2 ln2)

    with ``V = H_own(v) S_own``.  ``quad_terms`` includes the own-signal
    term; ``Msqrt`` is the root of the PSD gap between the two inverses at
    the expansion point, which is what makes the quadratic concave.
    """

    maps: ThetaLinearMaps
    const: float
    own_key: tuple
    s_own: np.ndarray
    w: np.ndarray
    msqrt: np.ndarray
    noise_quad: float
    quad_terms: tuple  # ((key, S), ...)

    def value(self, v: np.ndarray) -> float:
        lin = float(np.sum(self.w * (self.maps.h_real(self.own_key, v) @ self.s_own)))
        quad = self.noise_quad
        for key, s in self.quad_terms:
            quad += float(np.sum((self.msqrt @ self.maps.h_real(key, v) @ s) ** 2))
        return self.const + lin / LN2 - 0.5 * quad / LN2


class ThetaExpansion:
    """Surface-step expansion state at coefficients ``v_prev`` with the
    covariances held fixed."""

    def __init__(self, maps: ThetaLinearMaps, cov: CovarianceSet, v_prev: np.ndarray):
        self.maps = maps
        self.cov = cov
        self.v_prev = np.asarray(v_prev, dtype=float)
        l_cells, k_users = maps.l_cells, maps.k_users
        self._sqrt_private = np.empty(
            (l_cells, k_users) + cov.private.shape[2:], dtype=float
        )
        self._sqrt_common = np.empty((l_cells,) + cov.common.shape[1:], dtype=float)
        self._sqrt_agg = np.empty_like(self._sqrt_common)
        for l in range(l_cells):
            self._sqrt_common[l] = psd_sqrt(cov.common[l])
            self._sqrt_agg[l] = psd_sqrt(cov.cell_total(l))
            for k in range(k_users):
                self._sqrt_private[l, k] = psd_sqrt(cov.private[l, k])
        self._h_prev = {key: maps.h_real(key, self.v_prev) for key in maps.base}

    def _y_terms(self, l: int, k: int, include_own_private: bool):
        """Quadratic (key, root) pairs building the interference block Y."""
        terms = []
        for i in range(self.maps.l_cells):
            if i == l:
                for j in range(self.maps.k_users):
                    if j != k or include_own_private:
                        terms.append(((l, k, l), self._sqrt_private[l, j]))
            else:
                terms.append(((l, k, i), self._sqrt_agg[i]))
        return terms

    def surrogate(self, l: int, k: int, which: str = "private") -> ThetaRateSurrogate:
        """Minorant of the private rate or of the common-stream cap of user
        ``(l, k)`` as a function of the stacked surface coefficients."""
        own_key = (l, k, l)
        if which == "private":
            s_own = self._sqrt_private[l, k]
            y_terms = self._y_terms(l, k, include_own_private=False)
        elif which == "common":
            s_own = self._sqrt_common[l]
            y_terms = self._y_terms(l, k, include_own_private=True)
        else:
            raise ValueError("which must be 'private' or 'common'")

        cn = self.maps.cn[l, k]
        y_bar = cn.copy()
        for key, s in y_terms:
            b = self._h_prev[key] @ s
            y_bar = y_bar + b @ b.T
        v_bar = self._h_prev[own_key] @ s_own

        y_inv = _inv_psd(y_bar)
        z_inv = _inv_psd(y_bar + v_bar @ v_bar.T)
        m = 0.5 * ((y_inv - z_inv) + (y_inv - z_inv).T)
        msqrt = psd_sqrt(m)
        sign, ld = np.linalg.slogdet(
            np.eye(y_bar.shape[0]) + v_bar @ v_bar.T @ y_inv
        )
        r_prev = 0.5 * ld / LN2
        const = r_prev - 0.5 * float(np.sum((v_bar @ v_bar.T) * y_inv)) / LN2
        return ThetaRateSurrogate(
            maps=self.maps,
            const=const,
            own_key=own_key,
            s_own=s_own,
            w=y_inv @ v_bar,
            msqrt=msqrt,
            noise_quad=float(np.sum(m * cn)),
            quad_terms=tuple([(own_key, s_own)] + y_terms),
        )


@dataclass(frozen=True, eq=False)
class QuadraticModulusBound:
    """Affine lower bound on squared moduli around an expansion point:
    ``|t|^2 >= |tp|^2 + 2 Re{conj(tp) (t - tp)}`` elementwise, hence also
    for any sum of entries."""

    t_prev: np.ndarray

    def elementwise(self, t: np.ndarray) -> np.ndarray:
        tp = self.t_prev
        return np.abs(tp) ** 2 + 2 * np.real(np.conj(tp) * (t - tp))

    def value(self, t: np.ndarray) -> float:
        return float(np.sum(self.elementwise(t)))


def quadratic_modulus_lower(t_prev: np.ndarray) -> QuadraticModulusBound:
    return QuadraticModulusBound(np.asarray(t_prev, dtype=complex))
