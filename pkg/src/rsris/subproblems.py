"""Conic subproblems of the alternating design.

Every optimization this package performs is one of two convex programs:

* the covariance step — symmetric PSD blocks per stream, log-det surrogate
  rates, one program per outer iteration (fractional objectives wrap it in
  a Dinkelbach loop with a parametric price on power);
* the coefficient step — stacked real/imag surface coefficients, quadratic
  surrogate rates, hardware sets from :mod:`rsris.rispace`.

Both are interior-point solved; proper (circular) signaling is the same
program with the real-composite block structure imposed linearly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .channel import ThetaSet
from .rates import LN2, CovarianceSet, PowerModel
from .rispace import PhaseAmplitudeLaw, RelaxationParams, convexified_constraints
from .surrogates import ConcaveRateSurrogate, CovExpansion, ThetaExpansion, ThetaRateSurrogate

__all__ = [
    "SolverReport",
    "InfeasibleTargetError",
    "DEFAULT_SOLVERS",
    "solve_p_step_maxmin",
    "solve_p_step_powermin",
    "solve_p_step_gee",
    "solve_p_step_maxmin_ee",
    "solve_theta_step",
]

DEFAULT_SOLVERS = ("CLARABEL", "SCS")

DINKELBACH_TOL = 1e-6
DINKELBACH_MAX_ITER = 30


class InfeasibleTargetError(RuntimeError):
    """Raised when rate targets cannot be met from the current expansion."""


@dataclass
class SolverReport:
    status: str
    objective: float | None
    solver: str
    solve_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "optimal_inaccurate")


def _attempt(problem: cp.Problem) -> SolverReport:
    last = SolverReport("error", None, "none")
    for name in DEFAULT_SOLVERS:
        try:
            problem.solve(solver=name)
        except Exception:  # noqa: BLE001 - solver backends raise all sorts
            last = SolverReport("error", None, name)
            continue
        stats = problem.solver_stats
        last = SolverReport(
            status=str(problem.status),
            objective=None if problem.value is None else float(problem.value),
            solver=name,
            solve_time=float(getattr(stats, "solve_time", 0.0) or 0.0),
        )
        if last.ok:
            return last
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return last
    return last


def _clean_psd(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    return (v * np.maximum(w, 0.0)) @ v.T


def _surrogate_expr(s: ConcaveRateSurrogate, var_of) -> cp.Expression:
    arg = cp.Constant(s.base)
    for b, keys in s.logdet_terms:
        acc = sum(var_of(key) for key in keys)
        arg = arg + b @ acc @ b.T
    expr = (0.5 / LN2) * cp.log_det(arg) + s.offset
    for key, c in s.lin_terms:
        expr = expr + cp.sum(cp.multiply(c, var_of(key)))
    return expr


class _CovStep:
    """Variables, surrogates and shared constraints of one covariance step."""

    def __init__(self, ep: CovExpansion, scheme: str, signaling: str):
        if scheme not in ("rs", "tin"):
            raise ValueError("scheme must be 'rs' or 'tin'")
        if signaling not in ("igs", "pgs"):
            raise ValueError("signaling must be 'igs' or 'pgs'")
        self.ep = ep
        self.scheme = scheme
        l_cells, k_users = ep.l_cells, ep.k_users
        d = ep.links.h.shape[-1]
        self.l_cells, self.k_users, self.dim = l_cells, k_users, d

        self.p = [[cp.Variable((d, d), PSD=True) for _ in range(k_users)] for _ in range(l_cells)]
        if scheme == "rs":
            self.pc = [cp.Variable((d, d), PSD=True) for _ in range(l_cells)]
            self.r_c = cp.Variable((l_cells, k_users), nonneg=True)
        else:
            self.pc = [cp.Constant(np.zeros((d, d))) for _ in range(l_cells)]
            self.r_c = None

        self.base_cons: list = []
        if signaling == "pgs":
            nb = d // 2
            blocks = [b for row in self.p for b in row]
            if scheme == "rs":
                blocks += list(self.pc)
            for b in blocks:
                self.base_cons.append(b[:nb, :nb] == b[nb:, nb:])
                self.base_cons.append(b[:nb, nb:] == -b[nb:, :nb])

        def var_of(key):
            if key[0] == "p":
                return self.p[key[1]][key[2]]
            return self.pc[key[1]]

        self.priv = [
            [_surrogate_expr(ep.private_surrogate(l, k), var_of) for k in range(k_users)]
            for l in range(l_cells)
        ]
        if scheme == "rs":
            self.comm = [
                [_surrogate_expr(ep.common_surrogate(l, k), var_of) for k in range(k_users)]
                for l in range(l_cells)
            ]
            for l in range(l_cells):
                total_c = cp.sum(self.r_c[l, :])
                for k in range(k_users):
                    self.base_cons.append(total_c <= self.comm[l][k])

    def user_rate(self, l: int, k: int) -> cp.Expression:
        if self.scheme == "rs":
            return self.r_c[l, k] + self.priv[l][k]
        return self.priv[l][k]

    def cell_power(self, l: int) -> cp.Expression:
        return cp.trace(self.pc[l]) + sum(cp.trace(self.p[l][k]) for k in range(self.k_users))

    def budget_constraints(self, budgets) -> list:
        budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (self.l_cells,))
        return [self.cell_power(l) <= budgets[l] for l in range(self.l_cells)]

    def threshold_constraints(self, thresholds) -> list:
        if thresholds is None:
            return []
        thresholds = np.broadcast_to(
            np.asarray(thresholds, dtype=float), (self.l_cells, self.k_users)
        )
        return [
            self.user_rate(l, k) >= thresholds[l, k]
            for l in range(self.l_cells)
            for k in range(self.k_users)
            if thresholds[l, k] > 0
        ]

    def extract(self) -> tuple[CovarianceSet, np.ndarray]:
        d = self.dim
        private = np.empty((self.l_cells, self.k_users, d, d))
        common = np.empty((self.l_cells, d, d))
        for l in range(self.l_cells):
            for k in range(self.k_users):
                private[l, k] = _clean_psd(np.asarray(self.p[l][k].value))
            common[l] = (
                _clean_psd(np.asarray(self.pc[l].value))
                if self.scheme == "rs"
                else np.zeros((d, d))
            )
        if self.r_c is not None:
            r_c = np.maximum(np.asarray(self.r_c.value, dtype=float), 0.0)
        else:
            r_c = np.zeros((self.l_cells, self.k_users))
        return CovarianceSet(private, common), r_c


def _weights(weights, l_cells, k_users) -> np.ndarray:
    if weights is None:
        return np.full((l_cells, k_users), 1.0 / (l_cells * k_users))
    w = np.broadcast_to(np.asarray(weights, dtype=float), (l_cells, k_users))
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("profile weights must be nonnegative, not all zero")
    return w


def solve_p_step_maxmin(
    ep: CovExpansion,
    budgets,
    weights=None,
    *,
    scheme: str = "rs",
    signaling: str = "igs",
    thresholds=None,
) -> tuple[CovarianceSet, np.ndarray, SolverReport]:
    """One covariance step of profile-weighted max-min rate: maximize ``r``
    with every user's surrogate rate at least ``weight * r``."""
    step = _CovStep(ep, scheme, signaling)
    w = _weights(weights, step.l_cells, step.k_users)
    r = cp.Variable()
    cons = step.base_cons + step.budget_constraints(budgets)
    cons += step.threshold_constraints(thresholds)
    for l in range(step.l_cells):
        for k in range(step.k_users):
            cons.append(step.user_rate(l, k) >= w[l, k] * r)
    report = _attempt(cp.Problem(cp.Maximize(r), cons))
    if not report.ok:
        raise InfeasibleTargetError(f"max-min covariance step failed: {report.status}")
    cov, r_c = step.extract()
    return cov, r_c, report


def solve_p_step_powermin(
    ep: CovExpansion,
    thresholds,
    *,
    scheme: str = "rs",
    signaling: str = "igs",
) -> tuple[CovarianceSet, np.ndarray, SolverReport]:
    """Minimize total radiated power subject to per-user rate targets."""
    if thresholds is None:
        raise ValueError("power minimization needs per-user rate targets")
    step = _CovStep(ep, scheme, signaling)
    thresholds = np.broadcast_to(
        np.asarray(thresholds, dtype=float), (step.l_cells, step.k_users)
    )
    cons = step.base_cons
    for l in range(step.l_cells):
        for k in range(step.k_users):
            cons.append(step.user_rate(l, k) >= thresholds[l, k])
    total = sum(step.cell_power(l) for l in range(step.l_cells))
    report = _attempt(cp.Problem(cp.Minimize(total), cons))
    if report.status in ("infeasible", "infeasible_inaccurate"):
        raise InfeasibleTargetError(
            "rate targets unreachable from the current expansion point"
        )
    if not report.ok:
        raise InfeasibleTargetError(f"power-min covariance step failed: {report.status}")
    cov, r_c = step.extract()
    return cov, r_c, report


def solve_p_step_wsr(
    ep: CovExpansion,
    budgets,
    weights=None,
    *,
    scheme: str = "rs",
    signaling: str = "igs",
    thresholds=None,
) -> tuple[CovarianceSet, np.ndarray, SolverReport]:
    """One covariance step of the weighted sum rate."""
    step = _CovStep(ep, scheme, signaling)
    w = _weights(weights, step.l_cells, step.k_users)
    cons = step.base_cons + step.budget_constraints(budgets)
    cons += step.threshold_constraints(thresholds)
    total = sum(
        w[l, k] * step.user_rate(l, k)
        for l in range(step.l_cells)
        for k in range(step.k_users)
    )
    report = _attempt(cp.Problem(cp.Maximize(total), cons))
    if not report.ok:
        raise InfeasibleTargetError(f"sum-rate covariance step failed: {report.status}")
    cov, r_c = step.extract()
    return cov, r_c, report


def solve_p_step_feasibility(
    ep: CovExpansion,
    thresholds,
    *,
    scheme: str = "rs",
    signaling: str = "igs",
    power_weight: float = 1e-3,
) -> tuple[CovarianceSet, np.ndarray, SolverReport]:
    """Shrink the total shortfall against per-user rate targets.

    Power minimization needs a point whose surrogate rates already clear the
    targets; this step supplies one by minimizing the summed target shortfall
    (a small power term keeps the solution bounded once the shortfall hits
    zero).  The achieved shortfall is reported under ``extras["shortfall"]``.
    """
    step = _CovStep(ep, scheme, signaling)
    th = np.broadcast_to(
        np.asarray(thresholds, dtype=float), (step.l_cells, step.k_users)
    )
    slack = cp.Variable((step.l_cells, step.k_users), nonneg=True)
    cons = step.base_cons
    for l in range(step.l_cells):
        for k in range(step.k_users):
            cons.append(step.user_rate(l, k) >= th[l, k] - slack[l, k])
    total_power = sum(step.cell_power(l) for l in range(step.l_cells))
    report = _attempt(
        cp.Problem(cp.Minimize(cp.sum(slack) + power_weight * total_power), cons)
    )
    if not report.ok:
        raise InfeasibleTargetError(f"feasibility step failed: {report.status}")
    report.extras["shortfall"] = float(np.sum(np.maximum(slack.value, 0.0)))
    cov, r_c = step.extract()
    return cov, r_c, report


def _dinkelbach(step: _CovStep, numerator, denominator, cons, tol, max_iter):
    """Maximize ``numerator/denominator`` (or the min of ratios) by the
    parametric subtraction method; returns the trace of subproblem values."""
    mu = cp.Parameter(value=0.0)
    objective = cp.Maximize(numerator - mu * denominator)
    problem = cp.Problem(objective, cons)
    f_vals, mu_vals = [], []
    report = None
    for _ in range(max_iter):
        report = _attempt(problem)
        if not report.ok:
            raise InfeasibleTargetError(f"fractional step failed: {report.status}")
        f_vals.append(float(problem.value))
        num = float(numerator.value)
        den = float(denominator.value)
        mu_vals.append(mu.value)
        if f_vals[-1] < tol:
            break
        mu.value = num / den
    report.extras["dinkelbach_f"] = f_vals
    report.extras["dinkelbach_mu"] = mu_vals
    report.extras["ratio"] = float(numerator.value) / float(denominator.value)
    return report


def solve_p_step_gee(
    ep: CovExpansion,
    pm: PowerModel,
    budgets,
    *,
    scheme: str = "rs",
    signaling: str = "igs",
    thresholds=None,
    tol: float = DINKELBACH_TOL,
    max_iter: int = DINKELBACH_MAX_ITER,
) -> tuple[CovarianceSet, np.ndarray, SolverReport]:
    """Covariance step of network energy efficiency: surrogate sum rate over
    total consumed power, solved as a sequence of detractions with an
    increasing price on power until the residual drops below ``tol``."""
    step = _CovStep(ep, scheme, signaling)
    cons = step.base_cons + step.budget_constraints(budgets)
    cons += step.threshold_constraints(thresholds)
    num = sum(
        step.user_rate(l, k) for l in range(step.l_cells) for k in range(step.k_users)
    )
    den = step.l_cells * step.k_users * pm.static_watts + pm.amp_slope * sum(
        step.cell_power(l) for l in range(step.l_cells)
    )
    report = _dinkelbach(step, num, den, cons, tol, max_iter)
    cov, r_c = step.extract()
    return cov, r_c, report


def solve_p_step_maxmin_ee(
    ep: CovExpansion,
    pm: PowerModel,
    budgets,
    weights=None,
    *,
    scheme: str = "rs",
    signaling: str = "igs",
    thresholds=None,
    tol: float = DINKELBACH_TOL,
    max_iter: int = DINKELBACH_MAX_ITER,
) -> tuple[CovarianceSet, np.ndarray, SolverReport]:
    """Covariance step of the minimum weighted per-user energy efficiency,
    by the generalized parametric method on the epigraph of the min."""
    step = _CovStep(ep, scheme, signaling)
    w = _weights(weights, step.l_cells, step.k_users)
    cons = step.base_cons + step.budget_constraints(budgets)
    cons += step.threshold_constraints(thresholds)

    t = cp.Variable()
    mu = cp.Parameter(value=0.0)
    spends = {}
    for l in range(step.l_cells):
        for k in range(step.k_users):
            spends[(l, k)] = (
                pm.static_watts
                + pm.amp_slope * cp.trace(step.p[l][k])
                + pm.amp_slope / step.k_users * cp.trace(step.pc[l])
            )
            cons.append(
                step.user_rate(l, k) - mu * w[l, k] * spends[(l, k)] >= t
            )
    problem = cp.Problem(cp.Maximize(t), cons)
    f_vals, mu_vals = [], []
    report = None
    for _ in range(max_iter):
        report = _attempt(problem)
        if not report.ok:
            raise InfeasibleTargetError(f"min-efficiency step failed: {report.status}")
        f_vals.append(float(problem.value))
        mu_vals.append(mu.value)
        if f_vals[-1] < tol:
            break
        ratios = [
            float(step.user_rate(l, k).value) / (w[l, k] * float(spends[(l, k)].value))
            for l in range(step.l_cells)
            for k in range(step.k_users)
        ]
        mu.value = min(ratios)
    report.extras["dinkelbach_f"] = f_vals
    report.extras["dinkelbach_mu"] = mu_vals
    cov, r_c = step.extract()
    return cov, r_c, report


def _theta_surrogate_expr(s: ThetaRateSurrogate, h_exprs: dict) -> cp.Expression:
    lin = cp.sum(cp.multiply(s.w, h_exprs[s.own_key] @ s.s_own)) / LN2
    quad = s.noise_quad
    for key, root in s.quad_terms:
        quad = quad + cp.sum_squares(s.msqrt @ h_exprs[key] @ root)
    return s.const + lin - 0.5 * quad / LN2


def solve_theta_step(
    ep: ThetaExpansion,
    prev: ThetaSet,
    set_kind: str,
    *,
    scheme: str = "rs",
    objective: str = "maxmin",
    weights=None,
    thresholds=None,
    pm: PowerModel | None = None,
    relax: RelaxationParams = RelaxationParams(),
    law: PhaseAmplitudeLaw | None = None,
) -> tuple[ThetaSet, np.ndarray, SolverReport]:
    """One coefficient step at fixed covariances over the relaxed hardware
    set.  ``objective`` is ``maxmin`` (profile-weighted rates), ``sum``
    (total rate; the efficiency denominator is constant here) or
    ``maxmin_ee``.  Returns the unprojected candidate."""
    maps = ep.maps
    l_cells, k_users = maps.l_cells, maps.k_users
    nc = maps.n_coeff
    star = maps.star

    if star:
        variables = tuple(cp.Variable(nc) for _ in range(4))
        prev_vals = (
            prev.theta.real.ravel(),
            prev.theta.imag.ravel(),
            prev.theta_t.real.ravel(),
            prev.theta_t.imag.ravel(),
        )
    else:
        variables = tuple(cp.Variable(nc) for _ in range(2))
        prev_vals = (prev.theta.real.ravel(), prev.theta.imag.ravel())
    vstack = cp.hstack(variables)

    h_exprs = {
        key: cp.Constant(maps.base[key])
        + cp.reshape(maps.t_mat[key] @ vstack, (maps.rows, maps.cols), order="C")
        for key in maps.base
    }

    priv = [
        [_theta_surrogate_expr(ep.surrogate(l, k, "private"), h_exprs) for k in range(k_users)]
        for l in range(l_cells)
    ]
    cons = list(convexified_constraints(set_kind, variables, prev_vals, relax=relax, law=law))

    if scheme == "rs":
        r_c = cp.Variable((l_cells, k_users), nonneg=True)
        comm = [
            [_theta_surrogate_expr(ep.surrogate(l, k, "common"), h_exprs) for k in range(k_users)]
            for l in range(l_cells)
        ]
        for l in range(l_cells):
            total_c = cp.sum(r_c[l, :])
            for k in range(k_users):
                cons.append(total_c <= comm[l][k])

        def user_rate(l, k):
            return r_c[l, k] + priv[l][k]

    else:
        r_c = None

        def user_rate(l, k):
            return priv[l][k]

    if thresholds is not None:
        th = np.broadcast_to(np.asarray(thresholds, dtype=float), (l_cells, k_users))
        for l in range(l_cells):
            for k in range(k_users):
                if th[l, k] > 0:
                    cons.append(user_rate(l, k) >= th[l, k])

    w = _weights(weights, l_cells, k_users)
    if objective == "maxmin":
        r = cp.Variable()
        for l in range(l_cells):
            for k in range(k_users):
                cons.append(user_rate(l, k) >= w[l, k] * r)
        prob = cp.Problem(cp.Maximize(r), cons)
    elif objective == "sum":
        total = sum(
            w[l, k] * user_rate(l, k) for l in range(l_cells) for k in range(k_users)
        )
        prob = cp.Problem(cp.Maximize(total), cons)
    elif objective == "maxmin_ee":
        if pm is None:
            raise ValueError("maxmin_ee needs a power model")
        t = cp.Variable()
        for l in range(l_cells):
            for k in range(k_users):
                spend = (
                    pm.static_watts
                    + pm.amp_slope * float(np.trace(ep.cov.private[l, k]))
                    + pm.amp_slope / k_users * float(np.trace(ep.cov.common[l]))
                )
                cons.append(user_rate(l, k) >= t * (w[l, k] * spend))
        prob = cp.Problem(cp.Maximize(t), cons)
    else:
        raise ValueError(f"unknown coefficient-step objective {objective!r}")

    report = _attempt(prob)
    if not report.ok:
        raise InfeasibleTargetError(f"coefficient step failed: {report.status}")

    vals = [np.asarray(v.value, dtype=float) for v in variables]
    theta = (vals[0] + 1j * vals[1]).reshape(maps.m_ris, maps.n_ris)
    if star:
        theta_t = (vals[2] + 1j * vals[3]).reshape(maps.m_ris, maps.n_ris)
        candidate = ThetaSet(theta, theta_t)
    else:
        candidate = ThetaSet(theta)
    r_c_val = (
        np.maximum(np.asarray(r_c.value, dtype=float), 0.0)
        if r_c is not None
        else np.zeros((l_cells, k_users))
    )
    return candidate, r_c_val, report
