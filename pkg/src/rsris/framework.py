"""Outer optimization drivers and run bookkeeping.

Two entry points share the step machinery: :func:`run_mm` iterates gated
covariance steps over fixed effective channels, and :func:`run_ao`
alternates them with surface-coefficient steps.  Every update is accepted
only if the *exact* objective (surrogate-free, with the common rate
re-allocated optimally) does not get worse, so recorded traces are monotone
by construction and not merely up to solver noise.

Power minimization runs in two phases: while the current point misses a
target, shortfall-reduction steps are taken (recorded as ``p-feasibility``;
total power may grow there), and once every target is met the driver
switches to power descent.  The monotonicity guarantee for power-min runs
therefore covers the ``p``-labelled records only.  Coefficient steps in
power-min runs are gated on the worst threshold margin rather than on power,
which they cannot change at fixed covariances.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .channel import FadingSet, ThetaSet, UserSpaceMap
from .rates import (
    CovarianceSet,
    Impairments,
    PowerModel,
    RateBundle,
    RealLinks,
    allocate_common_maxmin,
    build_real_links,
    gee,
    rate_bundle,
    uniform_covariances,
)
from .rispace import (
    DiscretePhaseGrid,
    PhaseAmplitudeLaw,
    RelaxationParams,
    monotone_update,
    project,
    random_theta,
)
from .subproblems import (
    InfeasibleTargetError,
    _weights,
    solve_p_step_feasibility,
    solve_p_step_gee,
    solve_p_step_maxmin,
    solve_p_step_maxmin_ee,
    solve_p_step_powermin,
    solve_p_step_wsr,
    solve_theta_step,
)
from .surrogates import CovExpansion, ThetaExpansion, ThetaLinearMaps

OBJECTIVES = ("mwrm", "wsrm", "gee", "mwee", "powermin")

#: objective used by the coefficient step at fixed covariances; efficiency
#: denominators are constant there, so both sum-style objectives reduce to it
_THETA_OBJECTIVE = {
    "mwrm": "maxmin",
    "wsrm": "sum",
    "gee": "sum",
    "mwee": "maxmin_ee",
    "powermin": "maxmin",
}

_FEAS_TOL = 1e-6
_FEAS_POWER_WEIGHT = 1e-3


@dataclass(frozen=True)
class ProblemSpec:
    """What to optimize: objective family, stream scheme, signaling family,
    per-user profile weights and/or rate targets."""

    objective: str = "mwrm"
    scheme: str = "rs"
    signaling: str = "igs"
    weights: np.ndarray | None = None
    thresholds: np.ndarray | None = None
    iqi_aware: bool = True
    power_model: PowerModel = PowerModel()

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.scheme not in ("rs", "tin"):
            raise ValueError("scheme must be 'rs' or 'tin'")
        if self.signaling not in ("igs", "pgs"):
            raise ValueError("signaling must be 'igs' or 'pgs'")
        if self.objective == "powermin" and self.thresholds is None:
            raise ValueError("power minimization needs per-user rate targets")
        if self.weights is not None and np.any(np.asarray(self.weights) < 0):
            raise ValueError("profile weights must be nonnegative")

    @property
    def maximize(self) -> bool:
        return self.objective != "powermin"


@dataclass(frozen=True)
class ConvergenceCriteria:
    rel_tol: float = 1e-4
    max_iters: int = 50

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("need at least one outer iteration")

    def settled(self, before: float, after: float) -> bool:
        scale = max(abs(before), abs(after), 1.0)
        return abs(after - before) / scale < self.rel_tol


@dataclass(frozen=True)
class IterationRecord:
    step: str  # "p", "p-feasibility" or "theta"
    objective: float  # accepted exact objective after the step
    proposed: float  # exact score of the candidate before gating
    accepted: bool
    status: str


@dataclass(frozen=True, eq=False)
class RunTrace:
    records: tuple[IterationRecord, ...]
    objective: float
    converged: bool
    cov: CovarianceSet
    theta: ThetaSet | None
    r_c: np.ndarray
    bundle: RateBundle

    def objectives(self, step: str | None = None) -> list[float]:
        return [r.objective for r in self.records if step is None or r.step == step]

    @property
    def rates(self) -> np.ndarray:
        return self.bundle.private + self.r_c

    def objective_csv(self) -> str:
        lines = ["iteration,step,objective,proposed,accepted,status"]
        for i, r in enumerate(self.records):
            lines.append(
                f"{i},{r.step},{r.objective:.12g},{r.proposed:.12g},"
                f"{int(r.accepted)},{r.status}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        d = {
            "objective": self.objective,
            "converged": self.converged,
            "power": self.cov.total_power(),
            "rates": self.rates.tolist(),
            "common_rate": self.r_c.tolist(),
            "iterations": [dataclasses.asdict(r) for r in self.records],
        }
        if self.theta is not None:
            d["theta"] = {
                "reflect_re": self.theta.theta.real.tolist(),
                "reflect_im": self.theta.theta.imag.tolist(),
            }
            if self.theta.theta_t is not None:
                d["theta"]["transmit_re"] = self.theta.theta_t.real.tolist()
                d["theta"]["transmit_im"] = self.theta.theta_t.imag.tolist()
        return d


def _profile_allocation(private_row, cap, weight_row):
    """Max-min profile split of one cell's common rate; zero-weight users
    are outside the profile and receive nothing."""
    r_c = np.zeros_like(private_row)
    mask = weight_row > 0
    if not mask.any():
        return r_c, np.inf
    alloc, value = allocate_common_maxmin(private_row[mask], cap, weight_row[mask])
    r_c[mask] = alloc
    return r_c, value


def _margin_allocation(private_row, cap, target_row):
    """Split one cell's common rate to maximize the worst target margin.
    The shift keeps the bisection helper on positive effective rates."""
    base = private_row - target_row
    shift = 1.0 - min(float(base.min()), 0.0)
    alloc, value = allocate_common_maxmin(base + shift, cap, np.ones_like(base))
    return alloc, value - shift


def _user_spend(cov: CovarianceSet, pm: PowerModel, l: int, k: int) -> float:
    return (
        pm.static_watts
        + pm.amp_slope * float(np.trace(cov.private[l, k]))
        + pm.amp_slope / cov.n_users * float(np.trace(cov.common[l]))
    )


def exact_objective(
    spec: ProblemSpec, cov: CovarianceSet, links: RealLinks
) -> tuple[float, np.ndarray]:
    """Surrogate-free objective of a covariance point, together with the
    common-rate allocation that attains it.

    The common stream's rate within each cell is allocated optimally for the
    objective at hand (profile max-min, all to the heaviest user for sums,
    worst-margin for power minimization); allocations never couple across
    cells, so the per-cell splits compose to the network optimum.
    """
    b = rate_bundle(cov, links)
    l_cells, k_users = links.shape
    w = _weights(spec.weights, l_cells, k_users)
    r_c = np.zeros((l_cells, k_users))

    if spec.objective == "mwrm":
        values = []
        for l in range(l_cells):
            r_c[l], v = _profile_allocation(b.private[l], b.cell_common_cap[l], w[l])
            values.append(v)
        return min(values), r_c

    if spec.objective == "wsrm":
        for l in range(l_cells):
            r_c[l, int(np.argmax(w[l]))] = b.cell_common_cap[l]
        return float(np.sum(w * (b.private + r_c))), r_c

    if spec.objective == "gee":
        # the sum rate does not care how the common rate is split; report a
        # fair split so per-user rates in the trace remain meaningful
        for l in range(l_cells):
            r_c[l], _ = _profile_allocation(b.private[l], b.cell_common_cap[l], w[l])
        return gee(cov, b.max_sum_rate, spec.power_model), r_c

    if spec.objective == "mwee":
        values = []
        for l in range(l_cells):
            spend = np.array(
                [_user_spend(cov, spec.power_model, l, k) for k in range(k_users)]
            )
            r_c[l], v = _profile_allocation(
                b.private[l], b.cell_common_cap[l], w[l] * spend
            )
            values.append(v)
        return min(values), r_c

    th = np.broadcast_to(
        np.asarray(spec.thresholds, dtype=float), (l_cells, k_users)
    )
    for l in range(l_cells):
        r_c[l], _ = _margin_allocation(b.private[l], b.cell_common_cap[l], th[l])
    return cov.total_power(), r_c


def _feasibility_state(
    spec: ProblemSpec, cov: CovarianceSet, links: RealLinks
) -> tuple[float, float]:
    """(worst margin, descent score) of a point against the rate targets.

    The score mirrors what the feasibility step minimizes — total target
    shortfall plus a small power tie-break — so gating on it matches the
    step's own descent guarantee."""
    b = rate_bundle(cov, links)
    l_cells, k_users = links.shape
    th = np.broadcast_to(
        np.asarray(spec.thresholds, dtype=float), (l_cells, k_users)
    )
    margin, shortfall = np.inf, 0.0
    for l in range(l_cells):
        alloc, m = _margin_allocation(b.private[l], b.cell_common_cap[l], th[l])
        shortfall += float(np.maximum(th[l] - b.private[l] - alloc, 0.0).sum())
        margin = min(margin, m)
    return margin, shortfall + _FEAS_POWER_WEIGHT * cov.total_power()


def threshold_margin(
    spec: ProblemSpec, cov: CovarianceSet, links: RealLinks
) -> float:
    """Worst per-user rate margin over the targets, after splitting each
    cell's common rate to favour its most-lagging user."""
    return _feasibility_state(spec, cov, links)[0]


def initial_covariances(
    spec: ProblemSpec, l_cells: int, k_users: int, n_bs: int, budgets
) -> CovarianceSet:
    """White equal-split start: each cell's budget divided over the K private
    layers plus the common one.  Power minimization has no budget; one watt
    per cell gives it a strictly feasible interior start."""
    if budgets is None:
        if spec.objective != "powermin":
            raise ValueError("budgeted objectives need per-cell power budgets")
        budgets = np.ones(l_cells)
    return uniform_covariances(
        l_cells, k_users, n_bs, budgets, common=spec.scheme == "rs"
    )


#: extrapolation doubles the step while it keeps paying off; the cap only
#: guards against runaway arithmetic once the PSD/budget projections saturate
_EXTRAPOLATION_MAX = 2.0**14


def _psd_clip(blocks: np.ndarray) -> np.ndarray:
    """Nearest-PSD projection of a stack of symmetric blocks."""
    sym = 0.5 * (blocks + np.swapaxes(blocks, -1, -2))
    w, v = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


def _capped_to_budgets(cov: CovarianceSet, budgets) -> CovarianceSet:
    if budgets is None:
        return cov
    budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (cov.n_cells,))
    private, common = cov.private.copy(), cov.common.copy()
    for l in range(cov.n_cells):
        power = cov.cell_power(l)
        if power > budgets[l]:
            private[l] *= budgets[l] / power
            common[l] *= budgets[l] / power
    return CovarianceSet(private, common)


def _extrapolate(spec, cov_old, cov_new, value, r_c, budgets, links):
    """Push further along an accepted move while the exact objective keeps
    improving.  Minorization steps contract near their fixed point, so
    doubling an accepted step is the cheap classic acceleration; every
    candidate passes the same exact-objective gate (and, for power
    minimization, the rate-target margin), so monotonicity is untouched."""
    best = (cov_new, value, r_c)
    t = 2.0
    while t <= _EXTRAPOLATION_MAX:
        cand = CovarianceSet(
            _psd_clip(cov_old.private + t * (cov_new.private - cov_old.private)),
            _psd_clip(cov_old.common + t * (cov_new.common - cov_old.common)),
        )
        cand = _capped_to_budgets(cand, budgets)
        v, rc = exact_objective(spec, cand, links)
        better = v > best[1] if spec.maximize else v < best[1]
        if better and spec.objective == "powermin":
            better = threshold_margin(spec, cand, links) >= -_FEAS_TOL
        if not better:
            break
        best = (cand, v, rc)
        t *= 2.0
    return best


def _extrapolate_feasibility(spec, cov_old, cov_new, margin, score, budgets, links):
    """Feasibility-phase twin of ``_extrapolate``: double the accepted move
    while the target shortfall keeps shrinking, stopping at the first point
    that meets the targets (pushing past feasibility only wastes power)."""
    best = (cov_new, margin, score)
    if margin >= -_FEAS_TOL:
        return best
    t = 2.0
    while t <= _EXTRAPOLATION_MAX:
        cand = CovarianceSet(
            _psd_clip(cov_old.private + t * (cov_new.private - cov_old.private)),
            _psd_clip(cov_old.common + t * (cov_new.common - cov_old.common)),
        )
        cand = _capped_to_budgets(cand, budgets)
        m, s = _feasibility_state(spec, cand, links)
        if m >= -_FEAS_TOL:
            return (cand, m, s)
        if s >= best[2]:
            break
        best = (cand, m, s)
        t *= 2.0
    return best


def _cov_proposal(spec: ProblemSpec, ep: CovExpansion, budgets):
    """Dispatch one covariance subproblem; returns (name, cov, r_c, report)."""
    kw = dict(scheme=spec.scheme, signaling=spec.signaling)
    if spec.objective == "powermin":
        try:
            return ("p", *solve_p_step_powermin(ep, spec.thresholds, **kw))
        except InfeasibleTargetError:
            out = solve_p_step_feasibility(
                ep, spec.thresholds, power_weight=_FEAS_POWER_WEIGHT, **kw
            )
            return ("p-feasibility", *out)
    kw["thresholds"] = spec.thresholds
    if spec.objective == "mwrm":
        return ("p", *solve_p_step_maxmin(ep, budgets, spec.weights, **kw))
    if spec.objective == "wsrm":
        return ("p", *solve_p_step_wsr(ep, budgets, spec.weights, **kw))
    if spec.objective == "gee":
        return ("p", *solve_p_step_gee(ep, spec.power_model, budgets, **kw))
    return (
        "p",
        *solve_p_step_maxmin_ee(ep, spec.power_model, budgets, spec.weights, **kw),
    )


class _Driver:
    """Shared gated-step state for both outer loops."""

    def __init__(self, spec, links, budgets, cov, criteria):
        self.spec = spec
        self.links = links
        self.budgets = budgets
        self.cov = cov
        self.criteria = criteria
        self.records: list[IterationRecord] = []
        self.objective, self.r_c = exact_objective(spec, cov, links)

    def cov_step(self) -> bool:
        """One gated covariance step.  Returns True when it made meaningful
        progress (so the outer loop knows whether to keep going)."""
        spec = self.spec
        before = self.objective
        margin_old, score_old = np.inf, 0.0
        if spec.objective == "powermin":
            margin_old, score_old = _feasibility_state(spec, self.cov, self.links)
        name, cov_new, _, report = _cov_proposal(
            spec, CovExpansion(self.cov, self.links), self.budgets
        )
        value, r_c = exact_objective(spec, cov_new, self.links)

        if margin_old < -_FEAS_TOL:
            # still chasing the targets: power is not yet the yardstick.
            # Accept anything that lands feasible (a successful descent step
            # does, by construction) or that shrinks the shortfall score.
            margin_new, score_new = _feasibility_state(spec, cov_new, self.links)
            gained = margin_new >= -_FEAS_TOL or score_new <= score_old + 1e-12
            if gained:
                cov_new, margin_new, score_new = _extrapolate_feasibility(
                    spec, self.cov, cov_new, margin_new, score_new,
                    self.budgets, self.links,
                )
                value, r_c = exact_objective(spec, cov_new, self.links)
                self.cov, self.objective, self.r_c = cov_new, value, r_c
            self.records.append(
                IterationRecord(
                    "p-feasibility", self.objective, value, gained, report.status
                )
            )
            still_short = (margin_new if gained else margin_old) < -_FEAS_TOL
            if still_short and (not gained or self.criteria.settled(score_old, score_new)):
                raise InfeasibleTargetError(
                    f"rate targets unreachable: worst shortfall stalled at "
                    f"{-min(margin_old, margin_new):.4g} bit/s/Hz"
                )
            return True

        improved = value >= before if spec.maximize else value <= before
        proposed = value
        if improved:
            cov_new, value, r_c = _extrapolate(
                spec, self.cov, cov_new, value, r_c, self.budgets, self.links
            )
            self.cov, self.objective, self.r_c = cov_new, value, r_c
        self.records.append(
            IterationRecord(name, self.objective, proposed, improved, report.status)
        )
        return improved and not self.criteria.settled(before, self.objective)

    def pending_targets(self) -> bool:
        return (
            self.spec.objective == "powermin"
            and threshold_margin(self.spec, self.cov, self.links) < -_FEAS_TOL
        )

    def finish(self, converged: bool, theta: ThetaSet | None = None) -> RunTrace:
        if self.pending_targets():
            raise InfeasibleTargetError(
                "rate targets still unmet after the iteration budget"
            )
        return RunTrace(
            records=tuple(self.records),
            objective=self.objective,
            converged=converged,
            cov=self.cov,
            theta=theta,
            r_c=self.r_c,
            bundle=rate_bundle(self.cov, self.links),
        )


def run_mm(
    spec: ProblemSpec,
    links: RealLinks,
    budgets=None,
    *,
    cov0: CovarianceSet | None = None,
    criteria: ConvergenceCriteria = ConvergenceCriteria(),
) -> RunTrace:
    """Iterate covariance steps over fixed effective channels until the
    exact objective settles or the iteration cap is reached."""
    l_cells, k_users = links.shape
    if cov0 is None:
        cov0 = initial_covariances(spec, l_cells, k_users, links.h.shape[-1] // 2, budgets)
    driver = _Driver(spec, links, budgets, cov0, criteria)
    converged = False
    for _ in range(criteria.max_iters):
        progressed = driver.cov_step()
        if not progressed and not driver.pending_targets():
            converged = True
            break
    return driver.finish(converged)


def _theta_gate(spec, cov, fs, imp, space):
    """Exact acceptance score of a coefficient set at fixed covariances:
    the objective itself, except for power minimization where power cannot
    move at fixed covariances and the worst target margin is scored."""

    def score(ts: ThetaSet) -> float:
        links = build_real_links(fs, ts, imp, space)
        if spec.objective == "powermin":
            return threshold_margin(spec, cov, links)
        return exact_objective(spec, cov, links)[0]

    return score


def _theta_weights(spec: ProblemSpec, l_cells: int, k_users: int):
    if spec.objective == "powermin":
        th = np.broadcast_to(
            np.asarray(spec.thresholds, dtype=float), (l_cells, k_users)
        )
        return th if th.max() > 0 else None
    return spec.weights


def run_ao(
    spec: ProblemSpec,
    fs: FadingSet,
    imp: Impairments,
    set_kind: str,
    budgets=None,
    *,
    space: UserSpaceMap | None = None,
    cov0: CovarianceSet | None = None,
    theta0: ThetaSet | None = None,
    seed: int | None = None,
    criteria: ConvergenceCriteria = ConvergenceCriteria(),
    relax: RelaxationParams = RelaxationParams(),
    law: PhaseAmplitudeLaw | None = None,
    grid: DiscretePhaseGrid | None = None,
) -> RunTrace:
    """Alternate covariance and surface-coefficient steps.

    Each outer iteration takes one gated covariance step at the current
    coefficients, then one coefficient step (surrogate solve over the
    relaxed set, exact projection, exact-objective gate).  Terminates when
    an iteration moves the exact objective by less than ``rel_tol`` through
    both steps.
    """
    star = set_kind == "star"
    if star and space is None:
        raise ValueError("simultaneous transmit/reflect surfaces need a user-side map")
    m_ris, n_ris = fs.ris_user.shape[2], fs.ris_user.shape[4]
    ts = theta0
    if ts is None:
        ts = random_theta(
            set_kind, m_ris, n_ris, np.random.default_rng(seed), law=law, grid=grid
        )
    maps = ThetaLinearMaps(fs, imp, space, star=star)
    links = build_real_links(fs, ts, imp, space)
    l_cells, k_users = links.shape
    if cov0 is None:
        cov0 = initial_covariances(spec, l_cells, k_users, links.h.shape[-1] // 2, budgets)
    driver = _Driver(spec, links, budgets, cov0, criteria)

    converged = False
    for _ in range(criteria.max_iters):
        before = driver.objective
        cov_stalled = False
        try:
            p_progress = driver.cov_step()
        except InfeasibleTargetError:
            # at these channels the covariance block has given up on the
            # targets; the coefficient step below gets a chance to reshape
            # the channels before the run is declared infeasible
            cov_stalled = True
            p_progress = False
            margin_before = threshold_margin(spec, driver.cov, driver.links)

        try:
            candidate, _, report = solve_theta_step(
                ThetaExpansion(maps, driver.cov, maps.theta_to_vec(ts)),
                ts,
                set_kind,
                scheme=spec.scheme,
                objective=_THETA_OBJECTIVE[spec.objective],
                weights=_theta_weights(spec, l_cells, k_users),
                pm=spec.power_model,
                relax=relax,
                law=law,
            )
        except InfeasibleTargetError:
            # a failed coefficient solve never poisons the run; the previous
            # coefficients stay in force
            driver.records.append(
                IterationRecord("theta", driver.objective, driver.objective, False, "error")
            )
            if cov_stalled:
                raise
            if criteria.settled(before, driver.objective) and not driver.pending_targets():
                converged = True
                break
            continue
        projected = project(set_kind, candidate, law=law, grid=grid)
        gate = _theta_gate(spec, driver.cov, fs, imp, space)
        proposed = gate(projected)
        ts, accepted, _ = monotone_update(gate, ts, projected)
        if accepted:
            driver.links = build_real_links(fs, ts, imp, space)
            driver.objective, driver.r_c = exact_objective(spec, driver.cov, driver.links)
        driver.records.append(
            IterationRecord("theta", driver.objective, proposed, accepted, report.status)
        )
        if cov_stalled and not (accepted and proposed > margin_before + 1e-9):
            raise InfeasibleTargetError(
                "rate targets unreachable: neither power nor coefficients "
                "can close the worst shortfall"
            )

        stalled = not p_progress and not accepted
        settled = criteria.settled(before, driver.objective)
        if (stalled or settled) and not driver.pending_targets():
            converged = True
            break
    return driver.finish(converged, theta=ts)


def sweep_rate_region(
    spec: ProblemSpec,
    links: RealLinks,
    budgets,
    profiles,
    *,
    criteria: ConvergenceCriteria = ConvergenceCriteria(),
) -> np.ndarray:
    """Per-user rates achieved along a grid of profile weights.

    Each profile must be nonnegative and sum to one; one max-min run is
    performed per profile and the achieved ``(L, K)`` rate table collected.
    """
    points = []
    for lam in profiles:
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-9:
            raise ValueError("profiles must be nonnegative and sum to one")
        trace = run_mm(
            dataclasses.replace(spec, objective="mwrm", weights=lam),
            links,
            budgets,
            criteria=criteria,
        )
        points.append(trace.rates)
    return np.stack(points)


def classify_rs_mode(bundle: RateBundle, r_c: np.ndarray, tol: float = 1e-6):
    """Name each cell's operating point by which streams carry rate:
    no common rate is plain interference-as-noise; no private rate means
    everything rides the broadcast stream; the two-user pattern where one
    user's common share and the other's private rate both vanish mirrors
    successive decoding with a fixed order; anything else is genuine
    splitting."""
    labels = []
    for l in range(bundle.private.shape[0]):
        common = r_c[l]
        private = bundle.private[l]
        if common.sum() <= tol:
            labels.append("TIN")
        elif np.all(private <= tol):
            labels.append("Broadcast")
        elif len(private) == 2 and (
            (common[0] <= tol and private[1] <= tol)
            or (common[1] <= tol and private[0] <= tol)
        ):
            labels.append("NOMA-like")
        else:
            labels.append("General-RS")
    return labels
