"""Optimal power allocation across subcarriers under a total-power budget.

Each subcarrier k carries the utility of the user that owns it, evaluated at
the log rate ln(1 + beta_k * p_k).  When every utility satisfies the
concavity criterion (slack t >= 0), the per-subcarrier marginal

    m_k(p) = beta_k * f'(ln(1 + beta_k p)) / (1 + beta_k p)

is non-increasing in p (dm/dp = -beta^2 t(r) / (1 + beta p)^2 <= 0), so the
stationarity conditions "m_k(p_k) = nu on active subcarriers, m_k(0) <= nu on
idle ones" can be solved by nested bisection: an outer bisection on the dual
value nu and, for each nu, per-subcarrier bisections for the powers.  For
linear utilities the whole thing collapses to classic waterfilling, which is
also provided in exact active-set form and doubles as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .utility import UtilityModel, criterion_check

__all__ = [
    "AllocationProblem",
    "AllocationResult",
    "NonCompliantUtility",
    "AllZeroChannels",
    "TooLarge",
    "marginal",
    "kkt_allocate",
    "waterfill",
    "objective",
    "brute_force_oracle",
]


class NonCompliantUtility(ValueError):
    """A utility in the problem fails the concavity criterion."""


class AllZeroChannels(ValueError):
    """Waterfilling over channels that are all zero."""


class TooLarge(ValueError):
    """Brute-force search requested for more subcarriers than it can afford."""


@dataclass(frozen=True)
class AllocationProblem:
    """Per-subcarrier channel coefficients and owning utilities, plus budget."""

    betas: np.ndarray
    utilities: Sequence[UtilityModel]
    budget: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "betas", np.asarray(self.betas, dtype=float).reshape(-1)
        )
        if len(self.utilities) != self.betas.size:
            raise ValueError(
                f"{self.betas.size} betas but {len(self.utilities)} utilities"
            )
        if not self.budget > 0:
            raise ValueError(f"budget must be positive, got {self.budget}")
        if np.any(self.betas < 0) or not np.all(np.isfinite(self.betas)):
            raise ValueError("betas must be finite and nonnegative")


@dataclass(frozen=True)
class AllocationResult:
    powers: np.ndarray
    nu: float
    objective: float
    iterations: int
    residual: float  # feasibility slack budget - sum(powers)
    converged: bool = True


def marginal(u: UtilityModel, beta: float, p: float) -> float:
    """Derivative of f(ln(1 + beta*p)) with respect to p."""
    if beta <= 0.0:
        return 0.0
    den = 1.0 + beta * p
    return float(beta * u.d1(np.log(den)) / den)


def objective(problem: AllocationProblem, powers) -> float:
    """Total utility sum_k f_k(ln(1 + beta_k * p_k))."""
    powers = np.asarray(powers, dtype=float)
    rates = np.log1p(problem.betas * powers)
    return float(
        sum(u.value(float(r)) for u, r in zip(problem.utilities, rates))
    )


class _VecMarginal:
    """Vectorized marginals over all subcarriers, grouped by shared model."""

    def __init__(self, problem: AllocationProblem):
        self.betas = problem.betas
        self.groups = []
        seen: dict[int, list[int]] = {}
        for i, u in enumerate(problem.utilities):
            seen.setdefault(id(u), []).append(i)
        models = {id(u): u for u in problem.utilities}
        for key, idx in seen.items():
            self.groups.append((models[key], np.asarray(idx, dtype=int)))

    def d1(self, rates: np.ndarray) -> np.ndarray:
        out = np.empty_like(rates)
        for model, idx in self.groups:
            r = rates[idx]
            try:
                v = np.asarray(model.d1(r), dtype=float)
                if v.shape != r.shape:
                    v = np.broadcast_to(v, r.shape).astype(float)
            except (TypeError, ValueError):
                v = np.array([float(model.d1(float(x))) for x in r])
            out[idx] = v
        return out

    def __call__(self, powers: np.ndarray) -> np.ndarray:
        den = 1.0 + self.betas * powers
        return self.betas * self.d1(np.log(den)) / den


def _inner_powers(
    vec_m: _VecMarginal,
    nu: float,
    budget: float,
    m_at_0: np.ndarray,
    m_at_budget: np.ndarray,
    max_inner: int,
) -> np.ndarray:
    """Solve m_k(p) = nu per subcarrier by bisection on [0, budget].

    Subcarriers with m_k(0) <= nu get zero power; those whose marginal still
    exceeds nu at the full budget are capped there.
    """
    k = m_at_0.size
    powers = np.zeros(k)
    capped = m_at_budget > nu
    powers[capped] = budget
    solve = (m_at_0 > nu) & ~capped
    if not np.any(solve):
        return powers
    idx = np.flatnonzero(solve)
    sub_betas = vec_m.betas[idx]
    sub_groups = []
    for model, gidx in vec_m.groups:
        mask = np.isin(idx, gidx)
        if np.any(mask):
            sub_groups.append((model, mask))
    lo = np.zeros(idx.size)
    hi = np.full(idx.size, budget)
    d1 = np.empty(idx.size)
    for _ in range(max_inner):
        mid = 0.5 * (lo + hi)
        den = 1.0 + sub_betas * mid
        rates = np.log(den)
        for model, mask in sub_groups:
            r = rates[mask]
            try:
                v = np.asarray(model.d1(r), dtype=float)
                if v.shape != r.shape:
                    v = np.broadcast_to(v, r.shape).astype(float)
            except (TypeError, ValueError):
                v = np.array([float(model.d1(float(x))) for x in r])
            d1[mask] = v
        m = sub_betas * d1 / den
        above = m > nu
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.max(hi - lo) <= 1e-15 * max(1.0, budget):
            break
    powers[idx] = 0.5 * (lo + hi)
    return powers


def kkt_allocate(
    problem: AllocationProblem,
    tol: float = 1e-8,
    max_outer: int = 200,
    max_inner: int = 100,
) -> AllocationResult:
    """Solve the budgeted allocation by nested bisection on the dual value.

    The outer bisection drives |sum p_k - budget| <= tol; when even nu -> 0+
    cannot exhaust the budget (saturated utilities), nu = 0 and all powers
    are interior.  Ties at the budget plateau resolve toward smaller nu.

    Raises NonCompliantUtility if any utility fails the concavity criterion
    (the inner bisections rely on monotone marginals).  If the iteration
    budget runs out, the best feasible iterate is returned flagged with
    ``converged=False``.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    for u in {id(u): u for u in problem.utilities}.values():
        rep = criterion_check(u)
        if not rep.passed:
            raise NonCompliantUtility(
                f"utility {u.kind.value} fails the concavity criterion "
                f"(margin {rep.worst_margin:.3g} at x = {rep.worst_x:.4g}); "
                "its marginal is not monotone in p"
            )
    budget = problem.budget
    vec_m = _VecMarginal(problem)
    m0 = vec_m(np.zeros(problem.betas.size))
    m_budget = vec_m(np.full(problem.betas.size, budget))
    nu_hi = float(np.max(m0)) if m0.size else 0.0
    if nu_hi <= 0.0:
        return AllocationResult(
            powers=np.zeros(problem.betas.size),
            nu=0.0,
            objective=objective(problem, np.zeros(problem.betas.size)),
            iterations=0,
            residual=budget,
        )

    powers0 = _inner_powers(vec_m, 0.0, budget, m0, m_budget, max_inner)
    if float(np.sum(powers0)) < budget - tol:
        return AllocationResult(
            powers=powers0,
            nu=0.0,
            objective=objective(problem, powers0),
            iterations=0,
            residual=budget - float(np.sum(powers0)),
        )

    lo, hi = 0.0, nu_hi
    powers = powers0
    slack_tol = 10.0 * tol
    for it in range(1, max_outer + 1):
        nu = 0.5 * (lo + hi)
        powers = _inner_powers(vec_m, nu, budget, m0, m_budget, max_inner)
        total = float(np.sum(powers))
        if abs(total - budget) <= tol:
            marg = vec_m(powers)
            ok = np.all((powers <= 1e-12) | (np.abs(marg - nu) <= slack_tol))
            if ok:
                if total > budget:
                    powers *= budget / total
                return AllocationResult(
                    powers=powers,
                    nu=nu,
                    objective=objective(problem, powers),
                    iterations=it,
                    residual=budget - float(np.sum(powers)),
                )
        if total >= budget:
            lo = nu
        else:
            hi = nu
        if hi - lo <= 1e-17 * nu_hi:
            break

    powers = _inner_powers(vec_m, hi, budget, m0, m_budget, max_inner)
    total = float(np.sum(powers))
    if total > budget:
        powers *= budget / total
        total = float(np.sum(powers))
    return AllocationResult(
        powers=powers,
        nu=hi,
        objective=objective(problem, powers),
        iterations=max_outer,
        residual=budget - total,
        converged=abs(total - budget) <= tol,
    )


def waterfill(betas, budget: float) -> AllocationResult:
    """Exact active-set waterfilling: p_k = 1/nu - 1/beta_k where positive.

    This is the closed-form optimum for linear utilities f(x) = x, used both
    directly and as the reference the general solver is tested against.
    """
    betas = np.asarray(betas, dtype=float).reshape(-1)
    if not budget > 0:
        raise ValueError(f"budget must be positive, got {budget}")
    if np.all(betas <= 0):
        raise AllZeroChannels("every channel coefficient is zero")
    order = np.argsort(-betas)
    sorted_b = betas[order]
    positive = sorted_b > 0
    inv = np.zeros_like(sorted_b)
    inv[positive] = 1.0 / sorted_b[positive]
    powers_sorted = np.zeros_like(sorted_b)
    m_active = 0
    nu = 0.0
    for m in range(1, int(np.count_nonzero(positive)) + 1):
        candidate = m / (budget + np.sum(inv[:m]))
        if candidate < sorted_b[m - 1]:
            nu = candidate
            m_active = m
    powers_sorted[:m_active] = 1.0 / nu - inv[:m_active]
    powers = np.zeros_like(betas)
    powers[order] = powers_sorted
    rates = np.log1p(betas * powers)
    return AllocationResult(
        powers=powers,
        nu=float(nu),
        objective=float(np.sum(rates)),
        iterations=0,
        residual=budget - float(np.sum(powers)),
    )


def brute_force_oracle(
    problem: AllocationProblem, grid_step: float
) -> AllocationResult:
    """Exhaustive grid search over the power simplex, for testing only.

    Utilities must be non-decreasing (true for every family this package
    constructs), which lets the scan walk the full-budget face of the
    simplex; any interior point is then dominated by one on the face.
    """
    k = problem.betas.size
    if k > 4:
        raise TooLarge(f"brute force supports at most 4 subcarriers, got {k}")
    if not grid_step > 0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    for u in {id(u): u for u in problem.utilities}.values():
        xs = np.linspace(0.0, np.log1p(np.max(problem.betas) * problem.budget + 1.0), 256)
        d1 = np.asarray(u.d1(xs), dtype=float)
        if np.min(d1) < -1e-12:
            raise NonCompliantUtility(
                "brute_force_oracle requires non-decreasing utilities"
            )
    budget = problem.budget
    grid = np.arange(0.0, budget + grid_step / 2, grid_step)
    grid[-1] = min(grid[-1], budget)
    betas = problem.betas
    utils = problem.utilities

    def val(i, p):
        return np.asarray(utils[i].value(np.log1p(betas[i] * p)), dtype=float)

    best_obj = -np.inf
    best_p = np.zeros(k)
    n_points = 0
    if k == 1:
        best_p = np.array([budget])
        best_obj = float(val(0, budget))
        n_points = 1
    elif k == 2:
        p0 = grid
        p1 = budget - p0
        obj = val(0, p0) + val(1, p1)
        j = int(np.argmax(obj))
        best_obj = float(obj[j])
        best_p = np.array([p0[j], p1[j]])
        n_points = p0.size
    else:
        for a in grid:
            rem = budget - a
            p1 = grid[grid <= rem + 1e-15]
            if k == 3:
                p2 = rem - p1
                obj = float(val(0, a)) + val(1, p1) + val(2, p2)
                j = int(np.argmax(obj))
                if obj[j] > best_obj:
                    best_obj = float(obj[j])
                    best_p = np.array([a, p1[j], p2[j]])
                n_points += p1.size
            else:
                for b in p1:
                    rem2 = rem - b
                    p2 = grid[grid <= rem2 + 1e-15]
                    p3 = rem2 - p2
                    obj = (
                        float(val(0, a))
                        + float(val(1, b))
                        + val(2, p2)
                        + val(3, p3)
                    )
                    j = int(np.argmax(obj))
                    if obj[j] > best_obj:
                        best_obj = float(obj[j])
                        best_p = np.array([a, b, p2[j], p3[j]])
                    n_points += p2.size
    return AllocationResult(
        powers=best_p,
        nu=0.0,
        objective=best_obj,
        iterations=n_points,
        residual=budget - float(np.sum(best_p)),
    )
