"""Utility-function construction and convexity-criterion checking.

A rate utility f is admissible for log-rate resource allocation when its
slack function t(x) = f'(x) - f''(x) is nonnegative on x >= 0.  Under that
condition the composite map p -> f(ln(1 + beta*p)) is concave in the power p,
so the network-wide allocation problem stays convex.  This module builds the
closed-form utility families that satisfy the condition by construction
(finite powers, polynomials, exponentials, log / proportional fairness,
sigmoids), verifies the condition on a dense grid for anything else, and
provides affine normalization so that f(0) = 0 and f(m) = 1.

Every model carries analytic first and second derivatives; the allocator
never differentiates numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "UtilityKind",
    "Lemma2Class",
    "UtilityModel",
    "CriterionReport",
    "InvalidParams",
    "DegenerateCase",
    "NonnegativityViolation",
    "EvaluationFailure",
    "DegenerateRange",
    "OrientationFlip",
    "make_utility",
    "fit_polynomial_utility",
    "criterion_check",
    "residual_t",
    "normalize",
    "evaluate",
    "expand_polynomial",
    "CRITERION_EPS",
]

# Absolute slack tolerance for the concavity criterion (double precision
# closed forms leave a comfortable margin).
CRITERION_EPS = 1e-9

# Default validation grid: dense sampling is how nonnegativity of t is
# checked; exact algebraic certification is out of scope.
VALIDATION_X_MAX = 20.0
VALIDATION_N_GRID = 4096


class UtilityKind(Enum):
    POWER_T = "power_t"
    POLYNOMIAL_T = "polynomial_t"
    EXPONENTIAL_T = "exponential_t"
    PROPORTIONAL_FAIRNESS = "proportional_fairness"
    SIGMOID = "sigmoid"
    LINEAR = "linear"
    CUSTOM = "custom"


class Lemma2Class(Enum):
    NONDECREASING_CONVEX = "nondecreasing_convex"
    NONINCREASING_CONCAVE = "nonincreasing_concave"
    OTHER = "other"


class InvalidParams(ValueError):
    """Parameters produce a negative slack function t on the grid."""


class DegenerateCase(ValueError):
    """Parameter combination needs a different branch or family."""


class NonnegativityViolation(ValueError):
    """A polynomial fit recovered a slack function that goes negative.

    The fit itself is still reported: instances carry ``t_coeffs`` and
    ``model`` so callers can inspect the flagged result.
    """

    def __init__(self, msg: str, t_coeffs: np.ndarray, model: "UtilityModel"):
        super().__init__(msg)
        self.t_coeffs = t_coeffs
        self.model = model


class EvaluationFailure(ArithmeticError):
    """A derivative or value came back non-finite."""


class DegenerateRange(ValueError):
    """Normalization target has f(m) = f(0)."""


class OrientationFlip(ValueError):
    """Normalization target has f(m) < f(0); scale would go negative."""


@dataclass(frozen=True)
class UtilityModel:
    """An evaluable utility triple (f, f', f'') with affine normalization.

    ``eval_f``/``eval_d1``/``eval_d2`` are the raw closed forms; the model is
    reported and consumed through g(x) = scale*f(x) + offset.  Since
    g' - g'' = scale*(f' - f'') and scale > 0, normalization never changes
    whether the concavity criterion holds.

    Instances are immutable and safe to share across threads.
    """

    kind: UtilityKind
    params: dict
    c1: float
    c2: float
    eval_f: Callable
    eval_d1: Callable
    eval_d2: Callable
    scale: float = 1.0
    offset: float = 0.0
    # Analytic slack t(x) when the family has one; None for custom triples.
    slack: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidParams(f"scale must be positive, got {self.scale}")

    def value(self, x):
        return self.scale * self.eval_f(x) + self.offset

    def d1(self, x):
        return self.scale * self.eval_d1(x)

    def d2(self, x):
        return self.scale * self.eval_d2(x)


@dataclass(frozen=True)
class CriterionReport:
    """Grid verdict on f' - f'' >= 0 plus a monotonicity classification.

    ``lemma2_class`` is only ever a non-Other value for models that passed:
    a rising convex exponential like e^{2x} is nondecreasing and convex yet
    violates the criterion, so sign tests alone must not imply a pass.
    """

    passed: bool
    worst_x: float
    worst_margin: float
    lemma2_class: Lemma2Class


# ---------------------------------------------------------------------------
# closed-form families
# ---------------------------------------------------------------------------


def _sigmoid(z):
    # Stable in both tails.
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _exp_term(c: float, x):
    # c * e^x without evaluating exp when c is exactly zero (large x would
    # overflow a term that is identically absent).
    if c == 0.0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return c * np.exp(np.asarray(x, dtype=float))


def _polyval(coeffs: np.ndarray, x):
    # coeffs[j] multiplies x**j
    return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coeffs)


def _exp_sum_coeffs(upper: int) -> np.ndarray:
    """Coefficients of the truncated exponential series sum_{j<=upper} x^j/j!."""
    return np.array([1.0 / math.factorial(j) for j in range(upper + 1)])


def _power_family(a: float, k: int, c1: float, c2: float):
    """t(x) = a*x^k; integrates to a*k! * sum_{j=1}^{k+1} x^j/j! + c1*e^x + c2."""
    ak = a * math.factorial(k)
    f_coeffs = ak * _exp_sum_coeffs(k + 1)
    f_coeffs[0] = c2
    d1_coeffs = ak * _exp_sum_coeffs(k)
    d2_coeffs = ak * _exp_sum_coeffs(k - 1) if k >= 1 else np.zeros(1)

    def f(x):
        return _polyval(f_coeffs, x) + _exp_term(c1, x)

    def d1(x):
        return _polyval(d1_coeffs, x) + _exp_term(c1, x)

    def d2(x):
        return _polyval(d2_coeffs, x) + _exp_term(c1, x)

    def t(x):
        return a * np.asarray(x, dtype=float) ** k

    return f, d1, d2, t


def _poly_family(t_coeffs: np.ndarray, c1: float, c2: float):
    """t(x) = sum a_n x^n; f has coefficients A_j/j! with A_j = sum_{m>=j-1} a_m m!."""
    kdeg = len(t_coeffs) - 1
    a_fact = np.array(
        [t_coeffs[m] * math.factorial(m) for m in range(kdeg + 1)]
    )
    # A[j] indexed j = 1..kdeg+1 : tail sums of a_m * m!
    tails = np.concatenate([np.cumsum(a_fact[::-1])[::-1], [0.0]])
    big_a = np.array([tails[j - 1] for j in range(1, kdeg + 2)])
    f_coeffs = np.zeros(kdeg + 2)
    f_coeffs[0] = c2
    for j in range(1, kdeg + 2):
        f_coeffs[j] = big_a[j - 1] / math.factorial(j)
    d1_coeffs = np.array(
        [big_a[j] / math.factorial(j) for j in range(0, kdeg + 1)]
    )
    d2_coeffs = (
        np.array([big_a[j + 1] / math.factorial(j) for j in range(0, kdeg)])
        if kdeg >= 1
        else np.zeros(1)
    )

    def f(x):
        return _polyval(f_coeffs, x) + _exp_term(c1, x)

    def d1(x):
        return _polyval(d1_coeffs, x) + _exp_term(c1, x)

    def d2(x):
        return _polyval(d2_coeffs, x) + _exp_term(c1, x)

    def t(x):
        return _polyval(np.asarray(t_coeffs, dtype=float), x)

    return f, d1, d2, t, f_coeffs


def _exp_family(a: float, c1: float, c2: float):
    """t(x) = e^{ax}."""
    if a == 1.0:

        def f(x):
            x = np.asarray(x, dtype=float)
            return (-x + c1 + 1.0) * np.exp(x) + c2

        def d1(x):
            x = np.asarray(x, dtype=float)
            return (c1 - x) * np.exp(x)

        def d2(x):
            x = np.asarray(x, dtype=float)
            return (c1 - x - 1.0) * np.exp(x)

    else:
        denom_f = a * (1.0 - a)
        denom = 1.0 - a

        def f(x):
            x = np.asarray(x, dtype=float)
            return np.exp(a * x) / denom_f + _exp_term(c1, x) + c2

        def d1(x):
            x = np.asarray(x, dtype=float)
            return np.exp(a * x) / denom + _exp_term(c1, x)

        def d2(x):
            x = np.asarray(x, dtype=float)
            return a * np.exp(a * x) / denom + _exp_term(c1, x)

    def t(x):
        return np.exp(a * np.asarray(x, dtype=float))

    return f, d1, d2, t


def _propfair_family(c0: float, c1p: float, c2p: float, c3: float, c4: float):
    """t(x) = c0*c1/(c1 x + c2) + c0*c1^2/(c1 x + c2)^2, f = c0*log(c1 x + c2) + c3 + c4 e^x."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return c0 * np.log(c1p * x + c2p) + c3 + _exp_term(c4, x)

    def d1(x):
        x = np.asarray(x, dtype=float)
        return c0 * c1p / (c1p * x + c2p) + _exp_term(c4, x)

    def d2(x):
        x = np.asarray(x, dtype=float)
        return -c0 * c1p**2 / (c1p * x + c2p) ** 2 + _exp_term(c4, x)

    def t(x):
        x = np.asarray(x, dtype=float)
        den = c1p * x + c2p
        return c0 * c1p / den + c0 * c1p**2 / den**2

    return f, d1, d2, t


def _sigmoid_family(x0: float, c1: float, c2: float):
    """t(x) = 2 e^{2x+x0}/(e^{x0}+e^x)^3, f = (1 + e^{-x+x0})^{-1} + c1 e^x + c2."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return _sigmoid(x - x0) + _exp_term(c1, x) + c2

    def d1(x):
        x = np.asarray(x, dtype=float)
        s = _sigmoid(x - x0)
        return s * (1.0 - s) + _exp_term(c1, x)

    def d2(x):
        x = np.asarray(x, dtype=float)
        s = _sigmoid(x - x0)
        return s * (1.0 - s) * (1.0 - 2.0 * s) + _exp_term(c1, x)

    def t(x):
        x = np.asarray(x, dtype=float)
        s = _sigmoid(x - x0)
        return 2.0 * s * s * (1.0 - s)

    return f, d1, d2, t


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _check_slack_grid(t_fn, context: str, x_max=VALIDATION_X_MAX, n=VALIDATION_N_GRID):
    xs = np.linspace(0.0, x_max, n)
    tv = np.asarray(t_fn(xs), dtype=float)
    if not np.all(np.isfinite(tv)):
        raise EvaluationFailure(f"{context}: slack function non-finite on grid")
    i = int(np.argmin(tv))
    if tv[i] < -CRITERION_EPS:
        raise InvalidParams(
            f"{context}: slack t(x) = {tv[i]:.3g} < 0 at x = {xs[i]:.4g}; "
            "the concavity criterion would fail"
        )


def make_utility(kind: UtilityKind | str, **params) -> UtilityModel:
    """Construct a utility model from one of the closed-form families.

    Supported kinds and parameters (c1, c2 default to 0 everywhere):

    - ``power_t``:     t(x) = a*x^k         (a >= 0, integer k >= 0)
    - ``linear``:      power_t with k = 0, so f(x) = a*x + c2
    - ``polynomial_t``: t(x) = sum a_n x^n   (coeffs checked on a grid)
    - ``exponential_t``: t(x) = e^{a x}      (a = 1 uses its own branch)
    - ``proportional_fairness``: f = c0*log(c1*x + c2) + c3 + c4*e^x
      (c0, c1 >= 0, c2 > 0; c0 = c1 = c2 = 1 is log(1 + x))
    - ``sigmoid``:     f = (1 + e^{-(x - x0)})^{-1} + c1*e^x + c2,
      inflection at x0
    - ``custom``:      user-supplied triple f, d1, d2 (all required)

    The returned model's analytic derivatives satisfy d1(x) - d2(x) = t(x)
    identically for its family.  Raises InvalidParams when t would go
    negative on the validation grid, DegenerateCase for parameter values
    that need a different branch or family.
    """
    if isinstance(kind, str):
        try:
            kind = UtilityKind(kind)
        except ValueError:
            raise InvalidParams(f"unknown utility kind {kind!r}") from None

    if kind is UtilityKind.PROPORTIONAL_FAIRNESS:
        # This family names its constants c0..c4: c1, c2 sit inside the log,
        # c3 is the additive constant and c4 multiplies e^x.
        c0 = float(params.pop("c0", 1.0))
        c1p = float(params.pop("c1", 1.0))
        c2p = float(params.pop("c2", 1.0))
        c3 = float(params.pop("c3", 0.0))
        c4 = float(params.pop("c4", 0.0))
        _reject_unknown(params, kind)
        if c0 < 0 or c1p < 0 or c2p <= 0:
            raise InvalidParams(
                "proportional_fairness needs c0 >= 0, c1 >= 0, c2 > 0; "
                f"got c0={c0}, c1={c1p}, c2={c2p}"
            )
        f, d1, d2, t = _propfair_family(c0, c1p, c2p, c3, c4)
        return UtilityModel(
            kind,
            {"c0": c0, "c1": c1p, "c2": c2p, "c3": c3, "c4": c4},
            c4,
            c3,
            f,
            d1,
            d2,
            slack=t,
        )

    c1 = float(params.pop("c1", 0.0))
    c2 = float(params.pop("c2", 0.0))

    if kind in (UtilityKind.POWER_T, UtilityKind.LINEAR):
        a = float(params.pop("a", 1.0))
        k = int(params.pop("k", 0)) if kind is UtilityKind.POWER_T else 0
        if k < 0:
            raise InvalidParams(f"power exponent k must be >= 0, got {k}")
        _reject_unknown(params, kind)
        f, d1, d2, t = _power_family(a, k, c1, c2)
        _check_slack_grid(t, f"{kind.value}(a={a}, k={k})")
        return UtilityModel(kind, {"a": a, "k": k}, c1, c2, f, d1, d2, slack=t)

    if kind is UtilityKind.POLYNOMIAL_T:
        coeffs = np.asarray(params.pop("coeffs"), dtype=float)
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise InvalidParams("polynomial_t needs a 1-d coeffs array")
        _reject_unknown(params, kind)
        f, d1, d2, t, f_coeffs = _poly_family(coeffs, c1, c2)
        _check_slack_grid(t, f"polynomial_t(coeffs={coeffs.tolist()})")
        return UtilityModel(
            kind,
            {"coeffs": coeffs, "f_coeffs": f_coeffs},
            c1,
            c2,
            f,
            d1,
            d2,
            slack=t,
        )

    if kind is UtilityKind.EXPONENTIAL_T:
        a = float(params.pop("a"))
        _reject_unknown(params, kind)
        if a == 0.0:
            raise DegenerateCase(
                "exponential_t with a = 0 is a constant slack; use power_t(a=1, k=0)"
            )
        if a != 1.0 and (abs(a) < 1e-9 or abs(a - 1.0) < 1e-9):
            raise DegenerateCase(
                f"exponential_t with a = {a} is numerically degenerate; "
                "pass a = 1.0 exactly to select the a = 1 branch"
            )
        f, d1, d2, t = _exp_family(a, c1, c2)
        return UtilityModel(kind, {"a": a}, c1, c2, f, d1, d2, slack=t)

    if kind is UtilityKind.SIGMOID:
        x0 = float(params.pop("x0"))
        _reject_unknown(params, kind)
        f, d1, d2, t = _sigmoid_family(x0, c1, c2)
        return UtilityModel(kind, {"x0": x0}, c1, c2, f, d1, d2, slack=t)

    if kind is UtilityKind.CUSTOM:
        try:
            f = params.pop("f")
            d1 = params.pop("d1")
            d2 = params.pop("d2")
        except KeyError as exc:
            raise InvalidParams(
                "custom utilities must supply all three evaluables f, d1, d2"
            ) from exc
        _reject_unknown(params, kind)
        return UtilityModel(kind, {}, c1, c2, f, d1, d2, slack=None)

    raise InvalidParams(f"unknown utility kind {kind!r}")


def _reject_unknown(params: dict, kind) -> None:
    if params:
        raise InvalidParams(f"unexpected parameters for {kind}: {sorted(params)}")


def fit_polynomial_utility(
    empirical_coeffs: Sequence[float],
) -> tuple[np.ndarray, UtilityModel]:
    """Recover the slack polynomial reproducing an empirical polynomial fit.

    Given fit coefficients (a~_0 ... a~_N) of an empirical utility
    sum a~_j x^j, solves the upper-triangular system

        sum_{i=m-1}^{N-1} a_i * i! = a~_m * m!,   m = N .. 1

    by back substitution (top equation first: a_{N-1} = N * a~_N), with
    c1 = 0 and c2 = a~_0.  Returns the slack coefficients and the resulting
    model, whose polynomial part reproduces the input exactly.

    Raises NonnegativityViolation (carrying the flagged fit) when the
    recovered t(x) dips below zero on the validation grid.
    """
    atil = np.asarray(empirical_coeffs, dtype=float)
    if atil.ndim != 1 or atil.size < 2:
        raise InvalidParams("need fit coefficients up to degree N >= 1")
    n = atil.size - 1
    a = np.zeros(n)
    a[n - 1] = n * atil[n]
    for m in range(n - 1, 0, -1):
        tail = sum(a[i] * math.factorial(i) for i in range(m, n))
        a[m - 1] = (atil[m] * math.factorial(m) - tail) / math.factorial(m - 1)

    f, d1, d2, t, f_coeffs = _poly_family(a, 0.0, atil[0])
    model = UtilityModel(
        UtilityKind.POLYNOMIAL_T,
        {"coeffs": a, "f_coeffs": f_coeffs},
        0.0,
        float(atil[0]),
        f,
        d1,
        d2,
        slack=t,
    )
    xs = np.linspace(0.0, VALIDATION_X_MAX, VALIDATION_N_GRID)
    tv = t(xs)
    i = int(np.argmin(tv))
    if tv[i] < -CRITERION_EPS:
        raise NonnegativityViolation(
            f"recovered t(x) = {tv[i]:.3g} < 0 at x = {xs[i]:.4g}; "
            "the empirical fit is not representable with nonnegative slack",
            t_coeffs=a,
            model=model,
        )
    return a, model


def expand_polynomial(model: UtilityModel) -> np.ndarray:
    """Polynomial coefficients (constant first) of a polynomial_t model."""
    if model.kind is not UtilityKind.POLYNOMIAL_T:
        raise InvalidParams("expand_polynomial needs a polynomial_t model")
    return np.array(model.params["f_coeffs"], dtype=float)


# ---------------------------------------------------------------------------
# checking, normalization, evaluation
# ---------------------------------------------------------------------------


def _eval_grid(fn, xs):
    try:
        out = np.asarray(fn(xs), dtype=float)
        if out.shape != xs.shape:
            out = np.broadcast_to(out, xs.shape).astype(float)
    except (TypeError, ValueError):
        out = np.array([float(fn(float(x))) for x in xs])
    return out


def criterion_check(
    u: UtilityModel, x_max: float = VALIDATION_X_MAX, n_grid: int = VALIDATION_N_GRID
) -> CriterionReport:
    """Evaluate f' - f'' on a uniform grid over [0, x_max].

    ``passed`` means the minimum margin stays above -1e-9.  The Lemma-2 style
    classification (nondecreasing convex / nonincreasing concave) is assigned
    only to passing models, so a non-Other class always implies a pass.
    """
    if x_max <= 0:
        raise ValueError(f"x_max must be positive, got {x_max}")
    if n_grid < 2:
        raise ValueError(f"n_grid must be >= 2, got {n_grid}")
    xs = np.linspace(0.0, x_max, n_grid)
    d1 = _eval_grid(u.d1, xs)
    d2 = _eval_grid(u.d2, xs)
    if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
        raise EvaluationFailure("derivatives non-finite on the criterion grid")
    margin = d1 - d2
    i = int(np.argmin(margin))
    passed = bool(margin[i] >= -CRITERION_EPS)
    cls = Lemma2Class.OTHER
    if passed:
        if np.all(d1 >= -CRITERION_EPS) and np.all(d2 >= -CRITERION_EPS):
            cls = Lemma2Class.NONDECREASING_CONVEX
        elif np.all(d1 <= CRITERION_EPS) and np.all(d2 <= CRITERION_EPS):
            cls = Lemma2Class.NONINCREASING_CONCAVE
    return CriterionReport(
        passed=passed,
        worst_x=float(xs[i]),
        worst_margin=float(margin[i]),
        lemma2_class=cls,
    )


def residual_t(u: UtilityModel, x) -> float | np.ndarray:
    """Slack f'(x) - f''(x) of the (normalized) model.

    Equals the family's analytic t(x) for freshly constructed models
    (scale = 1); after normalization it is scale * t(x), same sign.
    """
    out = u.d1(x) - u.d2(x)
    if np.ndim(out) == 0:
        return float(out)
    return out


def normalize(u: UtilityModel, m: float) -> UtilityModel:
    """Rescale so the reported curve has g(0) = 0 and g(m) = 1.

    Raises DegenerateRange when f(m) = f(0) and OrientationFlip when
    f(m) < f(0) (a positive scale cannot reach g(m) = 1 there).
    """
    if not m > 0:
        raise ValueError(f"normalization point m must be positive, got {m}")
    f0 = float(u.eval_f(0.0))
    fm = float(u.eval_f(m))
    den = fm - f0
    if den == 0.0:
        raise DegenerateRange(f"f({m}) = f(0) = {f0}; cannot normalize")
    if den < 0.0:
        raise OrientationFlip(
            f"f({m}) = {fm} < f(0) = {f0}; normalization would flip orientation"
        )
    scale = 1.0 / den
    return replace(u, scale=scale, offset=-f0 * scale)


def evaluate(u: UtilityModel, x) -> tuple[float, float, float]:
    """Normalized (value, first derivative, second derivative) at rate x."""
    v = u.value(x)
    d1 = u.d1(x)
    d2 = u.d2(x)
    if np.ndim(v) == 0:
        v, d1, d2 = float(v), float(d1), float(d2)
        if not (math.isfinite(v) and math.isfinite(d1) and math.isfinite(d2)):
            raise EvaluationFailure(f"non-finite evaluation at x = {x}")
        return v, d1, d2
    if not (
        np.all(np.isfinite(v)) and np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))
    ):
        raise EvaluationFailure("non-finite evaluation on input array")
    return v, d1, d2
