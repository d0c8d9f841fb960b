"""Comparison functions (class K / K-infinity), KL decay bounds, envelopes.

Every gain, decay certificate and envelope used by the rest of the toolkit
is a member of a deliberately small parametric algebra:

* ``identity``                 f(r) = r
* ``power(a, p)``              f(r) = a * r**p
* ``affine_exp(a, b)``         f(r) = a * (exp(b*r) - 1)
* ``piecewise_linear(knots)``  linear interpolation through (0, 0), ...
* ``compose(outer, inner)``    f(r) = outer(inner(r))

All members vanish exactly at zero and are strictly increasing, so they can
be inverted by bracketing bisection and fitted one-sidedly (majorizing) to
sampled decay data.  Two-argument decay bounds are kept in the factored
exponential form ``beta(r, t) = alpha2(scale * alpha1(r) * exp(-t))``,
which makes the history-window widening ``scale -> scale * exp(tau)`` a
closed operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ComparisonError",
    "NegativeArgument",
    "DomainExceeded",
    "NotReachable",
    "NoMajorant",
    "ComparisonFunction",
    "identity",
    "power",
    "affine_exp",
    "piecewise_linear",
    "compose",
    "KLFunction",
    "kl_eval",
    "kl_delay_shift",
    "kl_time_zero",
    "KLFit",
    "fit_kl",
    "NondecreasingEnvelope",
    "constant_envelope",
    "affine_envelope",
    "power_envelope",
    "verify_class_k",
    "verify_kl",
]

CLASS_K = "ClassK"
CLASS_K_INFINITY = "ClassKInfinity"

_FORMS = ("identity", "power", "affine_exp", "piecewise_linear", "compose")


class ComparisonError(ValueError):
    """Base error for comparison-function misuse."""


class NegativeArgument(ComparisonError):
    """Raised when a comparison function is evaluated at r < 0."""


class DomainExceeded(ComparisonError):
    """Raised when evaluation exceeds the declared domain cap."""


class NotReachable(ComparisonError):
    """Raised when a target value cannot be bracketed for inversion."""


class NoMajorant(ComparisonError):
    """Raised when no member of the parametric family majorizes the data."""


def _as_float_array(r):
    arr = np.asarray(r, dtype=float)
    return arr, (arr.ndim == 0)


@dataclass(frozen=True)
class ComparisonFunction:
    """A strictly increasing map f: [0, inf) -> [0, inf) with f(0) = 0.

    ``form`` selects the parametric family; only the fields relevant to
    that family are meaningful.  Instances are immutable values and safe
    to share across threads.
    """

    form: str
    a: float = 1.0
    p: float = 1.0
    b: float = 1.0
    knots: tuple[tuple[float, float], ...] = ()
    outer: "ComparisonFunction | None" = None
    inner: "ComparisonFunction | None" = None
    domain_cap: float | None = None
    kind: str = CLASS_K_INFINITY

    def __post_init__(self):
        if self.form not in _FORMS:
            raise ComparisonError(f"unknown comparison-function form {self.form!r}")
        if self.form == "power" and (self.a <= 0 or self.p <= 0):
            raise ComparisonError("power form requires a > 0 and p > 0")
        if self.form == "affine_exp" and (self.a <= 0 or self.b <= 0):
            raise ComparisonError("affine_exp form requires a > 0 and b > 0")
        if self.form == "piecewise_linear":
            k = self.knots
            if len(k) < 2:
                raise ComparisonError("piecewise_linear needs at least two knots")
            if k[0] != (0.0, 0.0):
                raise ComparisonError("piecewise_linear must start at (0, 0)")
            rs = [q[0] for q in k]
            vs = [q[1] for q in k]
            if any(r2 <= r1 for r1, r2 in zip(rs, rs[1:])):
                raise ComparisonError("piecewise_linear knot abscissae must increase")
            if any(v2 <= v1 for v1, v2 in zip(vs, vs[1:])):
                raise ComparisonError("piecewise_linear knot values must increase")
        if self.form == "compose" and (self.outer is None or self.inner is None):
            raise ComparisonError("compose form requires outer and inner")
        if self.kind not in (CLASS_K, CLASS_K_INFINITY):
            raise ComparisonError(f"unknown kind {self.kind!r}")

    # -- evaluation ----------------------------------------------------

    def eval(self, r):
        """Evaluate f(r).  Accepts a scalar or an ndarray of r >= 0."""
        arr, scalar = _as_float_array(r)
        if np.any(arr < 0):
            raise NegativeArgument(f"comparison function evaluated at r < 0 (min {arr.min()})")
        if self.domain_cap is not None and np.any(arr > self.domain_cap):
            raise DomainExceeded(
                f"argument exceeds domain cap {self.domain_cap} (max {arr.max()})"
            )
        out = self._eval_unchecked(arr)
        return float(out) if scalar else out

    def __call__(self, r):
        return self.eval(r)

    def _eval_unchecked(self, arr):
        if self.form == "identity":
            return arr.copy() if arr.ndim else arr
        if self.form == "power":
            return self.a * arr**self.p
        if self.form == "affine_exp":
            with np.errstate(over="ignore"):
                return self.a * np.expm1(self.b * arr)
        if self.form == "piecewise_linear":
            rs = np.array([q[0] for q in self.knots])
            vs = np.array([q[1] for q in self.knots])
            out = np.interp(arr, rs, vs)
            slope = (vs[-1] - vs[-2]) / (rs[-1] - rs[-2])
            out = np.where(arr > rs[-1], vs[-1] + slope * (arr - rs[-1]), out)
            return out
        # compose
        return self.outer._eval_unchecked(self.inner._eval_unchecked(arr))

    # -- inversion -----------------------------------------------------

    def invert(self, y: float, tol: float = 1e-10) -> float:
        """Solve f(r) = y by bracketing bisection.

        Returns r with ``|f(r) - y| <= tol * max(1, y)``.  Raises
        :class:`NotReachable` when y exceeds f(domain_cap) or cannot be
        bracketed.
        """
        y = float(y)
        if y < 0:
            raise NegativeArgument("cannot invert a class-K function at y < 0")
        if y == 0.0:
            return 0.0
        tol_eff = tol * max(1.0, y)
        hi = 1.0
        if self.domain_cap is not None:
            hi = min(hi, self.domain_cap)
        for _ in range(4096):
            if self.eval(hi) >= y:
                break
            if self.domain_cap is not None and hi >= self.domain_cap:
                raise NotReachable(
                    f"target {y} exceeds value {self.eval(self.domain_cap)} at domain cap"
                )
            hi = hi * 2.0
            if self.domain_cap is not None:
                hi = min(hi, self.domain_cap)
            if hi > 1e300:
                raise NotReachable(f"could not bracket target {y}")
        else:
            raise NotReachable(f"could not bracket target {y}")
        lo = 0.0
        while True:
            mid = 0.5 * (lo + hi)
            fm = self.eval(mid)
            if abs(fm - y) <= tol_eff:
                return mid
            if fm < y:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(1.0, hi):
                return hi

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        d: dict = {"kind": self.form}
        if self.form == "power":
            d.update(a=self.a, p=self.p)
        elif self.form == "affine_exp":
            d.update(a=self.a, b=self.b)
        elif self.form == "piecewise_linear":
            d["knots"] = [list(q) for q in self.knots]
        elif self.form == "compose":
            d["outer"] = self.outer.to_dict()
            d["inner"] = self.inner.to_dict()
        if self.domain_cap is not None:
            d["domain_cap"] = self.domain_cap
        return d

    @staticmethod
    def from_dict(d: dict) -> "ComparisonFunction":
        form = d["kind"]
        cap = d.get("domain_cap")
        if form == "identity":
            return ComparisonFunction("identity", domain_cap=cap)
        if form == "power":
            return ComparisonFunction("power", a=float(d["a"]), p=float(d["p"]), domain_cap=cap)
        if form == "affine_exp":
            return ComparisonFunction(
                "affine_exp", a=float(d["a"]), b=float(d["b"]), domain_cap=cap
            )
        if form == "piecewise_linear":
            knots = tuple((float(r), float(v)) for r, v in d["knots"])
            return ComparisonFunction("piecewise_linear", knots=knots, domain_cap=cap)
        if form == "compose":
            return ComparisonFunction(
                "compose",
                outer=ComparisonFunction.from_dict(d["outer"]),
                inner=ComparisonFunction.from_dict(d["inner"]),
                domain_cap=cap,
            )
        raise ComparisonError(f"unknown serialized form {form!r}")


def identity(domain_cap: float | None = None) -> ComparisonFunction:
    return ComparisonFunction("identity", domain_cap=domain_cap)


def power(a: float, p: float, domain_cap: float | None = None) -> ComparisonFunction:
    return ComparisonFunction("power", a=a, p=p, domain_cap=domain_cap)


def affine_exp(a: float, b: float, domain_cap: float | None = None) -> ComparisonFunction:
    return ComparisonFunction("affine_exp", a=a, b=b, domain_cap=domain_cap)


def piecewise_linear(
    knots: Sequence[tuple[float, float]], domain_cap: float | None = None
) -> ComparisonFunction:
    return ComparisonFunction(
        "piecewise_linear", knots=tuple((float(r), float(v)) for r, v in knots),
        domain_cap=domain_cap,
    )


def compose(outer: ComparisonFunction, inner: ComparisonFunction) -> ComparisonFunction:
    return ComparisonFunction("compose", outer=outer, inner=inner)


IDENTITY = identity()


# ----------------------------------------------------------------------
# KL decay bounds in factored exponential form
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class KLFunction:
    """Two-argument decay bound beta(r, t) = alpha2(scale * alpha1(r) * e^-t).

    ``alpha1`` and ``alpha2`` must be class-K-infinity; ``scale`` is a
    positive multiplier inside the exponential argument.  Class-K in r and
    monotone decay to zero in t follow from the factored representation.
    """

    alpha1: ComparisonFunction
    alpha2: ComparisonFunction
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ComparisonError("KLFunction scale must be positive")

    def eval(self, r, t):
        r_arr, r_scalar = _as_float_array(r)
        t_arr, t_scalar = _as_float_array(t)
        if np.any(t_arr < 0):
            raise NegativeArgument("KL bound evaluated at t < 0")
        inner = self.scale * self.alpha1.eval(r_arr) * np.exp(-t_arr)
        out = self.alpha2.eval(inner)
        return float(out) if (r_scalar and t_scalar) else np.asarray(out)

    def __call__(self, r, t):
        return self.eval(r, t)

    def to_dict(self) -> dict:
        return {
            "alpha1": self.alpha1.to_dict(),
            "alpha2": self.alpha2.to_dict(),
            "scale": self.scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "KLFunction":
        return KLFunction(
            alpha1=ComparisonFunction.from_dict(d["alpha1"]),
            alpha2=ComparisonFunction.from_dict(d["alpha2"]),
            scale=float(d["scale"]),
        )


def kl_eval(b: KLFunction, r, t):
    """Evaluate beta(r, t)."""
    return b.eval(r, t)


def kl_delay_shift(b: KLFunction, tau: float) -> KLFunction:
    """Widen a decay bound by a history window of length tau.

    Returns beta~(r, t) = alpha2(e^tau * scale * alpha1(r) * e^-t), which
    satisfies beta~(r, t) = beta(r, t - tau) for t >= tau and majorizes
    beta pointwise.
    """
    if tau < 0:
        raise NegativeArgument("delay shift requires tau >= 0")
    return replace(b, scale=b.scale * math.exp(tau))


def kl_time_zero(b: KLFunction) -> ComparisonFunction:
    """The class-K section beta(., 0) = alpha2(scale * alpha1(.))."""
    return compose(b.alpha2, compose(power(b.scale, 1.0), b.alpha1))


def exponential_kl(coeff: float = 1.0, r_power: float = 1.0, rate: float = 1.0) -> KLFunction:
    """Convenience constructor for beta(r, t) = coeff * r**r_power * e^{-rate*t}."""
    if coeff <= 0 or r_power <= 0 or rate <= 0:
        raise ComparisonError("exponential_kl parameters must be positive")
    return KLFunction(
        alpha1=power(1.0, r_power / rate),
        alpha2=power(coeff, rate),
        scale=1.0,
    )


# ----------------------------------------------------------------------
# Majorizing KL fit
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class KLFit:
    kl: KLFunction
    slack: float


_C_CAP = 1e12


def _fit_objective(rs, ts, vs, q: float, p: float):
    """Smallest admissible coefficient and resulting max slack for C r^q e^{-pt}."""
    pos = vs > 0
    if not np.any(pos):
        c = 0.0
    else:
        with np.errstate(divide="ignore", over="ignore"):
            ratios = vs[pos] / (rs[pos] ** q * np.exp(-p * ts[pos]))
        c = float(np.max(ratios))
    if not math.isfinite(c) or c > _C_CAP:
        return math.inf, math.inf
    c = max(c, 1e-300)
    slack = float(np.max(c * rs**q * np.exp(-p * ts) - vs))
    return c, slack


def fit_kl(samples: Iterable[tuple[float, float, float]]) -> KLFit:
    """One-sided fit of a decay bound to sampled (r, t, value) triples.

    Searches the family beta(r, t) = C * r**q * e^{-p t} (power alpha1 and
    alpha2 with a free scale collapse to this three-parameter form) for the
    member that majorizes every sample while minimizing the worst slack
    ``max(beta - value)``.  A least-squares fit could dip below the data
    and certify a bound that does not hold; the majorizing fit cannot.

    Raises :class:`NoMajorant` when a sample has value > 0 at r = 0 or the
    required coefficient exceeds the search cap.
    """
    pts = [(float(r), float(t), float(v)) for r, t, v in samples]
    if not pts:
        raise ComparisonError("fit_kl requires at least one sample")
    rs = np.array([p[0] for p in pts])
    ts = np.array([p[1] for p in pts])
    vs = np.array([p[2] for p in pts])
    if np.any(vs < 0):
        raise NegativeArgument("fit_kl samples must be nonnegative")
    if np.any((rs == 0) & (vs > 0)):
        raise NoMajorant("a sample with r = 0 has positive value; beta(0, t) = 0 cannot majorize")
    if np.all(vs == 0):
        return KLFit(kl=exponential_kl(1.0, 1.0, 1.0), slack=0.0)

    exponents = np.unique(np.concatenate([np.geomspace(0.25, 4.0, 25), [0.5, 1.0, 2.0, 3.0]]))
    best = None
    for q in exponents:
        for p in exponents:
            c, slack = _fit_objective(rs, ts, vs, q, p)
            if best is None or slack < best[0]:
                best = (slack, q, p, c)
    if best is None or not math.isfinite(best[0]):
        raise NoMajorant("no member of the exponential-power family majorizes the samples")

    # Coordinate refinement around the best grid member.
    slack, q, p, c = best
    for _ in range(3):
        for which in ("q", "p"):
            base = q if which == "q" else p
            cand = base * np.geomspace(0.8, 1.25, 11)
            for val in cand:
                qq, pp = (val, p) if which == "q" else (q, val)
                cc, ss = _fit_objective(rs, ts, vs, qq, pp)
                if ss < slack:
                    slack, q, p, c = ss, qq, pp, cc
    if not math.isfinite(slack):
        raise NoMajorant("no member of the exponential-power family majorizes the samples")
    kl = KLFunction(alpha1=power(1.0, q / p), alpha2=power(c, p), scale=1.0)
    return KLFit(kl=kl, slack=float(slack))


# ----------------------------------------------------------------------
# Nondecreasing positive envelopes
# ----------------------------------------------------------------------

_ENVELOPE_FORMS = ("constant", "affine", "power_plus_constant", "plus_half_square", "scaled_max")


@dataclass(frozen=True)
class NondecreasingEnvelope:
    """A nondecreasing, strictly positive map on [0, inf).

    Base forms: ``constant`` c, ``affine`` c + a*r, ``power_plus_constant``
    c + a*r**p.  Two derived forms support the envelope conversions between
    product-form and sum-form growth bounds: ``plus_half_square`` maps a
    base envelope N to N + N^2/2 and ``scaled_max`` to max(N, N/N(0)).
    """

    form: str
    c: float = 1.0
    a: float = 0.0
    p: float = 1.0
    base: "NondecreasingEnvelope | None" = None

    def __post_init__(self):
        if self.form not in _ENVELOPE_FORMS:
            raise ComparisonError(f"unknown envelope form {self.form!r}")
        if self.form == "constant" and self.c <= 0:
            raise ComparisonError("constant envelope must be positive")
        if self.form == "affine" and (self.c <= 0 or self.a < 0):
            raise ComparisonError("affine envelope requires c > 0 and a >= 0")
        if self.form == "power_plus_constant" and (self.c <= 0 or self.a < 0 or self.p <= 0):
            raise ComparisonError("power_plus_constant requires c > 0, a >= 0, p > 0")
        if self.form in ("plus_half_square", "scaled_max") and self.base is None:
            raise ComparisonError(f"{self.form} envelope requires a base envelope")

    def eval(self, r):
        arr, scalar = _as_float_array(r)
        if np.any(arr < 0):
            raise NegativeArgument("envelope evaluated at r < 0")
        out = self._eval_unchecked(arr)
        return float(out) if scalar else out

    def __call__(self, r):
        return self.eval(r)

    def _eval_unchecked(self, arr):
        if self.form == "constant":
            return np.full_like(arr, self.c) if arr.ndim else np.asarray(self.c)
        if self.form == "affine":
            return self.c + self.a * arr
        if self.form == "power_plus_constant":
            return self.c + self.a * arr**self.p
        g = self.base._eval_unchecked(arr)
        if self.form == "plus_half_square":
            return g + 0.5 * g * g
        # scaled_max
        g0 = float(self.base._eval_unchecked(np.asarray(0.0)))
        return np.maximum(g, g / g0)

    def to_dict(self) -> dict:
        d: dict = {"form": self.form}
        if self.form == "constant":
            d["c"] = self.c
        elif self.form == "affine":
            d.update(c=self.c, a=self.a)
        elif self.form == "power_plus_constant":
            d.update(c=self.c, a=self.a, p=self.p)
        else:
            d["base"] = self.base.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "NondecreasingEnvelope":
        form = d["form"]
        if form == "constant":
            return NondecreasingEnvelope("constant", c=float(d["c"]))
        if form == "affine":
            return NondecreasingEnvelope("affine", c=float(d["c"]), a=float(d["a"]))
        if form == "power_plus_constant":
            return NondecreasingEnvelope(
                "power_plus_constant", c=float(d["c"]), a=float(d["a"]), p=float(d["p"])
            )
        if form in ("plus_half_square", "scaled_max"):
            return NondecreasingEnvelope(form, base=NondecreasingEnvelope.from_dict(d["base"]))
        raise ComparisonError(f"unknown serialized envelope form {form!r}")


def constant_envelope(c: float) -> NondecreasingEnvelope:
    return NondecreasingEnvelope("constant", c=c)


def affine_envelope(c: float, a: float) -> NondecreasingEnvelope:
    return NondecreasingEnvelope("affine", c=c, a=a)


def power_envelope(c: float, a: float, p: float) -> NondecreasingEnvelope:
    return NondecreasingEnvelope("power_plus_constant", c=c, a=a, p=p)


# ----------------------------------------------------------------------
# Sampled verification
# ----------------------------------------------------------------------


def verify_class_k(
    f: ComparisonFunction,
    r_max: float = 10.0,
    points_per_decade: int = 256,
    r_min: float = 1e-6,
) -> bool:
    """Sampled check that f(0) = 0 and f is strictly increasing on [0, r_max]."""
    if f.eval(0.0) != 0.0:
        return False
    decades = max(1, int(math.ceil(math.log10(r_max / r_min))))
    grid = np.concatenate([[0.0], np.geomspace(r_min, r_max, decades * points_per_decade)])
    vals = f.eval(grid)
    return bool(np.all(np.diff(vals) > 0))


def verify_unbounded(f: ComparisonFunction, threshold: float, r_cap: float = 1e12) -> bool:
    """Check class-K-infinity behaviour: some R <= r_cap has f(R) > threshold."""
    r = 1.0
    while r <= r_cap:
        if f.eval(r) > threshold:
            return True
        r *= 4.0
    return False


def verify_kl(
    b: KLFunction,
    r_max: float = 10.0,
    t_max: float = 10.0,
    n: int = 33,
) -> bool:
    """Sampled check of the KL properties of a decay bound.

    Class-K in r for fixed t, nonincreasing decay to zero in t for fixed r,
    and beta(0, t) = 0.
    """
    rs = np.linspace(0.0, r_max, n)
    ts = np.linspace(0.0, t_max, n)
    for t in ts:
        vals = b.eval(rs, np.full_like(rs, t))
        if vals[0] != 0.0 or np.any(np.diff(vals) <= 0):
            return False
    for r in rs[1:]:
        vals = b.eval(np.full_like(ts, r), ts)
        if np.any(np.diff(vals) > 0):
            return False
        if b.eval(r, 50.0 + t_max) >= b.eval(r, 0.0) * 1e-3 + 1e-300:
            return False
    return True
