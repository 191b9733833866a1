"""Unit-safe saturating functions (USSF) and their numeric certification.

A USSF is a smooth odd function f: R -> (-1, 1) with

    f(-x) = -f(x),   f'(x) > 0,   lim_{x->+inf} f(x) = 1,

whose slope decays fast enough that the product x^2 f'(x) stays bounded:

    x^2 f'(x) <= eps   for all x.

The constant eps controls the gap between |x| and x*f(x):

    g(x) = |x| - x f(x)  is even and  sup g(x) = M <= eps,

so f can replace sign(x) in a control law while the Lyapunov analysis
only pays a bounded residual.  Four members are built in:

    tanh  f(x) = tanh(x)                 eps ~= 0.4392288
    atan  f(x) = (2/pi) arctan(x)        eps ~= 0.6366198  (= 2/pi)
    alg   f(x) = x / sqrt(1 + x^2)       eps ~= 0.3849002
    erf   f(x) = erf(x)                  eps ~= 0.4151075

``certify_epsilon`` computes eps and M numerically: a log-spaced grid
scan followed by golden-section refinement when the maximum is interior,
or a Richardson limit extrapolation when the product increases all the
way to the edge of the grid (the scaled-arctan case, where the supremum
2/pi is only approached asymptotically).

Tail quantities are evaluated through analytic complements, e.g.
1 - tanh(x) = 2 e^{-2x} / (1 + e^{-2x}), because the direct expression
rounds to 0 long before the mathematics says so.

Custom functions can be registered and are admitted only after the
axioms verify on a dense grid; see ``register_ussf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional

TWO_OVER_PI = 2.0 / math.pi
TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

# Kernel dispatch codes for the built-in kinds (shared with _kernel*).
KIND_CODES = {"tanh": 0, "atan": 1, "alg": 2, "erf": 3}


class DomainError(ValueError):
    """Raised when an argument is outside a function's domain."""


class CertificationError(RuntimeError):
    """Raised when a function cannot be certified as a USSF."""


class UssfKind(str, Enum):
    TANH = "tanh"
    SCALED_ARCTAN = "atan"
    ALGEBRAIC_SIGMOID = "alg"
    ERROR_FUNCTION = "erf"


def _f_tanh(x: float) -> float:
    return math.tanh(x)


def _fp_tanh(x: float) -> float:
    t = math.tanh(x)
    return 1.0 - t * t


def _c_tanh(x: float) -> float:
    # 1 - tanh(x) for x >= 0, free of cancellation.
    e = math.exp(-2.0 * x)
    return 2.0 * e / (1.0 + e)


def _f_atan(x: float) -> float:
    return TWO_OVER_PI * math.atan(x)


def _fp_atan(x: float) -> float:
    return TWO_OVER_PI / (1.0 + x * x)


def _c_atan(x: float) -> float:
    if x == 0.0:
        return 1.0
    return TWO_OVER_PI * math.atan(1.0 / x)


def cpow(x: float, a: float) -> float:
    """math.pow with C semantics: overflow returns inf, not an exception.

    Keeps the pure-Python paths fault-classifiable in lockstep with the
    compiled kernel, whose libm pow saturates silently.
    """
    try:
        return math.pow(x, a)
    except OverflowError:
        return math.inf


def _f_alg(x: float) -> float:
    # Past |x| = 1 evaluate via 1/x^2 so x*x overflowing to inf cannot
    # collapse the value to 0 (correct limit is +-1).
    if x > 1.0 or x < -1.0:
        return math.copysign(1.0 / math.sqrt(1.0 + 1.0 / (x * x)), x)
    return x / math.sqrt(1.0 + x * x)


def _fp_alg(x: float) -> float:
    c = math.sqrt(1.0 + x * x)
    return 1.0 / (c * c * c)


def _c_alg(x: float) -> float:
    c = math.sqrt(1.0 + x * x)
    return 1.0 / (c * (c + x))


def _f_erf(x: float) -> float:
    return math.erf(x)


def _fp_erf(x: float) -> float:
    return TWO_OVER_SQRT_PI * math.exp(-x * x)


def _c_erf(x: float) -> float:
    return math.erfc(x)


@dataclass(frozen=True)
class _UssfDef:
    name: str
    fn: Callable[[float], float]
    deriv: Callable[[float], float]
    complement: Optional[Callable[[float], float]]  # 1 - f(x) for x >= 0


_REGISTRY: Dict[str, _UssfDef] = {
    "tanh": _UssfDef("tanh", _f_tanh, _fp_tanh, _c_tanh),
    "atan": _UssfDef("atan", _f_atan, _fp_atan, _c_atan),
    "alg": _UssfDef("alg", _f_alg, _fp_alg, _c_alg),
    "erf": _UssfDef("erf", _f_erf, _fp_erf, _c_erf),
}


def resolve(kind) -> _UssfDef:
    """Map a kind name (str or UssfKind) to its definition."""
    name = kind.value if isinstance(kind, UssfKind) else str(kind)
    try:
        return _REGISTRY[name]
    except KeyError:
        raise DomainError(f"unknown USSF kind {name!r}; "
                          f"known: {sorted(_REGISTRY)}") from None


def ussf_eval(kind, x: float) -> float:
    """Evaluate f(x) for the given kind.  Raises DomainError on non-finite x."""
    if not math.isfinite(x):
        raise DomainError(f"non-finite USSF argument: {x!r}")
    return resolve(kind).fn(x)


def ussf_deriv(kind, x: float) -> float:
    """Evaluate f'(x) for the given kind."""
    if not math.isfinite(x):
        raise DomainError(f"non-finite USSF argument: {x!r}")
    return resolve(kind).deriv(x)


def tail_complement(kind, x: float) -> float:
    """Stable 1 - f(x) for x >= 0.

    Uses the analytic complement when the kind has one; otherwise falls
    back to the (cancellation-prone) direct difference.
    """
    if x < 0.0 or not math.isfinite(x):
        raise DomainError("tail_complement requires finite x >= 0")
    d = resolve(kind)
    if d.complement is not None:
        return d.complement(x)
    return 1.0 - d.fn(x)


def signed_power(x: float, a: float) -> float:
    """sign(x) * |x|^a, the odd continuation of the power function.

    Equals x**a exactly for x >= 0.  The exponent must be positive; a
    non-positive exponent would make the term singular at x = 0.
    """
    if not (a > 0.0):
        raise DomainError(f"signed_power exponent must be > 0, got {a!r}")
    if x >= 0.0:
        return cpow(x, a)
    return -cpow(-x, a)


def _golden_max(fn: Callable[[float], float], a: float, b: float,
                tol: float = 1e-10) -> tuple:
    """Golden-section search for the maximum of a unimodal fn on [a, b]."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc = fn(c)
    fd = fn(d)
    while (b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    return x, fn(x)


def _log_grid(span: float, n: int, lo: float = 1e-8):
    """n log-spaced points on [lo, span]."""
    la = math.log10(lo)
    lb = math.log10(span)
    step = (lb - la) / (n - 1)
    return [10.0 ** (la + i * step) for i in range(n)]


def _maximize(fn: Callable[[float], float], span: float, n: int) -> float:
    """Supremum of an even profile fn over x > 0.

    Grid scan plus golden-section refinement for an interior maximum.
    When fn still increases at the grid edge the supremum is approached
    asymptotically; assuming an O(1/x^2) approach (true for every
    saturating f with integrable slope), Richardson extrapolation from
    fn(span/2) and fn(span) recovers the limit.  A maximum at the left
    edge, or an edge value that has not begun to converge, means the
    profile is unbounded and certification fails.
    """
    xs = _log_grid(span, n)
    vals = [fn(x) for x in xs]
    imax = 0
    vmax = vals[0]
    for i in range(1, n):
        if vals[i] > vmax:
            vmax = vals[i]
            imax = i
    if imax == 0:
        raise CertificationError(
            "profile maximised at the small-x edge of the grid; "
            "not a saturating function")
    if imax == n - 1:
        ga = fn(span / 2.0)
        gb = vals[-1]
        if not (gb > 0.0) or abs(gb - ga) > 1e-3 * abs(gb):
            raise CertificationError(
                "profile still growing at the grid edge; "
                "slope product appears unbounded")
        est = gb + (gb - ga) / 3.0
        return max(est, gb)
    _, v = _golden_max(fn, xs[imax - 1], xs[imax + 1])
    return max(v, vmax)


@dataclass(frozen=True)
class UssfCertificate:
    """Numeric certificate for one saturating function.

    epsilon bounds x^2 f'(x); m_bound is the measured supremum of
    g(x) = |x| - x f(x), which the slope bound caps at epsilon.
    """
    kind: str
    epsilon: float
    m_bound: float
    grid_span: float
    tolerance: float

    def __post_init__(self):
        if not (self.epsilon > 0.0):
            raise CertificationError("certified epsilon must be positive")
        if self.m_bound < 0.0:
            raise CertificationError("m_bound cannot be negative")
        if self.m_bound > self.epsilon + self.tolerance:
            raise CertificationError(
                f"saturation gap {self.m_bound} exceeds slope bound "
                f"{self.epsilon} + {self.tolerance}")


def certify_epsilon(kind, grid_span: float = 1e3,
                    tolerance: float = 1e-6) -> UssfCertificate:
    """Certify the slope-limit constant eps and the gap bound M.

    Scans x^2 f'(x) and x (1 - f(x)) on a 10^4-point log grid over
    (0, grid_span] and refines to a 1e-10 bracket.  Raises
    CertificationError when either profile fails to level off, which is
    the signature of a non-saturating function.
    """
    if not (grid_span >= 100.0):
        raise DomainError("grid_span must be >= 100")
    if not (0.0 < tolerance < 1e-3):
        raise DomainError("tolerance must lie in (0, 1e-3)")
    d = resolve(kind)

    def slope_profile(x: float) -> float:
        return x * x * d.deriv(x)

    if d.complement is not None:
        def gap_profile(x: float) -> float:
            return x * d.complement(x)
    else:
        def gap_profile(x: float) -> float:
            return abs(x) - x * d.fn(x)

    n = 10 ** 4
    eps = _maximize(slope_profile, grid_span, n)
    m = _maximize(gap_profile, grid_span, n)
    return UssfCertificate(kind=d.name, epsilon=eps, m_bound=m,
                           grid_span=grid_span, tolerance=tolerance)


@dataclass(frozen=True)
class AxiomReport:
    """Grid-check results for the USSF axioms.

    Each flag is a first-order numeric proxy: oddness and range are
    checked pointwise, monotonicity through f' > 0 (strict only where
    the derivative is representable in double precision), saturation
    through the tail complement, and the slope limit against a freshly
    certified epsilon.
    """
    kind: str
    oddness: bool
    monotonicity: bool
    range_bounded: bool
    saturation: bool
    slope_limit: bool
    max_odd_residual: float
    min_deriv_core: float
    tail_gap: float
    max_slope_product: float
    epsilon: float

    @property
    def passed(self) -> bool:
        return (self.oddness and self.monotonicity and self.range_bounded
                and self.saturation and self.slope_limit)

    def asdict(self) -> dict:
        return {
            "oddness": self.oddness,
            "monotonicity": self.monotonicity,
            "range_bounded": self.range_bounded,
            "saturation": self.saturation,
            "slope_limit": self.slope_limit,
            "max_odd_residual": self.max_odd_residual,
            "min_deriv_core": self.min_deriv_core,
            "tail_gap": self.tail_gap,
            "max_slope_product": self.max_slope_product,
            "passed": self.passed,
        }


# Strict positivity of f' is only checkable where the formula keeps a
# nonzero double value; tanh's 1 - t^2 form is the first to cancel to
# exactly zero (t rounds to 1 near x = 19), so the window stops short
# of that.  Beyond it the built-in complements are positive by
# construction and customs cannot be distinguished from flat.
_STRICT_DERIV_LIMIT = 18.0


def verify_axioms(kind, sample_count: int = 10 ** 4,
                  span: float = 1e3) -> AxiomReport:
    """Check the USSF axioms on a symmetric log-spaced grid.

    Returns a report rather than raising: a failed flag is data (used by
    the admission path and the CLI), not an exception.
    """
    if sample_count < 100:
        raise DomainError("sample_count must be >= 100")
    if span < 100.0:
        raise DomainError("span must be >= 100")
    d = resolve(kind)
    half = _log_grid(span, sample_count // 2)
    xs = [-x for x in reversed(half)] + half

    max_odd = 0.0
    min_deriv_core = math.inf
    deriv_nonneg = True
    range_ok = True
    for x in xs:
        r = abs(d.fn(x) + d.fn(-x))
        if r > max_odd:
            max_odd = r
        fp = d.deriv(x)
        if fp < 0.0:
            deriv_nonneg = False
        if abs(x) <= _STRICT_DERIV_LIMIT and fp < min_deriv_core:
            min_deriv_core = fp
        if d.complement is None and abs(d.fn(x)) >= 1.0:
            range_ok = False

    oddness = max_odd < 1e-12
    monotonicity = deriv_nonneg and min_deriv_core > 0.0
    # For kinds with an analytic complement the range bound |f| < 1 holds
    # by construction (each complement is a ratio of positive terms).
    if d.complement is not None:
        range_ok = True

    tail = tail_complement(kind, span) if d.complement is not None \
        else 1.0 - abs(d.fn(span))
    saturation = tail < 1e-3

    try:
        cert = certify_epsilon(kind, grid_span=span)
        eps = cert.epsilon
        max_prod = 0.0
        for x in half:
            p = x * x * d.deriv(x)
            if p > max_prod:
                max_prod = p
        slope_ok = max_prod <= eps + 1e-9
    except CertificationError:
        eps = math.nan
        max_prod = math.inf
        slope_ok = False

    return AxiomReport(kind=d.name, oddness=oddness,
                       monotonicity=monotonicity, range_bounded=range_ok,
                       saturation=saturation, slope_limit=slope_ok,
                       max_odd_residual=max_odd,
                       min_deriv_core=min_deriv_core,
                       tail_gap=tail, max_slope_product=max_prod,
                       epsilon=eps)


def register_ussf(name: str, fn: Callable[[float], float],
                  deriv: Callable[[float], float],
                  complement: Optional[Callable[[float], float]] = None,
                  *, span: float = 1e3,
                  sample_count: int = 10 ** 4) -> UssfCertificate:
    """Admit a custom saturating function after verifying the axioms.

    The function is only added to the registry when every axiom check
    passes and certification succeeds; otherwise CertificationError is
    raised and the registry is left untouched.  Registered kinds are
    usable through the per-step API; the batch simulation kernels only
    dispatch the four built-ins.

    Functions that saturate beyond double resolution (f(x) rounds to
    exactly 1 on the verification grid) need the analytic complement
    1 - f(x); without it the strict range bound |f| < 1 cannot be
    confirmed pointwise and admission is refused.
    """
    if name in _REGISTRY:
        raise DomainError(f"USSF kind {name!r} already registered")
    if name in KIND_CODES:
        raise DomainError(f"{name!r} is reserved for a built-in kind")
    cand = _UssfDef(name, fn, deriv, complement)
    _REGISTRY[name] = cand
    try:
        report = verify_axioms(name, sample_count=sample_count, span=span)
        if not report.passed:
            failed = [k for k, v in report.asdict().items()
                      if v is False and k != "passed"]
            raise CertificationError(
                f"candidate {name!r} failed axiom checks: {failed}")
        cert = certify_epsilon(name, grid_span=span)
    except Exception:
        del _REGISTRY[name]
        raise
    return cert
