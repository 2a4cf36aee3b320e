"""Memory kernels g on (0, inf) and the L2 quantities built from them.

Three families are provided: the gamma kernel ``t**kappa * exp(-rho*t)``,
the exponential kernel ``exp(-rho*t)`` and a tabulated, piecewise-linear
kernel that vanishes beyond its last knot.  Kernels are immutable and
evaluate on scalars or arrays.

The module also certifies the two kernel conditions needed for conditional
full support: the Hoelder-type bound on ``gap(t) = ||g||^2 - R(t)`` and
strict positivity of ``int_0^eps |g|``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, InvalidParameter, NumericalError

NONDEGENERACY_FLOOR = 1e-14
QUAD_EPSREL = 1e-12
QUAD_EPSABS = 1e-15


@dataclass(frozen=True)
class Kernel:
    """Base class; subclasses implement ``_eval`` and ``sq_integral``."""

    #: exponent of the algebraic behaviour ``g(t) ~ t**p`` at the origin
    singular_power = 0.0

    def __call__(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(~(arr > 0)):
            raise DomainError("kernel is defined on (0, inf) only; got t <= 0")
        out = self._eval(arr)
        return float(out) if out.ndim == 0 else out

    def _eval(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def smooth_part(self, t):
        """``g(t) / t**singular_power``, bounded near the origin."""
        return self._eval(np.asarray(t, dtype=float)) / np.asarray(t, dtype=float) ** self.singular_power

    def sq_integral(self, a: float, b: float = math.inf) -> float:
        """Exact ``int_a^b g(s)^2 ds`` for ``0 <= a <= b <= inf``."""
        raise NotImplementedError

    def antiderivative(self, x):
        """``G(x) = int_0^x g(s) ds`` for ``x >= 0``, vectorised."""
        raise NotImplementedError

    @property
    def length_scale(self) -> float:
        """Time over which the kernel decays; used to lay out quadrature panels."""
        raise NotImplementedError

    @property
    def support_end(self) -> float:
        return math.inf

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return ()

    def spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GammaKernel(Kernel):
    kappa: float
    rho: float

    def __post_init__(self):
        if not (-0.5 < self.kappa < 0.5) or self.kappa == 0:
            raise InvalidParameter(f"gamma kernel requires kappa in (-1/2, 0) U (0, 1/2), got kappa={self.kappa}")
        if not self.rho > 0:
            raise InvalidParameter(f"gamma kernel requires rho > 0, got rho={self.rho}")

    @property
    def singular_power(self) -> float:
        return self.kappa

    def _eval(self, t):
        return t**self.kappa * np.exp(-self.rho * t)

    def smooth_part(self, t):
        return np.exp(-self.rho * np.asarray(t, dtype=float))

    def sq_integral(self, a, b=math.inf):
        _check_range(a, b)
        shape = 2 * self.kappa + 1
        scale = special.gamma(shape) / (2 * self.rho) ** shape
        xa, xb = 2 * self.rho * a, 2 * self.rho * b
        if math.isinf(b):
            return scale * special.gammaincc(shape, xa)
        if a == 0:
            return scale * special.gammainc(shape, xb)
        # difference on the side with less cancellation
        if special.gammainc(shape, xa) > 0.5:
            return scale * (special.gammaincc(shape, xa) - special.gammaincc(shape, xb))
        return scale * (special.gammainc(shape, xb) - special.gammainc(shape, xa))

    def antiderivative(self, x):
        a = self.kappa + 1
        x = np.asarray(x, dtype=float)
        return special.gamma(a) / self.rho**a * special.gammainc(a, self.rho * np.maximum(x, 0.0))

    @property
    def length_scale(self):
        return 1.0 / self.rho

    def spec(self):
        return {"family": "gamma", "kappa": self.kappa, "rho": self.rho}


@dataclass(frozen=True)
class ExponentialKernel(Kernel):
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidParameter(f"exponential kernel requires rho > 0, got rho={self.rho}")

    def _eval(self, t):
        return np.exp(-self.rho * t)

    def sq_integral(self, a, b=math.inf):
        _check_range(a, b)
        two_rho = 2 * self.rho
        if math.isinf(b):
            return math.exp(-two_rho * a) / two_rho
        return math.exp(-two_rho * a) * -math.expm1(-two_rho * (b - a)) / two_rho

    def antiderivative(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-self.rho * x) / self.rho

    @property
    def length_scale(self):
        return 1.0 / self.rho

    def spec(self):
        return {"family": "exponential", "rho": self.rho}


@dataclass(frozen=True)
class TabulatedKernel(Kernel):
    """Piecewise-linear kernel through ``(knots, values)``.

    Left of the first knot the first value is held; right of the last knot
    the kernel is zero.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]
    _k: np.ndarray = field(init=False, repr=False, compare=False)
    _v: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or k.shape != v.shape or k.size < 2:
            raise InvalidParameter("tabulated kernel needs matching knot/value lists with at least two entries")
        if k[0] < 0 or np.any(np.diff(k) <= 0):
            raise InvalidParameter("tabulated kernel knots must be strictly increasing with knots[0] >= 0")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise InvalidParameter("tabulated kernel knots and values must be finite")
        object.__setattr__(self, "knots", tuple(k.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_v", v)

    @classmethod
    def from_csv(cls, path) -> "TabulatedKernel":
        """Load a two-column ``t, g`` CSV file; a non-numeric header row is skipped."""
        rows = []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if rows:
                        raise InvalidParameter(f"{path}: non-numeric row {row!r}")
        if not rows:
            raise InvalidParameter(f"{path}: no data rows")
        knots, values = zip(*rows)
        return cls(knots, values)

    def _eval(self, t):
        last = self._k[-1]
        # lags computed as k*dt may overshoot the last knot by rounding
        inside = t <= last * (1 + 1e-12) + 1e-300
        return np.where(inside, np.interp(np.minimum(t, last), self._k, self._v), 0.0)

    def sq_integral(self, a, b=math.inf):
        _check_range(a, b)
        b = min(b, self._k[-1])
        if b <= a:
            return 0.0
        pts = np.concatenate(([a], self._k[(self._k > a) & (self._k < b)], [b]))
        y = np.interp(pts, self._k, self._v)
        h = np.diff(pts)
        return float(np.sum(h * (y[:-1] ** 2 + y[:-1] * y[1:] + y[1:] ** 2) / 3.0))

    def antiderivative(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, self._k[-1])
        k = np.concatenate(([0.0], self._k)) if self._k[0] > 0 else self._k
        v = np.concatenate(([self._v[0]], self._v)) if self._k[0] > 0 else self._v
        cum = np.concatenate(([0.0], np.cumsum(np.diff(k) * (v[:-1] + v[1:]) / 2)))
        i = np.clip(np.searchsorted(k, x, side="right") - 1, 0, k.size - 2)
        return cum[i] + (x - k[i]) * (v[i] + np.interp(x, k, v)) / 2

    @property
    def length_scale(self):
        return self._k[-1]

    @property
    def support_end(self):
        return self._k[-1]

    @property
    def breakpoints(self):
        return self.knots

    def spec(self):
        return {"family": "tabulated", "knots": list(self.knots), "values": list(self.values)}


def _check_range(a, b):
    if not (0 <= a <= b):
        raise DomainError(f"integration range must satisfy 0 <= a <= b, got [{a}, {b}]")


def _quad(f, a, b, what, weight=None, wvar=None, points=None):
    kw = dict(epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=500, full_output=1)
    if weight is not None:
        kw.update(weight=weight, wvar=wvar)
    elif points is not None and len(points) and not math.isinf(b):
        kw.update(points=points)
    res = integrate.quad(f, a, b, **kw)
    value, err = res[0], res[1]
    if len(res) > 3 and err > max(1e-8 * abs(value), 1e-12):
        raise NumericalError(f"{what}: quadrature did not converge on [{a}, {b}]", estimate=value, error_bound=err)
    return value


def _panel_edges(kernel: Kernel, start: float, end: float) -> list[float]:
    """Geometric panel edges from ``start`` up to ``end`` (possibly inf)."""
    edges = [start]
    # doubling from start keeps every panel's end ratio bounded, even for tiny start
    x = 2 * start if start > 0 else 2e-3 * kernel.length_scale
    stop = min(end, 40 * kernel.length_scale)
    while x < stop:
        edges.append(x)
        x *= 2
    edges.append(end)
    return edges


def _integrate_panels(kernel, f, start, end, what, extra_points=()):
    edges = _panel_edges(kernel, start, end)
    pts = sorted(set(kernel.breakpoints) | set(extra_points))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        inner = [p for p in pts if lo < p < hi]
        total += _quad(f, lo, hi, what, points=inner)
    return total


def eval_kernel(kernel: Kernel, t):
    """Evaluate ``g(t)``; raises ``DomainError`` for ``t <= 0``."""
    return kernel(t)


def l2_norm_sq(kernel: Kernel) -> float:
    """``int_0^inf g(s)^2 ds`` in closed form."""
    return kernel.sq_integral(0.0, math.inf)


def autocovariance(kernel: Kernel, t: float) -> float:
    """``R(t) = int_0^inf g(t+s) g(s) ds`` by adaptive quadrature.

    The first panel carries the algebraic weight ``s**kappa`` (``s**(2 kappa)``
    at ``t = 0``) so the singular endpoint is integrated exactly; the last
    panel runs to infinity through QUADPACK's tail map.
    """
    if t < 0:
        raise DomainError(f"autocovariance needs t >= 0, got {t}")
    end = kernel.support_end - t
    if end <= 0:
        return 0.0
    p = kernel.singular_power
    first = min(t if t > 0 else 1e-2 * kernel.length_scale, end)
    if p != 0:
        if t == 0:
            head = _quad(lambda s: kernel.smooth_part(s) ** 2, 0.0, first, "autocovariance", "alg", (2 * p, 0.0))
        else:
            head = _quad(lambda s: kernel.smooth_part(s) * kernel(s + t), 0.0, first, "autocovariance", "alg", (p, 0.0))
    else:
        pts = [x for x in kernel.breakpoints + tuple(k - t for k in kernel.breakpoints) if 0 < x < first]
        head = _quad(lambda s: kernel(s + t) * kernel(s), 0.0, first, "autocovariance", points=pts) if first > 0 else 0.0
    if first >= end:
        return head
    shifted = tuple(k - t for k in kernel.breakpoints)
    tail = _integrate_panels(kernel, lambda s: kernel(s + t) * kernel(s), first, end, "autocovariance", shifted)
    return head + tail


def gap(kernel: Kernel, t: float) -> float:
    """``||g||^2 - R(t)``, computed without cancellation.

    Uses ``gap(t) = 1/2 int_0^t g^2 + 1/2 int_0^inf (g(s+t) - g(s))^2 ds``,
    which is half the increment variance of the unit-volatility moving
    average and is nonnegative term by term.
    """
    if t < 0:
        raise DomainError(f"gap needs t >= 0, got {t}")
    if t == 0:
        return 0.0
    near = kernel.sq_integral(0.0, t)

    def sq_diff(s):
        gs = kernel(s)
        gst = kernel(s + t)
        return (gst - gs) ** 2

    pts = [x for x in kernel.breakpoints + tuple(k - t for k in kernel.breakpoints) if 0 < x < t]
    head = _quad(sq_diff, 0.0, t, "gap", points=pts)
    end = kernel.support_end
    if t >= end:
        return 0.5 * near + 0.5 * head
    shifted = tuple(k - t for k in kernel.breakpoints)
    tail = _integrate_panels(kernel, sq_diff, t, end, "gap", shifted)
    return 0.5 * near + 0.5 * (head + tail)


@dataclass(frozen=True)
class RegularityCertificate:
    alpha: float
    C: float
    probe_times: tuple[float, ...]
    gaps: tuple[float, ...]
    fitted_slope: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "C": self.C,
            "probe_times": list(self.probe_times),
            "gaps": list(self.gaps),
            "fitted_slope": self.fitted_slope,
            "passed": self.passed,
        }


def certify_regularity(kernel: Kernel, T: float, n_probe: int = 16, t_min: float | None = None,
                       margin: float = 0.1, alpha_floor: float = 1e-3) -> RegularityCertificate:
    """Estimate ``(alpha, C)`` with ``gap(t) <= C t**alpha`` on ``(0, T]``.

    Gaps are evaluated on ``n_probe`` log-spaced times in ``[t_min, T]``
    (``t_min`` defaults to ``1e-4 * T``) and ``alpha`` is the least-squares
    slope of ``log gap`` against ``log t``.  Each gap is cross-checked
    against ``||g||^2 - R(t)``; disagreement beyond quadrature tolerance
    raises ``NumericalError``.
    """
    if not T > 0:
        raise DomainError(f"T must be positive, got {T}")
    if n_probe < 8:
        raise DomainError(f"n_probe must be at least 8, got {n_probe}")
    t_min = 1e-4 * T if t_min is None else t_min
    probes = np.geomspace(t_min, T, n_probe)
    norm = l2_norm_sq(kernel)
    tol = 1e-8 * norm
    gaps = np.array([gap(kernel, t) for t in probes])
    for t, g in zip(probes, gaps):
        direct = norm - autocovariance(kernel, t)
        if direct < -tol or abs(direct - g) > tol + 1e-6 * g:
            raise NumericalError(f"gap at t={t:g} inconsistent: {g!r} vs ||g||^2 - R(t) = {direct!r}",
                                 estimate=g, error_bound=abs(direct - g))
    finite = bool(np.all(np.isfinite(gaps)))
    if finite and np.all(gaps > 0):
        slope = float(np.polyfit(np.log(probes), np.log(gaps), 1)[0])
    else:
        slope = float("nan")
    passed = finite and slope > 0
    alpha = max(slope, alpha_floor) if passed else alpha_floor
    C = float(np.max(gaps / probes**alpha) * (1 + margin)) if finite else float("inf")
    return RegularityCertificate(alpha, C, tuple(probes.tolist()), tuple(gaps.tolist()), slope, passed)


def abs_integral(kernel: Kernel, a: float, b: float) -> float:
    """``int_a^b |g(s)| ds`` by quadrature (algebraic weight at a singular origin)."""
    _check_range(a, b)
    if b == a:
        return 0.0
    p = kernel.singular_power
    if p != 0 and a == 0:
        return _quad(lambda s: np.abs(kernel.smooth_part(s)), 0.0, b, "abs integral", "alg", (p, 0.0))
    pts = [x for x in kernel.breakpoints if a < x < b]
    return _quad(lambda s: abs(kernel(s)), a, b, "abs integral", points=pts)


def nondegeneracy_check(kernel: Kernel, epsilons) -> list[bool]:
    """For each ``eps``, whether ``int_0^eps |g|`` exceeds the strict floor 1e-14."""
    out = []
    for eps in epsilons:
        if not eps > 0:
            raise DomainError(f"epsilon must be positive, got {eps}")
        out.append(abs_integral(kernel, 0.0, eps) > NONDEGENERACY_FLOOR)
    return out


def truncation_horizon(kernel: Kernel, tol: float, step: float | None = None) -> float:
    """Smallest ``M`` with ``int_M^inf g^2 <= tol**2``.

    With ``step`` the result is rounded up to a multiple of ``step`` so the
    truncated past starts on a simulation grid point.
    """
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")
    target = tol * tol
    if target >= l2_norm_sq(kernel):
        return 0.0
    if isinstance(kernel, ExponentialKernel):
        M = math.log(1.0 / (2 * kernel.rho * target)) / (2 * kernel.rho)
    elif isinstance(kernel, GammaKernel):
        shape = 2 * kernel.kappa + 1
        q = target * (2 * kernel.rho) ** shape / special.gamma(shape)
        M = special.gammainccinv(shape, q) / (2 * kernel.rho)
    else:
        hi = kernel.support_end if math.isfinite(kernel.support_end) else kernel.length_scale
        while not math.isfinite(kernel.support_end) and kernel.sq_integral(hi) > target:
            hi *= 2
        M = optimize.brentq(lambda m: kernel.sq_integral(m) - target, 0.0, hi, xtol=1e-14, rtol=1e-14)
    M = max(float(M), 0.0)
    if step:
        M = math.ceil(M / step - 1e-9) * step
    return M
