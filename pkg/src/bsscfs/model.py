"""BSS model specification and the numerical condition report.

A model is ``X_t = mu + int g(t-s) sigma_s dW_s + int q(t-s) a_s ds`` with
``W = beta * Wbar + sqrt(1 - beta^2) * Wperp``.  ``validate_model`` checks
conditions (i)-(vi) to the extent they have numerical content.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidParameter
from .kernels import Kernel

NONDEGENERACY_EPSILONS = (1e-4, 1e-2, 1e-1)


@dataclass(frozen=True)
class IntermittencyModel:
    """Base for sigma (and drift ``a``) processes.

    ``active_from``, when set, makes the process vanish before that time;
    ``active_from=0`` is the pathless-past geometry where nothing happens
    before the observation window opens.
    """

    active_from: float | None = field(default=None, kw_only=True)

    def second_moment_bound(self) -> float:
        raise NotImplementedError

    def zero_measure(self, t0: float, t1: float) -> float:
        """Lebesgue measure of ``{t in [t0, t1]: sigma_t = 0}``, a.s."""
        raise NotImplementedError

    def scale(self) -> float:
        return math.sqrt(self.second_moment_bound())

    def _inactive_measure(self, t0, t1):
        if self.active_from is None:
            return 0.0
        return max(0.0, min(t1, self.active_from) - t0)

    def spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantSigma(IntermittencyModel):
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise InvalidParameter(f"constant sigma requires value > 0, got {self.value}")

    def second_moment_bound(self):
        return self.value**2

    def zero_measure(self, t0, t1):
        return self._inactive_measure(t0, t1)

    def spec(self):
        return {"family": "constant", "value": self.value, "active_from": self.active_from}


@dataclass(frozen=True)
class DeterministicSigma(IntermittencyModel):
    """Piecewise-linear deterministic path through ``(knots, values)``."""

    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or k.shape != v.shape or k.size < 2:
            raise InvalidParameter("deterministic sigma needs matching knot/value lists with at least two entries")
        if np.any(np.diff(k) <= 0):
            raise InvalidParameter("deterministic sigma knots must be strictly increasing")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise InvalidParameter("deterministic sigma knots and values must be finite")
        object.__setattr__(self, "knots", tuple(k.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    def second_moment_bound(self):
        return float(np.max(np.square(self.values)))

    def zero_measure(self, t0, t1):
        # a linear segment vanishes on a set of positive length only if both ends are zero
        k, v = np.asarray(self.knots), np.asarray(self.values)
        lo, hi = np.maximum(k[:-1], t0), np.minimum(k[1:], t1)
        flat = (v[:-1] == 0) & (v[1:] == 0)
        outside = max(0.0, min(t1, k[0]) - t0) + max(0.0, t1 - max(t0, k[-1]))
        return float(np.sum(np.clip(hi - lo, 0, None)[flat])) + outside + self._inactive_measure(t0, t1)

    def spec(self):
        return {"family": "deterministic", "knots": list(self.knots), "values": list(self.values),
                "active_from": self.active_from}


@dataclass(frozen=True)
class ExpOUSigma(IntermittencyModel):
    """``sigma_t = exp(U_t)`` with ``U`` a stationary Ornstein-Uhlenbeck process."""

    reversion: float
    mean_log: float = 0.0
    vol_log: float = 0.5

    def __post_init__(self):
        if not self.reversion > 0:
            raise InvalidParameter(f"exp-OU sigma requires reversion > 0, got {self.reversion}")
        if not self.vol_log >= 0:
            raise InvalidParameter(f"exp-OU sigma requires vol_log >= 0, got {self.vol_log}")

    @property
    def stationary_log_variance(self) -> float:
        return self.vol_log**2 / (2 * self.reversion)

    def second_moment_bound(self):
        with np.errstate(over="ignore"):
            return float(np.exp(2 * self.mean_log + 2 * self.stationary_log_variance))

    def zero_measure(self, t0, t1):
        # log-normal marginals never vanish
        return self._inactive_measure(t0, t1)

    def spec(self):
        return {"family": "exp_ou", "reversion": self.reversion, "mean_log": self.mean_log,
                "vol_log": self.vol_log, "active_from": self.active_from}


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``int q(t-s) a_s ds``; ``a`` defaults to 1 when only ``q`` is given."""

    q_kernel: Kernel | None = None
    a_process: IntermittencyModel | None = None

    def __post_init__(self):
        if self.q_kernel is None and self.a_process is not None:
            raise InvalidParameter("drift process a given without a drift kernel q")

    @property
    def present(self) -> bool:
        return self.q_kernel is not None

    def spec(self):
        if not self.present:
            return None
        return {"q_kernel": self.q_kernel.spec(), "a_process": self.a_process.spec() if self.a_process else None}


@dataclass(frozen=True)
class BssModel:
    mu: float
    g: Kernel
    sigma: IntermittencyModel
    drift: DriftSpec = DriftSpec()
    beta: float = 0.0
    horizon_T: float = 1.0
    truncation_M: float | None = None
    truncation_tol: float = 1e-6

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise InvalidParameter(f"horizon_T must be positive, got {self.horizon_T}")
        if self.truncation_M is not None and self.truncation_M < 0:
            raise InvalidParameter(f"truncation_M must be >= 0, got {self.truncation_M}")
        if not self.truncation_tol > 0:
            raise InvalidParameter(f"truncation_tol must be positive, got {self.truncation_tol}")

    def required_truncation(self, step: float | None = None) -> float:
        """Past horizon needed so the discarded kernel tail is below tolerance.

        A sigma that vanishes before ``active_from`` caps the horizon at
        ``-active_from``.
        """
        M = kernels.truncation_horizon(self.g, self.truncation_tol * self.sigma.scale(), step)
        start = self.sigma.active_from
        if start is not None:
            M = min(M, max(0.0, -start))
            if step:
                M = math.ceil(M / step - 1e-9) * step
        return M

    def past_horizon(self, step: float | None = None) -> float:
        M = self.required_truncation(step) if self.truncation_M is None else self.truncation_M
        if step:
            M = math.ceil(M / step - 1e-9) * step
        return M

    def spec(self) -> dict:
        return {
            "mu": self.mu,
            "kernel": self.g.spec(),
            "sigma": self.sigma.spec(),
            "drift": self.drift.spec(),
            "beta": self.beta,
            "horizon_T": self.horizon_T,
            "truncation_M": self.truncation_M,
            "truncation_tol": self.truncation_tol,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.spec(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    detail: dict

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass(frozen=True)
class ConditionReport:
    conditions: dict[str, ConditionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def __getitem__(self, key) -> ConditionResult:
        return self.conditions[key]

    def to_dict(self):
        return {"passed": self.passed, "conditions": {k: v.to_dict() for k, v in self.conditions.items()}}

    def summary(self) -> str:
        lines = [f"({k}) {'PASS' if c.passed else 'FAIL'}  {c.name}" for k, c in self.conditions.items()]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _recheck(obj):
    # dataclasses validate on construction; rerun in case the object was built around __init__
    post = getattr(obj, "__post_init__", None)
    if post is not None:
        post()


def validate_model(model: BssModel, n_probe: int = 16) -> ConditionReport:
    """Check conditions (i)-(vi) plus the truncation invariant."""
    _recheck(model.g)
    _recheck(model.sigma)
    if model.drift.q_kernel is not None:
        _recheck(model.drift.q_kernel)
    T = model.horizon_T
    out = {}

    if model.drift.present:
        q_l1 = kernels.abs_integral(model.drift.q_kernel, 0.0, T)
        a = model.drift.a_process
        a_m2 = a.second_moment_bound() if a is not None else 1.0
        ok = math.isfinite(q_l1) and math.isfinite(a_m2)
        out["i"] = ConditionResult("drift integral well defined and continuous", ok,
                                   {"q_l1_on_0_T": q_l1, "a_second_moment_bound": a_m2})
    else:
        out["i"] = ConditionResult("drift integral well defined and continuous", True, {"vacuous": True})

    m2 = model.sigma.second_moment_bound()
    out["ii"] = ConditionResult("sup second moment of sigma finite", math.isfinite(m2), {"sup_second_moment": m2})

    cert = kernels.certify_regularity(model.g, T, n_probe)
    out["iii"] = ConditionResult("g in L2 with gap(t) <= C t^alpha", cert.passed,
                                 {"l2_norm_sq": kernels.l2_norm_sq(model.g), **cert.to_dict()})

    out["iv"] = ConditionResult("independent Brownian component, beta in (-1, 1)", -1 < model.beta < 1,
                                {"beta": model.beta, "adaptedness": "by construction for built-in families"})

    zero = model.sigma.zero_measure(0.0, T)
    out["v"] = ConditionResult("sigma vanishes on a Lebesgue-null subset of [0, T]", zero == 0,
                               {"zero_set_measure": zero})

    flags = kernels.nondegeneracy_check(model.g, NONDEGENERACY_EPSILONS)
    out["vi"] = ConditionResult("int_0^eps |g| > 0 for all eps", all(flags),
                                {"epsilons": list(NONDEGENERACY_EPSILONS), "positive": flags})

    needed = model.required_truncation()
    M = model.past_horizon()
    out["truncation"] = ConditionResult("past truncation covers kernel tail", M >= needed * (1 - 1e-12),
                                        {"truncation_M": M, "required": needed})
    return ConditionReport(out)
