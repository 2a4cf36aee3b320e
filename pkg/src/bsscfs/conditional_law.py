"""Conditional Gaussian laws of the future path given a frozen past.

Conditioning is on everything except the future increments of ``B``:
the whole sigma path, the whole ``Y`` path and ``B`` before ``t_lower``.
Given these, ``Z' = Z - Z(t_lower)`` at finitely many future times is
Gaussian with mean equal to the past contribution and covariance built
from the frozen integrands ``g(t_j - s) sigma_s``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DomainError, NumericalError
from .model import BssModel
from .simulator import (FrozenState, SamplePath, cholesky_jitter, covariance_matrix, lag_weights,
                        scheme_factor)


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """``N(mean, cov)`` at ``times``; ``factor`` is an optional ``F`` with ``cov = F F^T``."""

    times: tuple[float, ...]
    mean: np.ndarray
    cov: np.ndarray
    factor: np.ndarray | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        d = mean.size
        if cov.shape != (d, d) or len(self.times) != d:
            raise DomainError(f"law dimensions disagree: {len(self.times)} times, mean {mean.shape}, cov {cov.shape}")
        if not np.all(np.isfinite(mean)):
            raise NumericalError("law mean is not finite")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max(initial=0))):
            raise NumericalError("law covariance is not symmetric")
        if d and np.linalg.eigvalsh(cov).min() < -1e-10 * max(np.trace(cov), 1e-300):
            raise NumericalError("law covariance is not positive semidefinite")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_json(self) -> str:
        return json.dumps({"times": list(self.times), "mean": self.mean.tolist(), "cov": self.cov.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GaussianLaw":
        obj = json.loads(text)
        return cls(tuple(obj["times"]), np.array(obj["mean"], dtype=float), np.array(obj["cov"], dtype=float))


def past_contribution(model: BssModel, frozen: FrozenState, t) -> np.ndarray | float:
    """``Y'(t) = Y(t) - Z(t_lower) + sum_{s_j < t_lower} w(t - s_j) sigma(s_j) dB_j``.

    Vectorised over ``t``; uses the same lag weights as the simulator.
    """
    if frozen.model != model:
        raise DomainError("frozen state was drawn for a different model")
    grid = frozen.grid
    il = frozen.lower_index
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.array([grid.index_of(x) for x in ts], dtype=int)
    if np.any(idx < il):
        raise DomainError("past contribution is defined for t >= t_lower only")
    w = lag_weights(model.g, grid.dt, max(int(idx.max()), 1))
    x = frozen.sigma[:il] * frozen.dB_past
    z_lower = frozen.Z_lower
    out = np.empty(idx.size)
    for r, a in enumerate(idx):
        lags = a - np.arange(il)  # lag in cells, >= 1
        out[r] = frozen.Y[a] - z_lower + (np.dot(w[lags - 1], x) if il else 0.0)
    return float(out[0]) if scalar else out


def conditional_law(model: BssModel, frozen: FrozenState, t_lower: float, times,
                    method: str = "scheme") -> GaussianLaw:
    """Law of ``Z' = Z - Z(t_lower)`` at ``times`` given the frozen state.

    ``method="scheme"`` gives the exact law of the discretised integral
    (what ``simulate_paths`` produces); ``method="quadrature"`` integrates
    the continuous kernel against the frozen sigma path.
    """
    grid = frozen.grid
    if abs(frozen.t_lower - t_lower) > 1e-9 * max(1.0, abs(t_lower)):
        raise DomainError(f"frozen state conditions at {frozen.t_lower}, not {t_lower}")
    times = [float(t) for t in times]
    if any(t <= t_lower or t > model.horizon_T + 1e-12 for t in times):
        raise DomainError("conditional law times must lie in (t_lower, T]")
    mean = past_contribution(model, frozen, times)
    sigma_path = SamplePath(grid, frozen.sigma, "sigma")
    scale = 1.0 - model.beta**2
    if method == "scheme":
        F = math.sqrt(scale) * scheme_factor(model.g, sigma_path, t_lower, times)
        cov = F @ F.T
        return GaussianLaw(tuple(times), mean, 0.5 * (cov + cov.T), F)
    if method == "quadrature":
        return GaussianLaw(tuple(times), mean, scale * covariance_matrix(model.g, sigma_path, t_lower, times))
    raise ValueError(f"unknown method {method!r}")


def sample_gaussian(law: GaussianLaw, n: int, seed: int) -> np.ndarray:
    """``n x d`` draws; sample ``k`` uses stream ``(seed, GAUSS, k)``."""
    F = law.factor if law.factor is not None else cholesky_jitter(law.cov)
    xi = rng.trial_normals(seed, (rng.GAUSS,), 0, n, F.shape[1])
    return law.mean[None, :] + xi @ F.T


def log_density(law: GaussianLaw, x) -> float:
    """``log phi_d(x; mean, cov)``; a singular covariance raises ``NumericalError``."""
    x = np.asarray(x, dtype=float)
    try:
        L = np.linalg.cholesky(law.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is singular; the law has no density") from exc
    z = np.linalg.solve(L, x - law.mean) if law.dim else x
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (law.dim * math.log(2 * math.pi) + logdet + z @ z))
