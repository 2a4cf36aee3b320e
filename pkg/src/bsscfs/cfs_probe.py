"""Monte Carlo tube probabilities around target paths.

A probe freezes one realisation of ``(Y, sigma, past B)`` and redraws the
future driver many times.  Each trial gives a path of ``Z' = Z - Z(t_lower)``
on the grid; the trial is a hit when the path stays within ``epsilon`` of
the target at every monitored grid point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .conditional_law import past_contribution
from .errors import DomainError, InvalidParameter
from .model import BssModel
from .simulator import (FrozenState, SamplePath, SimGrid, freeze, lag_weights, ma_apply, model_grid,
                        require_valid)

WILSON_Z = 1.959963984540054
DEFAULT_EPSILON_SCALE = 0.25


def wilson_interval(hits: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("Wilson interval needs n > 0")
    p = hits / n
    z2 = z * z
    denom = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


@dataclass(frozen=True, eq=False)
class TubeProbeReport:
    target: SamplePath
    epsilon: float
    n_trials: int
    hits: int
    p_hat: float
    wilson_lo: float
    wilson_hi: float
    frozen_seed: int
    driver_seed: int
    driver_stream: int = 0
    monitor_stride: int = 1
    path_scale: float | None = None
    model_hash: str | None = None
    grid: dict | None = None
    deviations: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.hits <= self.n_trials:
            raise ValueError(f"hits={self.hits} outside [0, {self.n_trials}]")
        if not self.wilson_lo <= self.p_hat <= self.wilson_hi:
            raise ValueError("Wilson interval does not contain p_hat")

    @property
    def t_lower(self) -> float:
        return self.target.grid.t_start

    @property
    def t_upper(self) -> float:
        return self.target.grid.t_end

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "n_trials": self.n_trials,
            "hits": self.hits,
            "p_hat": self.p_hat,
            "wilson_lo": self.wilson_lo,
            "wilson_hi": self.wilson_hi,
            "frozen_seed": self.frozen_seed,
            "driver_seed": self.driver_seed,
            "driver_stream": self.driver_stream,
            "monitor_stride": self.monitor_stride,
            "path_scale": self.path_scale,
            "model_hash": self.model_hash,
            "grid": self.grid,
            "t_lower": self.t_lower,
            "t_upper": self.t_upper,
            "target": {"times": self.target.times.tolist(), "values": np.asarray(self.target.values).tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _monitor_index(n: int, stride: int) -> np.ndarray:
    """Window positions checked against the tube: every ``stride``-th point plus the last."""
    if stride < 1:
        raise InvalidParameter(f"monitor_stride must be >= 1, got {stride}")
    idx = np.arange(stride, n + 1, stride)
    if idx.size == 0 or idx[-1] != n:
        idx = np.append(idx, n)
    return np.concatenate(([0], idx))


def _tube_block(start, stop, seed, purpose, w, amp, centre, mon):
    # Z' - target = (mean - target) + causal convolution of the fresh increments
    xi = rng.trial_normals(seed, purpose, start, stop, amp.size)
    dev = ma_apply(w, xi * amp)[:, mon] + centre[mon]
    return np.abs(dev).max(axis=1)


@dataclass(frozen=True, eq=False)
class ProbeSetup:
    """Frozen state plus the pieces of the conditional law a probe needs."""

    model: BssModel
    frozen: FrozenState
    window: SimGrid
    mean: np.ndarray
    weights: np.ndarray
    amplitude: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return ma_apply(self.weights**2, self.amplitude**2)

    @property
    def path_scale(self) -> float:
        """``max_t sqrt(Sigma_tt)`` over the window."""
        return float(np.sqrt(self.variance.max()))


def prepare_probe(model: BssModel, t_lower: float, dt: float, frozen_seed: int,
                  t_upper: float | None = None, check: bool = True) -> ProbeSetup:
    """Freeze ``(Y, sigma, past B)`` on the model grid of step ``dt``."""
    if check:
        require_valid(model)
    grid = model_grid(model, dt)
    t_upper = model.horizon_T if t_upper is None else t_upper
    if not t_lower < t_upper <= model.horizon_T + 1e-12:
        raise DomainError(f"probe window [{t_lower}, {t_upper}] must lie inside [0, T]")
    frozen = freeze(model, grid, t_lower, frozen_seed, check=False)
    window = grid.window(frozen.t_lower, t_upper)
    il = frozen.lower_index
    n = window.n_steps
    mean = np.asarray(past_contribution(model, frozen, window.times))
    mean[0] = 0.0
    amp = frozen.sigma[il:il + n] * math.sqrt((1 - model.beta**2) * grid.dt)
    return ProbeSetup(model, frozen, window, mean, lag_weights(model.g, grid.dt, n), amp)


def _check_target(setup: ProbeSetup, target: SamplePath) -> None:
    w, tg = setup.window, target.grid
    if tg.n_steps != w.n_steps or abs(tg.t_start - w.t_start) > 1e-9 or abs(tg.t_end - w.t_end) > 1e-9:
        raise DomainError(f"target grid {tg.describe()} does not match the probe window {w.describe()}")
    if abs(target.values[0]) > 1e-12:
        raise DomainError(f"target must start at 0, got {target.values[0]}")


def run_probe(setup: ProbeSetup, target: SamplePath, epsilon: float | None, n_trials: int, seed: int,
              driver_stream: int = 0, workers: int = 1, monitor_stride: int = 1,
              keep_deviations: bool = False) -> TubeProbeReport:
    """Tube probability for one target on a prepared probe."""
    _check_target(setup, target)
    scale = setup.path_scale
    epsilon = DEFAULT_EPSILON_SCALE * scale if epsilon is None else float(epsilon)
    if not epsilon > 0:
        raise InvalidParameter(f"epsilon must be positive, got {epsilon}")
    if n_trials < 1:
        raise InvalidParameter(f"n_trials must be >= 1, got {n_trials}")
    mon = _monitor_index(setup.window.n_steps, monitor_stride)
    centre = setup.mean - np.asarray(target.values, dtype=float)
    parts = rng.map_blocks(_tube_block, n_trials, workers,
                           args=(seed, rng.driver_purpose(driver_stream), setup.weights, setup.amplitude,
                                 centre, mon))
    dev = np.concatenate(parts)
    hits = int(np.count_nonzero(dev < epsilon))
    lo, hi = wilson_interval(hits, n_trials)
    return TubeProbeReport(target, epsilon, n_trials, hits, hits / n_trials, lo, hi, setup.frozen.seed, seed,
                           driver_stream, monitor_stride, scale, setup.model.fingerprint(),
                           setup.frozen.grid.describe(), dev if keep_deviations else None)


def tube_probability(model: BssModel, t_lower: float, target: SamplePath, epsilon: float | None,
                     n_trials: int, seed: int, frozen_seed: int | None = None, workers: int = 1,
                     monitor_stride: int = 1, driver_stream: int = 0,
                     keep_deviations: bool = False) -> TubeProbeReport:
    """Estimate ``P(max_i |Z'(t_i) - target(t_i)| < epsilon | frozen state)``.

    The probe window and step are those of ``target.grid``; ``t_lower`` must
    be its first point.  ``epsilon=None`` uses a quarter of the path scale.
    """
    if abs(target.grid.t_start - t_lower) > 1e-9:
        raise DomainError(f"target starts at {target.grid.t_start}, not at t_lower={t_lower}")
    setup = prepare_probe(model, t_lower, target.grid.dt, seed if frozen_seed is None else frozen_seed,
                          target.grid.t_end)
    return run_probe(setup, target, epsilon, n_trials, seed, driver_stream, workers, monitor_stride,
                     keep_deviations)


def support_sweep(model: BssModel, targets, epsilon: float | None, n_trials: int, seed: int,
                  frozen_seed: int | None = None, workers: int = 1,
                  monitor_stride: int = 1) -> list[TubeProbeReport]:
    """Probe several targets against one frozen state; target ``k`` uses driver stream ``k``."""
    targets = list(targets)
    if not targets:
        return []
    g0 = targets[0].grid
    setup = prepare_probe(model, g0.t_start, g0.dt, seed if frozen_seed is None else frozen_seed, g0.t_end)
    return [run_probe(setup, tg, epsilon, n_trials, seed, k, workers, monitor_stride)
            for k, tg in enumerate(targets)]


def consistent_with_cfs(reports) -> bool:
    """Every probed tube has a strictly positive lower confidence bound."""
    return all(r.wilson_lo > 0 for r in reports)


def standard_targets(t_lower: float, t_upper: float, n_steps: int) -> dict[str, SamplePath]:
    """The five sweep targets on ``[t_lower, t_upper]``, all starting at 0."""
    grid = SimGrid(t_lower, t_upper, n_steps)
    s = grid.times - t_lower
    u = s / (t_upper - t_lower)
    zig = np.interp(u, [0.0, 0.25, 0.75, 1.0], [0.0, 0.25, -0.25, 0.0])
    vals = {"zero": np.zeros_like(s), "up": s, "down": -s, "sine": np.sin(2 * np.pi * u) / 4, "zigzag": zig}
    return {k: SamplePath(grid, v, "target") for k, v in vals.items()}


@dataclass(frozen=True, eq=False)
class CounterexampleResult:
    below_floor: TubeProbeReport
    above_floor: TubeProbeReport
    min_exact: float
    riemann_min: float
    riemann_nonpositive_fraction: float

    def to_dict(self) -> dict:
        return {"below_floor": self.below_floor.to_dict(), "above_floor": self.above_floor.to_dict(),
                "min_exact": self.min_exact, "riemann_min": self.riemann_min,
                "riemann_nonpositive_fraction": self.riemann_nonpositive_fraction}


def _counter_block(start, stop, seed, n_steps, T, below, above):
    dt = T / n_steps
    t = np.arange(n_steps + 1) * dt
    dB = math.sqrt(dt) * rng.trial_normals(seed, (rng.COUNTER,), start, stop, n_steps)
    B = np.zeros((stop - start, n_steps + 1))
    np.cumsum(dB, axis=1, out=B[:, 1:])
    Z = np.exp(B - t / 2)
    # left-point Riemann sum of int Z dB, integrand taken from the exact path
    R = np.ones_like(Z)
    np.cumsum(Z[:, :-1] * dB, axis=1, out=R[:, 1:])
    R[:, 1:] += 1.0
    dev_below = np.abs(Z - 1 - below).max(axis=1)
    dev_above = np.abs(Z - 1 - above).max(axis=1)
    return dev_below, dev_above, float(Z.min()), float(R.min()), int(np.count_nonzero(R.min(axis=1) <= 0))


def counterexample_probe(n_trials: int, seed: int, n_steps: int = 256, T: float = 0.25,
                         workers: int = 1) -> CounterexampleResult:
    """Tube probes for ``Z = exp(B_t - t/2)``, a positive process without full support.

    ``Z' = Z - 1 > -1`` surely, so the tube around ``-1.2 t/T`` of half-width
    0.1 is never entered while the tube around ``0.2 t/T`` of half-width 0.3 is.
    The default horizon keeps the second tube's probability near 4%; on a
    unit horizon it is of order 1e-6.
    """
    grid = SimGrid(0.0, T, n_steps)
    u = grid.times / T
    below = SamplePath(grid, -1.2 * u, "target")
    above = SamplePath(grid, 0.2 * u, "target")
    parts = rng.map_blocks(_counter_block, n_trials, workers, args=(seed, n_steps, T, below.values, above.values))
    dev_below = np.concatenate([p[0] for p in parts])
    dev_above = np.concatenate([p[1] for p in parts])
    desc = grid.describe()

    def report(target, dev, eps):
        hits = int(np.count_nonzero(dev < eps))
        lo, hi = wilson_interval(hits, n_trials)
        return TubeProbeReport(target, eps, n_trials, hits, hits / n_trials, lo, hi, seed, seed, grid=desc)

    return CounterexampleResult(
        below_floor=report(below, dev_below, 0.1),
        above_floor=report(above, dev_above, 0.3),
        min_exact=min(p[2] for p in parts),
        riemann_min=min(p[3] for p in parts),
        riemann_nonpositive_fraction=sum(p[4] for p in parts) / n_trials,
    )
