"""Riemann-sum simulation of BSS paths and the covariances they target.

The stochastic integral is discretised on a uniform grid as

    Z(t_i) = Y(t_i) + sum_{j < i} w[i - j] sigma(s_j) dB_j

with left-point sigma and lag weights ``w[k] = g(k dt)``, except for the
cell touching the kernel singularity, whose weight is the cell RMS
``sqrt(int_0^dt g^2 / dt)``.

Two covariances are provided for comparison against simulation:
``covariance_matrix`` integrates the continuous kernel against the
piecewise-constant sigma path; ``scheme_covariance`` is the exact
covariance of the discretised sum above.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal, special

from . import rng
from .errors import DomainError, InvalidParameter, NumericalError
from .kernels import Kernel, _quad
from .model import (BssModel, ConstantSigma, DeterministicSigma, ExpOUSigma, IntermittencyModel,
                    validate_model)

ROLES = ("driver_B", "driver_Wbar", "sigma", "drift_part", "Y_part", "Z", "target")
_FFT_THRESHOLD = 384
_GL_NODES = 10


@dataclass(frozen=True)
class SimGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError(f"grid needs n_steps >= 1, got {self.n_steps}")
        if not self.t_end > self.t_start:
            raise DomainError(f"grid needs t_end > t_start, got [{self.t_start}, {self.t_end}]")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of ``t``; ``DomainError`` if ``t`` is not a grid point."""
        x = (t - self.t_start) / self.dt
        i = int(round(x))
        if abs(x - i) > 1e-7 or not 0 <= i <= self.n_steps:
            raise DomainError(f"time {t} is not a point of grid [{self.t_start}, {self.t_end}] / {self.n_steps}")
        return i

    def window(self, t0: float, t1: float) -> "SimGrid":
        i0, i1 = self.index_of(t0), self.index_of(t1)
        return SimGrid(self.t_start + i0 * self.dt, self.t_start + i1 * self.dt, i1 - i0)

    def describe(self) -> dict:
        return {"t_start": self.t_start, "t_end": self.t_end, "n_steps": self.n_steps, "dt": self.dt}


def model_grid(model: BssModel, dt: float) -> SimGrid:
    """Grid from ``-M`` to ``T`` with step ``dt``; ``0`` and ``T`` are grid points."""
    n_window = round(model.horizon_T / dt)
    if abs(n_window * dt - model.horizon_T) > 1e-9 * model.horizon_T:
        raise DomainError(f"dt={dt} does not divide the horizon T={model.horizon_T}")
    n_past = round(model.past_horizon(dt) / dt)
    return SimGrid(-n_past * dt, n_window * dt, n_past + n_window)


@dataclass(frozen=True)
class SamplePath:
    grid: SimGrid
    values: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown path role {self.role!r}")
        if len(self.values) != self.grid.n_steps + 1:
            raise ValueError(f"path has {len(self.values)} values for a grid of {self.grid.n_steps + 1} points")

    @property
    def times(self):
        return self.grid.times

    def restrict(self, t0: float, t1: float) -> "SamplePath":
        i0, i1 = self.grid.index_of(t0), self.grid.index_of(t1)
        return SamplePath(self.grid.window(t0, t1), self.values[i0:i1 + 1], self.role)

    def at(self, t: float) -> float:
        return float(self.values[self.grid.index_of(t)])


def cell_rms(kernel: Kernel, dt: float) -> float:
    return math.sqrt(kernel.sq_integral(0.0, dt) / dt)


def lag_weights(kernel: Kernel, dt: float, n: int) -> np.ndarray:
    """Weights for lags ``dt, 2 dt, ..., n dt``; the first is the cell RMS."""
    w = np.empty(n)
    w[0] = cell_rms(kernel, dt)
    if n > 1:
        w[1:] = kernel(np.arange(2, n + 1) * dt)
    return w


def drift_weights(kernel: Kernel, dt: float, n: int) -> np.ndarray:
    """Drift-kernel weights; the first cell uses the cell mean of ``q``."""
    w = np.empty(n)
    p = kernel.singular_power
    if p != 0:
        w[0] = _quad(kernel.smooth_part, 0.0, dt, "drift cell", "alg", (p, 0.0)) / dt
    else:
        w[0] = _quad(kernel, 0.0, dt, "drift cell") / dt
    if n > 1:
        w[1:] = kernel(np.arange(2, n + 1) * dt)
    return w


def ma_apply(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Causal moving average ``out[..., i] = sum_{j < i} w[i-1-j] x[..., j]``.

    ``x`` has one entry per grid cell; the result has one per grid point
    and starts at 0.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    out = np.zeros(x.shape[:-1] + (n + 1,))
    if n == 0:
        return out
    w = np.asarray(w[:n], dtype=float)
    if np.all(w == w[0]):
        out[..., 1:] = w[0] * np.cumsum(x, axis=-1)
    elif n <= _FFT_THRESHOLD:
        out[..., 1:] = x @ toeplitz_lower(w).T
    else:
        out[..., 1:] = signal.fftconvolve(x, np.broadcast_to(w, x.shape[:-1] + (n,)), axes=-1)[..., :n]
    return out


def toeplitz_lower(w: np.ndarray) -> np.ndarray:
    """``n x n`` matrix with ``A[i, j] = w[i - j]`` for ``j <= i``."""
    n = len(w)
    i, j = np.indices((n, n))
    return np.where(j <= i, w[np.clip(i - j, 0, n - 1)], 0.0)


def _process_values(proc: IntermittencyModel, grid: SimGrid, gens) -> np.ndarray:
    """Values of ``proc`` at grid points for each generator in ``gens``."""
    t = grid.times
    n = len(gens)
    if isinstance(proc, ConstantSigma):
        vals = np.full((n, t.size), proc.value)
    elif isinstance(proc, DeterministicSigma):
        if t[0] < proc.knots[0] - 1e-12 or t[-1] > proc.knots[-1] + 1e-12:
            raise DomainError(f"grid [{t[0]}, {t[-1]}] leaves the sigma table domain "
                              f"[{proc.knots[0]}, {proc.knots[-1]}]")
        vals = np.broadcast_to(np.interp(t, proc.knots, proc.values), (n, t.size)).copy()
    elif isinstance(proc, ExpOUSigma):
        a = math.exp(-proc.reversion * grid.dt)
        sd = math.sqrt(proc.stationary_log_variance)
        xi = np.stack([g.standard_normal(t.size) for g in gens]) if n else np.zeros((0, t.size))
        # exact AR(1) recursion started in the stationary law
        e = sd * math.sqrt(1 - a * a) * xi
        e[:, 0] = sd * xi[:, 0]
        vals = np.exp(proc.mean_log + signal.lfilter([1.0], [1.0, -a], e, axis=-1))
    else:
        raise InvalidParameter(f"unsupported process model {type(proc).__name__}")
    if proc.active_from is not None:
        vals[:, t < proc.active_from - 1e-12] = 0.0
    return vals


def simulate_intermittency(model: BssModel, grid: SimGrid, seed: int, path_index: int = 0) -> SamplePath:
    """Sigma path on ``grid``; deterministic given ``(seed, path_index)``."""
    gen = rng.stream(seed, rng.SIGMA, index=path_index)
    return SamplePath(grid, _process_values(model.sigma, grid, [gen])[0], "sigma")


@functools.lru_cache(maxsize=64)
def _validated(model: BssModel) -> bool:
    return validate_model(model).passed


def require_valid(model: BssModel) -> None:
    if not _validated(model):
        raise InvalidParameter("model does not pass validate_model:\n" + validate_model(model).summary())


def _check_grid(model: BssModel, grid: SimGrid) -> None:
    M = model.past_horizon(grid.dt)
    if grid.t_start > -M + 1e-9 * max(1.0, M):
        raise DomainError(f"grid starts at {grid.t_start} but the model needs the past back to {-M}")
    grid.index_of(0.0)
    if grid.t_end < model.horizon_T - 1e-9:
        raise DomainError(f"grid ends at {grid.t_end}, before the horizon {model.horizon_T}")


@dataclass(frozen=True)
class FrozenState:
    """One realisation of everything the conditional law is allowed to know.

    Holds sigma and ``Y`` on the whole grid and the ``B`` increments of the
    cells before ``t_lower``.
    """

    model: BssModel
    grid: SimGrid
    t_lower: float
    sigma: np.ndarray
    Y: np.ndarray
    dB_past: np.ndarray
    seed: int

    @property
    def lower_index(self) -> int:
        return self.grid.index_of(self.t_lower)

    @property
    def Z_lower(self) -> float:
        il = self.lower_index
        w = lag_weights(self.model.g, self.grid.dt, max(il, 1))
        past = float(np.dot(w[:il][::-1], self.sigma[:il] * self.dB_past)) if il else 0.0
        return float(self.Y[il]) + past


def _simulate_block(start, stop, model, grid, seed, frozen_arrays, keep):
    n = grid.n_steps
    dt = grid.dt
    sq = math.sqrt(dt)
    w = lag_weights(model.g, dt, n)
    k = range(start, stop)
    if frozen_arrays is None:
        sigma = _process_values(model.sigma, grid, [rng.stream(seed, rng.SIGMA, index=i) for i in k])
        dWbar = sq * rng.trial_normals(seed, (rng.WBAR,), start, stop, n)
        dB = math.sqrt(1 - model.beta**2) * sq * rng.trial_normals(seed, (rng.WPERP,), start, stop, n)
        if model.drift.present:
            a = model.drift.a_process
            a_vals = (_process_values(a, grid, [rng.stream(seed, rng.DRIFT, index=i) for i in k])
                      if a is not None else np.ones((stop - start, n + 1)))
            drift = ma_apply(drift_weights(model.drift.q_kernel, dt, n), a_vals[:, :-1] * dt)
        else:
            drift = np.zeros((stop - start, n + 1))
        Y = model.mu + drift
        if model.beta != 0:
            Y = Y + model.beta * ma_apply(w, sigma[:, :-1] * dWbar)
    else:
        sig_row, Y_row, dB_past, il = frozen_arrays
        sigma = np.broadcast_to(sig_row, (stop - start, n + 1))
        Y = np.broadcast_to(Y_row, (stop - start, n + 1))
        fresh = math.sqrt(1 - model.beta**2) * sq * rng.trial_normals(seed, rng.driver_purpose(0), start, stop, n - il)
        dB = np.concatenate([np.broadcast_to(dB_past, (stop - start, il)), fresh], axis=1)
        dWbar = drift = None
    Z = Y + ma_apply(w, sigma[:, :-1] * dB)
    out = {"Z": Z}
    if keep:
        out.update(sigma=np.array(sigma), Y_part=np.array(Y), dB=dB)
        if dWbar is not None:
            out.update(dWbar=dWbar, drift_part=drift)
    return out


def simulate_paths(model: BssModel, grid: SimGrid, n_paths: int, seed: int, workers: int = 1,
                   keep_components: bool = False, frozen: FrozenState | None = None,
                   check: bool = True) -> dict:
    """Simulate ``n_paths`` independent paths; path ``k`` uses streams ``(seed, ., k)``.

    With ``frozen`` the sigma path, ``Y`` and the past ``B`` increments are
    taken from the frozen state and only the ``B`` increments from
    ``frozen.t_lower`` onward are drawn afresh.

    Returns a dict of arrays shaped ``(n_paths, n_steps + 1)`` (increments
    are ``(n_paths, n_steps)``).
    """
    if check:
        require_valid(model)
    _check_grid(model, grid)
    fa = None
    if frozen is not None:
        if frozen.grid != grid:
            raise DomainError("frozen state lives on a different grid")
        fa = (frozen.sigma, frozen.Y, frozen.dB_past, frozen.lower_index)
    parts = rng.map_blocks(_simulate_block, n_paths, workers, args=(model, grid, seed, fa, keep_components))
    out = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    if not np.all(np.isfinite(out["Z"])):
        raise NumericalError("non-finite values in simulated paths")
    return out


@dataclass(frozen=True)
class PathBundle:
    Z: SamplePath
    driver_B: SamplePath
    driver_Wbar: SamplePath
    sigma: SamplePath
    drift_part: SamplePath
    Y_part: SamplePath

    def columns(self) -> dict[str, np.ndarray]:
        return {"B": self.driver_B.values, "sigma": self.sigma.values, "Y": self.Y_part.values,
                "Z": self.Z.values}


def _anchored_cumsum(dx: np.ndarray, grid: SimGrid) -> np.ndarray:
    path = np.concatenate(([0.0], np.cumsum(dx)))
    return path - path[grid.index_of(0.0)]


def simulate_path(model: BssModel, grid: SimGrid, seed: int, path_index: int = 0,
                  check: bool = True) -> PathBundle:
    """One path with all its components; drivers are anchored at ``B(0) = 0``."""
    if check:
        require_valid(model)
    _check_grid(model, grid)
    res = _simulate_block(path_index, path_index + 1, model, grid, seed, None, True)
    if not np.all(np.isfinite(res["Z"])):
        raise NumericalError("non-finite values in the simulated path")
    row = {k: v[0] for k, v in res.items()}
    return PathBundle(
        Z=SamplePath(grid, row["Z"], "Z"),
        driver_B=SamplePath(grid, _anchored_cumsum(row["dB"], grid), "driver_B"),
        driver_Wbar=SamplePath(grid, _anchored_cumsum(row["dWbar"], grid), "driver_Wbar"),
        sigma=SamplePath(grid, row["sigma"], "sigma"),
        drift_part=SamplePath(grid, row["drift_part"], "drift_part"),
        Y_part=SamplePath(grid, row["Y_part"], "Y_part"),
    )


def freeze(model: BssModel, grid: SimGrid, t_lower: float, seed: int, check: bool = True) -> FrozenState:
    """Draw the frozen ``(Y, sigma, past B)`` as path 0 of ``seed``.

    Fresh drivers use the ``DRIVER`` streams, so they never reuse these draws.
    """
    if check:
        require_valid(model)
    _check_grid(model, grid)
    il = grid.index_of(t_lower)
    if t_lower < -1e-12 or t_lower >= model.horizon_T:
        raise DomainError(f"t_lower must lie in [0, T), got {t_lower}")
    res = _simulate_block(0, 1, model, grid, seed, None, True)
    return FrozenState(model, grid, grid.times[il], res["sigma"][0], res["Y_part"][0],
                       res["dB"][0][:il].copy(), seed)


def _grid_indices(grid: SimGrid, t_lower: float, times) -> tuple[int, np.ndarray]:
    il = grid.index_of(t_lower)
    idx = np.array([grid.index_of(t) for t in times], dtype=int)
    if idx.size and (np.any(np.diff(idx) < 0) or idx[0] < il):
        raise DomainError("times must be sorted and not earlier than t_lower")
    return il, idx


def _cell_products(kernel: Kernel, dt: float, m_count: int, lags: np.ndarray) -> np.ndarray:
    """``I[m, l] = int_{m dt}^{(m+1) dt} g(u) g(u + lags[l] dt) du``."""
    I = np.zeros((m_count, lags.size))
    if m_count == 0:
        return I
    x, wq = special.roots_legendre(_GL_NODES)
    x, wq = (x + 1) / 2, wq / 2
    u = (np.arange(m_count)[:, None] + x[None, :]) * dt
    diag = np.array([kernel.sq_integral(m * dt, (m + 1) * dt) for m in range(m_count)])
    p = kernel.singular_power
    if p != 0:
        xj, wj = special.roots_jacobi(_GL_NODES, 0.0, p)
        uj = dt * (1 + xj) / 2
        head_scale = (dt / 2) ** (p + 1)
    for col, lag in enumerate(lags):
        if lag == 0:
            I[:, col] = diag
            continue
        rows = slice(1, None) if p != 0 else slice(None)
        vals = kernel(u[rows]) * kernel(u[rows] + lag * dt)
        I[rows, col] = dt * vals @ wq
        if p != 0:
            I[0, col] = head_scale * np.dot(wj, kernel.smooth_part(uj) * kernel(uj + lag * dt))
    return I


def covariance_matrix(kernel: Kernel, sigma_path: SamplePath, t_lower: float, times) -> np.ndarray:
    """Continuous-kernel covariance for a piecewise-constant (left-point) sigma.

    ``S[j, k] = int_{t_lower}^{t_j ^ t_k} g(t_j - s) g(t_k - s) sigma_s^2 ds``,
    integrated cell by cell: exact ``g^2`` integrals on the diagonal,
    Gauss-Jacobi on the cell carrying the singularity, Gauss-Legendre
    elsewhere.
    """
    grid = sigma_path.grid
    il, idx = _grid_indices(grid, t_lower, times)
    d = idx.size
    sig2 = np.asarray(sigma_path.values, dtype=float) ** 2
    if d == 0:
        return np.zeros((0, 0))
    lag_of = idx[None, :] - idx[:, None]
    lags = np.unique(np.abs(lag_of))
    I = _cell_products(kernel, grid.dt, int(idx.max() - il), lags)
    col_of = {int(l): c for c, l in enumerate(lags)}
    S = np.zeros((d, d))
    for j in range(d):
        a = idx[j]
        m_count = a - il
        if m_count == 0:
            continue
        s_rev = sig2[il:a][::-1]
        for k in range(j, d):
            S[j, k] = np.dot(s_rev, I[:m_count, col_of[int(idx[k] - a)]])
    S = np.triu(S) + np.triu(S, 1).T
    return 0.5 * (S + S.T)


def scheme_factor(kernel: Kernel, sigma_path: SamplePath, t_lower: float, times) -> np.ndarray:
    """Matrix ``F`` with ``F @ xi`` distributed as the Riemann-sum integral.

    Rows are ``times``, columns the grid cells from ``t_lower``;
    ``F[r, c] = w[t_r - s_c] sigma(s_c) sqrt(dt)``.
    """
    grid = sigma_path.grid
    il, idx = _grid_indices(grid, t_lower, times)
    n_cells = int(idx.max() - il) if idx.size else 0
    w = lag_weights(kernel, grid.dt, max(n_cells, 1))
    sig = np.asarray(sigma_path.values, dtype=float)[il:il + n_cells]
    F = np.zeros((idx.size, n_cells))
    for r, a in enumerate(idx):
        m = a - il
        F[r, :m] = w[:m][::-1] * sig[:m]
    return F * math.sqrt(grid.dt)


def scheme_covariance(kernel: Kernel, sigma_path: SamplePath, t_lower: float, times) -> np.ndarray:
    """Exact covariance of the discretised integral at ``times``."""
    F = scheme_factor(kernel, sigma_path, t_lower, times)
    S = F @ F.T
    return 0.5 * (S + S.T)


def cholesky_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter if needed.

    Jitter starts at ``1e-12 * scale`` and grows tenfold up to
    ``1e-6 * scale``, with ``scale`` the mean absolute diagonal.  A zero
    matrix has the zero factor.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    if d == 0:
        return cov.copy()
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.abs(np.diag(cov))))
    if scale == 0:
        raise NumericalError("Cholesky factorisation failed: zero diagonal with nonzero entries")
    jitter = 1e-12 * scale
    while jitter <= 1e-6 * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter *= 10
    raise NumericalError("Cholesky factorisation failed after jitter escalation")


def exact_gaussian_paths(kernel: Kernel, sigma_const: float, grid: SimGrid, n: int, seed: int) -> np.ndarray:
    """``n`` draws from the exact Gaussian law on ``grid`` (pathless past)."""
    if abs(grid.t_start) > 1e-12:
        raise DomainError("exact Gaussian paths need a grid starting at 0")
    sig = SamplePath(grid, np.full(grid.n_steps + 1, float(sigma_const)), "sigma")
    L = cholesky_jitter(covariance_matrix(kernel, sig, 0.0, grid.times[1:]))
    xi = rng.trial_normals(seed, (rng.EXACT,), 0, n, grid.n_steps)
    out = np.zeros((n, grid.n_steps + 1))
    out[:, 1:] = xi @ L.T
    return out


def exact_gaussian_path(kernel: Kernel, sigma_const: float, grid: SimGrid, seed: int) -> SamplePath:
    """One exact Gaussian sample path, used as a distributional oracle."""
    return SamplePath(grid, exact_gaussian_paths(kernel, sigma_const, grid, 1, seed)[0], "Z")
