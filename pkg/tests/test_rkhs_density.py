import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsscfs import kernels
from bsscfs.errors import DomainError
from bsscfs.kernels import GammaKernel, TabulatedKernel
from bsscfs.rkhs_density import approximate_target, build_operator, cherny_two_step, continuum_sup_error
from bsscfs.simulator import SimGrid

import oracles

GAMMA = GammaKernel(0.25, 1.0)


def hat(grid):
    return np.maximum(0.0, 1.0 - np.abs(4.0 * grid.times - 2.0))


def sine(grid):
    return np.sin(np.pi * grid.times) ** 2


def sweep_ridge(n):
    """Ridge proportional to dt, equal to 1e-10 at n = 100."""
    return 1e-8 / n


class TestOperator:
    def test_integration_operator(self):
        grid = SimGrid(0.0, 1.0, 50)
        op = build_operator(TabulatedKernel((0.0, 2.0), (1.0, 1.0)), 1.0, grid)
        h = np.cos(grid.times[:-1])
        np.testing.assert_allclose(op.apply(h), np.concatenate(([0.0], np.cumsum(h) * grid.dt)), atol=1e-14)

    def test_zero_f(self):
        op = build_operator(GAMMA, 0.0, SimGrid(0.0, 1.0, 20))
        assert not np.any(op.entries)

    def test_strictly_lower(self):
        op = build_operator(GAMMA, lambda s: 1 + s, SimGrid(0.0, 1.0, 20))
        i, j = np.indices(op.entries.shape)
        assert not np.any(op.entries[j >= i])
        assert op.entries.shape == (21, 20)

    def test_row_sums_vs_quadrature(self):
        f = oracles.gamma_g(0.25, 1.0)
        errs = []
        for n in (50, 100, 200):
            grid = SimGrid(0.0, 1.0, n)
            rows = build_operator(GAMMA, 1.0, grid).apply(np.ones(n))
            ref = [float(mp.quad(f, [0, t])) if t > 0 else 0.0 for t in grid.times]
            errs.append(np.max(np.abs(rows - ref)))
        # O(dt); the singular first cells add a dt^(1 + kappa) term before the asymptote
        assert all(e < 0.3 / n for e, n in zip(errs, (50, 100, 200)))
        assert errs[0] > errs[1] > errs[2]

    @given(st.integers(2, 60), st.integers(0, 2**31), st.sampled_from([0.25, -0.25]))
    def test_norm_bound(self, n, seed, kappa):
        r = np.random.default_rng(seed)
        grid = SimGrid(0.0, 1.0, n)
        op = build_operator(GammaKernel(kappa, 1.0), r.normal(size=n), grid)
        h = r.normal(size=n)
        assert np.max(np.abs(op.apply(h))) <= op.norm_bound * math.sqrt(grid.dt * h @ h) * (1 + 1e-12)

    @given(st.integers(2, 60), st.integers(0, 2**31))
    def test_range_in_c0(self, n, seed):
        h = np.random.default_rng(seed).normal(size=n)
        assert build_operator(GAMMA, 2.0, SimGrid(0.0, 1.0, n)).apply(h)[0] == 0.0

    def test_invalid(self):
        with pytest.raises(DomainError):
            build_operator(GAMMA, 1.0, SimGrid(0.0, 1.0, 1))
        with pytest.raises(DomainError):
            build_operator(GAMMA, np.ones(7), SimGrid(0.0, 1.0, 5))


class TestApproximate:
    def test_integration_of_ramp(self):
        errs = []
        for n in (50, 200):
            grid = SimGrid(0.0, 1.0, n)
            op = build_operator(TabulatedKernel((0.0, 2.0), (1.0, 1.0)), 1.0, grid)
            fit = approximate_target(op, grid.times.copy(), ridge=0.0)
            np.testing.assert_allclose(fit.h_hat, 1.0, atol=1e-8)
            errs.append(fit.sup_error)
        assert max(errs) < 1e-10

    def test_hat_two_resolutions(self):
        out = {}
        for n in (100, 400):
            grid = SimGrid(0.0, 1.0, n)
            out[n] = approximate_target(build_operator(GAMMA, 1.0, grid), hat(grid), ridge=1e-10)
        assert out[400].sup_error < 0.05
        assert out[400].continuum_error < out[100].continuum_error

    def test_sweep_nonincreasing(self):
        errs = []
        for n in (100, 200, 400, 800):
            grid = SimGrid(0.0, 1.0, n)
            errs.append(approximate_target(build_operator(GAMMA, 1.0, grid), sine(grid), sweep_ridge(n)).sup_error)
        assert all(b <= 1.05 * a for a, b in zip(errs, errs[1:]))

    def test_gap_in_f(self):
        grid = SimGrid(0.0, 1.0, 800)
        f = lambda s: np.where((s >= 0.4) & (s < 0.5), 0.0, 1.0)
        fit = approximate_target(build_operator(GAMMA, f, grid), sine(grid))
        assert fit.sup_error < 0.05

    def test_linearity(self):
        grid = SimGrid(0.0, 1.0, 40)
        op = build_operator(GAMMA, 1.0, grid)
        a = approximate_target(op, sine(grid), ridge=0.0)
        b = approximate_target(op, -3.0 * sine(grid), ridge=0.0)
        np.testing.assert_allclose(b.h_hat, -3.0 * a.h_hat, rtol=0, atol=1e-10 * 3 * np.max(np.abs(a.h_hat)))
        assert b.sup_error == pytest.approx(3.0 * a.sup_error, abs=1e-10)

    def test_continuum_error_of_exact_ramp(self):
        # g = 1 integrates a constant h exactly, between grid points too
        grid = SimGrid(0.0, 1.0, 10)
        op = build_operator(TabulatedKernel((0.0, 2.0), (1.0, 1.0)), 1.0, grid)
        assert continuum_sup_error(op, np.ones(10), grid.times.copy()) < 1e-14

    def test_invalid_target(self):
        grid = SimGrid(0.0, 1.0, 10)
        op = build_operator(GAMMA, 1.0, grid)
        with pytest.raises(DomainError):
            approximate_target(op, grid.times + 0.1)
        with pytest.raises(DomainError):
            approximate_target(op, np.zeros(5))
        with pytest.raises(DomainError):
            approximate_target(op, grid.times, ridge=-1.0)


class TestTwoStep:
    def test_empty_a_delta(self):
        grid = SimGrid(0.0, 1.0, 200)
        f = lambda s: 0.5 + s
        res = cherny_two_step(GAMMA, f, sine(grid), 0.1, grid)
        assert res.a_delta_measure == 0.0
        np.testing.assert_allclose(res.h_hat, res.h_tilde / f(grid.times[:-1]), rtol=1e-14)
        assert res.sup_error == pytest.approx(res.step1_error, abs=1e-12)

    def test_linear_f(self):
        grid = SimGrid(0.0, 1.0, 800)
        res = cherny_two_step(GAMMA, lambda s: s, sine(grid), 0.05, grid)
        assert abs(res.a_delta_measure - 0.05) <= grid.dt * (1 + 1e-9)
        assert res.bound_holds
        g2 = math.sqrt(kernels.l2_norm_sq(GAMMA))
        coarse = res.step1_error + g2 * np.max(np.abs(res.h_tilde)) * math.sqrt(res.a_delta_measure)
        assert res.sup_error <= res.error_bound + 1e-10 <= coarse + 2e-10

    def test_delta_sweep(self):
        grid = SimGrid(0.0, 1.0, 800)
        errs = []
        for d in (0.2, 0.1, 0.05, 0.01):
            res = cherny_two_step(GAMMA, lambda s: s, sine(grid), d, grid)
            assert res.bound_holds
            errs.append(res.sup_error)
        assert all(b <= a + 1e-10 for a, b in zip(errs, errs[1:]))

    @pytest.mark.parametrize("kappa", [0.25, -0.25])
    @pytest.mark.parametrize("delta", [0.3, 0.05])
    def test_bound_on_gap_f(self, kappa, delta):
        grid = SimGrid(0.0, 1.0, 400)
        f = lambda s: np.where((s >= 0.4) & (s < 0.5), 0.0, 1.0 + s)
        res = cherny_two_step(GammaKernel(kappa, 1.0), f, hat(grid), delta, grid)
        assert abs(res.a_delta_measure - 0.1) <= grid.dt * (1 + 1e-9)
        assert res.bound_holds

    def test_invalid_delta(self):
        grid = SimGrid(0.0, 1.0, 10)
        with pytest.raises(DomainError):
            cherny_two_step(GAMMA, 1.0, sine(grid), 0.0, grid)
