import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bsscfs import kernels, simulator
from bsscfs.errors import DomainError, InvalidParameter, NumericalError
from bsscfs.kernels import GammaKernel, TabulatedKernel
from bsscfs.model import BssModel, ConstantSigma, DeterministicSigma, ExpOUSigma
from bsscfs.simulator import SamplePath, SimGrid

import oracles


def brute_ma(w, x):
    n = x.shape[-1]
    out = np.zeros(x.shape[:-1] + (n + 1,))
    for i in range(1, n + 1):
        for j in range(i):
            out[..., i] += w[i - 1 - j] * x[..., j]
    return out


class TestGrid:
    def test_times(self):
        g = SimGrid(-1.0, 1.0, 8)
        assert g.dt == 0.25
        assert g.times[4] == 0.0
        assert g.index_of(0.5) == 6

    def test_off_grid(self):
        with pytest.raises(DomainError):
            SimGrid(0.0, 1.0, 4).index_of(0.3)

    def test_model_grid(self, gamma_const):
        g = simulator.model_grid(gamma_const, 1 / 32)
        assert g.t_end == 1.0
        assert g.t_start <= -kernels.truncation_horizon(gamma_const.g, 1e-6)
        assert g.index_of(0.0) > 0

    def test_invalid(self):
        with pytest.raises(DomainError):
            SimGrid(0.0, 1.0, 0)
        with pytest.raises(DomainError):
            SimGrid(1.0, 1.0, 4)


class TestMovingAverage:
    @pytest.mark.parametrize("n", [5, 300, 500])
    def test_against_loops(self, n, rng):
        w = rng.normal(size=n)
        x = rng.normal(size=(3, n))
        np.testing.assert_allclose(simulator.ma_apply(w, x), brute_ma(w, x), atol=1e-10)

    def test_constant_weights(self, rng):
        x = rng.normal(size=(2, 50))
        np.testing.assert_allclose(simulator.ma_apply(np.full(50, 2.0), x), brute_ma(np.full(50, 2.0), x), atol=1e-12)

    @given(st.integers(1, 40), st.integers(0, 2**31))
    def test_linear(self, n, seed):
        r = np.random.default_rng(seed)
        w, x, y = r.normal(size=n), r.normal(size=n), r.normal(size=n)
        np.testing.assert_allclose(simulator.ma_apply(w, 2 * x - y),
                                   2 * simulator.ma_apply(w, x) - simulator.ma_apply(w, y), atol=1e-10)

    def test_lag_weights(self):
        g = GammaKernel(-0.25, 1.0)
        w = simulator.lag_weights(g, 0.1, 4)
        assert w[0] == pytest.approx(math.sqrt(g.sq_integral(0, 0.1) / 0.1))
        np.testing.assert_allclose(w[1:], g(np.array([0.2, 0.3, 0.4])))


class TestIntermittency:
    def test_constant(self, gamma_const):
        grid = SimGrid(0.0, 1.0, 10)
        s = simulator.simulate_intermittency(BssModel(0.0, GammaKernel(0.25, 1.0), ConstantSigma(2.0)), grid, 1)
        assert np.all(s.values == 2.0) and s.role == "sigma"

    def test_expou_stationary_moments(self):
        m = BssModel(0.0, GammaKernel(0.25, 1.0), ExpOUSigma(1.0, 0.0, 0.5))
        dt = 0.5
        grid = SimGrid(0.0, 1e5 * dt, 100000)
        u = np.log(simulator.simulate_intermittency(m, grid, 3).values)
        a = math.exp(-dt)
        n = u.size
        var = 0.125
        se_mean = math.sqrt(var * (1 + a) / (1 - a) / n)
        se_var = var * math.sqrt(2 * (1 + a * a) / (1 - a * a) / n)
        assert abs(u.mean()) < 3 * se_mean
        assert abs(u.var() - var) < 3 * se_var

    def test_deterministic(self):
        m = BssModel(0.0, GammaKernel(0.25, 1.0), ConstantSigma(1.0))
        sig = DeterministicSigma((0.0, 1.0), (1.0, 3.0))
        s = simulator._process_values(sig, SimGrid(0.0, 1.0, 4), [None])[0]
        np.testing.assert_allclose(s, [1.0, 1.5, 2.0, 2.5, 3.0])
        with pytest.raises(DomainError):
            simulator._process_values(sig, SimGrid(-1.0, 1.0, 4), [None])
        assert m is not None

    def test_seed_determinism(self, gamma_expou):
        grid = simulator.model_grid(gamma_expou, 1 / 16)
        a = simulator.simulate_intermittency(gamma_expou, grid, 9)
        b = simulator.simulate_intermittency(gamma_expou, grid, 9)
        c = simulator.simulate_intermittency(gamma_expou, grid, 10)
        assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)


class TestSimulate:
    def test_brownian_variance(self, brownian):
        grid = simulator.model_grid(brownian, 1 / 64)
        Z = simulator.simulate_paths(brownian, grid, 10000, 5)["Z"]
        z1 = Z[:, -1] - Z[:, grid.index_of(0.0)]
        se = math.sqrt(2 / (z1.size - 1))
        assert abs(z1.var(ddof=1) - 1.0) < 3 * se

    def test_gamma_stationary_variance(self, gamma_const):
        grid = simulator.model_grid(gamma_const, 1 / 32)
        Z = simulator.simulate_paths(gamma_const, grid, 10000, 6)["Z"]
        target = kernels.l2_norm_sq(gamma_const.g)
        i0 = grid.index_of(0.0)
        v = Z[:, i0:].var(axis=0, ddof=1)
        se = target * math.sqrt(2 / (Z.shape[0] - 1))
        assert np.all(np.abs(v - target) < 3 * se)

    def test_variogram_matches_gap(self, gamma_const):
        grid = simulator.model_grid(gamma_const, 1 / 256)
        Z = simulator.simulate_paths(gamma_const, grid, 4000, 7)["Z"]
        i0 = grid.index_of(0.0)
        ratios = []
        for p in range(3, 7):
            k = 256 >> p
            d = Z[:, i0 + k] - Z[:, i0]
            emp = np.mean(d**2)
            se = np.std(d**2, ddof=1) / math.sqrt(d.size)
            ref = 2 * kernels.gap(gamma_const.g, 2.0**-p)
            assert abs(emp - ref) < 3 * se + 0.02 * ref
            ratios.append(emp / 2.0 ** (-1.5 * p))
        # roughly constant normalised variogram: exponent 2 kappa + 1
        assert max(ratios) / min(ratios) < 1.4

    def test_increment_stationarity(self, gamma_const):
        grid = simulator.model_grid(gamma_const, 1 / 32)
        Z = simulator.simulate_paths(gamma_const, grid, 10000, 8)["Z"]
        h = 4
        vals, ses = [], []
        for t in (0.2, 0.5, 0.8):
            i = grid.index_of(round(t * 32) / 32)
            d = (Z[:, i + h] - Z[:, i]) ** 2
            vals.append(d.mean())
            ses.append(d.std(ddof=1) / math.sqrt(d.size))
        for a in range(3):
            for b in range(a + 1, 3):
                assert abs(vals[a] - vals[b]) < 3 * math.hypot(ses[a], ses[b])

    def test_linearity_in_sigma(self):
        grid = SimGrid(-16.0, 1.0, 17 * 16)
        res = []
        for c in (1.0, 2.5):
            m = BssModel(0.0, GammaKernel(0.25, 1.0), ExpOUSigma(1.0, math.log(c), 0.5))
            r = simulator.simulate_paths(m, grid, 20, 3, keep_components=True)
            res.append(r["Z"] - r["Y_part"])
        np.testing.assert_allclose(res[1], 2.5 * res[0], rtol=1e-12, atol=1e-12)

    def test_workers_do_not_matter(self, gamma_expou):
        grid = simulator.model_grid(gamma_expou, 1 / 8)
        a = simulator.simulate_paths(gamma_expou, grid, 2100, 4, workers=1)["Z"]
        b = simulator.simulate_paths(gamma_expou, grid, 2100, 4, workers=3)["Z"]
        assert np.array_equal(a, b)

    def test_path_matches_bulk(self, gamma_expou):
        grid = simulator.model_grid(gamma_expou, 1 / 8)
        bulk = simulator.simulate_paths(gamma_expou, grid, 5, 4)["Z"]
        one = simulator.simulate_path(gamma_expou, grid, 4, path_index=3)
        # same draws; BLAS may sum a lone row in a different order
        np.testing.assert_allclose(one.Z.values, bulk[3], rtol=0, atol=1e-12)
        assert one.driver_B.at(0.0) == 0.0

    def test_beta_and_drift_components(self):
        from bsscfs.kernels import ExponentialKernel
        from bsscfs.model import DriftSpec
        m = BssModel(0.5, GammaKernel(0.25, 1.0), ConstantSigma(1.0), DriftSpec(ExponentialKernel(1.0)), beta=0.6)
        grid = simulator.model_grid(m, 1 / 16)
        p = simulator.simulate_path(m, grid, 2)
        # drift of a = 1 through q = e^{-s}: close to its stationary value 1
        assert p.drift_part.at(1.0) == pytest.approx(1.0, abs=0.05)
        Z = simulator.simulate_paths(m, grid, 8000, 2)["Z"]
        v = Z[:, -1].var()
        assert v == pytest.approx(kernels.l2_norm_sq(m.g), rel=0.06)

    def test_unvalidated_model(self):
        m = BssModel(0.0, GammaKernel(0.25, 1.0), ConstantSigma(1.0), beta=1.0)
        with pytest.raises(InvalidParameter):
            simulator.simulate_paths(m, SimGrid(-20.0, 1.0, 21), 1, 0)

    def test_nonfinite(self):
        m = BssModel(math.inf, GammaKernel(0.25, 1.0), ConstantSigma(1.0))
        with pytest.raises(NumericalError):
            simulator.simulate_paths(m, simulator.model_grid(m, 0.25), 1, 0)

    def test_short_grid(self, gamma_const):
        with pytest.raises(DomainError):
            simulator.simulate_paths(gamma_const, SimGrid(-1.0, 1.0, 8), 1, 0)

    def test_frozen_past_is_kept(self, gamma_expou):
        grid = simulator.model_grid(gamma_expou, 1 / 8)
        fr = simulator.freeze(gamma_expou, grid, 0.5, 11)
        r = simulator.simulate_paths(gamma_expou, grid, 3, 12, keep_components=True, frozen=fr)
        il = fr.lower_index
        assert np.array_equal(r["dB"][:, :il], np.broadcast_to(fr.dB_past, (3, il)))
        assert np.allclose(r["Z"][:, il], fr.Z_lower)
        assert not np.allclose(r["Z"][0, il + 1:], r["Z"][1, il + 1:])


class TestCovariance:
    def brownian_sigma(self, n=16):
        grid = SimGrid(0.0, 1.0, n)
        return SamplePath(grid, np.ones(n + 1), "sigma")

    def test_brownian(self):
        g = TabulatedKernel((0.0, 1.0), (1.0, 1.0))
        S = simulator.covariance_matrix(g, self.brownian_sigma(), 0.0, [0.5, 1.0])
        np.testing.assert_allclose(S, [[0.5, 0.5], [0.5, 1.0]], atol=1e-12)

    def test_brownian_min(self):
        g = TabulatedKernel((0.0, 1.0), (1.0, 1.0))
        t = np.arange(1, 17) / 16
        S = simulator.covariance_matrix(g, self.brownian_sigma(), 0.25, t[3:])
        np.testing.assert_allclose(S, np.minimum.outer(t[3:], t[3:]) - 0.25, atol=1e-12)

    def test_gamma_negative_vs_oracle(self):
        g = GammaKernel(-0.25, 1.0)
        t = np.arange(1, 9) / 8
        S = simulator.covariance_matrix(g, self.brownian_sigma(64), 0.0, t)
        f = oracles.gamma_g(-0.25, 1.0)
        ref = np.array([[oracles.cov_entry(f, a, b) for b in t] for a in t])
        np.testing.assert_allclose(S, ref, atol=1e-6, rtol=0)

    @given(st.sampled_from([0.25, -0.25]), st.integers(1, 6), st.integers(0, 2**31))
    def test_symmetric_psd(self, kappa, d, seed):
        r = np.random.default_rng(seed)
        grid = SimGrid(0.0, 1.0, 32)
        sig = SamplePath(grid, np.exp(r.normal(size=33)), "sigma")
        idx = np.sort(r.choice(np.arange(1, 33), size=d, replace=False))
        S = simulator.covariance_matrix(GammaKernel(kappa, 1.0), sig, 0.0, grid.times[idx])
        assert np.array_equal(S, S.T)
        assert np.linalg.eigvalsh(S).min() >= -1e-10 * np.trace(S)

    def test_scheme_covariance_is_law_of_sum(self, rng):
        g = GammaKernel(0.25, 1.0)
        grid = SimGrid(0.0, 1.0, 8)
        sig = SamplePath(grid, np.exp(rng.normal(size=9)), "sigma")
        F = simulator.scheme_factor(g, sig, 0.0, grid.times[1:])
        w = simulator.lag_weights(g, grid.dt, 8)
        brute = np.array([[w[a - 1 - j] * sig.values[j] * math.sqrt(grid.dt) if j < a else 0.0
                           for j in range(8)] for a in range(1, 9)])
        np.testing.assert_allclose(F, brute, atol=1e-15)

    def test_cholesky_jitter(self):
        v = np.array([1.0, 2.0, 3.0])
        L = simulator.cholesky_jitter(np.outer(v, v))
        np.testing.assert_allclose(L @ L.T, np.outer(v, v), atol=1e-5)
        assert np.all(simulator.cholesky_jitter(np.zeros((3, 3))) == 0)
        with pytest.raises(NumericalError):
            simulator.cholesky_jitter(np.diag([1.0, -1.0]))


class TestExactGaussian:
    def test_brownian_variance(self):
        g = TabulatedKernel((0.0, 1.0), (1.0, 1.0))
        X = simulator.exact_gaussian_paths(g, 1.0, SimGrid(0.0, 1.0, 8), 20000, 1)
        assert abs(X[:, -1].var() - 1) < 3 * math.sqrt(2 / 20000)

    def test_ks_against_scheme(self):
        g = GammaKernel(0.25, 1.0)
        m = BssModel(0.0, g, ConstantSigma(1.0, active_from=0.0))
        grid = simulator.model_grid(m, 1 / 32)
        assert grid.t_start == 0.0
        exact = simulator.exact_gaussian_paths(g, 1.0, grid, 10000, 2)[:, -1]
        sim = simulator.simulate_paths(m, grid, 10000, 3)["Z"][:, -1]
        res = stats.ks_2samp(exact, sim)
        assert res.statistic < oracles.ks_critical_1pct(10000, 10000)

    def test_seed(self):
        g = GammaKernel(0.25, 1.0)
        grid = SimGrid(0.0, 1.0, 8)
        a = simulator.exact_gaussian_path(g, 1.0, grid, 4)
        assert np.array_equal(a.values, simulator.exact_gaussian_path(g, 1.0, grid, 4).values)
        with pytest.raises(DomainError):
            simulator.exact_gaussian_path(g, 1.0, SimGrid(-1.0, 1.0, 8), 4)
