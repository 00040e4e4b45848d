import math

import numpy as np
import pytest

from etlearn import (
    GaussianSampler,
    LinearSystem,
    ReferenceSignal,
    eval_reference,
    make_closed_loop,
    sample_noise,
    step,
)


class TestMakeClosedLoop:
    def test_benchmark_plant(self, scalar_system):
        assert make_closed_loop(scalar_system) == pytest.approx([[0.9]])

    def test_zero_b_leaves_a(self):
        sys1 = LinearSystem(A=[[0.5]], B=[[0.0]], Sigma=[[0.0]], F=[[123.0]], Ts=1.0)
        assert make_closed_loop(sys1) == pytest.approx([[0.5]])

    def test_stabilized_unstable_plant(self):
        sys1 = LinearSystem(A=[[1.1]], B=[[1.0]], Sigma=[[0.0]], F=[[-0.3]], Ts=1.0)
        assert make_closed_loop(sys1) == pytest.approx([[0.8]])


class TestStep:
    def test_origin_is_fixed_point(self, scalar_system):
        out = step(scalar_system, [0.0], [0.0], [0.0])
        assert out == pytest.approx([0.0])

    def test_scalar_arithmetic(self, scalar_system):
        out = step(scalar_system, [1.0], [1.0], [0.0])
        assert out == pytest.approx([0.91])

    def test_noise_passthrough(self, scalar_system):
        out = step(scalar_system, [0.0], [0.0], [0.125])
        assert out == pytest.approx([0.125])


class TestConstruction:
    def test_rejects_unstable_closed_loop(self):
        with pytest.raises(ValueError, match="stable"):
            LinearSystem(A=[[1.0]], B=[[0.0]], Sigma=[[0.0]], F=[[0.0]], Ts=1.0)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            LinearSystem(A=[[0.9, 0.0]], B=[[1.0]], Sigma=[[1.0]], F=[[0.0]], Ts=1.0)
        with pytest.raises(ValueError, match="F"):
            LinearSystem(A=[[0.9]], B=[[1.0]], Sigma=[[1.0]], F=[[0.0, 0.0]], Ts=1.0)

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(ValueError, match="semi-definite"):
            LinearSystem(A=[[0.9]], B=[[1.0]], Sigma=[[-1.0]], F=[[0.0]], Ts=1.0)

    def test_rejects_bad_sample_time(self):
        with pytest.raises(ValueError, match="Ts"):
            LinearSystem(A=[[0.9]], B=[[1.0]], Sigma=[[0.0]], F=[[0.0]], Ts=0.0)


class TestSampleNoise:
    def test_zero_covariance_is_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert np.all(sample_noise(np.zeros((2, 2)), rng) == 0.0)

    def test_identity_covariance_statistics(self):
        rng = np.random.default_rng(42)
        sampler = GaussianSampler(np.eye(3))
        draws = sampler.sample_many(rng, 100_000)
        cov = np.cov(draws.T)
        assert np.max(np.abs(cov - np.eye(3))) < 0.05

    def test_benchmark_variance(self):
        rng = np.random.default_rng(7)
        sampler = GaussianSampler([[2.5e-5]])
        draws = sampler.sample_many(rng, 100_000)
        var = float(np.var(draws))
        assert 2.3e-5 <= var <= 2.7e-5

    def test_rejects_non_psd(self):
        with pytest.raises(ValueError):
            sample_noise(np.array([[1.0, 2.0], [2.0, 1.0]]), np.random.default_rng(0))

    def test_rank_deficient_ok(self):
        # rank-one covariance, as produced by residual estimation
        v = np.array([[1.0], [2.0]])
        sampler = GaussianSampler(v @ v.T)
        rng = np.random.default_rng(1)
        draws = sampler.sample_many(rng, 1000)
        # all samples lie on the span of v
        assert np.max(np.abs(draws[:, 1] - 2 * draws[:, 0])) < 1e-12


class TestReferenceSignal:
    def test_cosine_at_zero(self):
        sig = ReferenceSignal.cosine(1.0, 0.2)
        assert eval_reference(sig, 0, 0.01) == pytest.approx([1.0])

    def test_chirp_at_zero(self):
        sig = ReferenceSignal.chirp(0.7, 0.1, 2.0, 10.0)
        assert eval_reference(sig, 0, 0.01) == pytest.approx([0.7])

    def test_cosine_value(self):
        sig = ReferenceSignal.cosine(1.0, 0.2)
        assert eval_reference(sig, 100, 0.01)[0] == pytest.approx(math.cos(0.2), abs=1e-12)

    def test_zero_kind(self):
        assert eval_reference(ReferenceSignal.zero(), 5, 0.1, q=2) == pytest.approx([0.0, 0.0])

    def test_chirp_validation(self):
        with pytest.raises(ValueError):
            ReferenceSignal.chirp(1.0, 2.0, 1.0, 10.0)  # f0 > f1
        with pytest.raises(ValueError):
            ReferenceSignal.chirp(1.0, 0.1, 1.0, 0.0)  # no duration

    def test_chirp_instantaneous_frequency_nondecreasing(self):
        sig = ReferenceSignal.chirp(1.0, 0.2, 3.0, 5.0)
        ts = 0.001
        # unwrap the phase implied by cos and difference it
        t = np.arange(0, 8.0, ts)
        inside = t <= sig.duration
        phase = np.where(
            inside,
            sig.f0 * t + 0.5 * (sig.f1 - sig.f0) / sig.duration * t * t,
            0.5 * (sig.f0 + sig.f1) * sig.duration + sig.f1 * (t - sig.duration),
        )
        freq = np.diff(phase) / ts
        assert np.all(np.diff(freq) > -1e-9)
        vals = [sig.value(k, ts) for k in range(0, 8000, 50)]
        expected = [math.cos(2 * math.pi * p) for p in phase[::50]]
        assert np.allclose(vals, expected, atol=1e-12)

    def test_rejects_negative_step(self):
        with pytest.raises(ValueError):
            eval_reference(ReferenceSignal.zero(), -1, 0.01)


class TestSimulationInvariants:
    def test_same_seed_bit_identical(self, scalar_system, cosine_ref):
        def simulate(seed):
            rng = np.random.default_rng(seed)
            sampler = scalar_system.noise_sampler()
            x = np.zeros(1)
            out = []
            for k in range(500):
                r = eval_reference(cosine_ref, k, scalar_system.Ts)
                x = step(scalar_system, x, r, sampler.sample(rng))
                out.append(x.copy())
            return np.array(out)

        a, b = simulate(123), simulate(123)
        assert np.array_equal(a, b)

    def test_noiseless_geometric_decay(self):
        rng = np.random.default_rng(3)
        a = np.array([[0.6, 0.2], [0.0, 0.7]])
        sys2 = LinearSystem(A=a, B=np.zeros((2, 1)), Sigma=np.zeros((2, 2)),
                            F=np.zeros((1, 2)), Ts=0.1)
        rho = np.max(np.abs(np.linalg.eigvals(sys2.A_cl)))
        x = rng.normal(size=2)
        norms = []
        for _ in range(60):
            x = step(sys2, x, [0.0], np.zeros(2))
            norms.append(np.linalg.norm(x))
        norms = np.array(norms)
        # averaged decay rate cannot exceed the spectral radius
        rate = (norms[-1] / norms[9]) ** (1.0 / 50)
        assert rate <= rho + 1e-9

    def test_one_step_covariance_matches_sigma(self, scalar_system, cosine_ref):
        rng = np.random.default_rng(11)
        sampler = scalar_system.noise_sampler()
        x = np.zeros(1)
        residuals = np.empty(100_000)
        for k in range(100_000):
            r = eval_reference(cosine_ref, k, scalar_system.Ts)
            x_next = step(scalar_system, x, r, sampler.sample(rng))
            residuals[k] = x_next[0] - 0.9 * x[0] - 0.01 * r[0]
            x = x_next
        emp = np.var(residuals)
        assert abs(emp - 2.5e-5) / 2.5e-5 < 0.05
