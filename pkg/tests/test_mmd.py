import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernelsurf.errors import InputError
from kernelsurf.kernels import KernelConfig, median_heuristic
from kernelsurf.mmd import (
    SampleSet,
    averaged_mmd,
    bootstrap_threshold,
    mmd2_biased,
    two_sample_test,
)
from kernelsurf.sampling import DataStream, SamplingSpec, draw_pair, prepare_stream


def mmd2_triple_sum(y, z, sigma):
    """Literal triple-loop estimator: the independent oracle."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if y.shape[0] == 1 and y.shape[1] > 1 and z.shape[0] > 1:
        pass
    n, m = y.shape[0], z.shape[0]

    def k(a, b):
        d = a - b
        return math.exp(-float(np.dot(d, d)) / (2.0 * sigma * sigma))

    term_yy = sum(k(y[i], y[j]) for i in range(n) for j in range(n)) / n**2
    term_zz = sum(k(z[i], z[j]) for i in range(m) for j in range(m)) / m**2
    term_yz = sum(k(y[i], z[j]) for i in range(n) for j in range(m)) / (n * m)
    return term_yy + term_zz - 2.0 * term_yz


class TestMmd2Biased:
    def test_identity_is_exactly_zero(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=(7, 2))
        for sigma in (0.1, 1.0, 12.0):
            assert mmd2_biased(y, y.copy(), KernelConfig(sigma)) == 0.0

    def test_singleton_hand_expansion(self):
        # n = m = 1: 1 + 1 - 2 exp(-d^2 / (2 sigma^2)); d = sigma = 1
        value = mmd2_biased(np.array([0.0]), np.array([1.0]), KernelConfig(1.0))
        assert value == pytest.approx(2.0 - 2.0 * math.exp(-0.5), rel=1e-12)
        assert value == pytest.approx(0.786939, abs=1e-6)

    def test_matches_triple_sum_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n, m, d = rng.integers(1, 8, size=3)
            y = rng.normal(size=(n, d))
            z = rng.normal(size=(m, d))
            sigma = float(rng.uniform(0.3, 3.0))
            got = mmd2_biased(y, z, KernelConfig(sigma))
            want = mmd2_triple_sum(y, z, sigma)
            assert got == pytest.approx(want, abs=1e-12)

    def test_exact_symmetry(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=(6, 3))
        z = rng.normal(size=(9, 3))
        cfg = KernelConfig(0.7)
        assert mmd2_biased(y, z, cfg) == mmd2_biased(z, y, cfg)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            mmd2_biased(np.ones((3, 2)), np.ones((3, 3)), KernelConfig(1.0))

    def test_accepts_sample_sets(self):
        y = SampleSet(np.array([[0.0], [1.0]]), source_id="a", domain_tag="temporal")
        z = SampleSet(np.array([[5.0], [6.0]]), source_id="a", domain_tag="temporal")
        assert mmd2_biased(y, z, KernelConfig(1.0)) > 0.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_nonnegative_and_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=(rng.integers(1, 6), 2))
        z = rng.normal(size=(rng.integers(1, 6), 2))
        cfg = KernelConfig(float(rng.uniform(0.2, 4.0)))
        v = mmd2_biased(y, z, cfg)
        assert v >= 0.0
        assert v == mmd2_biased(z, y, cfg)


def _stream_pair(seed, length=600, offset=0.0):
    rng = np.random.default_rng(seed)
    a = DataStream.timeseries(rng.normal(size=(1, length)), 100.0, name="a")
    b = DataStream.timeseries(rng.normal(size=(1, length)) + offset, 100.0, name="b")
    return a, b


class TestAveragedMmd:
    SPEC = SamplingSpec("equidistant_temporal", n=40, temporal_gap=5)

    def test_single_repetition_equals_direct_estimate(self):
        a, b = _stream_pair(0)
        value = averaged_mmd(a, b, self.SPEC, 1, np.random.default_rng(11))
        # replay the same draw and bandwidth choice by hand
        rng = np.random.default_rng(11)
        y, z = draw_pair(prepare_stream(a, self.SPEC), prepare_stream(b, self.SPEC),
                         self.SPEC, rng)
        cfg = median_heuristic(z)
        assert value == pytest.approx(mmd2_biased(y, z, cfg), rel=1e-10, abs=1e-12)

    def test_identical_streams_give_zero(self):
        a, _ = _stream_pair(1)
        twin = DataStream.timeseries(a.data.copy(), a.rate, name="twin")
        value = averaged_mmd(a, twin, self.SPEC, 5, np.random.default_rng(2))
        assert value == 0.0

    def test_mean_of_replayed_repetitions(self):
        a, b = _stream_pair(2, offset=0.5)
        R = 10
        value = averaged_mmd(a, b, self.SPEC, R, np.random.default_rng(33))
        rng = np.random.default_rng(33)
        prep_a = prepare_stream(a, self.SPEC)
        prep_b = prepare_stream(b, self.SPEC)
        singles = []
        for _ in range(R):
            y, z = draw_pair(prep_a, prep_b, self.SPEC, rng)
            singles.append(mmd2_biased(y, z, median_heuristic(z)))
        assert value == pytest.approx(float(np.mean(singles)), rel=1e-9)

    def test_deterministic_under_seed(self):
        a, b = _stream_pair(3, offset=1.0)
        v1 = averaged_mmd(a, b, self.SPEC, 4, np.random.default_rng(7))
        v2 = averaged_mmd(a, b, self.SPEC, 4, np.random.default_rng(7))
        assert v1 == v2

    def test_cross_user_removes_offset(self):
        a, b = _stream_pair(4)
        shifted = DataStream.timeseries(b.data + 100.0, b.rate, name="b")
        base = averaged_mmd(a, b, self.SPEC, 3, np.random.default_rng(9), cross_user=True)
        moved = averaged_mmd(a, shifted, self.SPEC, 3, np.random.default_rng(9),
                             cross_user=True)
        assert moved == pytest.approx(base, abs=1e-9)

    def test_stream_too_short_names_stream(self):
        rng = np.random.default_rng(0)
        short = DataStream.timeseries(rng.normal(size=(1, 30)), 100.0, name="tiny")
        other = DataStream.timeseries(rng.normal(size=(1, 600)), 100.0, name="big")
        with pytest.raises(InputError, match="tiny"):
            averaged_mmd(short, other, self.SPEC, 1, rng)

    def test_bad_repetitions(self):
        a, b = _stream_pair(5)
        with pytest.raises(InputError):
            averaged_mmd(a, b, self.SPEC, 0, np.random.default_rng(0))


class TestBootstrapThreshold:
    def test_alpha_near_one_approaches_minimum(self):
        rng = np.random.default_rng(6)
        y = rng.normal(size=(25, 1))
        z = rng.normal(size=(25, 1))
        cfg = median_heuristic(z)
        rng_a = np.random.default_rng(1)
        rng_b = np.random.default_rng(1)
        near_min = bootstrap_threshold(y, z, cfg, alpha=0.999, shuffles=200, rng=rng_a)
        low_q = bootstrap_threshold(y, z, cfg, alpha=0.5, shuffles=200, rng=rng_b)
        assert near_min <= low_q

    def test_degenerate_null_all_equal(self):
        y = np.zeros((10, 1))
        z = np.zeros((12, 1))
        thr = bootstrap_threshold(y, z, KernelConfig(1.0), alpha=0.05,
                                  shuffles=150, rng=np.random.default_rng(0))
        assert thr == 0.0

    def test_too_few_shuffles(self):
        with pytest.raises(InputError):
            bootstrap_threshold(np.ones((3, 1)), np.ones((3, 1)), KernelConfig(1.0),
                                alpha=0.05, shuffles=99, rng=np.random.default_rng(0))

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(8)
        y = rng.normal(size=(20, 1))
        z = rng.normal(size=(20, 1))
        cfg = median_heuristic(z)
        t1 = bootstrap_threshold(y, z, cfg, 0.05, 150, np.random.default_rng(42))
        t2 = bootstrap_threshold(y, z, cfg, 0.05, 150, np.random.default_rng(42))
        assert t1 == t2

    def test_invalid_alpha(self):
        with pytest.raises(InputError):
            bootstrap_threshold(np.ones((3, 1)), np.ones((3, 1)), KernelConfig(1.0),
                                alpha=1.0, shuffles=150)


class TestTwoSampleTest:
    def test_separated_normals_reject(self):
        rng = np.random.default_rng(10)
        y = rng.normal(0.0, 1.0, size=(200, 1))
        z = rng.normal(3.0, 1.0, size=(200, 1))
        result = two_sample_test(y, z, alpha=0.05, shuffles=200,
                                 rng=np.random.default_rng(0))
        assert result.reject_null

    def test_identical_sets_never_reject(self):
        rng = np.random.default_rng(11)
        y = rng.normal(size=(50, 1))
        result = two_sample_test(y, y.copy(), alpha=0.05, shuffles=150,
                                 rng=np.random.default_rng(0))
        assert result.mmd2 == 0.0
        assert not result.reject_null

    def test_rough_calibration(self):
        # cheap sanity check; the acceptance suite runs the strict version
        rejections = 0
        runs = 60
        for s in range(runs):
            rng = np.random.default_rng(1000 + s)
            y = rng.normal(size=(60, 1))
            z = rng.normal(size=(60, 1))
            result = two_sample_test(y, z, alpha=0.05, shuffles=150,
                                     rng=np.random.default_rng(s))
            rejections += result.reject_null
        assert rejections / runs <= 0.15

    def test_result_consistency_guard(self):
        from kernelsurf.mmd import TestResult

        with pytest.raises(InputError):
            TestResult(mmd2=1.0, threshold=0.5, alpha=0.05, reject_null=False)
        with pytest.raises(InputError):
            TestResult(mmd2=1.0, threshold=0.5, alpha=1.5, reject_null=True)
