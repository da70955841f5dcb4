import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff, rel_err
from periodic_qat.nn import Model, mlp_spec
from periodic_qat.regularizer import (
    DegenerateAmplitudeWarning,
    NoEligibleSlabsWarning,
    RegularizerConfig,
    cosine_penalty,
    cosine_penalty_grad,
    hat_penalty,
    hat_penalty_grad,
    model_penalty,
    normalization_constant,
    penalty,
    penalty_grad,
    penalty_terms,
    sine_penalty,
    sine_penalty_grad,
    slab_scale,
    zero_points,
)


def cfg(kind="sine", amplitude=1.0, frequency=1):
    return RegularizerConfig(kind, amplitude, frequency)


class TestScale:
    def test_max_abs(self):
        assert slab_scale(np.array([-0.7, 0.3])) == 0.7

    def test_zero_slab(self):
        assert slab_scale(np.zeros(2)) == 1.0

    def test_single_element_on_lattice(self):
        assert penalty(np.array([0.42]), cfg("sine", 3.0, 5)) == pytest.approx(0.0, abs=1e-28)


class TestSine:
    @pytest.mark.parametrize("f", [1, 7, 127])
    def test_lattice_points_vanish(self, f):
        c = 0.9
        w = np.array([0.0, c / f, -c])
        assert sine_penalty(w, cfg("sine", 5.0, f)) < 1e-25

    def test_peak(self):
        assert sine_penalty(np.array([0.5, 1.0]), cfg()) == pytest.approx(1.0, rel=1e-15)

    def test_direct_value(self):
        # 2 sin^2(0.7 pi) = 2 cos^2(0.2 pi) = 2 ((1 + sqrt 5) / 4)^2 = (3 + sqrt 5) / 4
        terms = penalty_terms(np.array([0.1]), cfg("sine", 2.0, 7), c=1.0)
        assert terms[0] == pytest.approx((3 + math.sqrt(5)) / 4, rel=1e-14)

    def test_grad_zero_on_lattice_and_peaks(self):
        f = 4
        lattice = np.arange(-f, f + 1) / f
        peaks = (np.arange(-f, f) + 0.5) / f
        assert np.abs(penalty_grad(lattice, cfg("sine", 1.0, f), c=1.0)).max() < 1e-12
        assert np.abs(penalty_grad(peaks, cfg("sine", 1.0, f), c=1.0)).max() < 1e-12

    @pytest.mark.parametrize("f", [1, 7, 127])
    def test_finite_differences(self, rng, f):
        w = rng.uniform(-1, 1, 20)
        c = slab_scale(w)
        r = cfg("sine", 0.3, f)
        fd = central_diff(lambda v: penalty(v, r, c), w, 1e-7 / f)
        assert rel_err(sine_penalty_grad(w, r), fd) < 1e-6

    def test_kind_checked(self):
        with pytest.raises(ValueError):
            sine_penalty(np.ones(2), cfg("hat"))


class TestCosine:
    def test_minima_f8(self):
        z = zero_points("cosine", 8)
        assert len(z) == 16 and 0.0 not in z
        np.testing.assert_allclose(sorted(np.abs(z))[::2], np.arange(1, 16, 2) / 16)
        assert penalty(z, cfg("cosine", 1.0, 8), c=1.0) < 1e-28

    def test_zero_is_maximum(self):
        assert cosine_penalty(np.array([0.0]), cfg("cosine")) == 1.0

    @pytest.mark.parametrize("f", [1, 8])
    def test_finite_differences(self, rng, f):
        w = rng.uniform(-1, 1, 20)
        c = slab_scale(w)
        r = cfg("cosine", 0.7, f)
        fd = central_diff(lambda v: penalty(v, r, c), w, 1e-7 / f)
        assert rel_err(cosine_penalty_grad(w, r), fd) < 1e-6


class TestHat:
    def test_values(self):
        r = cfg("hat")
        assert hat_penalty(np.array([0.0]), r) == 0.0  # c falls back to 1
        assert penalty_terms(np.array([0.5]), r, c=1.0)[0] == 1.0
        assert penalty_terms(np.array([0.25]), r, c=1.0)[0] == 0.5

    @pytest.mark.parametrize("f", [1, 2, 4, 7])
    def test_zeros_on_lattice_for_any_f(self, f):
        # even frequencies included: the lattice is {k/f} regardless of parity
        z = zero_points("hat", f)
        assert np.abs(penalty_terms(z, cfg("hat", 1.0, f), c=1.0)).max() < 1e-12
        mid = (np.arange(-f, f) + 0.5) / f
        np.testing.assert_allclose(penalty_terms(mid, cfg("hat", 1.0, f), c=1.0), 1.0, atol=1e-12)

    def test_constant_slope(self):
        f, c, a = 7, 0.8, 0.3
        w = np.array([0.1 / f, 0.4 / f, -0.2 / f]) * c
        np.testing.assert_allclose(np.abs(penalty_grad(w, cfg("hat", a, f), c=c)), a * 2 * f / c, rtol=1e-15)

    def test_subgradient_at_kinks(self):
        f = 3
        pts = np.concatenate([zero_points("hat", f), (np.arange(-f, f) + 0.5) / f])
        assert not penalty_grad(pts, cfg("hat", 1.0, f), c=1.0).any()

    @pytest.mark.parametrize("f", [1, 7, 127])
    def test_finite_differences_off_kinks(self, rng, f):
        u = rng.uniform(-1, 1, 50)
        phase = np.mod(f * u, 0.5)
        w = u[(phase > 0.01) & (phase < 0.49)]
        r = cfg("hat", 0.4, f)
        fd = central_diff(lambda v: penalty(v, r, 1.0), w, 1e-8 / f)
        assert rel_err(penalty_grad(w, r, c=1.0), fd) < 1e-6
        # without an explicit c the slab maximum is used
        np.testing.assert_allclose(hat_penalty_grad(w, r), penalty_grad(w, r, c=slab_scale(w)))


class TestNormalization:
    def test_definition(self):
        assert normalization_constant(cfg(amplitude=1.0), 10) == 0.1

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-5, 5)),
           st.sampled_from(["sine", "cosine", "hat"]), st.integers(1, 16), st.floats(1e-3, 10))
    def test_bounded_by_one(self, w, kind, f, a):
        r = cfg(kind, a, f)
        assert normalization_constant(r, w.size) * penalty(w, r) <= 1 + 1e-12

    @pytest.mark.parametrize("kind", ["sine", "hat"])
    def test_equals_one_at_peaks(self, kind):
        f = 5
        w = np.concatenate([(np.arange(-f, f) + 0.5) / f, [1 - 0.5 / f]])
        r = cfg(kind, 0.3, f)
        assert normalization_constant(r, w.size) * penalty(w, r, c=1.0) == pytest.approx(1.0, rel=1e-12)

    def test_zero_amplitude_warns(self):
        with pytest.warns(DegenerateAmplitudeWarning):
            assert normalization_constant(cfg(amplitude=0.0), 5) == 1.0


class TestModelPenalty:
    def test_on_lattice_model_is_zero(self):
        m = Model(mlp_spec(3, [4], 2), seed=1)
        for s in m.penalized_slabs():
            c = np.abs(s.tensor).max()
            s.tensor = (np.rint(s.tensor / c * 7) * c / 7).astype(np.float32)
        assert model_penalty(m, cfg("sine", 1.0, 7)).total < 1e-9

    def test_single_slab(self):
        m = Model(mlp_spec(3, [], 2), seed=2)
        r = cfg("sine", 0.5, 3)
        assert model_penalty(m, r).total == penalty(m.slab("dense0.weight"), r)

    def test_two_slabs_scaled_independently(self):
        m = Model(mlp_spec(3, [4], 2), seed=2)
        m.slab("dense2.weight").tensor *= 100
        r = cfg("hat", 0.5, 3)
        expected = 0.0
        for name in ("dense0.weight", "dense2.weight"):
            w = m.slab(name).tensor.astype(np.float64)
            u = w / np.abs(w).max()
            # the triangle wave equals twice the distance of f*u to the nearest integer
            expected += math.fsum((0.5 * 2 * np.abs(3 * u - np.rint(3 * u))).ravel())
        assert model_penalty(m, r).total == pytest.approx(expected, rel=1e-12)

    def test_no_eligible_slabs(self):
        m = Model({"input_shape": [3], "layers": [{"kind": "relu"}]})
        with pytest.warns(NoEligibleSlabsWarning):
            assert model_penalty(m, cfg()).empty


class TestConfig:
    @pytest.mark.parametrize("kw", [{"kind": "square"}, {"frequency": 0}, {"frequency": 1.5}, {"amplitude": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            RegularizerConfig(**kw)

    def test_zero_points(self):
        np.testing.assert_array_equal(zero_points("sine", 1), [-1, 0, 1])
        assert len(zero_points("hat", 7)) == 15
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert len(zero_points("cosine", 1)) == 2
