import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rramnet.crossbar import (
    AffineMap,
    CrossbarPair,
    DegenerateMapError,
    UnsupportedOperation,
    crossbar_transfer,
    decompose_weights,
    ideal_vmm,
    map_naive_linear,
    map_subweights,
    naive_layer,
    program_complex,
    readout_column,
    simulate_crossbar_inference,
    simulate_naive_inference,
    unmap_output,
)
from rramnet.device import ComplexDeviceModel, DeviceDomainError, SinhDeviceModel
from rramnet.nn import ComplexTransfer, MlpModel, SinhTransfer, forward

SINH = SinhDeviceModel()


def rel_err(got, want):
    return np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300)


class TestDecompose:
    def test_example(self):
        wp, wm = decompose_weights([[0.3, -0.2], [0.0, 0.5]])
        np.testing.assert_array_equal(wp, [[0.3, 0.0], [0.0, 0.5]])
        np.testing.assert_array_equal(wm, [[0.0, 0.2], [0.0, 0.0]])

    @given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                  elements=st.floats(-1e6, 1e6)))
    def test_properties(self, w):
        wp, wm = decompose_weights(w)
        assert np.all(wp >= 0) and np.all(wm >= 0)
        np.testing.assert_array_equal(wp - wm, w)
        assert np.all(wp * wm == 0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            decompose_weights([[np.nan]])


class TestMapping:
    def test_largest_subweight_hits_top(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(20, 30))
        pair = map_subweights(*decompose_weights(w), SINH)
        top = max(pair.g_plus.max(), pair.g_minus.max())
        assert top == pytest.approx(SINH.g_max, rel=1e-12)
        assert min(pair.g_plus.min(), pair.g_minus.min()) == pytest.approx(SINH.g_min)

    def test_shared_map_uses_global_max(self):
        # the negative array holds the largest magnitude; both arrays share its slope
        pair = map_subweights(np.array([[1.0]]), np.array([[4.0]]), SINH)
        assert pair.map.slope == pytest.approx((SINH.g_max - SINH.g_min) / 4.0)
        assert pair.g_plus[0, 0] == pytest.approx(SINH.g_min + 0.25 * (SINH.g_max - SINH.g_min))

    def test_all_zero_is_degenerate(self):
        with pytest.raises(DegenerateMapError):
            map_subweights(np.zeros((3, 3)), np.zeros((3, 3)), SINH)

    def test_states_read_only(self):
        pair = map_subweights(np.ones((2, 2)), np.zeros((2, 2)), SINH)
        with pytest.raises(ValueError):
            pair.g_plus[0, 0] = 1.0

    def test_affine_map_inverse(self):
        m = AffineMap(3.0, -2.0)
        x = np.linspace(-5, 5, 11)
        np.testing.assert_allclose(m.inverse(m(x)), x, rtol=0, atol=1e-13)
        with pytest.raises(DegenerateMapError):
            AffineMap(0.0, 1.0)

    def test_naive_linear_map(self):
        w = np.array([[-2.0, 0.0], [1.0, 2.0]])
        g, m = map_naive_linear(w, 1.0, 5.0)
        assert g.min() == pytest.approx(1.0) and g.max() == pytest.approx(5.0)
        np.testing.assert_allclose(m.inverse(g), w, atol=1e-12)
        with pytest.raises(DegenerateMapError, match="no spread"):
            map_naive_linear(np.full((2, 2), 0.7), 1.0, 5.0)


class TestReadout:
    def test_small_crossbar(self):
        dev = SinhDeviceModel(b=1.0)
        g_plus = np.array([[dev.g_max], [dev.g_min]])
        g_minus = np.full((2, 1), dev.g_min)
        pair = CrossbarPair(g_plus, g_minus, AffineMap(1.0, 0.0), dev)
        got = readout_column(pair, np.array([0.5, 1.0]))
        assert got[0] == pytest.approx((dev.g_max - dev.g_min) * math.sinh(0.5), rel=1e-12)

    def test_voltage_out_of_range_names_row(self):
        pair = map_subweights(np.ones((3, 2)), np.zeros((3, 2)), SINH)
        with pytest.raises(DeviceDomainError, match="row 2"):
            readout_column(pair, np.array([0.1, 0.2, 1.5]))

    def test_length_mismatch(self):
        pair = map_subweights(np.ones((3, 2)), np.zeros((3, 2)), SINH)
        with pytest.raises(ValueError):
            readout_column(pair, np.zeros(4))

    def test_complex_cannot_unmap(self):
        pair = program_complex(np.array([[0.05, -0.02]]), ComplexDeviceModel())
        with pytest.raises(UnsupportedOperation):
            unmap_output(pair, readout_column(pair, np.array([0.5])))

    def test_complex_readout_matches_transfer(self):
        # away from the state floor the programmed crossbar equals the transfer
        rng = np.random.default_rng(3)
        w = rng.choice([-1, 1], (6, 4)) * rng.uniform(0.01, 0.1, (6, 4))
        x = rng.uniform(0, 1, (5, 6))
        t = ComplexTransfer()
        pair = program_complex(w, t.model, floor=1e-12)
        np.testing.assert_allclose(t.gain * readout_column(pair, x), t(x, w), rtol=1e-9)

    def test_complex_ceiling(self):
        with pytest.raises(DeviceDomainError):
            program_complex(np.array([[0.16]]), ComplexDeviceModel())


class TestCrossbarTransfer:
    def test_round_trip_random_layers(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            n, m = rng.integers(1, 65, 2)
            w = rng.normal(size=(n, m))
            x = rng.uniform(0, 1, n)
            dev = SinhDeviceModel(b=rng.uniform(0.5, 6))
            want = np.sinh(dev.b * x) @ w
            worst = max(worst, rel_err(crossbar_transfer(w, dev, x), want))
        assert worst <= 1e-9

    def test_intercept_cancels(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(16, 8))
        x = rng.uniform(0, 1, (4, 16))
        pair = map_subweights(*decompose_weights(w), SINH)
        base = unmap_output(pair, readout_column(pair, x))
        for c in (0.0, 1e-5, 0.37 * SINH.g_min):
            shifted = pair.with_offset(c)
            got = unmap_output(shifted, readout_column(shifted, x))
            assert rel_err(got, base) <= 1e-9

    def test_naive_linear_limit(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(32, 12))
        x = rng.uniform(0, 1, (10, 32))
        got = naive_layer(w, SinhDeviceModel(b=1e-6), x)
        assert rel_err(got, ideal_vmm(x, w)) <= 1e-9

    def test_naive_exact_at_rail_voltages(self):
        rng = np.random.default_rng(8)
        w = rng.normal(size=(10, 5))
        x = rng.choice([0.0, 1.0], (7, 10))
        assert rel_err(naive_layer(w, SINH, x), x @ w) <= 1e-9

    def test_naive_compresses_mid_inputs(self):
        w = np.ones((1, 1))
        got = naive_layer(w, SINH, np.array([[0.5]]))
        assert got[0, 0] == pytest.approx(math.sinh(2) / math.sinh(4), rel=1e-12)
        assert got[0, 0] < 0.5

    def test_ideal_vmm_shape_check(self):
        with pytest.raises(ValueError):
            ideal_vmm(np.zeros(3), np.zeros((4, 2)))


class TestNetworkInference:
    def test_crossbar_matches_sinh_forward(self):
        rng = np.random.default_rng(9)
        dims = [12, 9, 5]
        dev = SinhDeviceModel(b=2.0)
        model = MlpModel(dims, [rng.normal(0, 0.2, (a, b)) for a, b in zip(dims, dims[1:])],
                         SinhTransfer(dev.b))
        x = rng.uniform(0, 1, (30, 12))
        want, _ = forward(model, x)
        assert rel_err(simulate_crossbar_inference(model, dev, x), want) <= 1e-9

    def test_naive_clips_inputs(self, caplog):
        model = MlpModel([2, 2], [np.eye(2)])
        with caplog.at_level("WARNING"):
            out = simulate_naive_inference(model, SINH, np.array([[1.5, 0.0]]))
        assert "clipping" in caplog.text
        assert out[0, 0] == pytest.approx(1.0)
