import numpy as np
import pytest
from helpers import brute_force_qttention, random_params
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import mannwhitneyu

from qcnn.layers import NeuronVariant, QuadraticParams
from qcnn.network import build_model
from qcnn.qttention import (
    Aggregation,
    GradMode,
    QttentionMap,
    _scatter_average,
    assemble_map,
    conventional_saliency,
    export_map,
    layer_qttention,
    layer_qttention_batch,
    layer_saliency,
    load_map,
    qtt_grad,
    raw_qtt_window,
    upsample_map,
)


def quad_params(w_r, w_g, w_b):
    """Full quadratic layer holding the given ``(C_out, C_in, K)`` weights."""
    w_r = np.asarray(w_r, dtype=np.float64)
    qp = QuadraticParams.zeros(*w_r.shape, NeuronVariant.QUADRATIC_BASE)
    qp.w_r.value[...] = w_r
    qp.w_g.value[...] = w_g
    qp.w_b.value[...] = w_b
    return qp


class TestRawWindow:
    def test_example(self):
        raw = raw_qtt_window([1, 2], w_r=[1, 1], w_g=[2, 0], w_b=[1, 1])
        np.testing.assert_array_equal(raw, [7, 2])

    def test_zero_cases(self):
        x = np.array([0.3, -1.2, 4.0])
        np.testing.assert_array_equal(raw_qtt_window(x, [1, 2, 3], np.zeros(3), np.zeros(3)), 0.0)
        np.testing.assert_array_equal(raw_qtt_window(np.zeros(3), [1, 2, 3], [4, 5, 6], [7, 8, 9]), 0.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            raw_qtt_window([1, 2, 3], [1, 1], [1, 1], [1, 1])


class TestGrad:
    def test_temporal_diff_edges(self):
        np.testing.assert_array_equal(qtt_grad([7.0, 2.0]), [5, 5])
        np.testing.assert_array_equal(qtt_grad([1.0, 4.0, 9.0, 16.0]), [3, 4, 6, 7])

    def test_constant_is_zero(self):
        np.testing.assert_array_equal(qtt_grad(np.full(6, 3.7)), 0.0)

    def test_exact_sum_derivative(self):
        got = qtt_grad(None, GradMode.EXACT_SUM_DERIVATIVE, w_r=[1, 1], w_g=[2, 0], w_b=[1, 1])
        np.testing.assert_array_equal(got, [3, 3])

    def test_exact_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        w_r, w_g, w_b, x = rng.normal(size=(4, 5))
        eps = 1e-6
        fd = [(raw_qtt_window(x + eps * e, w_r, w_g, w_b).sum()
               - raw_qtt_window(x - eps * e, w_r, w_g, w_b).sum()) / (2 * eps) for e in np.eye(5)]
        got = qtt_grad(None, "exact_sum_derivative", w_r=w_r, w_g=w_g, w_b=w_b)
        np.testing.assert_allclose(got, np.abs(fd), rtol=1e-6)

    def test_errors(self):
        with pytest.raises(ValueError):
            qtt_grad([1.0])
        with pytest.raises(ValueError):
            qtt_grad(None, GradMode.EXACT_SUM_DERIVATIVE, w_r=[1.0])


class TestAssemble:
    def test_overlap_average_by_hand(self):
        x = np.array([1.0, 3.0, 2.0])
        w_r, w_g, w_b = np.array([0.5, -1.0]), np.array([1.0, 2.0]), np.array([2.0, 0.5])
        m1 = np.abs(np.gradient(raw_qtt_window(x[:2], w_r, w_g, w_b)))
        m2 = np.abs(np.gradient(raw_qtt_window(x[1:], w_r, w_g, w_b)))
        qmap = assemble_map(x, quad_params(w_r[None, None], w_g, w_b))
        np.testing.assert_allclose(qmap.values, [m1[0], (m1[1] + m2[0]) / 2, m2[1]], rtol=1e-15)
        np.testing.assert_array_equal(qmap.coverage, [1, 2, 1])

    def test_stride_equal_kernel_concatenates(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=12)
        w_r, w_g, w_b = rng.normal(size=(3, 4))
        qmap = assemble_map(x, quad_params(w_r[None, None], w_g, w_b), stride=4)
        want = np.concatenate([np.abs(np.gradient(raw_qtt_window(x[i : i + 4], w_r, w_g, w_b)))
                               for i in (0, 4, 8)])
        np.testing.assert_allclose(qmap.values, want, rtol=1e-14)
        np.testing.assert_array_equal(qmap.coverage, 1)

    def test_uncovered_tail_is_zero_and_flagged(self):
        # L=7, K=3, stride=3: position 6 is never inside a window
        rng = np.random.default_rng(2)
        qmap = assemble_map(rng.normal(size=7), random_params(rng, 2, 1, 3), stride=3)
        assert qmap.coverage.tolist() == [1, 1, 1, 1, 1, 1, 0]
        assert qmap.values[6] == 0.0
        assert qmap.uncovered.tolist() == [False] * 6 + [True]

    def test_padding_positions_dropped(self):
        rng = np.random.default_rng(3)
        qmap = assemble_map(rng.normal(size=(2, 9)), random_params(rng, 3, 2, 3), stride=1, pad=1)
        assert len(qmap) == 9
        np.testing.assert_array_equal(qmap.coverage, [2, 3, 3, 3, 3, 3, 3, 3, 2])

    @pytest.mark.parametrize("agg", ["mean", "max"])
    def test_brute_force_oracle(self, agg):
        rng = np.random.default_rng(4)
        for _ in range(100):
            k = int(rng.integers(2, 5))
            stride, pad = int(rng.integers(1, k + 1)), int(rng.integers(0, 2))
            length = int(rng.integers(max(1, k - 2 * pad), 17))
            c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            x = rng.normal(size=(c_in, length))
            w = rng.normal(size=(3, c_out, c_in, k))
            qmap = assemble_map(x, quad_params(*w), stride, pad, agg)
            values, coverage = brute_force_qttention(x, *w, stride, pad, agg)
            np.testing.assert_array_equal(qmap.values, values)
            np.testing.assert_array_equal(qmap.coverage, coverage)

    def test_max_dominates_mean(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 16))
        qp = random_params(rng, 4, 3, 3)
        mean = assemble_map(x, qp, aggregation=Aggregation.MEAN_ABS_CHANNELS).values
        mx = assemble_map(x, qp, aggregation=Aggregation.MAX_ABS_CHANNELS).values
        assert np.all(mx >= mean)

    def test_exact_mode_is_input_independent(self):
        rng = np.random.default_rng(6)
        qp = random_params(rng, 2, 1, 4)
        a = assemble_map(rng.normal(size=16), qp, stride=4, grad_mode=GradMode.EXACT_SUM_DERIVATIVE)
        b = assemble_map(rng.normal(size=16), qp, stride=4, grad_mode=GradMode.EXACT_SUM_DERIVATIVE)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.grad_mode is GradMode.EXACT_SUM_DERIVATIVE

    def test_relinear_layer_attends_to_nothing(self):
        rng = np.random.default_rng(7)
        qp = QuadraticParams.zeros(4, 2, 5, NeuronVariant.QUADRATIC_BASE)
        qp.w_r.value[...] = rng.normal(size=qp.w_r.shape)
        qmap = assemble_map(rng.normal(size=(2, 30)), qp, stride=2, pad=2)
        np.testing.assert_array_equal(qmap.values, 0.0)

    def test_missing_groups_count_as_zero(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 12))
        ng = random_params(rng, 3, 2, 3, NeuronVariant.NO_G)
        full = quad_params(ng.w_r.value, 0.0, ng.w_b.value)
        np.testing.assert_array_equal(assemble_map(x, ng).values, assemble_map(x, full).values)
        no_power = random_params(rng, 3, 2, 3, NeuronVariant.NO_POWER)
        np.testing.assert_array_equal(assemble_map(x, no_power).values,
                                      assemble_map(x, quad_params(no_power.w_r.value, no_power.w_g.value, 0.0)).values)

    def test_conventional_layer_rejected(self):
        qp = QuadraticParams.zeros(2, 1, 3, NeuronVariant.CONVENTIONAL)
        with pytest.raises(ValueError, match="conventional_saliency"):
            assemble_map(np.ones(8), qp)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            assemble_map(np.ones((3, 8)), QuadraticParams.zeros(2, 2, 3, NeuronVariant.QUADRATIC_BASE))


class TestOverlapConservation:
    @given(st.integers(1, 16), st.integers(1, 4), st.integers(1, 4), st.integers(0, 1),
           st.floats(0.0, 10.0, allow_nan=False))
    @settings(max_examples=60, deadline=None)
    def test_constant_window_maps_stay_constant(self, length, k, stride, pad, c):
        stride = min(stride, k)
        if length + 2 * pad < k:
            return
        n_out = (length + 2 * pad - k) // stride + 1
        per = np.full((1, n_out, 1, 1, k), c)
        acc, coverage = _scatter_average(per, length, stride, pad)
        covered = coverage > 0
        np.testing.assert_allclose(acc[0, 0, 0][covered], c, rtol=1e-12)
        assert np.all(acc[0, 0, 0][~covered] == 0)


class TestProperties:
    @given(st.integers(0, 2**31 - 1), st.integers(1, 16), st.integers(1, 4), st.integers(0, 1))
    @settings(max_examples=80, deadline=None)
    def test_non_negative_and_oracle_exact(self, seed, length, k, pad):
        rng = np.random.default_rng(seed)
        if length + 2 * pad < k:
            return
        stride = int(rng.integers(1, k + 1))
        c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        x = rng.normal(size=(c_in, length)) * 3
        w = rng.normal(size=(3, c_out, c_in, k))
        if k == 1:
            with pytest.raises(ValueError):
                assemble_map(x, quad_params(*w), stride, pad)
            return
        qmap = assemble_map(x, quad_params(*w), stride, pad)
        assert np.all(qmap.values >= 0)
        np.testing.assert_array_equal(qmap.values, brute_force_qttention(x, *w, stride, pad)[0])


class TestConventionalSaliency:
    def test_constant_input_and_weight(self):
        qmap = conventional_saliency(np.full(20, 2.0), np.full(5, 0.3), 0.1, stride=2)
        np.testing.assert_array_equal(qmap.values, 0.0)

    def test_equals_quadratic_with_power_weight_only(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 25))
        w_r = rng.normal(size=(4, 3, 5))
        sal = conventional_saliency(x, w_r, np.zeros(4), stride=2, pad=1)
        qmap = assemble_map(x, quad_params(rng.normal(size=w_r.shape), 0.0, w_r), stride=2, pad=1)
        np.testing.assert_array_equal(sal.values, qmap.values)
        np.testing.assert_array_equal(sal.coverage, qmap.coverage)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            k = int(rng.integers(2, 5))
            stride, pad = int(rng.integers(1, k + 1)), int(rng.integers(0, 2))
            length = int(rng.integers(k, 17))
            x = rng.normal(size=(2, length))
            w_r = rng.normal(size=(3, 2, k))
            zero = np.zeros_like(w_r)
            want, _ = brute_force_qttention(x, zero, zero, w_r, stride, pad)
            np.testing.assert_array_equal(conventional_saliency(x, w_r, None, stride, pad).values, want)


class TestUpsample:
    def _map(self, values):
        values = np.asarray(values, dtype=np.float64)
        return QttentionMap(0, values, np.arange(1, values.size + 1))

    def test_midpoint(self):
        np.testing.assert_allclose(upsample_map(self._map([0, 1]), 3).values, [0, 0.5, 1])

    def test_identity(self):
        m = self._map([0.2, 0.9, 0.1, 0.4])
        up = upsample_map(m, 4)
        np.testing.assert_array_equal(up.values, m.values)
        np.testing.assert_array_equal(up.coverage, m.coverage)

    def test_coverage_from_nearest(self):
        up = upsample_map(self._map([0, 1, 2]), 7)
        np.testing.assert_array_equal(up.coverage, [1, 1, 2, 2, 2, 3, 3])

    def test_shrinking_rejected(self):
        with pytest.raises(ValueError):
            upsample_map(self._map([0, 1, 2]), 2)

    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=30), st.integers(0, 200))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_endpoints(self, vals, extra):
        m = self._map(np.sort(vals))
        up = upsample_map(m, len(vals) + extra).values
        assert up[0] == m.values[0] and up[-1] == m.values[-1]
        assert np.all(np.diff(up) >= 0)


class TestExport:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        m = QttentionMap(2, rng.random(50) * 7, rng.integers(0, 4, 50))
        again = load_map(export_map(m, tmp_path / "m.csv"))
        np.testing.assert_allclose(again.values, m.values, rtol=0, atol=1e-8)
        np.testing.assert_array_equal(again.coverage, m.coverage)
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "index,value,coverage"

    def test_bit_stable(self, tmp_path):
        m = QttentionMap(0, np.array([1 / 3, 2.0, 1e-12]), np.array([1, 2, 0]))
        a = export_map(m, tmp_path / "a.csv").read_bytes()
        b = export_map(load_map(tmp_path / "a.csv"), tmp_path / "b.csv").read_bytes()
        assert a == b
        assert "0.333333333" in a.decode()

    def test_empty_map_is_header_only(self, tmp_path):
        path = export_map(QttentionMap(0, np.zeros(0), np.zeros(0, dtype=np.int64)), tmp_path / "e.csv")
        assert path.read_text().splitlines() == ["index,value,coverage"]
        assert len(load_map(path)) == 0


def _perturbed_qcnn(seed=0):
    m = build_model("qcnn", seed=seed)
    rng = np.random.default_rng(seed)
    for _, qp in m.quadratic_params():
        for p in (qp.w_g, qp.w_b):
            if p is not None:
                p.value[...] = rng.normal(0, 0.05, qp.shape)
    return m


class TestLayerMaps:
    def test_lengths_follow_layer_input(self):
        m = _perturbed_qcnn()
        x = np.random.default_rng(0).normal(size=2048)
        assert len(layer_qttention(m, x, 0)) == 2048
        # conv0 yields 128 positions, the pool halves them
        assert len(layer_qttention(m, x, 1)) == 64
        assert len(layer_qttention(m, x, 2)) == 32

    def test_batch_matches_single(self):
        m = _perturbed_qcnn(1)
        xs = np.random.default_rng(1).normal(size=(3, 2048))
        values, coverage = layer_qttention_batch(m, xs, 1, batch_size=2)
        for i in range(3):
            single = layer_qttention(m, xs[i], 1)
            np.testing.assert_array_equal(values[i], single.values)
            np.testing.assert_array_equal(coverage, single.coverage)

    def test_burst_is_localized(self):
        m = _perturbed_qcnn(2)
        rng = np.random.default_rng(2)
        for start in (300, 1000, 1700):
            x = 0.01 * rng.normal(size=2048)
            t = np.arange(40)
            x[start : start + 40] += 5 * np.exp(-t / 10) * np.sin(2 * np.pi * t / 6)
            peak = int(np.argmax(layer_qttention(m, x, 0).values))
            # first kernel spans 64 samples
            assert start - 63 <= peak < start + 40 + 63

    def test_relinear_model_map_is_zero(self):
        m = build_model("qcnn", seed=3)
        qmap = layer_qttention(m, np.random.default_rng(3).normal(size=2048), 0)
        np.testing.assert_array_equal(qmap.values, 0.0)

    def test_wdcnn_has_saliency_but_no_qttention(self):
        m = build_model("wdcnn", seed=4)
        x = np.random.default_rng(4).normal(size=2048)
        with pytest.raises(ValueError):
            layer_qttention(m, x, 0)
        sal = layer_saliency(m, x, 0)
        assert len(sal) == 2048 and np.all(sal.values >= 0) and sal.values.max() > 0

    def test_layer_index_range(self):
        with pytest.raises(IndexError):
            layer_qttention(build_model("qcnn"), np.zeros(2048), 6)


class TestTrainedContrast:
    def test_fault_maps_are_peakier(self, trained_qcnn):
        model, noisy = trained_qcnn.model, trained_qcnn.noisy
        te = noisy.test
        healthy = te.windows[te.labels == 0][:40]
        fault = np.concatenate([te.windows[te.labels == c][:5] for c in range(1, te.num_classes)])
        # windows are peak-normalized, so compare how concentrated the maps are
        h = layer_qttention_batch(model, healthy, 0)[0]
        f = layer_qttention_batch(model, fault, 0)[0]
        h_crest, f_crest = h.max(axis=1) / h.mean(axis=1), f.max(axis=1) / f.mean(axis=1)
        assert f_crest.mean() > h_crest.mean()
        assert mannwhitneyu(f_crest, h_crest, alternative="greater").pvalue < 0.01
