import numpy as np
import pytest

from forest2fcn import kernels
from forest2fcn.convnet import (
    Activation,
    ConvLayer,
    DenseLayer,
    Network,
    ShapeError,
    default_feature_network,
    dense_to_conv,
    forward,
    fuse,
    output_shape,
    resize_bilinear,
)
from forest2fcn.forest import TrainConfig, train_forest
from forest2fcn.netmap import MapConstants, map_forest


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    previous = kernels.backend_name()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def conv_oracle(x, w, b, stride, pad):
    """Independent direct-summation convolution (quadruple loop, float64)."""
    h, iw, ic = x.shape
    kh, kw, _, oc = w.shape
    xp = np.zeros((h + 2 * pad, iw + 2 * pad, ic))
    xp[pad:pad + h, pad:pad + iw] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    out = np.zeros((oh, ow, oc))
    for oy in range(oh):
        for ox in range(ow):
            for co in range(oc):
                acc = float(b[co])
                for ky in range(kh):
                    for kx in range(kw):
                        for ci in range(ic):
                            acc += float(xp[oy * stride + ky, ox * stride + kx, ci]) * float(w[ky, kx, ci, co])
                out[oy, ox, co] = acc
    return out


class TestForward:
    def test_identity_1x1_conv(self, backend):
        eye = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
        net = Network([ConvLayer(eye, np.zeros(3))])
        x = np.random.default_rng(0).uniform(size=(5, 4, 3)).astype(np.float32)
        np.testing.assert_array_equal(forward(net, x), x)

    def test_all_ones_3x3_sums_to_nine(self, backend):
        net = Network([ConvLayer(np.ones((3, 3, 1, 1)), np.zeros(1))])
        out = forward(net, np.ones((3, 3, 1)))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9.0

    def test_random_net_against_direct_summation_oracle(self, backend):
        rng = np.random.default_rng(5)
        specs = [(3, 1, 1, 3, 8), (3, 2, 0, 8, 8), (1, 1, 0, 8, 4),
                 (5, 1, 2, 4, 6), (3, 1, 1, 6, 2)]
        layers = []
        params = []
        for k, s, p, ci, co in specs:
            # Fan-in scaling keeps activations O(1); the tolerance below is
            # a float32-vs-float64 accumulation bound for unit-scale values.
            w = rng.normal(0, 1 / np.sqrt(k * k * ci), size=(k, k, ci, co)).astype(np.float32)
            b = rng.normal(0, 0.1, size=co).astype(np.float32)
            layers.append(ConvLayer(w, b, stride=s, padding=p))
            params.append((w, b, s, p))
        net = Network(layers)
        x = rng.normal(size=(12, 10, 3)).astype(np.float32)
        got = forward(net, x)
        ref = x.astype(np.float64)
        for w, b, s, p in params:
            ref = conv_oracle(ref, w, b, s, p)
        assert np.abs(got - ref).max() < 1e-5

    def test_activations(self, backend):
        x = np.array([[[-2.0, 0.0, 3.0]]], dtype=np.float32)
        relu = forward(Network([Activation("relu")]), x)
        np.testing.assert_array_equal(relu, [[[0.0, 0.0, 3.0]]])
        tanh = forward(Network([Activation("tanh")]), x)
        np.testing.assert_allclose(tanh, np.tanh(x), rtol=1e-6)
        sig = forward(Network([Activation("sigmoid")]), x)
        np.testing.assert_allclose(sig, 1 / (1 + np.exp(-x.astype(np.float64))), rtol=1e-6)

    def test_sigmoid_saturates_without_overflow(self, backend):
        x = np.array([[[-50000.0, 50000.0]]], dtype=np.float32)
        out = forward(Network([Activation("sigmoid")]), x)
        np.testing.assert_array_equal(out, [[[0.0, 1.0]]])

    def test_shape_error_reports_layer_index(self, backend):
        net = Network([
            ConvLayer(np.ones((3, 3, 3, 4), dtype=np.float32), np.zeros(4)),
            ConvLayer(np.ones((3, 3, 8, 4), dtype=np.float32), np.zeros(4)),
        ])
        with pytest.raises(ShapeError) as err:
            forward(net, np.ones((8, 8, 3), dtype=np.float32))
        assert err.value.layer_index == 1

    def test_shape_algebra_predicts_observed_shapes(self, backend):
        rng = np.random.default_rng(77)
        for _ in range(100):
            c_in = int(rng.integers(1, 4))
            h = int(rng.integers(12, 40))
            w = int(rng.integers(12, 40))
            layers = []
            c = c_in
            for _ in range(int(rng.integers(1, 4))):
                k = int(rng.choice([1, 3, 5]))
                s = int(rng.integers(1, 3))
                p = int(rng.integers(0, 2))
                co = int(rng.integers(1, 6))
                layers.append(ConvLayer(rng.normal(size=(k, k, c, co)).astype(np.float32),
                                        np.zeros(co), stride=s, padding=p))
                layers.append(Activation("relu"))
                c = co
            net = Network(layers)
            try:
                predicted = output_shape(net, (h, w, c_in))
            except ShapeError:
                continue
            assert forward(net, rng.normal(size=(h, w, c_in)).astype(np.float32)).shape == predicted


class TestDenseToConv:
    def test_k1_dense_becomes_identical_1x1_conv(self, backend):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(5, 3)).astype(np.float32)
        b = rng.normal(size=3).astype(np.float32)
        net = Network([DenseLayer(w, b)])
        conv = dense_to_conv(net, (1, 1, 5))
        layer = conv.layers[0]
        assert isinstance(layer, ConvLayer)
        np.testing.assert_array_equal(layer.weights.reshape(5, 3), w)
        x = rng.normal(size=(1, 1, 5)).astype(np.float32)
        np.testing.assert_allclose(forward(conv, x), forward(net, x), atol=1e-6)

    def test_converted_head_equals_dense_on_single_block(self, backend):
        rng = np.random.default_rng(3)
        K, cf = 4, 6
        d = K * K * cf
        head = Network([
            DenseLayer(rng.normal(size=(d, 10)).astype(np.float32), rng.normal(size=10).astype(np.float32)),
            Activation("tanh"),
            DenseLayer(rng.normal(size=(10, 7)).astype(np.float32), rng.normal(size=7).astype(np.float32)),
            Activation("sigmoid"),
            DenseLayer(rng.normal(size=(7, 3)).astype(np.float32), rng.normal(size=3).astype(np.float32)),
        ])
        conv = dense_to_conv(head, (K, K, cf))
        block = rng.normal(size=(K, K, cf)).astype(np.float32)
        np.testing.assert_allclose(forward(conv, block).reshape(-1),
                                   forward(head, block).reshape(-1), atol=1e-5)

    def test_converted_head_slides_like_brute_force_windows(self, backend):
        rng = np.random.default_rng(4)
        K, cf = 3, 4
        d = K * K * cf
        head = Network([
            DenseLayer(rng.normal(size=(d, 6)).astype(np.float32), rng.normal(size=6).astype(np.float32)),
            Activation("relu"),
            DenseLayer(rng.normal(size=(6, 2)).astype(np.float32), rng.normal(size=2).astype(np.float32)),
        ])
        conv = dense_to_conv(head, (K, K, cf))
        fmap = rng.normal(size=(K + 4, K + 4, cf)).astype(np.float32)
        out = forward(conv, fmap)
        assert out.shape == (5, 5, 2)
        for i in range(5):
            for j in range(5):
                window = fmap[i:i + K, j:j + K]
                expect = forward(head, window).reshape(-1)
                np.testing.assert_allclose(out[i, j], expect, atol=1e-5)

    def test_incompatible_block_rejected(self, backend):
        net = Network([DenseLayer(np.zeros((10, 2), dtype=np.float32), np.zeros(2))])
        with pytest.raises(ShapeError):
            dense_to_conv(net, (2, 2, 3))

    def test_compiled_head_conversion_matches_direct_evaluation(self, backend):
        rng = np.random.default_rng(5)
        K, cf = 2, 3
        d = K * K * cf
        X = rng.uniform(size=(150, d))
        y = rng.integers(0, 3, size=150)
        f = train_forest(X, y, TrainConfig(n_trees=3, max_depth=4, rng_seed=1))
        rf = map_forest(f, MapConstants(c01=1e3, c12=1e3))
        head = Network(rf.dense_layers())
        conv = dense_to_conv(head, (K, K, cf))
        block = rng.uniform(size=(K, K, cf)).astype(np.float32)
        got = forward(conv, block).reshape(-1)
        expect = rf.forward(block.reshape(-1).astype(np.float64))
        np.testing.assert_allclose(got, expect, atol=1e-6)


class TestFuse:
    def test_single_patch_matches_feature_plus_forest(self, backend):
        rng = np.random.default_rng(6)
        feature = default_feature_network(rng)
        block = output_shape(feature, (32, 32, 3))
        d = block[0] * block[1] * block[2]
        X = rng.uniform(size=(80, d))
        y = rng.integers(0, 4, size=80)
        f = train_forest(X, y, TrainConfig(n_trees=2, max_depth=4, rng_seed=2))
        rf = map_forest(f)
        fused = fuse(feature, rf)
        patch = rng.uniform(size=(32, 32, 3)).astype(np.float32)
        out = forward(fused, patch)
        assert out.shape == (1, 1, 4)
        feats = forward(feature, patch).reshape(-1).astype(np.float64)
        expect = rf.forward(feats)
        np.testing.assert_allclose(out.reshape(-1), expect, atol=1e-4)

    def test_fused_matches_patchwise_loop(self, backend):
        rng = np.random.default_rng(7)
        feature = default_feature_network(rng)
        block = output_shape(feature, (32, 32, 3))
        d = block[0] * block[1] * block[2]
        X = rng.uniform(size=(60, d))
        y = rng.integers(0, 3, size=60)
        f = train_forest(X, y, TrainConfig(n_trees=2, max_depth=3, rng_seed=3))
        fused = fuse(feature, map_forest(f))
        image = rng.uniform(size=(64, 64, 3)).astype(np.float32)
        maps = forward(fused, image)
        stride = fused.total_stride
        oh, ow, _ = maps.shape
        assert (oh, ow) == ((64 - 32) // stride + 1, (64 - 32) // stride + 1)
        for i in range(oh):
            for j in range(ow):
                patch = image[stride * i:stride * i + 32, stride * j:stride * j + 32]
                cell = forward(fused, patch).reshape(-1)
                np.testing.assert_allclose(maps[i, j], cell, atol=1e-4)

    def test_wrong_channel_count_rejected(self, backend):
        rng = np.random.default_rng(8)
        feature = default_feature_network(rng)
        X = rng.uniform(size=(40, 10))
        y = rng.integers(0, 2, size=40)
        f = train_forest(X, y, TrainConfig(n_trees=1, max_depth=2, rng_seed=4))
        with pytest.raises(ShapeError):
            fuse(feature, map_forest(f))


class TestResize:
    def test_same_size_is_identity(self):
        img = np.random.default_rng(0).uniform(size=(7, 9, 3)).astype(np.float32)
        np.testing.assert_array_equal(resize_bilinear(img, 7, 9), img)

    def test_constant_image_stays_constant(self):
        img = np.full((10, 12, 3), 0.4, dtype=np.float32)
        out = resize_bilinear(img, 6, 8)
        np.testing.assert_allclose(out, 0.4, atol=1e-6)

    def test_downscale_by_two_averages_blocks(self):
        img = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
        out = resize_bilinear(img, 2, 2)
        expect = np.array([[[2.5], [4.5]], [[10.5], [12.5]]])
        np.testing.assert_allclose(out, expect, atol=1e-5)
