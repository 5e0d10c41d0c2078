"""Forward-only inference engine for small layer stacks.

Tensors are numpy arrays of shape (height, width, channels), float32,
row-major. Dense layers consume the tensor flattened in (row, column,
channel) order; that order is a fixed contract shared with the model file
format and the dense-to-convolution conversion.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

ACTIVATIONS = ("tanh", "sigmoid", "relu")

# Default feature stack: 3x3 convolutions without padding, two of them
# strided, filter counts 32/64/128. Valid (pad-0) convolutions keep every
# output cell a pure function of its input window, which is what makes the
# sliding-window classifier and the fully convolutional pass agree exactly.
DEFAULT_PATCH_SIZE = 32
DEFAULT_FEATURE_PLAN = (
    (3, 32, 1),
    (3, 32, 2),
    (3, 64, 1),
    (3, 64, 2),
    (3, 128, 1),
)


class ShapeError(ValueError):
    """Raised when a layer cannot consume its input; carries the layer index."""

    def __init__(self, layer_index, message):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


@dataclass
class ConvLayer:
    weights: np.ndarray  # (kh, kw, in_ch, out_ch) float32
    bias: np.ndarray     # (out_ch,) float32
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 4:
            raise ValueError("convolution weights must be (kh, kw, in, out)")
        if self.bias.shape != (self.weights.shape[3],):
            raise ValueError("bias length must equal output channels")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_dim, out_dim) float32
    bias: np.ndarray     # (out_dim,) float32

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("dense weights must be (in, out) with matching bias")


@dataclass
class Activation:
    kind: str

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")


@dataclass
class Network:
    layers: list
    patch_size: int = DEFAULT_PATCH_SIZE
    name: str = "net"

    @property
    def total_stride(self):
        s = 1
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                s *= layer.stride
        return s


def stable_sigmoid(x):
    """Sigmoid that saturates to exact 0/1 instead of overflowing exp."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(kind, x):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "tanh":
        return np.tanh(x)
    return stable_sigmoid(x)


def conv_output_hw(h, w, layer):
    kh, kw = layer.weights.shape[0], layer.weights.shape[1]
    oh = (h + 2 * layer.padding - kh) // layer.stride + 1
    ow = (w + 2 * layer.padding - kw) // layer.stride + 1
    return oh, ow


def output_shape(net, input_shape):
    """Predict the (h, w, c) output shape without running the network."""
    h, w, c = input_shape
    for i, layer in enumerate(net.layers):
        if isinstance(layer, ConvLayer):
            if layer.weights.shape[2] != c:
                raise ShapeError(i, f"expects {layer.weights.shape[2]} channels, got {c}")
            h, w = conv_output_hw(h, w, layer)
            if h < 1 or w < 1:
                raise ShapeError(i, "input too small for kernel")
            c = layer.weights.shape[3]
        elif isinstance(layer, DenseLayer):
            if h * w * c != layer.weights.shape[0]:
                raise ShapeError(i, f"dense expects {layer.weights.shape[0]} inputs, got {h * w * c}")
            h, w, c = 1, 1, layer.weights.shape[1]
    return h, w, c


def forward(net, x):
    """Run the layer stack on a (h, w, c) float32 tensor."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ValueError("input must be rank-3 (h, w, c)")
    for i, layer in enumerate(net.layers):
        if isinstance(layer, ConvLayer):
            if layer.weights.shape[2] != x.shape[2]:
                raise ShapeError(i, f"expects {layer.weights.shape[2]} channels, got {x.shape[2]}")
            oh, ow = conv_output_hw(x.shape[0], x.shape[1], layer)
            if oh < 1 or ow < 1:
                raise ShapeError(i, f"input {x.shape[:2]} too small for kernel")
            x = kernels.conv2d(x, layer.weights, layer.bias, layer.stride, layer.padding)
        elif isinstance(layer, DenseLayer):
            flat = x.reshape(-1)  # (row, column, channel) order
            if flat.shape[0] != layer.weights.shape[0]:
                raise ShapeError(i, f"dense expects {layer.weights.shape[0]} inputs, got {flat.shape[0]}")
            x = (flat @ layer.weights + layer.bias).reshape(1, 1, -1)
        elif isinstance(layer, Activation):
            x = apply_activation(layer.kind, x)
        else:
            raise ShapeError(i, f"unknown layer type {type(layer).__name__}")
    return x


def dense_to_conv(net, feature_block):
    """Rewrite dense layers as convolutions so the stack slides spatially.

    feature_block is the (K, K, C) shape one patch produces just before the
    first dense layer. That dense layer becomes a KxK convolution whose
    kernel un-flattens the weight matrix in the forward flattening order;
    any later dense layer becomes a 1x1 convolution.
    """
    k_h, k_w, c_f = feature_block
    layers = []
    block = feature_block
    seen_dense = False
    for i, layer in enumerate(net.layers):
        if isinstance(layer, DenseLayer):
            if not seen_dense:
                if layer.weights.shape[0] != k_h * k_w * c_f:
                    raise ShapeError(
                        i, f"dense takes {layer.weights.shape[0]} inputs, "
                           f"feature block {block} provides {k_h * k_w * c_f}")
                kernel = layer.weights.reshape(k_h, k_w, c_f, layer.weights.shape[1])
                layers.append(ConvLayer(kernel, layer.bias, stride=1, padding=0))
                seen_dense = True
            else:
                kernel = layer.weights.reshape(1, 1, *layer.weights.shape)
                layers.append(ConvLayer(kernel, layer.bias, stride=1, padding=0))
        else:
            layers.append(layer)
    return Network(layers, patch_size=net.patch_size, name=net.name)


def fuse(feature_net, rf_head):
    """Append a compiled forest head to a feature stack as convolutions.

    The head's dense form is converted with dense_to_conv against the
    feature block the extractor produces for one patch, yielding a network
    that maps any image to a per-position class-probability map.
    """
    in_ch = next((l.weights.shape[2] for l in feature_net.layers
                  if isinstance(l, ConvLayer)), 3)
    block = output_shape(feature_net, (feature_net.patch_size, feature_net.patch_size, in_ch))
    k_h, k_w, c_f = block
    if rf_head.input_dim != k_h * k_w * c_f:
        raise ShapeError(
            len(feature_net.layers),
            f"head takes {rf_head.input_dim} features, extractor emits "
            f"{k_h}x{k_w}x{c_f} = {k_h * k_w * c_f} per patch")
    head_net = Network(rf_head.dense_layers(), patch_size=feature_net.patch_size, name="head")
    converted = dense_to_conv(head_net, block)
    return Network(feature_net.layers + converted.layers,
                   patch_size=feature_net.patch_size, name="fused")


def resize_bilinear(image, out_h, out_w):
    """Bilinear resample with half-pixel-aligned sample centers."""
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[0], image.shape[1]
    if (out_h, out_w) == (h, w):
        return image.copy()
    sy = h / out_h
    sx = w / out_w
    src_y = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0, h - 1)
    src_x = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0, w - 1)
    y0 = np.floor(src_y).astype(np.intp)
    x0 = np.floor(src_x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0).astype(np.float32)[:, None, None]
    fx = (src_x - x0).astype(np.float32)[None, :, None]
    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bot = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def default_feature_network(rng=None, in_channels=3, patch_size=DEFAULT_PATCH_SIZE):
    """Build the default feature extractor with seeded random weights.

    Weights are placeholders to be replaced by real trained values loaded
    from a model file; every equivalence property holds for any weights.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    layers = []
    c_in = in_channels
    for k, c_out, stride in DEFAULT_FEATURE_PLAN:
        scale = 1.0 / np.sqrt(k * k * c_in)
        w = rng.normal(0.0, scale, size=(k, k, c_in, c_out)).astype(np.float32)
        b = rng.normal(0.0, 0.01, size=c_out).astype(np.float32)
        layers.append(ConvLayer(w, b, stride=stride, padding=0))
        layers.append(Activation("relu"))
        c_in = c_out
    return Network(layers, patch_size=patch_size, name="feature")
