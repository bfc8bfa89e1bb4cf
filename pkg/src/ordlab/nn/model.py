"""Model specifications and the sequential network that executes them."""

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeError, StateError
from .layers import ACTIVATIONS, Conv2D, Dense, Flatten, MaxPool2D, ReLU

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ConvBlock:
    channels: int
    kernel: int = 3
    stride: int = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``kind="mlp"`` uses ``widths`` as hidden layer widths (possibly empty, giving
    a single linear layer). ``kind="conv"`` stacks ``conv_blocks`` (conv, ReLU,
    optional 2x2 max-pool), then an optional hidden dense layer of
    ``classifier_width`` units, then the output layer.
    """

    kind: str
    input_shape: tuple
    num_classes: int
    widths: tuple = ()
    activation: str = "relu"
    conv_blocks: tuple = ()
    pool: bool = True
    classifier_width: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind not in ("mlp", "conv"):
            raise ShapeError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 1:
            raise ShapeError("num_classes must be positive")
        if self.kind == "conv" and not self.conv_blocks:
            raise ShapeError("conv model needs at least one conv block")
        if self.kind == "conv" and len(self.input_shape) != 3:
            raise ShapeError("conv model needs a (channels, height, width) input shape")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.dtype not in DTYPES:
            raise ShapeError(f"unknown dtype {self.dtype!r}")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        blocks = tuple(b if isinstance(b, ConvBlock) else ConvBlock(**b) for b in self.conv_blocks)
        object.__setattr__(self, "conv_blocks", blocks)

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["widths"] = list(self.widths)
        d["conv_blocks"] = [asdict(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["widths"] = tuple(d.get("widths", ()))
        d["conv_blocks"] = tuple(ConvBlock(**b) for b in d.get("conv_blocks", ()))
        return cls(**d)


class Model:
    """A sequential network with manual reverse-mode gradients.

    ``backward`` is only valid directly after a ``forward`` on the current
    parameter values; any parameter mutation through :meth:`bump_version`
    invalidates the cached activations.
    """

    def __init__(self, spec, layers):
        self.spec = spec
        self.layers = layers
        self.version = 0
        self._forward_version = None

    @property
    def dtype(self):
        return DTYPES[self.spec.dtype]

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                out.append((f"{i}.{name}", layer.params[name]))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def gradients(self):
        grads = []
        for layer in self.layers:
            for name in sorted(layer.params):
                if name not in layer.grads:
                    raise StateError("gradients requested before backward")
                grads.append(layer.grads[name])
        return grads

    def bump_version(self):
        self.version += 1
        self._forward_version = None

    def set_parameters(self, values):
        params = self.parameters()
        if len(values) != len(params):
            raise ShapeError(f"expected {len(params)} parameter tensors, got {len(values)}")
        for dst, src in zip(params, values):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape {np.shape(src)} does not match {dst.shape}")
            dst[...] = src
        self.bump_version()

    def forward(self, x):
        x = np.asarray(x)
        if x.ndim != len(self.spec.input_shape) + 1 or x.shape[1:] != self.spec.input_shape or x.shape[0] < 1:
            raise ShapeError(
                f"batch shape {x.shape} does not match model input (m, {', '.join(map(str, self.spec.input_shape))})"
            )
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x)
        self._forward_version = self.version
        return x

    def backward(self, grad_logits):
        """Propagate ``dL/dlogits``; fills layer grads and returns ``dL/dinput``."""
        if self._forward_version is None or self._forward_version != self.version:
            raise StateError("backward called without a forward pass on the current parameters")
        g = np.asarray(grad_logits, dtype=self.dtype)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self._forward_version = None
        return g

    def clone(self):
        return copy.deepcopy(self)

    def zero_(self):
        for p in self.parameters():
            p[...] = 0
        self.bump_version()


def build_model(spec, rng):
    """Instantiate ``spec`` with weights drawn from ``rng`` and zero biases."""
    dtype = DTYPES[spec.dtype]
    layers = []
    shape = spec.input_shape
    if spec.kind == "mlp":
        if len(shape) != 1:
            layers.append(Flatten())
            shape = layers[-1].output_shape(shape)
        for width in spec.widths:
            layers.append(Dense(shape[0], width, rng, dtype))
            layers.append(ACTIVATIONS[spec.activation]())
            shape = (width,)
        layers.append(Dense(shape[0], spec.num_classes, rng, dtype))
    else:
        for block in spec.conv_blocks:
            conv = Conv2D(shape[0], block.channels, block.kernel, block.stride, rng, dtype=dtype)
            layers.append(conv)
            shape = conv.output_shape(shape)
            layers.append(ReLU())
            if spec.pool and shape[1] >= 2 and shape[2] >= 2:
                layers.append(MaxPool2D(2))
                shape = layers[-1].output_shape(shape)
        layers.append(Flatten())
        shape = layers[-1].output_shape(shape)
        if spec.classifier_width:
            layers.append(Dense(shape[0], spec.classifier_width, rng, dtype))
            layers.append(ReLU())
            shape = (spec.classifier_width,)
        layers.append(Dense(shape[0], spec.num_classes, rng, dtype))
    return Model(spec, layers)


def l2_norm(parameters):
    """Euclidean norm of all parameter entries concatenated (accumulated in float64)."""
    total = 0.0
    for p in parameters:
        flat = np.asarray(p, dtype=np.float64).ravel()
        total += float(np.dot(flat, flat))
    return float(np.sqrt(total))
