"""Layers with hand-written forward and backward passes.

Each layer caches what its backward pass needs during ``forward``. Parameter
gradients land in ``layer.grads`` under the same names as ``layer.params``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def output_shape(self, input_shape):
        return input_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


def _fan_in_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        self.params["weight"] = _fan_in_uniform(rng, (in_features, out_features), in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self._x = None

    def output_shape(self, input_shape):
        return (self.params["weight"].shape[1],)

    def forward(self, x):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] = self._x.T @ grad
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"].T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._mask, grad, 0).astype(grad.dtype, copy=False)


class Tanh(Layer):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad):
        return grad * (1 - self._y * self._y)


class Identity(Layer):
    def forward(self, x):
        return x

    def backward(self, grad):
        return grad


ACTIVATIONS = {"relu": ReLU, "tanh": Tanh, "identity": Identity}


class Flatten(Layer):
    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Conv2D(Layer):
    """2-D convolution over NCHW input using an im2col matmul."""

    def __init__(self, in_channels, out_channels, kernel, stride, rng, padding=None, dtype=np.float32):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = in_channels * kernel * kernel
        self.params["weight"] = _fan_in_uniform(
            rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype
        )
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def output_shape(self, input_shape):
        c, h, w = input_shape
        k, s, p = self.kernel, self.stride, self.padding
        return (self.params["weight"].shape[0], (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def forward(self, x):
        k, s, p = self.kernel, self.stride, self.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        self._padded_shape = x.shape
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        m, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(m * ho * wo, c * k * k)
        self._cols = cols
        self._out_hw = (ho, wo)
        weight = self.params["weight"]
        out = cols @ weight.reshape(weight.shape[0], -1).T + self.params["bias"]
        return out.reshape(m, ho, wo, -1).transpose(0, 3, 1, 2)

    def backward(self, grad):
        k, s, p = self.kernel, self.stride, self.padding
        weight = self.params["weight"]
        out_c = weight.shape[0]
        ho, wo = self._out_hw
        m, c = self._padded_shape[:2]
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, out_c)
        self.grads["weight"] = (g2.T @ self._cols).reshape(weight.shape)
        self.grads["bias"] = g2.sum(axis=0)
        dcols = (g2 @ weight.reshape(out_c, -1)).reshape(m, ho, wo, c, k, k)
        dx = np.zeros(self._padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return dx


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (c, h // self.size, w // self.size)

    def forward(self, x):
        q = self.size
        m, c, h, w = x.shape
        ho, wo = h // q, w // q
        self._in_shape = x.shape
        xc = x[:, :, : ho * q, : wo * q]
        win = xc.reshape(m, c, ho, q, wo, q).transpose(0, 1, 2, 4, 3, 5).reshape(m, c, ho, wo, q * q)
        self._arg = win.argmax(axis=-1)
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        q = self.size
        m, c, h, w = self._in_shape
        ho, wo = grad.shape[2:]
        win = np.zeros((m, c, ho, wo, q * q), dtype=grad.dtype)
        np.put_along_axis(win, self._arg[..., None], grad[..., None], axis=-1)
        dx = np.zeros(self._in_shape, dtype=grad.dtype)
        dx[:, :, : ho * q, : wo * q] = (
            win.reshape(m, c, ho, wo, q, q).transpose(0, 1, 2, 4, 3, 5).reshape(m, c, ho * q, wo * q)
        )
        return dx
