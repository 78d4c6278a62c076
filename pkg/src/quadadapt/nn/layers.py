"""Dense and 1-D convolution layers with hand-written reverse mode.

Every layer caches what it needs during ``forward`` and consumes it in
``backward``, which accumulates parameter gradients into ``self.grads`` and
returns the gradient with respect to the input. Calling ``backward``
without a preceding ``forward`` raises.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ContractError(RuntimeError):
    pass


class Layer:
    params: list
    grads: list

    def __init__(self):
        self.params, self.grads = [], []
        self._cache = None

    def zero_grad(self):
        for g in self.grads:
            g[...] = 0.0

    def _pop(self):
        if self._cache is None:
            raise ContractError(f"{type(self).__name__}.backward called without forward")
        c, self._cache = self._cache, None
        return c


class Linear(Layer):
    """``y = x W + b`` over the last axis; any leading axes are batch axes."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, scale: float = 1.0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = scale / np.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    @classmethod
    def identity(cls, n: int) -> "Linear":
        layer = cls(n, n)
        layer.W[...] = np.eye(n)
        return layer

    def forward(self, x):
        if x.shape[-1] != self.W.shape[0]:
            raise ContractError(f"expected last dim {self.W.shape[0]}, got {x.shape[-1]}")
        self._cache = x
        return x @ self.W + self.b

    def backward(self, g):
        x = self._pop()
        x2 = x.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        self.grads[0] += x2.T @ g2
        self.grads[1] += g2.sum(0)
        return g @ self.W.T


class Tanh(Layer):
    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, g):
        y = self._pop()
        return g * (1.0 - y * y)


class ReLU(Layer):
    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, g):
        return g * self._pop()


class Sigmoid(Layer):
    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, g):
        y = self._pop()
        return g * y * (1.0 - y)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {"tanh": Tanh, "relu": ReLU, "sigmoid": Sigmoid}


def conv_out_len(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


class Conv1d(Layer):
    """Valid 1-D convolution on ``(batch, channels, time)`` inputs."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(c_in * kernel)
        self.kernel, self.stride = kernel, stride
        self.W = rng.uniform(-bound, bound, size=(c_out, c_in, kernel))
        self.b = np.zeros(c_out)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def _windows(self, x):
        # (B, C, L_out, K)
        return sliding_window_view(x, self.kernel, axis=2)[:, :, :: self.stride, :]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.W.shape[1]:
            raise ContractError(f"expected (batch, {self.W.shape[1]}, time), got {x.shape}")
        if x.shape[2] < self.kernel:
            raise ContractError("input shorter than kernel")
        cols = self._windows(x)
        self._cache = (x.shape, cols)
        return np.einsum("bclk,ock->bol", cols, self.W, optimize=True) + self.b[None, :, None]

    def backward(self, g):
        shape, cols = self._pop()
        self.grads[0] += np.einsum("bol,bclk->ock", g, cols, optimize=True)
        self.grads[1] += g.sum(axis=(0, 2))
        dcols = np.einsum("bol,ock->bclk", g, self.W, optimize=True)
        dx = np.zeros(shape)
        L_out = g.shape[2]
        span = self.stride * (L_out - 1) + 1
        for k in range(self.kernel):
            dx[:, :, k : k + span : self.stride] += dcols[:, :, :, k]
        return dx


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)
        self.params = [p for layer in self.layers for p in layer.params]
        self.grads = [g for layer in self.layers for g in layer.grads]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    __call__ = forward


class Mlp(Sequential):
    """Fully connected stack; ``sizes`` includes input and output widths.

    ``final_scale`` shrinks the last layer's initial weights, which keeps
    initial outputs close to the head's midpoint.
    """

    def __init__(self, sizes, hidden: str = "tanh", output: str | None = None, rng: np.random.Generator | None = None, final_scale: float = 1.0):
        rng = rng or np.random.default_rng(0)
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(Linear(a, b, rng, final_scale if last else 1.0))
            if not last:
                layers.append(ACTIVATIONS[hidden]())
        if output:
            layers.append(ACTIVATIONS[output]())
        super().__init__(layers)
        self.sizes = list(sizes)


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._pop())


class Transpose(Layer):
    """Swap the last two axes: ``(B, T, C) <-> (B, C, T)``."""

    def forward(self, x):
        self._cache = True
        return np.swapaxes(x, 1, 2)

    def backward(self, g):
        self._pop()
        return np.swapaxes(g, 1, 2)


CONV_SPEC = ((32, 32, 8, 4), (32, 32, 5, 1), (32, 32, 5, 1))


class Conv1dStack(Sequential):
    """History encoder: per-step projection, strided convolutions, linear head.

    Input ``(batch, window, features)``; output ``(batch, n_out)``.
    """

    def __init__(self, n_features: int = 12, window: int = 100, n_out: int = 8, spec=CONV_SPEC, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        layers = [Linear(n_features, spec[0][0], rng), ReLU(), Transpose()]
        length = window
        for c_in, c_out, k, s in spec:
            layers += [Conv1d(c_in, c_out, k, s, rng), ReLU()]
            length = conv_out_len(length, k, s)
        layers += [Flatten(), Linear(spec[-1][1] * length, n_out, rng)]
        super().__init__(layers)
        self.window = window
        self.n_features = n_features
        self.time_steps = length
