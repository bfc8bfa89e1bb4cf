import numpy as np

from ..errors import ShapeError


class SGD:
    """SGD with (Nesterov) momentum and an L2 penalty folded into the gradient.

    Update, with ``g' = g + weight_decay * theta``::

        v <- momentum * v + g'
        theta <- theta - lr * (g' + momentum * v)   # nesterov
        theta <- theta - lr * v                     # classical momentum
    """

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0, nesterov=False):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.nesterov = bool(nesterov)
        self.velocity = [np.zeros_like(p) for p in self.params]

    def hyperparameters(self):
        return {
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "nesterov": self.nesterov,
        }

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for p, g, v in zip(self.params, grads, self.velocity):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            g = g.astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + p.dtype.type(self.weight_decay) * p
            mu = p.dtype.type(self.momentum)
            lr = p.dtype.type(self.lr)
            v *= mu
            v += g
            if self.nesterov:
                p -= lr * (g + mu * v)
            else:
                p -= lr * v


def sgd_step(model, optimizer, grads=None):
    """Apply one optimizer update to ``model`` and invalidate its forward cache."""
    optimizer.step(model.gradients() if grads is None else grads)
    model.bump_version()
