"""Parameter-update rules and the polynomial learning-rate schedule.

SGD carries classic momentum with weight decay added to the gradient;
Adam keeps bias-corrected first/second moments. Both read the gradient
accumulated in each parameter's .grad and mutate parameter data in
place. The current learning rate is a plain attribute so a schedule can
be applied from outside between steps.
"""

from __future__ import annotations

import numpy as np

from rtda.tensor import ShapeError, Tensor


def poly_lr(base_lr: float, iteration: int, max_iter: int, power: float) -> float:
    """base_lr * (1 - iteration/max_iter) ** power, the poly decay."""
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    if not 0 < power <= 1:
        raise ValueError("power must lie in (0, 1]")
    return base_lr * (1.0 - iteration / max_iter) ** power


class _Optimizer:
    def __init__(self, named_params, lr: float):
        if lr < 0:
            raise ValueError("learning rate must be nonnegative")
        self.params = [(name, p) for name, p in named_params]
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.base_lr = lr
        self.lr = lr
        self.iteration = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def _grad(self, name: str, p: Tensor) -> np.ndarray:
        if p.grad is None:
            return np.zeros_like(p.data)
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} mismatches parameter {name} {p.data.shape}")
        return p.grad

    def state_tensors(self) -> dict:
        """Flat name -> array view of every optimizer buffer, for checkpoints."""
        raise NotImplementedError

    def load_state_tensors(self, tensors: dict) -> None:
        for name, arr in self.state_tensors().items():
            if name not in tensors:
                raise KeyError(f"missing optimizer buffer {name}")
            src = tensors[name]
            if tuple(src.shape) != tuple(arr.shape):
                raise ShapeError(f"buffer {name}: shape {src.shape} != {arr.shape}")
            arr[...] = src


class SGD(_Optimizer):
    def __init__(self, named_params, lr: float, momentum: float = 0.9, weight_decay: float = 5e-4):
        super().__init__(named_params, lr)
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        for name, p in self.params:
            g = self._grad(name, p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= (self.lr * v).astype(p.data.dtype, copy=False)
        self.iteration += 1

    def state_tensors(self) -> dict:
        return {f"velocity.{name}": v for name, v in self.velocity.items()}


class Adam(_Optimizer):
    def __init__(self, named_params, lr: float, betas=(0.9, 0.99), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(named_params, lr)
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.betas = (b1, b2)
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.step_count = 0

    def step(self) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for name, p in self.params:
            g = self._grad(name, p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)
        self.iteration += 1

    def state_tensors(self) -> dict:
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out
