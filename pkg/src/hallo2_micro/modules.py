"""Parameter containers and the small layers shared by the networks."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


class Module:
    """Tree of named parameters; supports flat dict export/import."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def param(self, name: str, init: np.ndarray) -> Tensor:
        t = Tensor(init, requires_grad=True)
        self._params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + name: p for name, p in self._params.items()}
        for name, mod in self._children.items():
            out.update(mod.parameters(prefix + name + "."))
        return out

    def load_parameters(self, values: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.parameters(prefix).items():
            if name not in values:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            arr = values[name]
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter '{name}' shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = np.ascontiguousarray(arr, dtype=np.float64)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, zero_init: bool = False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal((d_in, d_out), std=1.0 / np.sqrt(d_in))
        self.w = self.param("w", w)
        self.b = self.param("b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        shape = x.shape
        flat = T.reshape(x, (-1, shape[-1]))
        out = T.add(T.matmul(flat, self.w), self.b)
        return T.reshape(out, shape[:-1] + (self.w.shape[1],))


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = self.param("gain", np.ones(dim))
        self.bias = self.param("bias", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class Mlp(Module):
    """Two-layer pointwise MLP with SiLU, the residual-block feedforward."""

    def __init__(self, dim: int, hidden: int, rng: Rng, d_out: int | None = None):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(dim, hidden, rng.split("fc1")))
        self.fc2 = self.child("fc2", Linear(hidden, d_out or dim, rng.split("fc2")))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.silu(self.fc1(x)))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: Rng,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = c_in * k * k
        self.w = self.param("w", rng.normal((c_out, c_in, k, k), std=1.0 / np.sqrt(fan_in)))
        self.b = self.param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: Rng,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = c_in * k * k
        self.w = self.param("w", rng.normal((c_in, c_out, k, k), std=1.0 / np.sqrt(fan_in)))
        self.b = self.param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.w, self.b, stride=self.stride, padding=self.padding)
