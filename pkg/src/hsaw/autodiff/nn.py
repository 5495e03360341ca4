"""Layer containers with named, seeded parameters."""

from __future__ import annotations

import math

import numpy as np

from hsaw.autodiff import conv as _conv
from hsaw.autodiff.tensor import Parameter, Tensor
from hsaw.rng import SplitMix64, derive_seed


def uniform_init(shape: tuple, fan_in: int, seed: int, dtype=np.float32) -> np.ndarray:
    """uniform(-s, s) with s = sqrt(1 / fan_in), drawn from splitmix64."""
    s = math.sqrt(1.0 / fan_in)
    n = int(np.prod(shape))
    return SplitMix64(seed).uniform_range(-s, s, n).reshape(shape).astype(dtype)


class Module:
    """Minimal parameter container; subclasses register children in order."""

    def __init__(self):
        self._children: dict[str, "Module"] = {}
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for cname, child in self._children.items():
            out.update(child.named_parameters(prefix + cname + "."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.named_parameters()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def assign_names(self) -> None:
        """Rename every parameter to its dotted path so names are unique."""
        for path, p in self.named_parameters().items():
            p.name = path

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, name: str, cin: int, cout: int, k: int, stride: int, pad: int, seed: int):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.weight = Parameter(
            uniform_init((cout, cin, k, k), cin * k * k, derive_seed(seed, name, "w")), name + ".weight"
        )
        self.bias = Parameter(np.zeros(cout, dtype=np.float32), name + ".bias")
        self._params = {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return _conv.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Deconv2d(Module):
    def __init__(self, name: str, cin: int, cout: int, k: int, stride: int, pad: int, seed: int):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.weight = Parameter(
            uniform_init((cin, cout, k, k), cin * k * k, derive_seed(seed, name, "w")), name + ".weight"
        )
        self.bias = Parameter(np.zeros(cout, dtype=np.float32), name + ".bias")
        self._params = {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return _conv.deconv2d(x, self.weight, self.bias, self.stride, self.pad)
