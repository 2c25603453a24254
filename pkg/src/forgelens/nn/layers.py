"""Layer primitives: a light module system over the autodiff tensor type.

A ``Module`` discovers its parameters by walking attribute definition
order, so "the model's top-level blocks in definition order" is a
well-defined notion used by freeze schedules and checkpoint naming.
Weights initialize from a truncated normal (sigma 0.02, cut at two
sigma); biases and norm offsets start at zero, norm gains at one.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from ..exceptions import ConfigError, ShapeError

__all__ = [
    "Module", "ModuleList", "Linear", "Conv2d", "LayerNorm", "BatchNorm2d",
    "Dropout", "MaxPool2d", "ReLU", "GELU", "trunc_normal", "global_avg_pool",
]


def trunc_normal(shape, rng: np.random.Generator, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with values beyond two sigma redrawn, float32."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


class Module:
    """Base class: parameter discovery, train/eval mode, state transfer."""

    def __init__(self):
        self.training = True
        self._buffer_names: list[str] = []

    # -- registration ------------------------------------------------------

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        """Track a non-trainable array (e.g. running statistics) by name."""
        setattr(self, name, value)
        self._buffer_names.append(name)

    def children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, ModuleList):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item
            elif isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for name, child in self.children():
            yield from child.named_modules(prefix + name + ".")

    # -- mode --------------------------------------------------------------

    def train(self) -> "Module":
        self.training = True
        for _, child in self.children():
            child.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for _, child in self.children():
            child.eval()
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- state transfer ------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All parameters and buffers by dotted name, in definition order."""
        out: dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy a state dict back in. Shapes and dtypes must match exactly
        so a save/load round trip is bit-preserving."""
        for name, p in self.named_parameters():
            self._check_entry(arrays, name, p.data)
            p.data = np.array(arrays[name], dtype=p.data.dtype)
        for name, b in self.named_buffers():
            self._check_entry(arrays, name, b)
            owner, leaf = self._resolve(name)
            setattr(owner, leaf, np.array(arrays[name], dtype=b.dtype))

    @staticmethod
    def _check_entry(arrays, name, current) -> None:
        if name not in arrays:
            raise ConfigError(f"state is missing entry {name!r}")
        if tuple(arrays[name].shape) != tuple(current.shape):
            raise ShapeError(
                f"state entry {name!r} has shape {arrays[name].shape}, "
                f"expected {current.shape}")

    def _resolve(self, dotted: str) -> tuple["Module", str]:
        obj = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            obj = obj[int(part)] if isinstance(obj, ModuleList) else getattr(obj, part)
        return obj, parts[-1]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList:
    """Ordered container whose items count as child modules."""

    def __init__(self, items=()):
        self.items: list[Module] = list(items)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def append(self, module: Module) -> None:
        self.items.append(module)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(trunc_normal((in_features, out_features), rng),
                             requires_grad=True)
        self.bias = (Tensor(np.zeros(out_features, dtype=np.float32),
                            requires_grad=True) if bias else None)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"linear expects last dim {self.in_features}, got {x.shape}")
        out = ops.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(
            trunc_normal((out_channels, in_channels, kernel_size, kernel_size), rng),
            requires_grad=True)
        self.bias = (Tensor(np.zeros(out_channels, dtype=np.float32),
                            requires_grad=True) if bias else None)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias,
                          stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm2d(Module):
    """Channel-wise batch norm over NCHW. Running statistics use the
    biased batch variance and an exponential moving average."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float64))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float64))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            out, mean, var = ops.batch_norm_train(x, self.gamma, self.beta, eps=self.eps)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
            return out
        return ops.batch_norm_eval(x, self.gamma, self.beta,
                                   self.running_mean, self.running_var, eps=self.eps)


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        return ops.dropout(x, self.rate, rng, self.training)


class MaxPool2d(Module):
    def __init__(self, kernel: int = 2):
        super().__init__()
        self.kernel = kernel

    def forward(self, x: Tensor) -> Tensor:
        return ops.max_pool2d(x, self.kernel)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(x)


class GELU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.gelu(x)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    return ops.mean_(x, axis=(2, 3))
