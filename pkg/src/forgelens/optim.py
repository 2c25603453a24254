"""Optimizers and freeze schedules.

Update rules (elementwise; g is the gradient, theta the parameter):

RMSprop   v <- alpha*v + (1-alpha)*g^2
          theta <- theta - lr * g / (sqrt(v) + eps)

AdamW     m <- beta1*m + (1-beta1)*g        mhat = m / (1 - beta1^t)
          v <- beta2*v + (1-beta2)*g^2      vhat = v / (1 - beta2^t)
          theta <- theta*(1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps)

Weight decay is decoupled: it multiplies the parameter directly, so a
zero-gradient step shrinks it by exactly (1 - lr*wd). A non-finite
gradient aborts the run with diagnostics instead of silently skipping.

Freeze policies operate on parameter groups: the model's top-level
parameterized blocks in definition order. "Last k" counts from the
output end, so the classifier head is always in the last group.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .exceptions import ConfigError, TrainingAborted
from .nn.layers import Module

__all__ = [
    "rmsprop_step", "adamw_step", "RMSprop", "AdamW", "build_optimizer",
    "parameter_groups", "parse_freeze_policy", "apply_freeze_policy",
    "trainable_parameter_names", "FreezePolicy",
]


def rmsprop_step(theta: np.ndarray, g: np.ndarray, v: np.ndarray,
                 lr: float, alpha: float = 0.99, eps: float = 1e-8):
    """One RMSprop update; returns (theta, v) as new arrays."""
    v = alpha * v + (1.0 - alpha) * g * g
    theta = theta - lr * g / (np.sqrt(v) + eps)
    return theta, v


def adamw_step(theta: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
               t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.0):
    """One AdamW update at step count t (1-based); returns (theta, m, v)."""
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    theta = theta * (1.0 - lr * weight_decay) - lr * mhat / (np.sqrt(vhat) + eps)
    return theta, m, v


def _check_gradient(name: str, g: np.ndarray) -> None:
    if not np.isfinite(g).all():
        n_nan = int(np.isnan(g).sum())
        n_inf = int(np.isinf(g).sum())
        raise TrainingAborted(
            f"non-finite gradient in {name!r}: {n_nan} NaN, {n_inf} Inf "
            f"of {g.size} entries")


class _Optimizer:
    """Shared bookkeeping: named parameters, per-parameter state arrays."""

    def __init__(self, named_params):
        self.params: list[tuple[str, Tensor]] = [(n, p) for n, p in named_params]
        if not self.params:
            raise ConfigError("optimizer got no parameters")

    def step(self, trainable: set[str] | None = None) -> None:
        """Apply one update. Parameters outside ``trainable`` (when given)
        are skipped entirely: values, gradients, and state untouched."""
        for name, p in self.params:
            if trainable is not None and name not in trainable:
                continue
            if p.grad is None:
                continue
            _check_gradient(name, p.grad)
            self._update(name, p)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        raise NotImplementedError


class RMSprop(_Optimizer):
    def __init__(self, named_params, lr: float, alpha: float = 0.99,
                 eps: float = 1e-8):
        super().__init__(named_params)
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        if not 0.0 <= alpha < 1.0:
            raise ConfigError(f"alpha must be in [0, 1), got {alpha}")
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def _update(self, name: str, p: Tensor) -> None:
        g = p.grad.astype(p.data.dtype, copy=False)
        p.data, self.v[name] = rmsprop_step(
            p.data, g, self.v[name], self.lr, self.alpha, self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"v.{name}": arr for name, arr in self.v.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.v:
            key = f"v.{name}"
            if key not in arrays:
                raise ConfigError(f"optimizer state is missing {key!r}")
            self.v[name] = np.array(arrays[key], dtype=self.v[name].dtype)


class AdamW(_Optimizer):
    def __init__(self, named_params, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        super().__init__(named_params)
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {weight_decay}")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.t = {name: 0 for name, _ in self.params}

    def _update(self, name: str, p: Tensor) -> None:
        g = p.grad.astype(p.data.dtype, copy=False)
        self.t[name] += 1
        p.data, self.m[name], self.v[name] = adamw_step(
            p.data, g, self.m[name], self.v[name], self.t[name],
            self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
            out[f"t.{name}"] = np.array([self.t[name]], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.m:
            for prefix, store in (("m", self.m), ("v", self.v)):
                key = f"{prefix}.{name}"
                if key not in arrays:
                    raise ConfigError(f"optimizer state is missing {key!r}")
                store[name] = np.array(arrays[key], dtype=store[name].dtype)
            tkey = f"t.{name}"
            if tkey not in arrays:
                raise ConfigError(f"optimizer state is missing {tkey!r}")
            self.t[name] = int(arrays[tkey][0])


OPTIMIZERS = ("rmsprop", "adamw")


def build_optimizer(name: str, named_params, lr: float,
                    weight_decay: float = 0.0) -> _Optimizer:
    if name == "rmsprop":
        return RMSprop(named_params, lr=lr)
    if name == "adamw":
        return AdamW(named_params, lr=lr, weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer {name!r}; expected one of {OPTIMIZERS}")


# ---------------------------------------------------------------------------
# freeze schedules


def parameter_groups(model: Module) -> list[tuple[str, list[str]]]:
    """Top-level parameterized blocks in definition order.

    Each immediate child module (with list items expanded) that owns at
    least one parameter forms one group, named by the child attribute.
    Direct tensor attributes of the model form their own groups.
    """
    groups: list[tuple[str, list[str]]] = []
    for attr, value in model.__dict__.items():
        if isinstance(value, Tensor) and value.requires_grad:
            groups.append((attr, [attr]))
    for name, child in model.children():
        names = [f"{name}.{pname}" for pname, _ in child.named_parameters()]
        if names:
            groups.append((name, names))
    return groups


class FreezePolicy:
    """Parsed freeze schedule. ``kind`` is none | last_k | gradual."""

    def __init__(self, kind: str, k: int = 0, epochs_per_stage: int = 1):
        self.kind = kind
        self.k = k
        self.epochs_per_stage = epochs_per_stage

    def __repr__(self):
        if self.kind == "none":
            return "none"
        if self.kind == "last_k":
            return f"last_k:{self.k}"
        return f"gradual:{self.k}:{self.epochs_per_stage}"


def parse_freeze_policy(spec: str) -> FreezePolicy:
    """Accepts "none", "last_k:K", or "gradual:START_K:EPOCHS_PER_STAGE"."""
    parts = str(spec).split(":")
    if parts[0] == "none" and len(parts) == 1:
        return FreezePolicy("none")
    if parts[0] == "last_k" and len(parts) == 2:
        k = int(parts[1])
        if k < 1:
            raise ConfigError(f"last_k requires k >= 1, got {k}")
        return FreezePolicy("last_k", k=k)
    if parts[0] == "gradual" and len(parts) == 3:
        k, eps = int(parts[1]), int(parts[2])
        if k < 1 or eps < 1:
            raise ConfigError(f"gradual requires start_k >= 1 and epochs_per_stage >= 1, got {spec!r}")
        return FreezePolicy("gradual", k=k, epochs_per_stage=eps)
    raise ConfigError(f"cannot parse freeze policy {spec!r}")


def apply_freeze_policy(model: Module, policy: FreezePolicy,
                        epoch: int) -> np.ndarray:
    """Boolean trainability mask over parameter groups for this epoch.

    ``gradual`` starts with the last ``k`` groups trainable and unfreezes
    one more group (moving from the output end toward the input) every
    ``epochs_per_stage`` epochs; epochs are 0-based.
    """
    n = len(parameter_groups(model))
    if n == 0:
        raise ConfigError("model has no parameter groups")
    mask = np.zeros(n, dtype=bool)
    if policy.kind == "none":
        mask[:] = True
        return mask
    if policy.k > n:
        raise ConfigError(f"policy requests {policy.k} groups, model has {n}")
    if policy.kind == "last_k":
        mask[n - policy.k:] = True
        return mask
    k = min(policy.k + epoch // policy.epochs_per_stage, n)
    mask[n - k:] = True
    return mask


def trainable_parameter_names(model: Module, policy: FreezePolicy,
                              epoch: int) -> set[str]:
    groups = parameter_groups(model)
    mask = apply_freeze_policy(model, policy, epoch)
    out: set[str] = set()
    for (name, members), on in zip(groups, mask):
        if on:
            out.update(members)
    return out
