"""Parameter containers."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .tensor import Tensor


def param_rng(seed: int, name: str) -> np.random.Generator:
    # Keyed by name so a parameter's init never depends on what else exists.
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def xavier(seed: int, name: str, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    data = param_rng(seed, name).uniform(-bound, bound, size=(fan_in, fan_out))
    return Tensor(data, requires_grad=True, name=name)


def normal(seed: int, name: str, shape: tuple[int, ...], std: float) -> Tensor:
    return Tensor(param_rng(seed, name).normal(0.0, std, size=shape), requires_grad=True, name=name)


def zeros(name: str, shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(name: str, shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


class Module:
    """Collects Tensor attributes and child modules as named parameters."""

    training: bool = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(val, Tensor) and (val.requires_grad or val.name is not None):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield from v.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for v in val:
                    if isinstance(v, Module):
                        yield from v.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = set(own) - set(state)
            unexpected = set(state) - set(own)
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, arr in state.items():
            if name not in own:
                continue
            if own[name].shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {own[name].shape}")
            own[name].data = np.array(arr, dtype=np.float64)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
