"""Named parameter storage with per-parameter Adam moments.

Parameters are flat-named with dot-separated paths ("enc.l0.attn.wq").
Weight matrices use uniform Glorot init, +-sqrt(6 / (fan_in + fan_out));
biases and layer-norm shifts start at zero, layer-norm gains at one. The
init keeps early losses near their analytic chance values.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .rng import Rng
from .tensor import DEFAULT_DTYPE, Tensor


def glorot(shape: tuple[int, ...], rng: Rng, dtype=DEFAULT_DTYPE) -> np.ndarray:
    if len(shape) < 2:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[-2], shape[-1]
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, shape).astype(dtype)


class ParameterStore:
    """Ordered map of parameter name -> Tensor, plus optimizer state."""

    def __init__(self, dtype=DEFAULT_DTYPE):
        self.dtype = dtype
        self._params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        return t

    def add_glorot(self, name: str, shape: tuple[int, ...], rng: Rng) -> Tensor:
        return self.add(name, glorot(shape, rng, self.dtype))

    def add_zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape, dtype=self.dtype))

    def add_ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape, dtype=self.dtype))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def view(self, prefix: str) -> "ParamView":
        return ParamView(self, prefix)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradient map after backward(); zeros for non-participating params."""
        out = {}
        for name, t in self._params.items():
            out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ShapeError(
                f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, arr in values.items():
            t = self._params[name]
            if tuple(arr.shape) != t.shape:
                raise ShapeError(
                    f"shape mismatch for {name}: checkpoint {tuple(arr.shape)} vs model {t.shape}"
                )
            t.data = arr.astype(self.dtype)

    def astype(self, dtype) -> "ParameterStore":
        """Shadow copy in another precision (64-bit mode for oracles)."""
        out = ParameterStore(dtype=dtype)
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        out.step = self.step
        return out


class ParamView:
    """Read access to a prefix of the store: view['wq'] -> store['pre.wq']."""

    __slots__ = ("store", "prefix")

    def __init__(self, store: ParameterStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, suffix: str) -> Tensor:
        return self.store[f"{self.prefix}.{suffix}"]

    def view(self, suffix: str) -> "ParamView":
        return ParamView(self.store, f"{self.prefix}.{suffix}")
