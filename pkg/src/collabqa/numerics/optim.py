"""Named parameter storage and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import Node, Tape

__all__ = ["OptimizerConfig", "ParameterStore", "TrainingError", "adam_step"]


class TrainingError(RuntimeError):
    """Raised when a training loop diverges (non-finite loss)."""


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")


class ParameterStore:
    """Named float64 tensors plus per-parameter Adam state (m, v, step)."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._steps: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            raise ValueError(f"parameter {name!r} must have at least one axis")
        self._values[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        self._steps[name] = 0
        return arr

    def zeros(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        return self.add(name, np.zeros(shape))

    def randn(self, name: str, shape: tuple[int, ...], rng: np.random.Generator,
              scale: float) -> np.ndarray:
        return self.add(name, rng.normal(0.0, scale, size=shape))

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        current = self._values[name]
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != current.shape:
            raise ValueError(
                f"parameter {name!r} has shape {current.shape}, got {arr.shape}")
        current[...] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def size(self) -> int:
        return sum(v.size for v in self._values.values())

    def nodes(self, tape: Tape) -> dict[str, Node]:
        """Register every parameter on ``tape`` and return the leaf nodes."""
        return {name: tape.param(name, value) for name, value in self._values.items()}

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]

    def step_count(self, name: str) -> int:
        return self._steps[name]

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for name, value in self._values.items():
            other.add(name, value)
            other._m[name][...] = self._m[name]
            other._v[name][...] = self._v[name]
            other._steps[name] = self._steps[name]
        return other


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray],
              cfg: OptimizerConfig) -> None:
    """Standard Adam with bias correction; mutates ``store`` in place."""
    for name in store.names():
        if name not in grads:
            raise ValueError(f"missing gradient for parameter {name!r}")
        if grads[name].shape != store[name].shape:
            raise ValueError(
                f"gradient shape mismatch for {name!r}: "
                f"param {store[name].shape}, grad {grads[name].shape}")
    for name in store.names():
        g = grads[name]
        t = store._steps[name] + 1
        store._steps[name] = t
        m = store._m[name]
        v = store._v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        store._values[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
