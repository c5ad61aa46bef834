"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import ParameterStore
from .tape import Node, Tape

__all__ = ["GradCheckError", "GradCheckReport", "grad_check"]


class GradCheckError(RuntimeError):
    """A non-finite analytic or numeric gradient, named by coordinate."""


@dataclass
class GradCheckReport:
    per_parameter: dict[str, float]
    tolerance: float
    samples: dict[str, int] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max(self.per_parameter.values(), default=0.0)

    @property
    def worst_parameter(self) -> str | None:
        if not self.per_parameter:
            return None
        return max(self.per_parameter, key=self.per_parameter.get)

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"grad check {verdict}: max rel err {self.max_relative_error:.3e} "
                f"at {self.worst_parameter} (tolerance {self.tolerance:.1e})")


def grad_check(model_forward, store: ParameterStore, tolerance: float = 1e-4,
               step: float = 1e-5, samples: int = 32, seed: int = 0) -> GradCheckReport:
    """Compare taped gradients of a scalar loss against central differences.

    ``model_forward(store, tape)`` must build and return the scalar loss node
    and must be deterministic given the store contents.  At least ``samples``
    coordinates per parameter are probed (all of them for small tensors).
    """
    tape = Tape()
    loss = model_forward(store, tape)
    if not isinstance(loss, Node) or loss.data.shape != ():
        raise ValueError("model_forward must return a scalar loss node")
    analytic = tape.gradients(loss, store)

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    probed: dict[str, int] = {}
    for name in store.names():
        flat = store[name].reshape(-1)
        exact = analytic[name].reshape(-1)
        if flat.size <= samples:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=samples, replace=False))
        worst = 0.0
        for i in coords:
            origin = flat[i]
            flat[i] = origin + step
            up = float(model_forward(store, Tape(record=False)).data)
            flat[i] = origin - step
            down = float(model_forward(store, Tape(record=False)).data)
            flat[i] = origin
            numeric = (up - down) / (2.0 * step)
            if not (np.isfinite(numeric) and np.isfinite(exact[i])):
                raise GradCheckError(
                    f"non-finite gradient at {name}[{int(i)}]: "
                    f"analytic={exact[i]!r} numeric={numeric!r}")
            rel = abs(exact[i] - numeric) / max(abs(exact[i]), abs(numeric), 1e-6)
            worst = max(worst, rel)
        report[name] = worst
        probed[name] = len(coords)
    return GradCheckReport(report, tolerance, probed)
