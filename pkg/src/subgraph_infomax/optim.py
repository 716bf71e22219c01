"""Named trainable parameters, Adam updates, and checkpoint round-trips."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "subgraph-infomax-params-v1"


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


class _AdamSlot:
    __slots__ = ("m", "v", "step")

    def __init__(self, shape: tuple[int, int]):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.step = 0


class ParameterStore:
    """Registry of named parameter tensors plus per-parameter Adam state."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._slots: dict[str, _AdamSlot] = {}

    def create(
        self,
        name: str,
        shape: tuple[int, int],
        rng: np.random.Generator | None = None,
        values=None,
        trainable: bool = True,
        fan_in: int | None = None,
    ) -> Tensor:
        """Register a parameter; default init is uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if values is None:
            if rng is None:
                raise ValueError(f"parameter {name!r} needs an rng or explicit values")
            bound = 1.0 / math.sqrt(max(fan_in if fan_in is not None else shape[0], 1))
            values = rng.uniform(-bound, bound, size=shape)
        arr = np.asarray(values, dtype=np.float64).reshape(shape)
        tensor = Tensor(arr.copy(), requires_grad=trainable)
        self._params[name] = tensor
        self._slots[name] = _AdamSlot(shape)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def trainable(self) -> list[Tensor]:
        return [t for t in self._params.values() if t.requires_grad]

    def num_values(self) -> int:
        return sum(t.values.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def clone_values(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_values(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, values in snapshot.items():
            tensor = self._params[name]
            if tensor.values.shape != values.shape:
                raise ValueError(
                    f"snapshot shape mismatch for {name!r}: "
                    f"{values.shape} vs {tensor.values.shape}"
                )
            np.copyto(tensor.values, values)

    def state_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "params": {
                name: {
                    "shape": list(t.values.shape),
                    "trainable": t.requires_grad,
                    "values": t.values.reshape(-1).tolist(),
                }
                for name, t in self._params.items()
            },
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.state_dict(), fh)

    def load(self, path) -> None:
        """Load a checkpoint written by ``save``; values round-trip exactly."""
        with open(path, encoding="utf-8") as fh:
            state = json.load(fh)
        if state.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format in {path}")
        for name, entry in state["params"].items():
            shape = tuple(entry["shape"])
            values = np.array(entry["values"], dtype=np.float64).reshape(shape)
            if name in self._params:
                self.load_values({name: values})
            else:
                self.create(name, shape, values=values, trainable=entry["trainable"])


def adam_step(store: ParameterStore, config: AdamConfig) -> None:
    """Bias-corrected Adam update on every parameter with a gradient; grads cleared."""
    for name, p in store.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            log.debug("adam_step: no gradient for %s; skipped", name)
            continue
        g = p.grad
        if config.weight_decay:
            g = g + config.weight_decay * p.values
        slot = store._slots[name]
        slot.step += 1
        slot.m = config.beta1 * slot.m + (1.0 - config.beta1) * g
        slot.v = config.beta2 * slot.v + (1.0 - config.beta2) * (g * g)
        m_hat = slot.m / (1.0 - config.beta1**slot.step)
        v_hat = slot.v / (1.0 - config.beta2**slot.step)
        p.values -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        p.grad = None
