"""Adam with bias correction, keyed per parameter tensor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment running averages plus the per-parameter step count."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _state: dict[int, AdamState] = field(default_factory=dict, repr=False)

    def state_for(self, param: Tensor) -> AdamState:
        st = self._state.get(param.node_id)
        if st is None:
            st = AdamState(np.zeros_like(param.data), np.zeros_like(param.data))
            self._state[param.node_id] = st
        return st

    def step(self, params: Iterable[Tensor], lr: float) -> None:
        """Apply one bias-corrected update to each parameter from its ``.grad``.

        Only the parameters passed in advance their moments and step counter;
        untouched parameters stay bit-identical.
        """
        for p in params:
            g = p.grad
            if g is None:
                raise ValueError("parameter has no gradient; run backward first")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("NaN/Inf in gradient; refusing to step")
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter {p.data.shape}"
                )
            st = self.state_for(p)
            st.step += 1
            st.m = self.beta1 * st.m + (1.0 - self.beta1) * g
            st.v = self.beta2 * st.v + (1.0 - self.beta2) * (g * g)
            m_hat = st.m / (1.0 - self.beta1 ** st.step)
            v_hat = st.v / (1.0 - self.beta2 ** st.step)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
