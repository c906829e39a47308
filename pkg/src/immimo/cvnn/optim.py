"""Adam optimizer treating (real, imag) slots as independent reals."""

from __future__ import annotations

import numpy as np

from immimo.cvnn.model import Model


class Adam:
    """Standard Adam with bias correction.

    For complex parameters the second moment keeps separate accumulators for
    the real and imaginary slots (packed as v.real / v.imag), so the update
    is exactly the real-valued Adam run on the split representation.
    """

    def __init__(self, model: Model, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.slots = [{"m": np.zeros_like(a), "v": np.zeros_like(a)}
                      for _, a in model.param_items()]

    def step(self) -> None:
        """Apply one update from the gradients currently held by the layers."""
        params = self.model.param_items()
        grads = self.model.grad_items()
        if len(grads) != len(params):
            raise RuntimeError("missing gradients; run backward first")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for slot, (_, p), (_, g) in zip(self.slots, params, grads):
            m, v = slot["m"], slot["v"]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            if np.iscomplexobj(p):
                v += (1 - b2) * (g.real ** 2 + 1j * g.imag ** 2)
                mh = m / c1
                vh = v / c2
                upd = (mh.real / (np.sqrt(vh.real) + self.eps)
                       + 1j * (mh.imag / (np.sqrt(vh.imag) + self.eps)))
            else:
                v += (1 - b2) * g ** 2
                upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= self.lr * upd

    def state(self) -> dict:
        return {"step": self.step_count, "lr": self.lr, "slots": self.slots}

    def load_state(self, state: dict) -> None:
        if len(state["slots"]) != len(self.slots):
            raise ValueError("adam state mismatch")
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        for mine, theirs in zip(self.slots, state["slots"]):
            mine["m"][...] = theirs["m"]
            mine["v"][...] = theirs["v"]
