"""Training losses: binary cross-entropy and complex mean-square error.

Both are real-valued, so their backward arrays follow the packed gradient
convention in layers.py (real array for bce, complex dL/dRe + j dL/dIm for
mse).
"""

from __future__ import annotations

import numpy as np

_CLIP = 1e-7


def bce(p: np.ndarray, g: np.ndarray) -> float:
    """Mean binary cross-entropy, -mean(g log p + (1-g) log(1-p)).

    p is clipped to [1e-7, 1 - 1e-7]; mean runs over all entries (batch and
    antenna axes alike).
    """
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    pc = np.clip(p, _CLIP, 1.0 - _CLIP)
    return float(-np.mean(g * np.log(pc) + (1.0 - g) * np.log(1.0 - pc)))


def bce_backward(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """d bce / d p; zero where the clip is active."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    pc = np.clip(p, _CLIP, 1.0 - _CLIP)
    grad = (-g / pc + (1.0 - g) / (1.0 - pc)) / p.size
    grad[(p < _CLIP) | (p > 1.0 - _CLIP)] = 0.0
    return grad


def mse(s_hat: np.ndarray, s: np.ndarray) -> float:
    """Per-sample squared error ||s_hat - s||^2 averaged over the batch.

    The batch is the leading axis; the norm is the complex squared modulus
    summed over all remaining axes.
    """
    s_hat = np.asarray(s_hat)
    s = np.asarray(s)
    if s_hat.shape != s.shape:
        raise ValueError(f"shape mismatch {s_hat.shape} vs {s.shape}")
    diff = s_hat - s
    return float(np.sum(np.abs(diff) ** 2) / s_hat.shape[0])


def mse_backward(s_hat: np.ndarray, s: np.ndarray) -> np.ndarray:
    """d mse / d s_hat in packed form: 2 (s_hat - s) / batch."""
    s_hat = np.asarray(s_hat)
    s = np.asarray(s)
    return 2.0 * (s_hat - s) / s_hat.shape[0]
