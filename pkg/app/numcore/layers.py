"""
Layer forward/backward pairs for the policy network.

Each forward returns (out, cache); the matching backward takes the upstream
derivative and that cache. Inputs are single samples (no batch axis): rollouts
are processed one step at a time.
"""
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.numcore.exceptions import ConfigurationError, EmptyMaskError


def _check_conv_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> None:
    if x.ndim != 3:
        raise ConfigurationError(f"conv2d input must be C x N x N, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ConfigurationError(f"conv2d weight must be O x C x K x K, got shape {w.shape}")
    if w.shape[2] % 2 == 0:
        raise ConfigurationError(f"conv2d kernel size must be odd, got {w.shape[2]}")
    if x.shape[0] != w.shape[1]:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {x.shape[0]}, weight expects {w.shape[1]}"
        )
    if b.shape != (w.shape[0],):
        raise ConfigurationError(f"conv2d bias must have shape ({w.shape[0]},), got {b.shape}")


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """
    Stride-1 cross-correlation with zero same-padding.

    Args:
        x: Input of shape (C, N, N)
        w: Weights of shape (O, C, K, K), K odd
        b: Biases of shape (O,)

    Returns:
        Tuple of (out of shape (O, N, N), cache)

    Raises:
        ConfigurationError: If the shapes do not agree
    """
    _check_conv_shapes(x, w, b)
    pad = w.shape[2] // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    # (C, N, N, K, K) view of every receptive field
    windows = sliding_window_view(padded, w.shape[2:], axis=(1, 2))
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]
    return out, (x, w, windows)


def conv2d_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Backward pass for conv2d_forward.

    Returns:
        Tuple of (dx, dw, db) shaped like x, w, b
    """
    x, w, windows = cache
    size = w.shape[2]
    pad = size // 2
    n = x.shape[1]

    dw = np.tensordot(dout, windows, axes=([1, 2], [1, 2]))
    db = dout.sum(axis=(1, 2))

    dpadded = np.zeros((x.shape[0], n + 2 * pad, n + 2 * pad), dtype=dout.dtype)
    for i in range(size):
        for j in range(size):
            dpadded[:, i:i + n, j:j + n] += np.tensordot(w[:, :, i, j], dout, axes=([0], [0]))
    dx = dpadded[:, pad:pad + n, pad:pad + n]
    return dx, dw, db


def fully_connected_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """
    Affine map out = w @ x + b.

    Args:
        x: Input of shape (D,)
        w: Weights of shape (M, D)
        b: Biases of shape (M,)

    Raises:
        ConfigurationError: If the dimensions do not agree
    """
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ConfigurationError(
            f"fully_connected dimension mismatch: input {x.shape}, weight {w.shape}"
        )
    if b.shape != (w.shape[0],):
        raise ConfigurationError(f"fully_connected bias must have shape ({w.shape[0]},), got {b.shape}")
    return w @ x + b, (x, w)


def fully_connected_backward(dout: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    return w.T @ dout, np.outer(dout, x), dout.copy()


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return np.maximum(x, 0), x > 0


def relu_backward(dout: np.ndarray, gate: np.ndarray) -> np.ndarray:
    return dout * gate


def _check_mask(logits: np.ndarray, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ConfigurationError(f"Mask shape {mask.shape} does not match logits {logits.shape}")
    if not mask.any():
        raise EmptyMaskError("Availability mask has no legal entry")
    return mask


def masked_log_softmax(logits: np.ndarray, mask=None) -> np.ndarray:
    """
    Log-probabilities as logit - logsumexp over the unmasked entries.

    Masked entries are -inf.
    """
    if mask is None:
        mask = np.ones(logits.shape, dtype=bool)
    mask = _check_mask(logits, mask)
    shifted = np.where(mask, logits - logits[mask].max(), -np.inf)
    log_norm = np.log(np.sum(np.exp(shifted[mask])))
    return np.where(mask, shifted - log_norm, -np.inf)


def masked_softmax(logits: np.ndarray, mask=None) -> np.ndarray:
    """
    Softmax restricted to the unmasked entries.

    Masked entries get probability exactly 0. The per-vector max is
    subtracted before exponentiation.

    Raises:
        EmptyMaskError: If no entry of the mask is true
    """
    if mask is None:
        mask = np.ones(logits.shape, dtype=bool)
    mask = _check_mask(logits, mask)
    shifted = np.where(mask, logits - logits[mask].max(), -np.inf)
    exp = np.where(mask, np.exp(shifted), 0.0).astype(logits.dtype)
    return exp / exp.sum()


def softmax_backward(dprobs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. softmax outputs."""
    return probs * (dprobs - np.dot(probs, dprobs))


def log_prob_gradient(probs: np.ndarray, index: int) -> np.ndarray:
    """d log p[index] / d logits; zero on masked entries."""
    grad = -probs.copy()
    grad[index] += 1
    return grad


def entropy(probs: np.ndarray, log_probs: np.ndarray) -> float:
    live = probs > 0
    return float(-np.sum(probs[live] * log_probs[live]))


def entropy_gradient(probs: np.ndarray, log_probs: np.ndarray) -> np.ndarray:
    """d H / d logits = -p (log p + H); zero on masked entries."""
    live = probs > 0
    value = entropy(probs, log_probs)
    grad = np.zeros_like(probs)
    grad[live] = -probs[live] * (log_probs[live] + value)
    return grad
