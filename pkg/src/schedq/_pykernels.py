"""Numpy implementations of the per-step kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the extension is tested against. Both versions perform the same
floating-point operations in the same order, so results are bit-identical.
"""
import numpy as np


def penalties(P, history):
    """Switching penalty of every user given the recent-service history."""
    out = np.zeros(P.shape[0])
    for h in history:
        out += P[:, h]
    return out


def masked_argmin(values, buffers):
    """Lowest-index minimiser of ``values`` over users with ``buffers > 0``; -1 if none."""
    eligible = buffers > 0
    if not eligible.any():
        return -1
    return int(np.argmin(np.where(eligible, values, np.inf)))


def masked_argmax(values, buffers):
    """Lowest-index maximiser of ``values`` over users with ``buffers > 0``; -1 if none."""
    eligible = buffers > 0
    if not eligible.any():
        return -1
    return int(np.argmax(np.where(eligible, values, -np.inf)))


def serve(buffers, weights, user):
    buffers[user] = max(0.0, buffers[user] - weights[user])


def apply_drift(w, P, xi_w, xi_p, sigma_w, sigma_p, w_min, w_max, p_max):
    """Clipped Gaussian random-walk step of ``w`` and ``P``, in place.

    ``xi_w``/``xi_p`` are standard-normal increments (``xi_p`` is N x N; its
    diagonal is ignored).
    """
    if sigma_w > 0:
        np.clip(w + sigma_w * xi_w, w_min, w_max, out=w)
    if sigma_p > 0:
        np.clip(P + sigma_p * xi_p, 0.0, p_max, out=P)
        np.fill_diagonal(P, 0.0)
