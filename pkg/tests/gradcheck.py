"""Central finite-difference gradient oracle, independent of nn.backward."""
import numpy as np

from schedq import nn


def loss_at(net, x, action, target):
    return 0.5 * (nn.forward(net, x)[action] - target) ** 2


def fd_gradients(net, x, action, target, eps=1e-5):
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_at(net, x, action, target)
            flat[i] = orig - eps
            lm = loss_at(net, x, action, target)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * eps)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|) over entries; entries where both are below
    ``floor`` in magnitude are compared absolutely against ``floor * 1e-2``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.abs(a), np.abs(n))
        diff = np.abs(a - n)
        big = scale > floor
        if big.any():
            worst = max(worst, float(np.max(diff[big] / scale[big])))
        if (~big).any() and np.max(diff[~big]) > floor * 1e-2:
            worst = max(worst, 1.0)
    return worst
