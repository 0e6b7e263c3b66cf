"""Definitional recomputations used as test oracles.

Written straight from the definitions with Python scalars and exact
rational sums, sharing no code with the implementation under test.
"""

from fractions import Fraction
import math

import numpy as np


def gradient_mask(s, m, k):
    s_flat = [float(x) for x in np.asarray(s).reshape(-1)]
    m_flat = [int(x) for x in np.asarray(m).reshape(-1)]
    survivors = [i for i, keep in enumerate(m_flat) if keep]
    n_keep = math.floor(k * len(survivors) + 0.5)
    ranked = sorted(survivors, key=lambda i: (-s_flat[i], i))
    g = [0] * len(s_flat)
    for i in ranked[:n_keep]:
        g[i] = 1
    return np.array(g, dtype=np.uint8).reshape(np.shape(s))


def pruned_importance(s, m):
    total = sum((Fraction(float(x)) for x, keep in zip(np.ravel(s), np.ravel(m)) if not keep), Fraction(0))
    return float(total)


def redistribution(s, m, alpha):
    s_flat, m_flat = np.ravel(s), np.ravel(m)
    denom = float(sum((Fraction(float(x)) for x, keep in zip(s_flat, m_flat) if keep), Fraction(0)))
    ip = pruned_importance(s, m)
    w = []
    for x, keep in zip(s_flat, m_flat):
        if keep and denom != 0.0:
            w.append(1.0 + alpha * (float(x) / denom) * ip)
        else:
            w.append(1.0)
    return np.array(w).reshape(np.shape(s))
