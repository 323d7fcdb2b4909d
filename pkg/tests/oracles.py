"""Independent reference implementations used only by the tests.

Everything here is deliberately naive (nested loops, pairwise enumeration,
scalar arithmetic) so it shares no code path with the package.
"""

import numpy as np


def conv2d_reference(x, w, b, stride=1, padding=0):
    """Six nested loops over (filter, out_y, out_x, channel, ky, kx)."""
    c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding))
    xp[:, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((f, ho, wo))
    for ff in range(f):
        for oy in range(ho):
            for ox in range(wo):
                acc = b[ff]
                for cc in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            acc += xp[cc, oy * stride + ky, ox * stride + kx] * w[ff, cc, ky, kx]
                out[ff, oy, ox] = acc
    return out


def maxpool_reference(x, window, stride):
    c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((c, ho, wo))
    for cc in range(c):
        for oy in range(ho):
            for ox in range(wo):
                out[cc, oy, ox] = x[cc, oy * stride : oy * stride + window, ox * stride : ox * stride + window].max()
    return out


def dense_reference(x, w, b):
    m, n = w.shape
    out = np.zeros(m)
    for i in range(m):
        acc = b[i]
        for j in range(n):
            acc += w[i, j] * x[j]
        out[i] = acc
    return out


def pairwise_auc(scores, truth):
    """Explicit enumeration of all positive/negative pairs, ties count half."""
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    if not pos or not neg:
        return None
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def pairwise_macro_auc(scores, truth):
    """Mean of per-label pairwise AUCs over labels with both classes."""
    vals = []
    for k in range(scores.shape[1]):
        auc = pairwise_auc(scores[:, k], truth[:, k])
        if auc is not None:
            vals.append(auc)
    return sum(vals) / len(vals) if vals else None


def adam_reference(theta, grads_sequence, lr_sequence, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar per-coordinate Adam trajectory; theta is a flat list of floats."""
    theta = [float(v) for v in theta]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    t = 0
    for grads, lr in zip(grads_sequence, lr_sequence):
        t += 1
        bc1 = 1.0 - beta1**t
        bc2 = 1.0 - beta2**t
        for i, g in enumerate(grads):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g)
            theta[i] = theta[i] - lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)
    return theta


def consensus_protocol_reference(raters):
    """One-vs-rest rater protocol, from scratch on the pairwise AUC."""
    n_raters = raters.shape[0]
    per_expert = []
    for e in range(n_raters):
        others = [raters[j] for j in range(n_raters) if j != e]
        consensus = sum(others) / len(others)
        per_expert.append(pairwise_macro_auc(consensus, raters[e]))
    return per_expert, sum(per_expert) / len(per_expert)
