"""Independent reference implementations, written from the definitions with plain loops.

None of these import from the package under test; they are the ground truth
the vectorised code is checked against.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_ref(x, w, b=None, stride=1, pad=(0, 0), groups=1):
    """Direct-definition 2-D cross-correlation with zero padding."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bsz, c_in, h, wd = x.shape
    c_out, cpg, kh, kw = w.shape
    ph, pw = pad
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    opg = c_out // groups
    out = np.zeros((bsz, c_out, ho, wo))
    for n in range(bsz):
        for o in range(c_out):
            g = o // opg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(cpg):
                        src = g * cpg + ci
                        for u in range(kh):
                            for v in range(kw):
                                r, c = i * stride + u - ph, j * stride + v - pw
                                if 0 <= r < h and 0 <= c < wd:
                                    acc += x[n, src, r, c] * w[o, ci, u, v]
                    out[n, o, i, j] = acc
    return out


def same_pad(kh, kw):
    return ((kh - 1) // 2, (kw - 1) // 2)


def gap_height_ref(x):
    """Mean over H for every (b, c, w)."""
    bsz, c, h, w = x.shape
    out = np.zeros((bsz, c, 1, w))
    for n in range(bsz):
        for ch in range(c):
            for j in range(w):
                out[n, ch, 0, j] = sum(x[n, ch, i, j] for i in range(h)) / h
    return out


def gap_width_ref(x):
    bsz, c, h, w = x.shape
    out = np.zeros((bsz, c, h, 1))
    for n in range(bsz):
        for ch in range(c):
            for i in range(h):
                out[n, ch, i, 0] = sum(x[n, ch, i, j] for j in range(w)) / w
    return out


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def attention_ref(xi, proj_w, proj_b, fc_w, fc_b):
    """Pool the 1x1 projection, apply the linear map, then a sigmoid per logit."""
    bsz, c, h, w = xi.shape
    a, n = proj_w.shape[0], fc_w.shape[0]
    alpha = np.zeros((bsz, n))
    for s in range(bsz):
        pooled = []
        for q in range(a):
            tot = 0.0
            for i in range(h):
                for j in range(w):
                    tot += proj_b[q] + sum(proj_w[q, ch] * xi[s, ch, i, j] for ch in range(c))
            pooled.append(tot / (h * w))
        for t in range(n):
            alpha[s, t] = sig(fc_b[t] + sum(fc_w[t, q] * pooled[q] for q in range(a)))
    return alpha


def gate_ref(xi, h_w, h_b, w_w, w_b):
    """sigmoid(Hstrip(mean over W) + Wstrip(mean over H)), broadcast to xi's dims."""
    sk = h_w.shape[2]
    hp = conv2d_ref(gap_width_ref(xi), h_w, h_b, pad=same_pad(sk, 1))  # (B,c,H,1)
    wp = conv2d_ref(gap_height_ref(xi), w_w, w_b, pad=same_pad(1, sk))  # (B,c,1,W)
    bsz, c, h, w = xi.shape
    out = np.zeros(xi.shape)
    for s in range(bsz):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    out[s, ch, i, j] = sig(hp[s, ch, i, 0] + wp[s, ch, 0, j])
    return out


def fold_ref(strip, k, transpose=False):
    """psi: row-major k x k fold of a k*k strip; ``transpose`` gives the height-strip orientation."""
    m = np.zeros((k, k))
    for idx in range(k * k):
        r, c = divmod(idx, k)
        if transpose:
            r, c = c, r
        m[r, c] = strip[idx]
    return m


def guide_ref(w_rd, h_strip, w_strip):
    """Entrywise W_rd[o,i,u,v] * (psi_h(h)[u,v] + psi_w(w)[u,v]) with one strip pair per output channel."""
    c_out, c_in, k, _ = w_rd.shape
    out = np.zeros(w_rd.shape)
    for o in range(c_out):
        ph, pw = fold_ref(h_strip[o], k, transpose=True), fold_ref(w_strip[o], k)
        for i in range(c_in):
            for u in range(k):
                for v in range(k):
                    out[o, i, u, v] = w_rd[o, i, u, v] * (ph[u, v] + pw[u, v])
    return out


def rdconv_ref(x, r_razor, kernels, proj_w, proj_b, fc_w, fc_b, h_w, h_b, w_w, w_b, guide=None):
    """Per-item brute force: mix kernels explicitly, convolve with the loop oracle, then gate."""
    c = int(math.floor(r_razor * x.shape[1] + 1e-9))
    xi, rest = x[:, :c], x[:, c:]
    alpha = attention_ref(xi, proj_w, proj_b, fc_w, fc_b)
    gate = gate_ref(xi, h_w, h_b, w_w, w_b)
    k = kernels.shape[-1]
    outs = []
    for s in range(x.shape[0]):
        ker = sum(alpha[s, t] * kernels[t] for t in range(kernels.shape[0]))
        if guide is not None:
            ker = ker * guide[:, None]
        outs.append(conv2d_ref(xi[s : s + 1], ker, pad=same_pad(k, k))[0])
    return np.concatenate([np.stack(outs) * gate, rest], axis=1)


def cbam_ref(x, k7, b7):
    bsz, c, h, w = x.shape
    pooled = np.zeros((bsz, 2, h, w))
    for s in range(bsz):
        for i in range(h):
            for j in range(w):
                vals = [x[s, ch, i, j] for ch in range(c)]
                pooled[s, 0, i, j] = sum(vals) / c
                pooled[s, 1, i, j] = max(vals)
    att = conv2d_ref(pooled, k7, b7, pad=same_pad(*k7.shape[2:]))
    out = np.zeros(x.shape)
    for s in range(bsz):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    out[s, ch, i, j] = x[s, ch, i, j] * sig(att[s, 0, i, j])
    return out
