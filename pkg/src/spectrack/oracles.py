"""Brute-force reference implementations used only for verification.

Everything here is deliberately written as plain nested-loop numpy so it
shares no code path with the vectorized/torch implementations it checks.
"""

from __future__ import annotations

import math

import numpy as np


# -- convolution primitives -------------------------------------------------


def conv2d_naive(x, weight, bias=None, stride=1, padding=0):
    """x: [Cin, H, W]; weight: [Cout, Cin, kh, kw]."""
    cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    assert cin == cin_w
    xp = np.zeros((cin, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    xp[:, padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, ho, wo), dtype=np.float64)
    for co in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            acc += weight[co, ci, u, v] * xp[ci, i * stride + u, j * stride + v]
                out[co, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


def conv2d_depthwise_naive(x, weight, bias=None, stride=1, padding=0):
    """x: [C, H, W]; weight: [C, 1, kh, kw]; one filter per channel."""
    c = x.shape[0]
    outs = [
        conv2d_naive(
            x[ci : ci + 1],
            weight[ci : ci + 1],
            None if bias is None else bias[ci : ci + 1],
            stride,
            padding,
        )
        for ci in range(c)
    ]
    return np.concatenate(outs, axis=0)


def conv3d_naive(x, weight, bias=None, stride=(1, 1, 1), padding=1):
    """x: [Cin, D, H, W]; weight: [Cout, Cin, kd, kh, kw]."""
    cin, d, h, w = x.shape
    cout, cin_w, kd, kh, kw = weight.shape
    assert cin == cin_w
    p = padding
    xp = np.zeros((cin, d + 2 * p, h + 2 * p, w + 2 * p), dtype=np.float64)
    xp[:, p : p + d, p : p + h, p : p + w] = x
    sd, sh, sw = stride
    do = (d + 2 * p - kd) // sd + 1
    ho = (h + 2 * p - kh) // sh + 1
    wo = (w + 2 * p - kw) // sw + 1
    out = np.zeros((cout, do, ho, wo), dtype=np.float64)
    for co in range(cout):
        for di in range(do):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for a in range(kd):
                            for u in range(kh):
                                for v in range(kw):
                                    acc += (
                                        weight[co, ci, a, u, v]
                                        * xp[ci, di * sd + a, i * sh + u, j * sw + v]
                                    )
                    out[co, di, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


def s2c_naive(x, params, stride=1):
    """Direct evaluation of the two-branch spatial-spectral convolution.

    ``params`` holds numpy copies of the module weights keyed by submodule
    name (``spatial_depthwise.weight`` etc.); missing biases mean none.
    """
    dw = conv2d_depthwise_naive(
        x, params["spatial_depthwise.weight"], params.get("spatial_depthwise.bias"),
        stride=stride, padding=1,
    )
    spatial = conv2d_naive(
        dw, params["spatial_pointwise.weight"], params.get("spatial_pointwise.bias")
    )
    vol = conv3d_naive(
        x[None], params["spectral_conv3d.weight"], params.get("spectral_conv3d.bias"),
        stride=(1, stride, stride), padding=1,
    )  # [m, C, h', w']
    m, c = vol.shape[:2]
    stacked = vol.reshape(m * c, *vol.shape[2:])
    spectral = conv2d_naive(
        stacked, params["spectral_pointwise.weight"], params.get("spectral_pointwise.bias")
    )
    return spatial + spectral


# -- correlation and heads ----------------------------------------------------


def dw_xcorr_naive(z, x):
    """z: [C, hz, wz]; x: [C, hx, wx]; per-channel valid correlation."""
    c, hz, wz = z.shape
    _, hx, wx = x.shape
    ho, wo = hx - hz + 1, wx - wz + 1
    out = np.zeros((c, ho, wo), dtype=np.float64)
    for ci in range(c):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for u in range(hz):
                    for v in range(wz):
                        acc += z[ci, u, v] * x[ci, i + u, j + v]
                out[ci, i, j] = acc
    return out


def cosine_map_naive(z, x, eps=1e-12):
    """Cosine between the template vector and each sliding window of x."""
    c, hz, wz = z.shape
    _, hx, wx = x.shape
    ho, wo = hx - hz + 1, wx - wz + 1
    zn = math.sqrt(float((z * z).sum()))
    out = np.zeros((ho, wo), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            win = x[:, i : i + hz, j : j + wz]
            dot = float((z * win).sum())
            wn = math.sqrt(float((win * win).sum()))
            out[i, j] = dot / ((wn + eps) * (zn + eps))
    return out


def saa_naive(f_z, f_x, ez_w, ez_b, ex_w, ex_b, out_w, out_b):
    """Literal composition: 1x1 embeddings, depthwise correlation, 1x1
    collapse to one channel. Weights are [E, C] / [1, E] matrices."""
    e, c = ez_w.shape

    def embed(f, w, b):
        _, h, wd = f.shape
        out = np.zeros((e, h, wd), dtype=np.float64)
        for i in range(h):
            for j in range(wd):
                for k in range(e):
                    out[k, i, j] = b[k] + sum(w[k, ci] * f[ci, i, j] for ci in range(c))
        return out

    z_emb = embed(f_z, ez_w, ez_b)
    x_emb = embed(f_x, ex_w, ex_b)
    corr = dw_xcorr_naive(z_emb, x_emb)
    ho, wo = corr.shape[1:]
    out = np.zeros((1, ho, wo), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            out[0, i, j] = out_b[0] + sum(out_w[0, k] * corr[k, i, j] for k in range(e))
    return out


# -- fusion -------------------------------------------------------------------


def _conv1d_scalar(vec, weight, bias):
    """Zero-padded 1-D convolution of a channel vector with a [k] kernel."""
    c = len(vec)
    k = len(weight)
    half = k // 2
    out = np.zeros(c, dtype=np.float64)
    for i in range(c):
        acc = bias
        for u in range(k):
            src = i + u - half
            if 0 <= src < c:
                acc += weight[u] * vec[src]
        out[i] = acc
    return out


def safm_fuse_naive(r_f, h_f, intra_w, intra_b, inter_w, inter_b):
    """Scalar-loop evaluation of the four-term attention fusion.

    ``r_f``/``h_f`` are [C, H, W]; kernel vectors are 1-D. Returns the fused
    map plus the inter-modality weight rows for invariant checks.
    """
    c, hh, ww = r_f.shape
    r_a = np.array([r_f[ci].mean() for ci in range(c)])
    h_a = np.array([h_f[ci].mean() for ci in range(c)])
    r_intra = _conv1d_scalar(r_a, intra_w, intra_b)
    h_intra = _conv1d_scalar(h_a, intra_w, intra_b)
    r_inter = _conv1d_scalar(r_a, inter_w, inter_b)
    h_inter = _conv1d_scalar(h_a, inter_w, inter_b)

    def sigmoid(v):
        return 1.0 / (1.0 + math.exp(-v))

    fused = np.zeros_like(r_f, dtype=np.float64)
    w0 = np.zeros(c)
    w1 = np.zeros(c)
    for ci in range(c):
        rg = sigmoid(r_intra[ci])
        hg = sigmoid(h_intra[ci])
        mx = max(r_inter[ci], h_inter[ci])
        er = math.exp(r_inter[ci] - mx)
        eh = math.exp(h_inter[ci] - mx)
        w0[ci] = er / (er + eh)
        w1[ci] = eh / (er + eh)
        for i in range(hh):
            for j in range(ww):
                fused[ci, i, j] = (
                    rg * r_f[ci, i, j]
                    + hg * h_f[ci, i, j]
                    + w0[ci] * r_f[ci, i, j]
                    + w1[ci] * h_f[ci, i, j]
                )
    return fused, w0, w1


# -- whitened spectral angle --------------------------------------------------


def covariance_naive(spectra):
    """Uncentered second-moment matrix by explicit outer-product sum."""
    n, c = spectra.shape
    m = np.zeros((c, c), dtype=np.float64)
    for i in range(n):
        for a in range(c):
            for b in range(c):
                m[a, b] += spectra[i, a] * spectra[i, b]
    return m / n


def whitened_cosine_naive(m_inv_sqrt, s_vec, t_vec, eps=1e-12):
    """Scalar whitened cosine between one spectrum and the target."""
    c = len(s_vec)
    ws = np.array([sum(m_inv_sqrt[a, b] * s_vec[b] for b in range(c)) for a in range(c)])
    wt = np.array([sum(m_inv_sqrt[a, b] * t_vec[b] for b in range(c)) for a in range(c)])
    ns = math.sqrt(float((ws * ws).sum()))
    nt = math.sqrt(float((wt * wt).sum()))
    if ns < eps or nt < eps:
        return 0.0
    return float((ws * wt).sum() / (ns * nt))


# -- labels, losses, metrics --------------------------------------------------


def assign_regions_naive(gt_center, gt_size, map_shape):
    """Per-pixel two-ellipse scan; returns an int map in {-1, 0, 1}."""
    h, w = map_shape
    cx, cy = gt_center
    bw, bh = gt_size
    label = np.full((h, w), -1, dtype=np.int8)
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        return label
    for i in range(h):
        for j in range(w):
            e1 = ((j - cx) / (bw / 4.0)) ** 2 + ((i - cy) / (bh / 4.0)) ** 2
            e2 = ((j - cx) / (bw / 2.0)) ** 2 + ((i - cy) / (bh / 2.0)) ** 2
            if e1 <= 1.0:
                label[i, j] = 1
            elif e2 <= 1.0:
                label[i, j] = 0
    return label


def saal_pairwise_naive(sim_pos, sim_neg):
    """Normalized double sum over all positive/negative pairs."""
    total = 0.0
    for p in sim_pos:
        for n in sim_neg:
            total += n - p
    return total / (len(sim_pos) * len(sim_neg))


def cls_ce_naive(logits, label_map):
    """Class-balanced cross-entropy from [2, h, w] logits and an int map."""
    h, w = label_map.shape
    pos_terms, neg_terms = [], []
    for i in range(h):
        for j in range(w):
            z0, z1 = float(logits[0, i, j]), float(logits[1, i, j])
            mx = max(z0, z1)
            logsum = mx + math.log(math.exp(z0 - mx) + math.exp(z1 - mx))
            if label_map[i, j] == 1:
                pos_terms.append(logsum - z1)
            elif label_map[i, j] == -1:
                neg_terms.append(logsum - z0)
    total = 0.0
    if pos_terms:
        total += 0.5 * sum(pos_terms) / len(pos_terms)
    if neg_terms:
        total += 0.5 * sum(neg_terms) / len(neg_terms)
    return total


def rect_iou_naive(a, b):
    """(x1, y1, x2, y2) rectangle IoU."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def loc_loss_naive(pred_boxes, gt_box, clamp_min=1e-6):
    """Mean -ln(IoU) over decoded positive-location boxes."""
    terms = [
        -math.log(min(max(rect_iou_naive(p, gt_box), clamp_min), 1.0)) for p in pred_boxes
    ]
    return sum(terms) / len(terms)


def success_auc_naive(ious):
    """Double-loop success curve over the 21-point threshold grid."""
    thresholds = np.linspace(0.0, 1.0, 21)
    curve = []
    for t in thresholds:
        count = 0
        for v in ious:
            if v > t:
                count += 1
        curve.append(count / len(ious))
    return np.array(curve), float(np.mean(curve))


def precision_naive(errs):
    """Double-loop precision curve over 0..50 px."""
    curve = []
    for tau in range(51):
        count = 0
        for e in errs:
            if e <= tau:
                count += 1
        curve.append(count / len(errs))
    return np.array(curve), float(curve[20])
