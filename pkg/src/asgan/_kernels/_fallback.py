"""NumPy implementations of the compiled kernels (same signatures, same results)."""
from __future__ import annotations

import numpy as np


def _round(x):
    # C round(): halves go away from zero
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def dog_extrema(dog, layer, threshold, border):
    dog = np.asarray(dog, dtype=np.float64)
    _, H, W = dog.shape
    if H - 2 * border <= 0 or W - 2 * border <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    rs, cs = slice(border, H - border), slice(border, W - border)
    v = dog[layer, rs, cs]
    is_max = v > 0
    is_min = v < 0
    for l in (layer - 1, layer, layer + 1):
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if l == layer and dr == 0 and dc == 0:
                    continue
                u = dog[l, border + dr:H - border + dr, border + dc:W - border + dc]
                is_max &= ~(u > v)
                is_min &= ~(u < v)
    keep = (np.abs(v) > threshold) & (is_max | is_min)
    rows, cols = np.nonzero(keep)
    return np.stack([rows + border, cols + border], axis=1).astype(np.int64)


def _gradients(img, ys, xs):
    gx = img[ys, xs + 1] - img[ys, xs - 1]
    gy = img[ys + 1, xs] - img[ys - 1, xs]
    return gx, gy


def orientation_histogram(img, row, col, radius, sigma, nbins):
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    dy, dx = dy.ravel(), dx.ravel()
    ys, xs = row + dy, col + dx
    ok = (ys > 0) & (ys < H - 1) & (xs > 0) & (xs < W - 1)
    dy, dx, ys, xs = dy[ok], dx[ok], ys[ok], xs[ok]
    gx, gy = _gradients(img, ys, xs)
    w = np.exp((dx * dx + dy * dy) * (-1.0 / (2.0 * sigma * sigma)))
    b = _round(nbins * np.arctan2(gy, gx) / (2.0 * np.pi)).astype(np.int64) % nbins
    hist = np.zeros(nbins)
    np.add.at(hist, b, w * np.sqrt(gx * gx + gy * gy))
    return hist


def descriptor(img, row, col, angle, hist_width, d, nbins):
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    radius = int(_round(hist_width * np.sqrt(2.0) * (d + 1) * 0.5))
    radius = min(radius, int(np.sqrt(float(H * H + W * W))))
    ri, ci = int(_round(row)), int(_round(col))
    cos_t, sin_t = np.cos(angle) / hist_width, np.sin(angle) / hist_width
    i, j = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    i, j = i.ravel(), j.ravel()
    c_rot = j * cos_t + i * sin_t
    r_rot = -j * sin_t + i * cos_t
    rbin = r_rot + d / 2.0 - 0.5
    cbin = c_rot + d / 2.0 - 0.5
    y, x = ri + i, ci + j
    ok = ((rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
          & (y > 0) & (y < H - 1) & (x > 0) & (x < W - 1))
    c_rot, r_rot, rbin, cbin, y, x = c_rot[ok], r_rot[ok], rbin[ok], cbin[ok], y[ok], x[ok]
    gx, gy = _gradients(img, y, x)
    mag = np.sqrt(gx * gx + gy * gy)
    ori = np.mod(np.arctan2(gy, gx) - angle, 2.0 * np.pi)
    obin = ori * (nbins / (2.0 * np.pi))
    v = mag * np.exp((c_rot * c_rot + r_rot * r_rot) * (-1.0 / (0.5 * d * d)))
    r0, c0, o0 = np.floor(rbin).astype(int), np.floor(cbin).astype(int), np.floor(obin).astype(int)
    rf, cf, of = rbin - r0, cbin - c0, obin - o0
    o0 = np.where(o0 < 0, o0 + nbins, o0)
    o0 = np.where(o0 >= nbins, o0 - nbins, o0)
    v_r1 = v * rf
    v_r0 = v - v_r1
    v_rc11 = v_r1 * cf
    v_rc10 = v_r1 - v_rc11
    v_rc01 = v_r0 * cf
    v_rc00 = v_r0 - v_rc01
    hist = np.zeros((d + 2, d + 2, nbins + 2))
    for dr, dc, part in ((1, 1, v_rc00), (1, 2, v_rc01), (2, 1, v_rc10), (2, 2, v_rc11)):
        np.add.at(hist, (r0 + dr, c0 + dc, o0), part - part * of)
        np.add.at(hist, (r0 + dr, c0 + dc, o0 + 1), part * of)
    inner = hist[1:d + 1, 1:d + 1]
    inner[..., 0] += inner[..., nbins]
    inner[..., 1] += inner[..., nbins + 1]
    return np.ascontiguousarray(inner[..., :nbins]).ravel()


def pairwise_sqdist(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        t = a[i] - b
        out[i] = np.einsum("jk,jk->j", t, t)
    return out


def match_count(d2, ratio, injective):
    d2 = np.asarray(d2, dtype=np.float64)
    n, m = d2.shape
    if n == 0 or m == 0:
        return 0
    r2 = ratio * ratio

    def two_smallest(a, axis):
        if a.shape[axis] == 1:
            first = np.take(a, 0, axis=axis)
            return first, np.full_like(first, np.inf)
        part = np.partition(a, 1, axis=axis)
        return np.take(part, 0, axis=axis), np.take(part, 1, axis=axis)

    row1, row2 = two_smallest(d2, 1)
    if not injective:
        return int(np.count_nonzero(row1 < r2 * row2))
    _, col2 = two_smallest(d2, 0)
    ok = (d2 < r2 * row2[:, None]) & (d2 < r2 * col2[None, :])
    ci, cj = np.nonzero(ok)
    if ci.size == 0:
        return 0
    order = np.lexsort((cj, ci, d2[ci, cj]))
    used_r = np.zeros(n, dtype=bool)
    used_c = np.zeros(m, dtype=bool)
    count = 0
    for k in order:
        i, j = ci[k], cj[k]
        if used_r[i] or used_c[j]:
            continue
        used_r[i] = used_c[j] = True
        count += 1
    return count
