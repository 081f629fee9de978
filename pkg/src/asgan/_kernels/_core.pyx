# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for keypoint extraction and descriptor matching.

Every function here has a pure-Python twin in ``_fallback.py`` with the same
signature and semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, cos, exp, floor, round, sin, sqrt, M_PI, INFINITY

cnp.import_array()


def dog_extrema(const double[:, :, ::1] dog, int layer, double threshold, int border):
    """(row, col) of scale-space extrema of ``dog[layer]`` above ``threshold``."""
    cdef Py_ssize_t H = dog.shape[1], W = dog.shape[2]
    cdef Py_ssize_t r, c, l, dr, dc
    cdef double v, u
    cdef bint is_max, is_min
    out = []
    for r in range(border, H - border):
        for c in range(border, W - border):
            v = dog[layer, r, c]
            if not (v > threshold or v < -threshold):
                continue
            is_max = v > 0
            is_min = v < 0
            for l in range(layer - 1, layer + 2):
                for dr in range(-1, 2):
                    for dc in range(-1, 2):
                        if l == layer and dr == 0 and dc == 0:
                            continue
                        u = dog[l, r + dr, c + dc]
                        if is_max and u > v:
                            is_max = False
                        if is_min and u < v:
                            is_min = False
                if not (is_max or is_min):
                    break
            if is_max or is_min:
                out.append((r, c))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return np.asarray(out, dtype=np.int64)


def orientation_histogram(const double[:, ::1] img, int row, int col, int radius,
                          double sigma, int nbins):
    """Gaussian-weighted histogram of gradient orientations around a point."""
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef int dy, dx, y, x, b
    cdef double gx, gy, w, denom = -1.0 / (2.0 * sigma * sigma)
    cdef double[::1] hist
    out = np.zeros(nbins, dtype=np.float64)
    hist = out
    for dy in range(-radius, radius + 1):
        y = row + dy
        if y <= 0 or y >= H - 1:
            continue
        for dx in range(-radius, radius + 1):
            x = col + dx
            if x <= 0 or x >= W - 1:
                continue
            gx = img[y, x + 1] - img[y, x - 1]
            gy = img[y + 1, x] - img[y - 1, x]
            w = exp((dx * dx + dy * dy) * denom)
            b = <int>round(nbins * atan2(gy, gx) / (2.0 * M_PI))
            b = b % nbins
            if b < 0:
                b += nbins
            hist[b] += w * sqrt(gx * gx + gy * gy)
    return out


def descriptor(const double[:, ::1] img, double row, double col, double angle,
               double hist_width, int d, int nbins):
    """Raw (unnormalised) ``d*d*nbins`` gradient histogram in the keypoint frame."""
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef int radius = <int>round(hist_width * sqrt(2.0) * (d + 1) * 0.5)
    cdef int max_radius = <int>sqrt(<double>(H * H + W * W))
    cdef int ri = <int>round(row), ci = <int>round(col)
    cdef int i, j, y, x, r0, c0, o0, k, rr, cc
    cdef double cos_t = cos(angle) / hist_width, sin_t = sin(angle) / hist_width
    cdef double exp_scale = -1.0 / (0.5 * d * d)
    cdef double bins_per_rad = nbins / (2.0 * M_PI)
    cdef double r_rot, c_rot, rbin, cbin, obin, gx, gy, mag, ori, w, v
    cdef double rf, cf, of, v_r1, v_r0, v_rc11, v_rc10, v_rc01, v_rc00
    if radius > max_radius:
        radius = max_radius
    hist_np = np.zeros((d + 2, d + 2, nbins + 2), dtype=np.float64)
    cdef double[:, :, ::1] hist = hist_np
    for i in range(-radius, radius + 1):
        for j in range(-radius, radius + 1):
            c_rot = j * cos_t + i * sin_t
            r_rot = -j * sin_t + i * cos_t
            rbin = r_rot + d / 2.0 - 0.5
            cbin = c_rot + d / 2.0 - 0.5
            y = ri + i
            x = ci + j
            if not (rbin > -1 and rbin < d and cbin > -1 and cbin < d
                    and y > 0 and y < H - 1 and x > 0 and x < W - 1):
                continue
            gx = img[y, x + 1] - img[y, x - 1]
            gy = img[y + 1, x] - img[y - 1, x]
            mag = sqrt(gx * gx + gy * gy)
            ori = atan2(gy, gx) - angle
            while ori < 0:
                ori += 2.0 * M_PI
            while ori >= 2.0 * M_PI:
                ori -= 2.0 * M_PI
            obin = ori * bins_per_rad
            w = exp((c_rot * c_rot + r_rot * r_rot) * exp_scale)
            v = mag * w
            r0 = <int>floor(rbin)
            c0 = <int>floor(cbin)
            o0 = <int>floor(obin)
            rf = rbin - r0
            cf = cbin - c0
            of = obin - o0
            if o0 < 0:
                o0 += nbins
            if o0 >= nbins:
                o0 -= nbins
            v_r1 = v * rf
            v_r0 = v - v_r1
            v_rc11 = v_r1 * cf
            v_rc10 = v_r1 - v_rc11
            v_rc01 = v_r0 * cf
            v_rc00 = v_r0 - v_rc01
            hist[r0 + 1, c0 + 1, o0] += v_rc00 - v_rc00 * of
            hist[r0 + 1, c0 + 1, o0 + 1] += v_rc00 * of
            hist[r0 + 1, c0 + 2, o0] += v_rc01 - v_rc01 * of
            hist[r0 + 1, c0 + 2, o0 + 1] += v_rc01 * of
            hist[r0 + 2, c0 + 1, o0] += v_rc10 - v_rc10 * of
            hist[r0 + 2, c0 + 1, o0 + 1] += v_rc10 * of
            hist[r0 + 2, c0 + 2, o0] += v_rc11 - v_rc11 * of
            hist[r0 + 2, c0 + 2, o0 + 1] += v_rc11 * of
    out_np = np.empty(d * d * nbins, dtype=np.float64)
    cdef double[::1] out = out_np
    for rr in range(d):
        for cc in range(d):
            hist[rr + 1, cc + 1, 0] += hist[rr + 1, cc + 1, nbins]
            hist[rr + 1, cc + 1, 1] += hist[rr + 1, cc + 1, nbins + 1]
            for k in range(nbins):
                out[(rr * d + cc) * nbins + k] = hist[rr + 1, cc + 1, k]
    return out_np


def pairwise_sqdist(const double[:, ::1] a, const double[:, ::1] b):
    """Squared Euclidean distances, summed in a fixed order (exactly symmetric)."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], L = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t
    out_np = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(L):
                t = a[i, k] - b[j, k]
                s += t * t
            out[i, j] = s
    return out_np


def match_count(const double[:, ::1] d2, double ratio, bint injective):
    """Matches accepted by the distance-ratio test.

    ``injective``: a pair must pass the test from both sides and pairs are
    accepted greedily by ascending distance, each descriptor used once.
    Otherwise every row whose nearest neighbour passes counts (many-to-one).
    """
    cdef Py_ssize_t n = d2.shape[0], m = d2.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2 = ratio * ratio, v
    if n == 0 or m == 0:
        return 0
    row1_np = np.full(n, INFINITY)
    row2_np = np.full(n, INFINITY)
    col2_np = np.full(m, INFINITY)
    col1_np = np.full(m, INFINITY)
    cdef double[::1] row1 = row1_np, row2 = row2_np, col1 = col1_np, col2 = col2_np
    for i in range(n):
        for j in range(m):
            v = d2[i, j]
            if v < row1[i]:
                row2[i] = row1[i]
                row1[i] = v
            elif v < row2[i]:
                row2[i] = v
            if v < col1[j]:
                col2[j] = col1[j]
                col1[j] = v
            elif v < col2[j]:
                col2[j] = v
    cdef int count = 0
    if not injective:
        for i in range(n):
            if row1[i] < r2 * row2[i]:
                count += 1
        return count
    ci, cj, cd = [], [], []
    for i in range(n):
        for j in range(m):
            v = d2[i, j]
            if v < r2 * row2[i] and v < r2 * col2[j]:
                ci.append(i)
                cj.append(j)
                cd.append(v)
    if not ci:
        return 0
    order = np.lexsort((np.asarray(cj), np.asarray(ci), np.asarray(cd)))
    used_r = np.zeros(n, dtype=np.uint8)
    used_c = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] ur = used_r, uc = used_c
    for k in order:
        i = ci[k]
        j = cj[k]
        if ur[i] or uc[j]:
            continue
        ur[i] = 1
        uc[j] = 1
        count += 1
    return count
