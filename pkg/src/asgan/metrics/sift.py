"""Scale-space keypoints with 128-bin gradient-histogram descriptors.

A compact SIFT-style extractor: Gaussian pyramid, difference-of-Gaussian
extrema, quadratic localisation, contrast and edge rejection, dominant
orientations and 4x4x8 descriptors (normalised, clipped at 0.2,
renormalised). Works on luminance in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .. import _kernels

INIT_SIGMA = 0.5
ORI_BINS = 36
ORI_SIG_FACTOR = 1.5
ORI_RADIUS = 3.0 * ORI_SIG_FACTOR
ORI_PEAK_RATIO = 0.8
DESCR_WIDTH = 4
DESCR_BINS = 8
DESCR_SCALE_FACTOR = 3.0
DESCR_MAG_THR = 0.2
BORDER = 5
MAX_INTERP_STEPS = 5


@dataclass
class DescriptorSet:
    descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, 128)))
    # one row per descriptor: x, y, scale, orientation (radians)
    keypoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.descriptors.ndim != 2:
            raise ValueError("descriptors must be a 2-D array")
        if len(self.keypoints) != len(self.descriptors):
            raise ValueError("need one keypoint per descriptor")

    def __len__(self):
        return len(self.descriptors)

    @property
    def length(self) -> int:
        return self.descriptors.shape[1]


def luminance01(image) -> np.ndarray:
    """Map an HxW or HxWxC image in [-1, 1] to HxW luminance in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] == 3:
            img = img @ np.array([0.299, 0.587, 0.114])
        elif img.shape[2] == 1:
            img = img[..., 0]
        else:
            raise ValueError(f"expected 1 or 3 channels, got {img.shape[2]}")
    elif img.ndim != 2:
        raise ValueError(f"expected an image, got shape {img.shape}")
    return (img + 1.0) * 0.5


def _blur(img, sigma):
    return ndimage.gaussian_filter(img, sigma, mode="nearest", truncate=4.0)


def _rnd(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


class SiftExtractor:
    """Callable ``image -> DescriptorSet``; the default extractor for FLSS."""

    def __init__(self, octave_layers=3, sigma=1.6, contrast_threshold=0.04,
                 edge_threshold=10.0, upsample=True, backend=None):
        self.octave_layers = octave_layers
        self.sigma = sigma
        self.contrast_threshold = contrast_threshold
        self.edge_threshold = edge_threshold
        self.upsample = upsample
        self.backend = backend

    def pyramid(self, gray):
        s = self.octave_layers
        if self.upsample:
            gray = ndimage.zoom(gray, 2, order=1, mode="nearest", grid_mode=True)
            init = 2 * INIT_SIGMA
        else:
            init = INIT_SIGMA
        base = _blur(gray, math.sqrt(max(self.sigma**2 - init**2, 0.01)))
        n_oct = max(1, int(math.floor(math.log2(min(gray.shape)))) - 3)
        k = 2.0 ** (1.0 / s)
        incr = [0.0]
        for i in range(1, s + 3):
            prev = self.sigma * k ** (i - 1)
            incr.append(math.sqrt((prev * k) ** 2 - prev**2))
        gauss, dogs = [], []
        img = base
        for o in range(n_oct):
            levels = [img]
            for i in range(1, s + 3):
                levels.append(_blur(levels[-1], incr[i]))
            stack = np.stack(levels)
            gauss.append(stack)
            dogs.append(np.ascontiguousarray(stack[1:] - stack[:-1]))
            img = stack[s][::2, ::2]
            if min(img.shape) < 2 * BORDER + 3:
                break
        return gauss, dogs

    def _localize(self, dog, layer, r, c):
        s = self.octave_layers
        _, H, W = dog.shape
        for _ in range(MAX_INTERP_STEPS):
            v = dog[layer, r, c]
            g = 0.5 * np.array([
                dog[layer, r, c + 1] - dog[layer, r, c - 1],
                dog[layer, r + 1, c] - dog[layer, r - 1, c],
                dog[layer + 1, r, c] - dog[layer - 1, r, c],
            ])
            dxx = dog[layer, r, c + 1] + dog[layer, r, c - 1] - 2 * v
            dyy = dog[layer, r + 1, c] + dog[layer, r - 1, c] - 2 * v
            dss = dog[layer + 1, r, c] + dog[layer - 1, r, c] - 2 * v
            dxy = 0.25 * (dog[layer, r + 1, c + 1] - dog[layer, r + 1, c - 1]
                          - dog[layer, r - 1, c + 1] + dog[layer, r - 1, c - 1])
            dxs = 0.25 * (dog[layer + 1, r, c + 1] - dog[layer + 1, r, c - 1]
                          - dog[layer - 1, r, c + 1] + dog[layer - 1, r, c - 1])
            dys = 0.25 * (dog[layer + 1, r + 1, c] - dog[layer + 1, r - 1, c]
                          - dog[layer - 1, r + 1, c] + dog[layer - 1, r - 1, c])
            hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
            try:
                off = -np.linalg.solve(hess, g)
            except np.linalg.LinAlgError:
                return None
            if np.all(np.abs(off) < 0.5):
                break
            if np.any(np.abs(off) > 1e6):
                return None
            c += _rnd(off[0])
            r += _rnd(off[1])
            layer += _rnd(off[2])
            if (layer < 1 or layer > s or r < BORDER or r >= H - BORDER
                    or c < BORDER or c >= W - BORDER):
                return None
        else:
            return None
        contrast = v + 0.5 * float(g @ off)
        if abs(contrast) * s < self.contrast_threshold:
            return None
        tr, det = dxx + dyy, dxx * dyy - dxy * dxy
        e = self.edge_threshold
        if det <= 0 or tr * tr * e >= (e + 1) ** 2 * det:
            return None
        return layer, r, c, off

    def __call__(self, image) -> DescriptorSet:
        kern = _kernels.get(self.backend)
        gray = luminance01(image)
        s = self.octave_layers
        gauss, dogs = self.pyramid(gray)
        pre_thr = 0.5 * self.contrast_threshold / s
        descs, kps = [], []
        for o, (gs, dog) in enumerate(zip(gauss, dogs)):
            for layer in range(1, s + 1):
                for r, c in kern.dog_extrema(dog, layer, pre_thr, BORDER):
                    found = self._localize(dog, layer, int(r), int(c))
                    if found is None:
                        continue
                    lyr, rr, cc, off = found
                    scale = self.sigma * 2.0 ** ((lyr + off[2]) / s)
                    img = gs[lyr]
                    hist = kern.orientation_histogram(
                        img, rr, cc, _rnd(ORI_RADIUS * scale), ORI_SIG_FACTOR * scale,
                        ORI_BINS)
                    row, col = rr + off[1], cc + off[0]
                    for angle in _dominant_orientations(hist):
                        raw = kern.descriptor(img, row, col, angle,
                                              DESCR_SCALE_FACTOR * scale,
                                              DESCR_WIDTH, DESCR_BINS)
                        vec = _normalize(raw)
                        if vec is None:
                            continue
                        unit = 2.0**o / (2.0 if self.upsample else 1.0)
                        descs.append(vec)
                        kps.append((col * unit, row * unit, scale * unit, angle))
        if not descs:
            return DescriptorSet()
        descs = np.asarray(descs)
        _, first = np.unique(descs, axis=0, return_index=True)
        keep = np.sort(first)
        return DescriptorSet(descs[keep], np.asarray(kps)[keep])


def _dominant_orientations(hist: np.ndarray) -> list[float]:
    n = len(hist)
    sm = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
          + (np.roll(hist, 2) + np.roll(hist, -2))) / 16.0
    peak = sm.max()
    if peak <= 0:
        return []
    out = []
    for i in range(n):
        left, right = sm[(i - 1) % n], sm[(i + 1) % n]
        if sm[i] > left and sm[i] > right and sm[i] >= ORI_PEAK_RATIO * peak:
            b = i + 0.5 * (left - right) / (left - 2 * sm[i] + right)
            out.append((b % n) * 2.0 * math.pi / n)
    return out


def _normalize(raw: np.ndarray):
    norm = np.linalg.norm(raw)
    if not norm > 0:
        return None
    vec = np.minimum(raw / norm, DESCR_MAG_THR)
    norm = np.linalg.norm(vec)
    return vec / norm


_default = SiftExtractor()


def extract_descriptors(image, extractor=None) -> DescriptorSet:
    """Keypoint descriptors of one image (empty for featureless images)."""
    return (extractor or _default)(image)
