"""Descriptor matching and the feature-level similarity score (FLSS)."""
from __future__ import annotations

import numpy as np

from .. import _kernels
from .sift import DescriptorSet, extract_descriptors

RATIO = 0.8


def _as_array(s) -> np.ndarray:
    if isinstance(s, DescriptorSet):
        return s.descriptors
    arr = np.asarray(s, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    if arr.ndim != 2:
        raise ValueError(f"descriptors must be 2-D, got shape {arr.shape}")
    return arr


def match_count(a, b, ratio: float = RATIO, injective: bool = True, backend=None) -> int:
    """Number of descriptor matches between two sets.

    Pairs must pass the distance-ratio test. In the default injective mode
    the test is applied from both sides and pairs are taken greedily by
    ascending distance, each descriptor used at most once, so the count never
    exceeds ``min(len(a), len(b))`` and is symmetric. ``injective=False``
    counts every descriptor of ``a`` whose nearest neighbour in ``b`` passes
    the one-sided test (many-to-one allowed).
    """
    a, b = _as_array(a), _as_array(b)
    if len(a) == 0 or len(b) == 0:
        return 0
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"descriptor length mismatch: {a.shape[1]} vs {b.shape[1]}")
    kern = _kernels.get(backend)
    d2 = kern.pairwise_sqdist(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return int(kern.match_count(d2, float(ratio), bool(injective)))


def pair_score(a, b, **kw) -> float:
    """Matches over the smaller set size; 1 when both sets are empty, 0 when one is."""
    na, nb = len(_as_array(a)), len(_as_array(b))
    if min(na, nb) == 0:
        return 1.0 if na == nb == 0 else 0.0
    return match_count(a, b, **kw) / min(na, nb)


def flss(generated, truth, extractor=None, ratio: float = RATIO,
         injective: bool = True) -> tuple[float, list[float]]:
    """Dataset score and per-pair contributions for index-aligned image lists."""
    generated, truth = list(generated), list(truth)
    if not generated or not truth:
        raise ValueError("flss needs at least one image pair")
    if len(generated) != len(truth):
        raise ValueError(f"list lengths differ: {len(generated)} vs {len(truth)}")
    contrib = [
        pair_score(extract_descriptors(g, extractor), extract_descriptors(t, extractor),
                   ratio=ratio, injective=injective)
        for g, t in zip(generated, truth)
    ]
    return float(np.mean(contrib)), contrib
