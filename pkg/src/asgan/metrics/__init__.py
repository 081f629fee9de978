"""Image-quality metrics: SSIM and the feature-level similarity score."""
from .evaluate import MetricReport, evaluate, evaluate_pair, markdown_table, score_pairs
from .matching import flss, match_count, pair_score
from .sift import DescriptorSet, SiftExtractor, extract_descriptors
from .ssim import ssim

__all__ = [
    "DescriptorSet", "MetricReport", "SiftExtractor", "evaluate", "evaluate_pair",
    "extract_descriptors", "flss", "markdown_table", "match_count", "pair_score",
    "score_pairs", "ssim",
]
