"""Test-split inference, metric reports and the comparison table."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..data import TaskConfig, load_manifest, load_triplet, task_transform
from ..networks import GeneratorPair, forward_wnet
from ..training import checkpoint_load, cpu_kernels
from .matching import RATIO, pair_score
from .sift import extract_descriptors
from .ssim import ssim

CSV_FIELDS = ("id", "ssim", "flss")


@dataclass
class MetricReport:
    per_image: list = field(default_factory=list)  # (id, ssim, flss contribution)
    mean_ssim: float = float("nan")
    s_flss: float = float("nan")
    timing: dict = field(default_factory=dict)  # seconds per metric
    name: str = "asgan"
    dataset: str = "synthetic"
    # many-to-one matching can push FLSS above 1
    injective: bool = True

    def __post_init__(self):
        if self.per_image:
            if self.injective and not 0.0 <= self.s_flss <= 1.0:
                raise ValueError(f"S_FLSS out of range: {self.s_flss}")
            if any(not -1.0 - 1e-9 <= s <= 1.0 + 1e-9 for _, s, _ in self.per_image):
                raise ValueError("SSIM value outside [-1, 1]")

    def __len__(self):
        return len(self.per_image)

    @property
    def ids(self) -> list[str]:
        return [r[0] for r in self.per_image]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for id_, s, f in self.per_image:
                w.writerow((id_, repr(float(s)), repr(float(f))))

    def markdown(self) -> str:
        return markdown_table([self])


def markdown_table(reports) -> str:
    """Rows are model variants, columns SSIM and FLSS per dataset, then timings."""
    reports = list(reports)
    datasets = list(dict.fromkeys(r.dataset for r in reports))
    names = list(dict.fromkeys(r.name for r in reports))
    cell = {(r.name, r.dataset): r for r in reports}
    head = ["Model"] + [f"{d} {m}" for d in datasets for m in ("SSIM", "FLSS")]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for n in names:
        row = [n]
        for d in datasets:
            r = cell.get((n, d))
            row += ["-", "-"] if r is None else [f"{r.mean_ssim:.4f}", f"{r.s_flss:.4f}"]
        lines.append("| " + " | ".join(row) + " |")
    row = ["Time (s)"]
    for d in datasets:
        rs = [r for r in reports if r.dataset == d]
        for m in ("ssim", "flss"):
            row.append(f"{np.mean([r.timing.get(m, float('nan')) for r in rs]):.3f}")
    lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def score_pairs(ids, generated, truth, extractor=None, injective: bool = True,
                ratio: float = RATIO, name: str = "asgan",
                dataset: str = "synthetic") -> MetricReport:
    """SSIM and FLSS of index-aligned generated/target images, timed per metric."""
    ids, generated, truth = list(ids), list(generated), list(truth)
    if not ids:
        raise ValueError("nothing to evaluate")
    if not len(ids) == len(generated) == len(truth):
        raise ValueError("ids, generated and truth must have equal length")
    t0 = time.perf_counter()
    ss = [ssim(g, t) for g, t in zip(generated, truth)]
    t1 = time.perf_counter()
    ff = [pair_score(extract_descriptors(g, extractor), extract_descriptors(t, extractor),
                     ratio=ratio, injective=injective)
          for g, t in zip(generated, truth)]
    t2 = time.perf_counter()
    return MetricReport(
        per_image=list(zip(ids, ss, ff)), mean_ssim=float(np.mean(ss)),
        s_flss=float(np.mean(ff)), timing={"ssim": t1 - t0, "flss": t2 - t1},
        name=name, dataset=dataset, injective=injective,
    )


def _to_tensor(img, dtype):
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].to(dtype)


def _to_image(t):
    return t[0].detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32)


@torch.no_grad()
def run_generators(pair: GeneratorPair, triplets, task: TaskConfig, seed: int = 0,
                   attribute=None, dropout_at_test: bool = True):
    """Inference over ``triplets``; yields dicts with inputs, outputs and targets.

    Each sample gets its own dropout seed (``seed + position``) so results do
    not depend on evaluation order elsewhere in the process.
    """
    dtype = next(pair.parameters()).dtype
    with cpu_kernels(pair.resolution):
        for i, t in enumerate(triplets):
            inp, attr, out = task_transform(t, task, rng_seed=seed + i)
            label = t.label.index if attribute is None else attribute
            x2_hat, y_hat = forward_wnet(pair, _to_tensor(inp, dtype), label,
                                         train_mode=False, seed=seed + i,
                                         dropout_at_test=dropout_at_test)
            yield {"id": t.id, "input": inp, "x2_hat": _to_image(x2_hat),
                   "y_hat": _to_image(y_hat), "target_attr": attr, "target_out": out,
                   "x1": t.x1, "x2": t.x2, "y": t.y, "label": label}


def evaluate_pair(pair: GeneratorPair, triplets, task: TaskConfig, seed: int = 0,
                  extractor=None, injective: bool = True, dropout_at_test: bool = True,
                  name: str = "asgan", dataset: str = "synthetic") -> MetricReport:
    """Score the stage-two output of ``pair`` against each task target."""
    outs = list(run_generators(pair, triplets, task, seed, dropout_at_test=dropout_at_test))
    return score_pairs([o["id"] for o in outs], [o["y_hat"] for o in outs],
                       [o["target_out"] for o in outs], extractor=extractor,
                       injective=injective, name=name, dataset=dataset)


def load_test_split(manifest_root, resolution: int):
    manifest = load_manifest(manifest_root, "test")
    if not len(manifest):
        raise ValueError(f"{manifest_root}: test split is empty")
    return [load_triplet(manifest, e, resolution) for e in manifest]


def evaluate(checkpoint, manifest_root, task: TaskConfig | None = None, seed: int = 0,
             extractor=None, injective: bool = True, name: str | None = None,
             dataset: str | None = None) -> MetricReport:
    """Load a checkpoint and score it on the test split of ``manifest_root``."""
    state = checkpoint_load(checkpoint)
    cfg = state.config
    task = task or cfg.task_config
    triplets = load_test_split(manifest_root, cfg.resolution)
    return evaluate_pair(state.generators, triplets, task, seed, extractor=extractor,
                         injective=injective, dropout_at_test=cfg.dropout_at_test,
                         name=name or cfg.model, dataset=dataset or Path(manifest_root).name)
