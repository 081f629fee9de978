"""Adversarial and reconstruction terms of the ASGAN objective.

Discriminators return probabilities, but the adversarial terms are computed
from their logits: ``-log sigmoid(l) == softplus(-l)`` and
``-log(1 - sigmoid(l)) == softplus(l)``, which stays finite for saturated
outputs. Every term is a mean over the batch (and over pixels for L1).
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import torch


@dataclass
class ObjectiveConfig:
    lambda_l1: float = 100.0

    def __post_init__(self):
        if not self.lambda_l1 >= 0:
            raise ValueError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")


@dataclass
class LossReport:
    d_a_loss: float
    d_s_loss: float
    g_attr_adv: float
    g_sketch_adv: float
    l1_ga: float
    l1_gs: float
    total_g: float

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[float]:
        return [getattr(self, k) for k in self.header()]

    def as_dict(self) -> dict:
        return asdict(self)


def _same_shape(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def residual_input(x1, x):
    """What D_a sees: the pixelwise change from the unattributed face."""
    _same_shape(x1, x)
    return x - x1


def triplet_input(x1, face, sketch):
    """What D_s sees: (x1, face, sketch) stacked along channels, in that order."""
    _same_shape(x1, face, sketch)
    return torch.cat([x1, face, sketch], dim=1)


def softplus(x):
    # exact log(1 + e^x); F.softplus returns x itself past x = 20
    return torch.logaddexp(x, torch.zeros_like(x))


def discriminator_loss(real_logits, fake_logits):
    """``-[log D(real) + log(1 - D(fake))]``."""
    return (softplus(-real_logits) + softplus(fake_logits)).mean()


def generator_adv_loss(fake_logits):
    """Non-saturating form ``-log D(fake)``."""
    return softplus(-fake_logits).mean()


def attribute_adv_loss(d_a, x1, x2, x2_hat):
    """Residual-discriminator terms; returns ``(d_loss, g_loss)``."""
    real = d_a.logits(residual_input(x1, x2))
    fake = d_a.logits(residual_input(x1, x2_hat))
    return discriminator_loss(real, fake), generator_adv_loss(fake)


def sketch_adv_loss(d_s, x1, x2, y, x2_hat, y_hat):
    """Triplex-discriminator terms; returns ``(d_loss, g_loss)``."""
    real = d_s.logits(triplet_input(x1, x2, y))
    fake = d_s.logits(triplet_input(x1, x2_hat, y_hat))
    return discriminator_loss(real, fake), generator_adv_loss(fake)


def l1_loss(a, b):
    _same_shape(a, b)
    return (a - b).abs().mean()


def total_generator_objective(g_attr_adv, g_sketch_adv, l1_ga, l1_gs,
                              cfg: ObjectiveConfig | float = ObjectiveConfig()):
    lam = cfg.lambda_l1 if isinstance(cfg, ObjectiveConfig) else float(cfg)
    return g_attr_adv + g_sketch_adv + lam * (l1_ga + l1_gs)


def write_log_header(path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow(["iteration", "epoch"] + LossReport.header())


def append_log_row(path, iteration: int, epoch: int, report: LossReport) -> None:
    with open(path, "a", newline="") as fh:
        csv.writer(fh).writerow([iteration, epoch] + [repr(v) for v in report.row()])


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("iteration", "epoch") else float(v)) for k, v in r.items()}
            for r in rows]
