"""Alternating adversarial training of a generator pair and its two discriminators.

Each iteration runs the generators once, then

1. updates D_a and D_s (generators untouched) on half their raw losses,
2. updates both generators on the combined objective (discriminators
   frozen), with gradients from both branches reaching the tied kernels.
"""
from __future__ import annotations

import contextlib
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import losses
from .checkpoint import CheckpointError, read_container, write_container
from .data import (
    TaskConfig, augment_flip, load_manifest, load_triplet, synthetic_dataset,
    task_transform,
)
from .networks import (
    DISC_WIDTHS, EMBED_DIM, Discriminator, GeneratorPair, build_discriminator,
    build_pipeline, init_weights, one_hot,
)


D_OBJECTIVE_SCALE = 0.5
LOG_NAME = "losses.csv"


@dataclass
class TrainConfig:
    learning_rate: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 200
    batch_size: int = 1
    lambda_l1: float = 100.0
    seed: int = 0
    resolution: int = 256
    task: str = "attributed_sketch"
    mask_fraction: float = 0.25
    model: str = "asgan"
    num_attributes: int = 3
    data: str = "synthetic:8"
    flip: bool = True
    max_iterations: int = 0
    checkpoint_every: int = 0
    lr_decay_epochs: int = 0
    alternate_generators: bool = False
    dropout_at_test: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.model not in ("asgan", "baseline_ed", "baseline_unet"):
            raise ValueError(f"unknown model {self.model!r}")
        losses.ObjectiveConfig(self.lambda_l1)
        TaskConfig(self.task, self.mask_fraction)

    @property
    def task_config(self) -> TaskConfig:
        return TaskConfig(self.task, self.mask_fraction)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string or typed values; unknown keys are rejected."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key])
        return cls(**kwargs)


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("bool", bool):
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ValueError(f"bad value for {key}: {raw!r}") from None
    return raw.strip()


def parse_kv_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: Sequence[str] = (), **extra) -> TrainConfig:
    values = {}
    if path is not None:
        values.update(parse_kv_lines(Path(path).read_text(), str(path)))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    values.update({k: v for k, v in extra.items() if v is not None})
    return TrainConfig.from_mapping(values)


# --------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    config: TrainConfig
    generators: GeneratorPair
    d_a: Discriminator
    d_s: Discriminator
    opt_g: torch.optim.Adam
    opt_d_a: torch.optim.Adam
    opt_d_s: torch.optim.Adam
    iteration: int = 0
    arch: dict = field(default_factory=dict)
    trace: dict | None = None


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.learning_rate,
                            betas=(cfg.beta1, cfg.beta2), fused=True)


def generator_params(pair: GeneratorPair) -> dict[str, torch.nn.Parameter]:
    """Unique generator parameters; tied kernels appear once as ``shared.i``."""
    out = {}
    for prefix, g in (("ga", pair.ga), ("gs", pair.gs)):
        for name, p in g.param_store().items():
            key = name if name.startswith("shared.") else f"{prefix}.{name}"
            out.setdefault(key, p)
    return out


def default_arch(cfg: TrainConfig) -> dict:
    return {"kind": cfg.model, "resolution": cfg.resolution,
            "num_attributes": cfg.num_attributes, "widths": None,
            "embed_dim": EMBED_DIM, "disc_widths": list(DISC_WIDTHS)}


def build_state(cfg: TrainConfig, arch: dict | None = None,
                dtype=torch.float32) -> TrainState:
    arch = dict(arch or default_arch(cfg))
    pair = build_pipeline(arch["kind"], arch["resolution"], arch["num_attributes"],
                          arch["widths"], arch["embed_dim"])
    d_a = build_discriminator(3, arch["resolution"], arch["disc_widths"])
    d_s = build_discriminator(9, arch["resolution"], arch["disc_widths"])
    init_weights(pair, cfg.seed)
    init_weights(d_a, cfg.seed + 1)
    init_weights(d_s, cfg.seed + 2)
    for m in (pair, d_a, d_s):
        m.to(dtype)
    torch.manual_seed(cfg.seed)
    return TrainState(
        config=cfg, generators=pair, d_a=d_a, d_s=d_s,
        opt_g=_adam(list(generator_params(pair).values()), cfg),
        opt_d_a=_adam(list(d_a.parameters()), cfg),
        opt_d_s=_adam(list(d_s.parameters()), cfg),
        arch=arch,
    )


def collate(batch, dtype=torch.float32):
    """Stack ``(input, target_attr, target_out, label_index)`` samples as NCHW."""
    if not batch:
        raise ValueError("empty batch")
    shapes = {s[0].shape for s in batch}
    if len(shapes) != 1:
        raise ValueError(f"batch mixes image shapes {sorted(shapes)}")

    def stack(k):
        return torch.from_numpy(np.stack([s[k] for s in batch])).permute(0, 3, 1, 2).to(dtype)

    labels = torch.tensor([int(s[3]) for s in batch], dtype=torch.long)
    return stack(0), stack(1), stack(2), labels


def _finite(name, value, iteration):
    if not torch.isfinite(value).all():
        raise FloatingPointError(f"non-finite {name} at iteration {iteration}")


def train_step(state: TrainState, batch) -> losses.LossReport:
    """One D phase and one G phase; advances ``state.iteration``."""
    cfg = state.config
    pair, d_a, d_s = state.generators, state.d_a, state.d_s
    dtype = next(d_a.parameters()).dtype
    x1, x2, y, labels = collate(batch, dtype)
    onehot = one_hot(labels, pair.num_attributes).to(dtype)
    it = state.iteration

    pair.set_dropout(True)
    x2_hat, y_hat = pair(x1, onehot)

    # D phase: generator outputs are detached, so generators get no gradient
    fake_face, fake_sketch = x2_hat.detach(), y_hat.detach()
    d_a_loss = losses.discriminator_loss(
        d_a.logits(losses.residual_input(x1, x2)),
        d_a.logits(losses.residual_input(x1, fake_face)))
    _finite("d_a_loss", d_a_loss, it)
    state.opt_d_a.zero_grad(set_to_none=True)
    (D_OBJECTIVE_SCALE * d_a_loss).backward()
    state.opt_d_a.step()

    d_s_loss = losses.discriminator_loss(
        d_s.logits(losses.triplet_input(x1, x2, y)),
        d_s.logits(losses.triplet_input(x1, fake_face, fake_sketch)))
    _finite("d_s_loss", d_s_loss, it)
    state.opt_d_s.zero_grad(set_to_none=True)
    (D_OBJECTIVE_SCALE * d_s_loss).backward()
    state.opt_d_s.step()

    # G phase against the freshly updated, frozen discriminators
    d_a.requires_grad_(False)
    d_s.requires_grad_(False)
    try:
        g_attr = losses.generator_adv_loss(d_a.logits(losses.residual_input(x1, x2_hat)))
        g_sketch = losses.generator_adv_loss(
            d_s.logits(losses.triplet_input(x1, x2_hat, y_hat)))
        l1_ga = losses.l1_loss(x2_hat, x2)
        l1_gs = losses.l1_loss(y_hat, y)
        for name, v in (("g_attr_adv", g_attr), ("g_sketch_adv", g_sketch),
                        ("l1_ga", l1_ga), ("l1_gs", l1_gs)):
            _finite(name, v, it)
        total = losses.total_generator_objective(g_attr, g_sketch, l1_ga, l1_gs,
                                                 cfg.lambda_l1)
        if cfg.alternate_generators:
            # even iterations train the attribute branch, odd ones the sketch branch
            if it % 2 == 0:
                objective = g_attr + cfg.lambda_l1 * l1_ga
                idle = pair.gs
            else:
                objective = g_sketch + cfg.lambda_l1 * l1_gs
                idle = pair.ga
        else:
            objective, idle = total, None
        state.opt_g.zero_grad(set_to_none=True)
        objective.backward()
        if idle is not None:
            active = {id(p) for p in (pair.ga if idle is pair.gs else pair.gs).parameters()}
            for p in idle.parameters():
                if id(p) not in active:
                    p.grad = None
        state.opt_g.step()
    finally:
        d_a.requires_grad_(True)
        d_s.requires_grad_(True)

    if state.trace is not None:
        state.trace = {"x1": x1, "x2": x2, "y": y, "x2_hat": fake_face,
                       "y_hat": fake_sketch,
                       "applied_d": ((D_OBJECTIVE_SCALE * d_a_loss).item(),
                                     (D_OBJECTIVE_SCALE * d_s_loss).item())}
    state.iteration += 1
    return losses.LossReport(
        d_a_loss=d_a_loss.item(), d_s_loss=d_s_loss.item(),
        g_attr_adv=g_attr.item(), g_sketch_adv=g_sketch.item(),
        l1_ga=l1_ga.item(), l1_gs=l1_gs.item(), total_g=total.item(),
    )


# --------------------------------------------------------------------------
# data feeding


def resolve_training_data(cfg: TrainConfig):
    """Triplets named by ``cfg.data``: ``synthetic:N`` or a dataset root."""
    if cfg.data.startswith("synthetic"):
        _, _, count = cfg.data.partition(":")
        n = int(count or 8)
        return synthetic_dataset(n, cfg.resolution, cfg.seed, cfg.num_attributes)
    manifest = load_manifest(cfg.data, "train")
    if not len(manifest):
        raise ValueError(f"no training entries in {cfg.data}")
    return [load_triplet(manifest, e, cfg.resolution) for e in manifest]


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def prepare_sample(t, cfg: TrainConfig, epoch: int, position: int):
    rng = np.random.default_rng([cfg.seed, epoch, position, 1])
    flip = bool(rng.random() < 0.5) and cfg.flip
    noise_seed = int(rng.integers(2**31))
    t = augment_flip(t, flip)
    inp, attr, out = task_transform(t, cfg.task_config, noise_seed)
    return inp, attr, out, t.label.index


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Constant, then linear decay to zero over the last ``lr_decay_epochs``."""
    if cfg.lr_decay_epochs <= 0:
        return cfg.learning_rate
    start = cfg.epochs - cfg.lr_decay_epochs
    if epoch < start:
        return cfg.learning_rate
    return cfg.learning_rate * max(0.0, 1.0 - (epoch - start + 1) / (cfg.lr_decay_epochs + 1))


@contextlib.contextmanager
def cpu_kernels(resolution: int):
    """oneDNN only above 64x64; the native kernels win on the narrow-spatial,
    wide layers that dominate small images."""
    prev = torch.backends.mkldnn.enabled
    torch.backends.mkldnn.enabled = resolution > 64
    try:
        yield
    finally:
        torch.backends.mkldnn.enabled = prev


def _set_lr(state: TrainState, lr: float):
    for opt in (state.opt_g, state.opt_d_a, state.opt_d_s):
        for group in opt.param_groups:
            group["lr"] = lr


def train(cfg: TrainConfig, out_dir=None, state: TrainState | None = None,
          triplets=None, on_step=None) -> TrainState:
    """Run (or continue) training up to ``cfg.epochs`` / ``cfg.max_iterations``.

    With ``out_dir`` set, appends to ``losses.csv`` every iteration, writes
    ``ckpt_XXXXXXX.asg`` every ``checkpoint_every`` iterations and ``last.asg``
    at the end.
    """
    triplets = triplets if triplets is not None else resolve_training_data(cfg)
    if not triplets:
        raise ValueError("training set is empty")
    if state is None:
        state = build_state(cfg)
    else:
        state.config = cfg
    per_epoch = math.ceil(len(triplets) / cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_iterations:
        total = min(total, cfg.max_iterations)
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / LOG_NAME
        if not log_path.exists() or state.iteration == 0:
            losses.write_log_header(log_path)
    with cpu_kernels(cfg.resolution):
        while state.iteration < total:
            epoch, k = divmod(state.iteration, per_epoch)
            order = epoch_order(cfg.seed, epoch, len(triplets))
            idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
            batch = [prepare_sample(triplets[i], cfg, epoch, k * cfg.batch_size + j)
                     for j, i in enumerate(idx)]
            _set_lr(state, learning_rate_at(cfg, epoch))
            report = train_step(state, batch)
            if log_path is not None:
                losses.append_log_row(log_path, state.iteration, epoch, report)
            if on_step is not None:
                on_step(state, report)
            if out_dir is not None and cfg.checkpoint_every and \
                    state.iteration % cfg.checkpoint_every == 0:
                checkpoint_save(state, out_dir / f"ckpt_{state.iteration:07d}.asg")
    if out_dir is not None:
        checkpoint_save(state, out_dir / "last.asg")
    return state


# --------------------------------------------------------------------------
# checkpoints


def _module_tensors(prefix, named):
    return {f"{prefix}/{k}": p.detach().cpu().numpy().astype("<f4", copy=False) for k, p in named.items()}


def _opt_tensors(prefix, opt, named):
    out = {}
    for k, p in named.items():
        st = opt.state.get(p)
        if not st:
            continue
        out[f"{prefix}/{k}/step"] = np.asarray(float(st["step"]), dtype="<f4")
        out[f"{prefix}/{k}/exp_avg"] = st["exp_avg"].detach().numpy().astype("<f4", copy=False)
        out[f"{prefix}/{k}/exp_avg_sq"] = st["exp_avg_sq"].detach().numpy().astype("<f4", copy=False)
    return out


def _named_modules(state: TrainState):
    return {
        "g": generator_params(state.generators),
        "d_a": dict(state.d_a.named_parameters()),
        "d_s": dict(state.d_s.named_parameters()),
    }


def checkpoint_save(state: TrainState, path) -> None:
    named = _named_modules(state)
    tensors = {}
    for prefix, params in named.items():
        tensors.update(_module_tensors(prefix, params))
    for prefix, opt, params in (("opt_g", state.opt_g, named["g"]),
                                ("opt_d_a", state.opt_d_a, named["d_a"]),
                                ("opt_d_s", state.opt_d_s, named["d_s"])):
        tensors.update(_opt_tensors(prefix, opt, params))
    tensors["rng/torch"] = torch.get_rng_state().numpy()
    meta = {
        "arch": state.arch,
        "config": state.config.to_dict(),
        "iteration": state.iteration,
        "lr": state.opt_g.param_groups[0]["lr"],
    }
    write_container(path, tensors, meta, state.generators.shared_names
                    if hasattr(state.generators, "shared_names") else [])


@torch.no_grad()
def checkpoint_load(path, config: TrainConfig | None = None) -> TrainState:
    """Rebuild the networks from the stored architecture and restore everything."""
    tensors, meta, shared = read_container(path)
    cfg = config or TrainConfig(**meta["config"])
    state = build_state(cfg, meta["arch"])
    if state.generators.shared_names != shared:
        raise CheckpointError(
            f"{path}: shared parameter list {shared} does not match the architecture"
        )
    named = _named_modules(state)
    for prefix, params in named.items():
        for k, p in params.items():
            key = f"{prefix}/{k}"
            if key not in tensors:
                raise CheckpointError(f"{path}: missing tensor {key}")
            p.copy_(torch.from_numpy(tensors[key]))
    for prefix, opt, params in (("opt_g", state.opt_g, named["g"]),
                                ("opt_d_a", state.opt_d_a, named["d_a"]),
                                ("opt_d_s", state.opt_d_s, named["d_s"])):
        for k, p in params.items():
            key = f"{prefix}/{k}"
            if f"{key}/step" not in tensors:
                continue
            opt.state[p] = {
                "step": torch.tensor(float(tensors[f"{key}/step"]), dtype=torch.float32),
                "exp_avg": torch.from_numpy(tensors[f"{key}/exp_avg"]).clone(),
                "exp_avg_sq": torch.from_numpy(tensors[f"{key}/exp_avg_sq"]).clone(),
            }
        for group in opt.param_groups:
            group["lr"] = meta["lr"]
    state.iteration = int(meta["iteration"])
    torch.set_rng_state(torch.from_numpy(tensors["rng/torch"]).clone())
    return state
