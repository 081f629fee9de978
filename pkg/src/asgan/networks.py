"""Generators, discriminators and the weight-tied W-net.

All convolutions use 4x4 kernels with stride 2 and padding 1, so every
encoder layer halves the spatial size and every decoder layer doubles it.
Kernels are held in ``ParameterList`` containers and applied functionally,
which lets two generators hold the very same ``Parameter`` objects: the
up-convolution kernels of G_a's decoder (layout ``(in, out, 4, 4)``) are
read by G_s's encoder as ordinary convolution kernels (layout
``(out, in, 4, 4)``), i.e. each tied encoder layer is the adjoint of the
matching decoder layer.
"""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

KERNEL = 4
LEAK = 0.2
DROPOUT_RATE = 0.5
N_DROPOUT_LAYERS = 3
EMBED_DIM = 64
MAX_WIDTH = 512
DISC_WIDTHS = (64, 128, 256, 512, 512, 512)


def encoder_widths(resolution: int) -> tuple[int, ...]:
    """Feature-map schedule reaching a 1x1 bottleneck at ``resolution``.

    256 gives ``(64, 128, 256, 512, 512, 512, 512, 512)``; smaller powers of
    two drop innermost 512 layers (64 gives six layers).
    """
    depth = _log2(resolution)
    if depth < 1:
        raise ValueError(f"resolution must be a power of two >= 2, got {resolution}")
    return tuple(min(64 * 2**i, MAX_WIDTH) for i in range(depth))


def _log2(n: int) -> int:
    if not isinstance(n, int) or n < 1 or n & (n - 1):
        raise ValueError(f"resolution must be a positive power of two, got {n!r}")
    return n.bit_length() - 1


def _down(x, weight, bias):
    return F.conv2d(x, weight, bias, stride=2, padding=1)


def _up(x, weight, bias):
    return F.conv_transpose2d(x, weight, bias, stride=2, padding=1)


def _kernel(c_out: int, c_in: int) -> nn.Parameter:
    return nn.Parameter(torch.zeros(c_out, c_in, KERNEL, KERNEL))


def _norm(channels: int) -> nn.BatchNorm2d:
    # batch statistics at train and test time alike (no running buffers)
    return nn.BatchNorm2d(channels, track_running_stats=False)


class Generator(nn.Module):
    """Encoder-decoder generator, optionally with U-net skips and label fusion.

    ``enc_kernels[i]`` maps ``in -> widths[i]`` (conv layout); ``dec_kernels[j]``
    is decoder layer ``j`` counted from the bottleneck (conv-transpose layout).
    Passing ``tied_encoder`` (another generator's ``dec_kernels``) makes this
    generator's encoder reuse those kernels in reverse order instead of owning
    its own.
    """

    def __init__(
        self,
        resolution: int,
        widths: Sequence[int] | None = None,
        *,
        in_channels: int = 3,
        out_channels: int = 3,
        skips: bool = False,
        num_attributes: int | None = None,
        embed_dim: int = EMBED_DIM,
        tied_encoder: nn.ParameterList | None = None,
        topology: str = "generator",
    ):
        super().__init__()
        widths = tuple(widths) if widths is not None else encoder_widths(resolution)
        n = len(widths)
        if _log2(resolution) < n:
            raise ValueError(
                f"resolution {resolution} is too small for a {n}-layer encoder"
            )
        self.resolution = resolution
        self.widths = widths
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.skips = skips
        self.num_attributes = num_attributes
        self.embed_dim = embed_dim
        self.topology = topology
        self.dropout_active = True
        self.aliases: dict[str, str] = {}
        self.bottleneck_size = resolution >> n

        enc_in = (in_channels,) + widths[:-1]
        if tied_encoder is None:
            self.enc_kernels = nn.ParameterList(
                [_kernel(widths[i], enc_in[i]) for i in range(n)]
            )
            self.tied = False
        else:
            shapes = [tuple(p.shape) for p in reversed(tied_encoder)]
            want = [(widths[i], enc_in[i], KERNEL, KERNEL) for i in range(n)]
            if shapes != want:
                raise ValueError(
                    "tied kernels do not match this encoder schedule: "
                    f"{shapes} != {want}"
                )
            self.enc_kernels = nn.ParameterList(list(reversed(tied_encoder)))
            self.tied = True
        self.enc_biases = nn.ParameterList(
            [nn.Parameter(torch.zeros(w)) for w in widths]
        )
        # no norm on the first layer, nor where a layer's output is 1x1
        self.enc_norms = nn.ModuleDict(
            {
                str(i): _norm(widths[i])
                for i in range(1, n)
                if resolution >> (i + 1) > 1
            }
        )

        if num_attributes is not None:
            flat = widths[-1] * self.bottleneck_size**2
            self.label_embed = nn.Linear(num_attributes, embed_dim)
            self.fuse = nn.Linear(flat + embed_dim, flat)

        dec_out = tuple(reversed(widths[:-1])) + (out_channels,)
        dec_in = [widths[-1]]
        for j in range(1, n):
            dec_in.append(dec_out[j - 1] * (2 if skips else 1))
        self.dec_in = tuple(dec_in)
        self.dec_out = dec_out
        self.dec_kernels = nn.ParameterList(
            [_kernel(dec_in[j], dec_out[j]) for j in range(n)]
        )
        self.dec_biases = nn.ParameterList(
            [nn.Parameter(torch.zeros(c)) for c in dec_out]
        )
        self.dec_norms = nn.ModuleList([_norm(c) for c in dec_out[:-1]])

    def encode(self, x) -> list[torch.Tensor]:
        """Return every encoder activation, outermost first."""
        feats = []
        h = x
        for i, (w, b) in enumerate(zip(self.enc_kernels, self.enc_biases)):
            h = _down(h, w, b)
            norm = self.enc_norms[str(i)] if str(i) in self.enc_norms else None
            if norm is not None:
                h = norm(h)
            h = F.leaky_relu(h, LEAK)
            feats.append(h)
        return feats

    def fuse_label(self, bottleneck, onehot):
        b = bottleneck.shape[0]
        flat = bottleneck.reshape(b, -1)
        emb = self.label_embed(onehot.to(flat.dtype))
        fused = F.relu(self.fuse(torch.cat([flat, emb], dim=1)))
        return fused.reshape(bottleneck.shape)

    def decode(self, bottleneck, feats: Sequence[torch.Tensor] = ()):
        n = len(self.widths)
        h = bottleneck
        for j in range(n):
            if j > 0 and self.skips:
                h = torch.cat([h, feats[n - 1 - j]], dim=1)
            h = _up(h, self.dec_kernels[j], self.dec_biases[j])
            if j == n - 1:
                return torch.tanh(h)
            h = self.dec_norms[j](h)
            if j < N_DROPOUT_LAYERS and self.dropout_active:
                h = F.dropout(h, DROPOUT_RATE, training=True)
            h = F.relu(h)

    def forward(self, x, onehot=None):
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise ValueError(
                f"expected {self.resolution}x{self.resolution} input, "
                f"got {tuple(x.shape[-2:])}"
            )
        feats = self.encode(x)
        z = feats[-1]
        if self.num_attributes is not None:
            if onehot is None:
                raise ValueError("this generator needs an attribute label")
            z = self.fuse_label(z, onehot)
        return self.decode(z, feats)

    def param_store(self) -> dict[str, nn.Parameter]:
        return {self.aliases.get(k, k): p for k, p in self.named_parameters()}

    def layer_table(self) -> list[dict]:
        """Human-readable layer list (kind, channels, norm, dropout, activation)."""
        rows = []
        n = len(self.widths)
        enc_in = (self.in_channels,) + self.widths[:-1]
        for i in range(n):
            rows.append(dict(kind="conv-down", in_channels=enc_in[i],
                             out_channels=self.widths[i],
                             has_batchnorm=str(i) in self.enc_norms,
                             activation="leaky_relu(0.2)", has_dropout=False))
        if self.num_attributes is not None:
            rows.append(dict(kind="linear", in_channels=self.num_attributes,
                             out_channels=self.embed_dim, has_batchnorm=False,
                             activation="none", has_dropout=False))
            rows.append(dict(kind="linear", in_channels=self.fuse.in_features,
                             out_channels=self.fuse.out_features,
                             has_batchnorm=False, activation="relu",
                             has_dropout=False))
        for j in range(n):
            last = j == n - 1
            rows.append(dict(kind="conv-up", in_channels=self.dec_in[j],
                             out_channels=self.dec_out[j], has_batchnorm=not last,
                             activation="tanh" if last else "relu",
                             has_dropout=not last and j < N_DROPOUT_LAYERS))
        return rows


class Discriminator(nn.Module):
    """Strided conv stack collapsed to one probability per sample."""

    def __init__(self, in_channels: int, resolution: int,
                 widths: Sequence[int] = DISC_WIDTHS, topology="discriminator"):
        super().__init__()
        widths = tuple(widths)
        n = len(widths)
        depth = _log2(resolution)
        if depth < n:
            raise ValueError(
                f"discriminator needs inputs of at least {2**n}x{2**n}, "
                f"got resolution {resolution}"
            )
        self.in_channels = in_channels
        self.resolution = resolution
        self.widths = widths
        self.topology = topology
        self.aliases: dict[str, str] = {}
        ins = (in_channels,) + widths[:-1]
        self.kernels = nn.ParameterList([_kernel(widths[i], ins[i]) for i in range(n)])
        self.biases = nn.ParameterList([nn.Parameter(torch.zeros(w)) for w in widths])
        self.norms = nn.ModuleDict(
            {str(i): _norm(widths[i]) for i in range(1, n) if resolution >> (i + 1) > 1}
        )
        self.final_size = resolution >> n
        self.head = nn.Conv2d(widths[-1], 1, self.final_size)

    def logits(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            raise ValueError(
                f"expected {self.resolution}x{self.resolution} input, "
                f"got {tuple(x.shape[-2:])}"
            )
        h = x
        for i, (w, b) in enumerate(zip(self.kernels, self.biases)):
            h = _down(h, w, b)
            if str(i) in self.norms:
                h = self.norms[str(i)](h)
            h = F.leaky_relu(h, LEAK)
        return self.head(h).reshape(-1)

    def forward(self, x):
        return torch.sigmoid(self.logits(x))

    def param_store(self) -> dict[str, nn.Parameter]:
        return dict(self.named_parameters())


class GeneratorPair(nn.Module):
    """Two chained generators: ``x1 -> G_a -> x2_hat -> G_s -> y_hat``."""

    def __init__(self, ga: Generator, gs: Generator, kind: str):
        super().__init__()
        self.ga = ga
        self.gs = gs
        self.kind = kind

    @property
    def shared_names(self) -> list[str]:
        return sorted(set(self.ga.aliases.values()) & set(self.gs.aliases.values()),
                      key=lambda s: int(s.split(".")[1]))

    @property
    def resolution(self):
        return self.ga.resolution

    @property
    def num_attributes(self):
        return self.ga.num_attributes

    def set_dropout(self, active: bool):
        self.ga.dropout_active = active
        self.gs.dropout_active = active

    def forward(self, x1, onehot):
        x2_hat = self.ga(x1, onehot)
        return x2_hat, self.gs(x2_hat)


class WNet(GeneratorPair):
    """G_a's decoder kernels double as G_s's encoder kernels."""

    def __init__(self, ga: Generator, gs: Generator):
        super().__init__(ga, gs, kind="asgan")


def build_ga(resolution: int, num_attributes: int = 3, widths=None,
             embed_dim: int = EMBED_DIM) -> Generator:
    if num_attributes < 1:
        raise ValueError("num_attributes must be >= 1")
    return Generator(resolution, widths, num_attributes=num_attributes,
                     embed_dim=embed_dim, topology="generator_a")


def build_gs(resolution: int, shared_from: Generator | None = None,
             widths=None) -> Generator:
    """U-net sketch generator; with ``shared_from`` its encoder is tied."""
    if shared_from is None:
        return Generator(resolution, widths, skips=True, topology="generator_s")
    if not isinstance(shared_from, Generator) or shared_from.skips:
        raise ValueError("shared_from must be an encoder-decoder G_a")
    if shared_from.resolution != resolution:
        raise ValueError("G_a and G_s must share a resolution")
    gs = Generator(resolution, shared_from.widths, skips=True,
                   in_channels=shared_from.out_channels,
                   tied_encoder=shared_from.dec_kernels, topology="generator_s")
    n = len(shared_from.widths)
    for i in range(n):
        alias = f"shared.{i}"
        gs.aliases[f"enc_kernels.{i}"] = alias
        shared_from.aliases[f"dec_kernels.{n - 1 - i}"] = alias
    return gs


def build_wnet(resolution: int, num_attributes: int = 3, widths=None,
               embed_dim: int = EMBED_DIM) -> WNet:
    ga = build_ga(resolution, num_attributes, widths, embed_dim)
    return WNet(ga, build_gs(resolution, ga))


def build_discriminator(in_channels: int, resolution: int = 256,
                        widths: Sequence[int] = DISC_WIDTHS) -> Discriminator:
    if in_channels not in (3, 9):
        raise ValueError(f"in_channels must be 3 (D_a) or 9 (D_s), got {in_channels}")
    return Discriminator(in_channels, resolution, widths)


def build_baseline_ed(resolution: int, num_attributes: int | None = None,
                      widths=None, embed_dim: int = EMBED_DIM) -> Generator:
    return Generator(resolution, widths, num_attributes=num_attributes,
                     embed_dim=embed_dim, topology="baseline_ed")


def build_baseline_unet(resolution: int, num_attributes: int | None = None,
                        widths=None, embed_dim: int = EMBED_DIM) -> Generator:
    return Generator(resolution, widths, skips=True, num_attributes=num_attributes,
                     embed_dim=embed_dim, topology="baseline_unet")


def build_pipeline(kind: str, resolution: int, num_attributes: int = 3,
                   widths=None, embed_dim: int = EMBED_DIM) -> GeneratorPair:
    """``asgan`` (tied W-net), ``baseline_ed`` or ``baseline_unet`` pair.

    Baseline pairs condition their first stage on the label the same way
    G_a does, so one model covers every attribute.
    """
    if kind == "asgan":
        return build_wnet(resolution, num_attributes, widths, embed_dim)
    if kind == "baseline_ed":
        build = build_baseline_ed
    elif kind == "baseline_unet":
        build = build_baseline_unet
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    first = build(resolution, num_attributes, widths, embed_dim)
    second = build(resolution, None, widths, embed_dim)
    return GeneratorPair(first, second, kind)


def unique_parameters(*modules: nn.Module) -> list[nn.Parameter]:
    seen, out = set(), []
    for m in modules:
        for p in m.parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
    return out


def count_params(*modules: nn.Module) -> int:
    """Number of scalars, counting each shared storage once."""
    return sum(p.numel() for p in unique_parameters(*modules))


EMBED_STD = 1.0


@torch.no_grad()
def init_weights(net: nn.Module, seed: int, std: float = 0.02) -> nn.Module:
    """Kernels ~ N(0, std^2), biases 0, norm scale 1 / shift 0.

    The label embedding is a lookup table (one-hot in), so it is drawn like
    one, N(0, EMBED_STD^2); at kernel scale the code is ~1% of the fused
    bottleneck and the generator learns to ignore it.
    """
    gen = torch.Generator().manual_seed(seed)
    seen = set()
    for name, p in net.named_parameters():
        if id(p) in seen:
            continue
        seen.add(id(p))
        leaf = name.rsplit(".", 1)[-1]
        owner = net.get_submodule(name.rsplit(".", 1)[0]) if "." in name else net
        if isinstance(owner, nn.BatchNorm2d):
            p.fill_(1.0 if leaf == "weight" else 0.0)
        elif p.dim() >= 2:
            scale = EMBED_STD if name.endswith("label_embed.weight") else std
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
        else:
            p.zero_()
    return net


def one_hot(index, num_attributes: int, batch: int | None = None) -> torch.Tensor:
    idx = torch.as_tensor(index, dtype=torch.long).reshape(-1)
    if (idx < 0).any() or (idx >= num_attributes).any():
        raise ValueError(
            f"attribute index out of range [0, {num_attributes}): {idx.tolist()}"
        )
    if batch is not None and idx.numel() == 1:
        idx = idx.expand(batch)
    return F.one_hot(idx, num_attributes).float()


def forward_wnet(w: GeneratorPair, x1, label, train_mode: bool = True,
                 seed: int | None = None, dropout_at_test: bool = True):
    """Run both stages; returns ``(x2_hat, y_hat)``.

    ``label`` is an attribute index (or a batch of them). Dropout supplies the
    generator noise; it stays on at test time unless ``dropout_at_test`` is
    false. A ``seed`` reseeds the global torch RNG first so the call is
    reproducible.
    """
    if seed is not None:
        torch.manual_seed(seed)
    onehot = one_hot(label, w.num_attributes, batch=x1.shape[0]).to(x1.dtype)
    prev = w.ga.dropout_active
    w.set_dropout(train_mode or dropout_at_test)
    try:
        return w(x1, onehot)
    finally:
        w.set_dropout(prev)


def parameter_ratio(resolution: int = 256, num_attributes: int = 3) -> float:
    """Size of the tied W-net relative to a standalone G_a plus an untied G_s."""
    w = build_wnet(resolution, num_attributes)
    untied = count_params(build_ga(resolution, num_attributes)) + count_params(
        build_gs(resolution)
    )
    return count_params(w) / untied

