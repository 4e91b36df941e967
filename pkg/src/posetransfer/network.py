"""Skip-connected progressive autoencoder with pose injected at the bottleneck.

Feature maps at spatial size ``S`` carry ``C(S) = 16384 / S`` channels for
``S >= 64`` and 512 at the 32x32 bottleneck, so a level-1024 encoder walks
16, 32, 64, 128, 256, 512 channels. Layout at level ``L``::

    rgb_in (1x1, 3 -> C(L))
    for S = L, L/2, ..., 64:      encoder[S]: conv C(S)->C(S), conv C(S)->C(S/2) @ S
                                  skip[S] = output;  avg-pool to S/2
    concat 18 pose channels       (512 + 18 = 530 @ 32)
    bottleneck_in:                530 -> 1024 -> 1024 @ 32
    bottleneck_out:               1024 -> 512 -> 512 @ 32
    for S = 64, ..., L:           nearest upsample to S, concat skip[S]
                                  decoder[S]: conv 2*C(S/2) -> C(S), conv C(S)->C(S) @ S
    rgb_out (1x1, C(L) -> 3), tanh

Every conv is 3x3, same-padded, followed by batch norm and a leaky ReLU
with slope 0.2. Growing to ``2L`` adds ``encoder[2L]`` and ``decoder[2L]``
plus fresh RGB projections; nothing else changes.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import LEVELS, ImageBuffer, check_level
from .errors import LevelError, ShapeError
from .heatmaps import HeatmapStack
from .keypoints import NUM_KEYPOINTS

BOTTLENECK_SIZE = 32
BOTTLENECK_CHANNELS = 1024
LEAK = 0.2


def channels_at(spatial: int, width: float = 1.0) -> int:
    base = 512 if spatial <= BOTTLENECK_SIZE else 16384 // spatial
    return max(1, int(round(base * width)))


@dataclass(frozen=True)
class BlockSpec:
    spatial: int
    in_channels: int
    out_channels: int
    position: str  # "encoder" | "bottleneck" | "decoder"


class ConvBlock(nn.Module):
    """Two (3x3 conv -> batch norm -> leaky ReLU) stages."""

    def __init__(self, in_channels: int, mid_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, mid_channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(mid_channels)
        self.conv2 = nn.Conv2d(mid_channels, out_channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        x = F.leaky_relu(self.bn1(self.conv1(x)), LEAK)
        return F.leaky_relu(self.bn2(self.conv2(x)), LEAK)


class FromRGB(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(3, channels, 1)

    def forward(self, x):
        return F.leaky_relu(self.conv(x), LEAK)


class ToRGB(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 3, 1)

    def forward(self, x):
        return torch.tanh(self.conv(x))


def _module_seed(seed: int, name: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode())) % (2**63 - 1)


def he_init_(module: nn.Module, seed: int, name: str) -> None:
    """Fan-in scaled normal init for every conv; unit/zero batch-norm affine.

    Each named module draws from its own generator, so a block's weights
    depend only on ``(seed, name)`` and not on construction order.
    """
    gen = torch.Generator().manual_seed(_module_seed(seed, name))
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                nn.init.kaiming_normal_(m.weight, a=LEAK, mode="fan_in", nonlinearity="leaky_relu", generator=gen)
                m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.reset_parameters()


class ProgressiveAutoencoder(nn.Module):
    """The generator at one resolution level (see module docstring)."""

    def __init__(self, level: int, width: float = 1.0, seed: int = 0):
        super().__init__()
        self.level = check_level(level)
        self.width = float(width)
        self.seed = int(seed)
        c = self._c
        self.encoder = nn.ModuleDict()
        self.decoder = nn.ModuleDict()
        s = self.level
        while s > BOTTLENECK_SIZE:
            self.encoder[str(s)] = self._new_block("encoder", s)
            self.decoder[str(s)] = self._new_block("decoder", s)
            s //= 2
        bottleneck = int(round(BOTTLENECK_CHANNELS * self.width))
        self.bottleneck_in = ConvBlock(c(32) + NUM_KEYPOINTS, bottleneck, bottleneck)
        self.bottleneck_out = ConvBlock(bottleneck, c(32), c(32))
        he_init_(self.bottleneck_in, seed, "bottleneck_in")
        he_init_(self.bottleneck_out, seed, "bottleneck_out")
        self.rgb_in, self.rgb_out = self._new_projections(seed)

    def _c(self, spatial: int) -> int:
        return channels_at(spatial, self.width)

    def _new_block(self, position: str, spatial: int) -> ConvBlock:
        c = self._c
        if position == "encoder":
            block = ConvBlock(c(spatial), c(spatial), c(spatial // 2))
        else:
            block = ConvBlock(2 * c(spatial // 2), c(spatial), c(spatial))
        he_init_(block, self.seed, f"{position}{spatial}")
        return block

    def _new_projections(self, seed: int) -> tuple[FromRGB, ToRGB]:
        rgb_in, rgb_out = FromRGB(self._c(self.level)), ToRGB(self._c(self.level))
        he_init_(rgb_in, seed, f"rgb_in{self.level}")
        he_init_(rgb_out, seed, f"rgb_out{self.level}")
        return rgb_in, rgb_out

    @property
    def spatials(self) -> list[int]:
        """Encoder block sizes, outermost first."""
        return sorted((int(k) for k in self.encoder), reverse=True)

    @property
    def skip_wiring(self) -> dict[int, int]:
        """Encoder spatial size -> decoder spatial size it feeds."""
        return {s: s for s in self.spatials}

    def encoder_channels(self) -> list[int]:
        return [self._c(s) for s in self.spatials] + [self._c(BOTTLENECK_SIZE)]

    def decoder_channels(self) -> list[int]:
        return self.encoder_channels()[::-1]

    def block_specs(self) -> list[BlockSpec]:
        specs = []
        for s in self.spatials:
            blk = self.encoder[str(s)]
            specs.append(BlockSpec(s, blk.conv1.in_channels, blk.conv2.out_channels, "encoder"))
        for blk in (self.bottleneck_in, self.bottleneck_out):
            specs.append(BlockSpec(BOTTLENECK_SIZE, blk.conv1.in_channels, blk.conv2.out_channels, "bottleneck"))
        for s in reversed(self.spatials):
            blk = self.decoder[str(s)]
            specs.append(BlockSpec(s, blk.conv1.in_channels, blk.conv2.out_channels, "decoder"))
        return specs

    def forward(self, x: torch.Tensor, pose: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1:] != (3, self.level, self.level):
            raise ShapeError(f"expected input (B, 3, {self.level}, {self.level}), got {tuple(x.shape)}")
        want = (x.shape[0], NUM_KEYPOINTS, BOTTLENECK_SIZE, BOTTLENECK_SIZE)
        if tuple(pose.shape) != want:
            raise ShapeError(f"expected pose {want}, got {tuple(pose.shape)}")
        h = self.rgb_in(x)
        skips = {}
        for s in self.spatials:
            h = self.encoder[str(s)](h)
            skips[s] = h
            h = F.avg_pool2d(h, 2)
        h = torch.cat([h, pose.to(h.dtype)], dim=1)
        h = self.bottleneck_out(self.bottleneck_in(h))
        for s in reversed(self.spatials):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.decoder[str(s)](torch.cat([h, skips[s]], dim=1))
        return self.rgb_out(h)


def build_autoencoder(level: int, seed: int = 0, width: float = 1.0) -> ProgressiveAutoencoder:
    """Freshly initialized generator at ``level``.

    ``build_autoencoder(2L, s)`` equals ``grow(build_autoencoder(L, s), s)``
    parameter for parameter, because every block seeds from its own name.
    ``width`` scales all channel counts; 1.0 is the full-size network.
    """
    return ProgressiveAutoencoder(level, width=width, seed=seed)


def grow(model: ProgressiveAutoencoder, seed: int | None = None) -> ProgressiveAutoencoder:
    """Double ``model.level`` in place and return it.

    Adds one outermost encoder block (followed by average pooling) and one
    outermost decoder block (preceded by nearest upsampling), joined by a new
    skip connection, and swaps in new RGB projections. Retained parameters
    and batch-norm statistics are untouched. There is no fade-in path.
    """
    if model.level >= LEVELS[-1]:
        raise LevelError(f"cannot grow beyond {LEVELS[-1]}")
    if seed is not None:
        model.seed = int(seed)
    new = model.level * 2
    ref = next(model.parameters())
    model.level = new
    model.encoder[str(new)] = model._new_block("encoder", new).to(ref.device, ref.dtype)
    model.decoder[str(new)] = model._new_block("decoder", new).to(ref.device, ref.dtype)
    rgb_in, rgb_out = model._new_projections(model.seed)
    model.rgb_in = rgb_in.to(ref.device, ref.dtype)
    model.rgb_out = rgb_out.to(ref.device, ref.dtype)
    model.train(model.training)
    return model


def image_to_tensor(img: ImageBuffer | np.ndarray) -> torch.Tensor:
    px = img.pixels if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(px.transpose(2, 0, 1))).unsqueeze(0)


def tensor_to_image(t: torch.Tensor) -> ImageBuffer:
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ShapeError("expected a single image")
        t = t[0]
    return ImageBuffer(t.detach().cpu().float().clamp(-1, 1).numpy().transpose(1, 2, 0))


def forward(model: ProgressiveAutoencoder, x: ImageBuffer, pose: HeatmapStack) -> ImageBuffer:
    """Single-image inference in evaluation mode, without gradients."""
    if x.resolution != (model.level, model.level):
        raise ShapeError(f"image is {x.resolution}, model level is {model.level}")
    if pose.grid != (BOTTLENECK_SIZE, BOTTLENECK_SIZE):
        raise ShapeError(f"pose must be rendered at {BOTTLENECK_SIZE}x{BOTTLENECK_SIZE}, got {pose.grid}")
    was_training = model.training
    model.eval()
    try:
        ref = next(model.parameters())
        with torch.no_grad():
            out = model(image_to_tensor(x).to(ref), torch.from_numpy(pose.chw()).unsqueeze(0).to(ref))
    finally:
        model.train(was_training)
    return tensor_to_image(out)
