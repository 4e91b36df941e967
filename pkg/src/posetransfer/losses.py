"""Perceptual reconstruction losses: global, local (per descriptor crop) and total.

A feature extractor returns a list of tap activations. The criterion for
each tap is a mean over elements (squared or absolute difference) and the
taps are summed without weights. Batched inputs give the mean over samples
of the per-sample loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn
from torchvision.models import vgg16

from .descriptors import DescriptorSet, Rect, crop_tensor
from .errors import ShapeError
from .network import image_to_tensor

log = logging.getLogger(__name__)

# indices into torchvision's vgg16().features of each named ReLU output
VGG16_TAPS = {
    "relu1_1": 1,
    "relu1_2": 3,
    "relu2_1": 6,
    "relu2_2": 8,
    "relu3_1": 11,
    "relu3_2": 13,
    "relu3_3": 15,
    "relu4_1": 18,
    "relu4_2": 20,
    "relu4_3": 22,
}
DEFAULT_TAPS = ("pixel", "relu1_2", "relu2_2", "relu3_2", "relu4_2")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class FeatureExtractor(nn.Module):
    """Frozen VGG-16 trunk exposing a list of taps.

    ``"pixel"`` is the identity tap (the input image itself). Inputs are
    images in [-1, 1]; they are moved to ImageNet statistics before the trunk.

    Weights come from ``weights_path`` (a torchvision ``vgg16`` state dict,
    full model or ``features`` only). Without a path, the trunk is a seeded
    random network: a valid, fully deterministic feature metric that needs
    no download.
    """

    min_input_size = 32

    def __init__(self, taps=DEFAULT_TAPS, weights_path: str | Path | None = None, seed: int = 0):
        super().__init__()
        unknown = [t for t in taps if t != "pixel" and t not in VGG16_TAPS]
        if unknown:
            raise ValueError(f"unknown feature taps {unknown}")
        self.taps = tuple(taps)
        depth = max((VGG16_TAPS[t] for t in self.taps if t != "pixel"), default=-1)
        self.trunk = vgg16(weights=None).features[: depth + 1]
        if weights_path is not None:
            self._load(Path(weights_path))
            self.pretrained = True
        else:
            gen = torch.Generator().manual_seed(seed)
            for m in self.trunk.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu", generator=gen)
                    nn.init.zeros_(m.bias)
            self.pretrained = False
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def _load(self, path: Path) -> None:
        state = torch.load(path, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state):
            state = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
        own = self.trunk.state_dict()
        missing = [k for k in own if k not in state]
        if missing:
            raise ValueError(f"{path}: extractor weights lack {missing[:4]}")
        self.trunk.load_state_dict({k: state[k] for k in own})
        log.info("loaded extractor weights from %s", path)

    def train(self, mode: bool = True):
        # frozen: batch statistics / dropout never switch on
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        if "pixel" in self.taps:
            feats.append(x)
        want = {VGG16_TAPS[t]: t for t in self.taps if t != "pixel"}
        h = ((x + 1) / 2 - self.mean) / self.std
        got = {}
        for i, layer in enumerate(self.trunk):
            h = layer(h)
            if i in want:
                got[want[i]] = h
        feats.extend(got[t] for t in self.taps if t != "pixel")
        return feats


@dataclass(frozen=True)
class CriterionSchedule:
    """Squared difference for the first half of a level, absolute after."""

    total_iterations: int

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ValueError("a level needs at least one iteration")

    @property
    def switch_point(self) -> int:
        return self.total_iterations // 2


def criterion(step: int, schedule: CriterionSchedule) -> str:
    if not 0 <= step < schedule.total_iterations:
        raise ValueError(f"step {step} outside [0, {schedule.total_iterations})")
    return "l2" if step < schedule.switch_point else "l1"


def distance(crit: str, a: torch.Tensor, b: torch.Tensor, per_sample: bool = False) -> torch.Tensor:
    if crit == "l2":
        d = (a - b).pow(2)
    elif crit == "l1":
        d = (a - b).abs()
    else:
        raise ValueError(f"unknown criterion {crit!r}")
    return d.flatten(1).mean(1) if per_sample else d.mean()


def _features(fx, x: torch.Tensor) -> list[torch.Tensor]:
    if x.requires_grad:
        return fx(x)
    with torch.no_grad():
        return fx(x)


def _as_batch(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.ndim == 4 else x.unsqueeze(0)
    return image_to_tensor(x)


def global_perceptual(gt, out, fx, crit: str) -> torch.Tensor:
    """Sum over taps of the criterion between extractor activations."""
    gt, out = _as_batch(gt), _as_batch(out)
    if gt.shape != out.shape:
        raise ShapeError(f"shape mismatch {tuple(gt.shape)} vs {tuple(out.shape)}")
    return sum(distance(crit, a, b) for a, b in zip(_features(fx, gt), _features(fx, out)))


def _rects(ds) -> list[list[Rect]]:
    sets = [ds] if isinstance(ds, DescriptorSet) else list(ds)
    return [s.rects for s in sets]


def local_perceptual(gt, out, ds, fx, crit: str) -> torch.Tensor:
    """Sum over descriptor crops and taps; ``ds`` is one set per batch sample.

    Crops smaller than ``fx.min_input_size`` are enlarged by nearest-neighbor
    resampling before feature extraction.
    """
    gt, out = _as_batch(gt), _as_batch(out)
    if gt.shape != out.shape:
        raise ShapeError(f"shape mismatch {tuple(gt.shape)} vs {tuple(out.shape)}")
    rects = _rects(ds)
    if len(rects) != gt.shape[0]:
        raise ShapeError(f"{len(rects)} descriptor sets for a batch of {gt.shape[0]}")
    if any(len(r) == 0 for r in rects):
        raise ValueError("empty descriptor set")
    gt_crops, owner = crop_tensor(gt, rects)
    out_crops, _ = crop_tensor(out, rects)
    side = gt_crops.shape[-1]
    min_side = getattr(fx, "min_input_size", 1)
    if side < min_side:
        gt_crops = F.interpolate(gt_crops, size=(min_side, min_side), mode="nearest")
        out_crops = F.interpolate(out_crops, size=(min_side, min_side), mode="nearest")
    per_crop = sum(
        distance(crit, a, b, per_sample=True) for a, b in zip(_features(fx, gt_crops), _features(fx, out_crops))
    )
    per_sample = torch.zeros(gt.shape[0], dtype=per_crop.dtype, device=per_crop.device).index_add(0, owner, per_crop)
    return per_sample.mean()


def total_loss(gt, out, ds, fx, crit: str, global_weight: float = 1.0, local_weight: float = 1.0) -> torch.Tensor:
    """Global plus local perceptual loss (unit weights by default)."""
    g = global_perceptual(gt, out, fx, crit)
    loc = local_perceptual(gt, out, ds, fx, crit)
    return global_weight * g + local_weight * loc
