"""Conditional patch discriminator over descriptor crops.

Input is a (reference crop, candidate crop) pair stacked into 6 channels.
For the 128-pixel crops of the 1024 level the ladder is::

    6@128 -> 64@64 -> 128@32 -> 256@16 -> 512@8 -> 1024@4 -> 2048@2 -> 1@2

Each step is a spectrally normalized 3x3 stride-2 convolution (padding 1,
which halves the side exactly) and a leaky ReLU; the 1-channel head is a
3x3 stride-1 convolution. The per-pixel sigmoid probabilities of the 2x2
head map are averaged to one score per pair.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import spectral_norm

from .errors import ShapeError
from .network import he_init_

DEFAULT_CROP_SIDE = 128
BASE_CHANNELS = 64
LEAK = 0.2
EPS = 1e-7


class LocalDiscriminator(nn.Module):
    def __init__(self, crop_side: int = DEFAULT_CROP_SIDE, seed: int = 0):
        super().__init__()
        if crop_side < 4 or crop_side & (crop_side - 1):
            raise ValueError(f"crop side must be a power of two >= 4, got {crop_side}")
        self.crop_side = crop_side
        stages = int(math.log2(crop_side)) - 1  # halve down to 2x2
        layers = []
        cin = 6
        for i in range(stages):
            cout = BASE_CHANNELS * 2**i
            layers.append(nn.Conv2d(cin, cout, 3, stride=2, padding=1))
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 3, stride=1, padding=1))
        for i, conv in enumerate(layers):
            he_init_(conv, seed, f"disc{crop_side}.{i}")
        # power-iteration vectors are drawn from the global RNG; fork it so builds are reproducible
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.convs = nn.ModuleList(spectral_norm(conv) for conv in layers)

    def ladder(self) -> list[tuple[int, int]]:
        """(channels, side) after every convolution."""
        out, side = [], self.crop_side
        for conv in self.convs:
            side = (side + 2 - 3) // conv.stride[0] + 1
            out.append((conv.out_channels, side))
        return out

    def logits(self, pair: torch.Tensor) -> torch.Tensor:
        want = (6, self.crop_side, self.crop_side)
        if pair.ndim != 4 or tuple(pair.shape[1:]) != want:
            raise ShapeError(f"discriminator expects (B, {want[0]}, {want[1]}, {want[2]}), got {tuple(pair.shape)}")
        h = pair
        for conv in self.convs[:-1]:
            h = F.leaky_relu(conv(h), LEAK)
        return self.convs[-1](h)

    def forward(self, pair: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(pair)).mean(dim=(1, 2, 3))


def build_local_discriminator(
    crop_side: int = DEFAULT_CROP_SIDE, seed: int = 0, allowed_sides: tuple[int, ...] = (DEFAULT_CROP_SIDE,)
) -> LocalDiscriminator:
    """Seeded discriminator for crops of ``crop_side`` pixels.

    Only the 1024-level crop size is accepted by default; pass
    ``allowed_sides`` to build the same ladder truncated for smaller crops.
    """
    if crop_side not in allowed_sides:
        raise ValueError(f"unsupported crop side {crop_side}; allowed: {allowed_sides}")
    return LocalDiscriminator(crop_side, seed)


def d_score(D: LocalDiscriminator, reference_crop: torch.Tensor, candidate_crop: torch.Tensor) -> torch.Tensor:
    """Probability that ``candidate_crop`` is a valid transfer of ``reference_crop``."""
    if reference_crop.shape != candidate_crop.shape:
        raise ShapeError(f"crop shapes differ: {tuple(reference_crop.shape)} vs {tuple(candidate_crop.shape)}")
    if reference_crop.ndim == 3:
        reference_crop, candidate_crop = reference_crop.unsqueeze(0), candidate_crop.unsqueeze(0)
    return D(torch.cat([reference_crop, candidate_crop], dim=1))


def bce(p: torch.Tensor, target: float) -> torch.Tensor:
    p = p.clamp(EPS, 1 - EPS)
    return -(target * torch.log(p) + (1 - target) * torch.log1p(-p)).mean()


def d_loss(D: LocalDiscriminator, real_pair, fake_pair) -> torch.Tensor:
    """Mean of the real-pair (target 1) and fake-pair (target 0) cross-entropies."""
    return 0.5 * (bce(d_score(D, *real_pair), 1.0) + bce(d_score(D, *fake_pair), 0.0))


def g_adv_loss(D: LocalDiscriminator, fake_pair) -> torch.Tensor:
    """Non-saturating generator loss: cross-entropy of fakes against target 1."""
    return bce(d_score(D, *fake_pair), 1.0)


class RegionDiscriminators(nn.Module):
    """One or more discriminators; region ``d`` is scored by ``members[d % groups]``.

    With ``groups=1`` (the default) a single instance scores every region.
    """

    def __init__(self, crop_side: int = DEFAULT_CROP_SIDE, seed: int = 0, groups: int = 1, allowed_sides=None):
        super().__init__()
        allowed = tuple(allowed_sides) if allowed_sides else (DEFAULT_CROP_SIDE,)
        self.members = nn.ModuleList(
            build_local_discriminator(crop_side, seed + g, allowed) for g in range(groups)
        )

    @property
    def groups(self) -> int:
        return len(self.members)

    def score(self, reference: torch.Tensor, candidate: torch.Tensor, region: torch.Tensor) -> torch.Tensor:
        """Scores for stacked crops; ``region[i]`` is the descriptor index of crop ``i``."""
        if self.groups == 1:
            return d_score(self.members[0], reference, candidate)
        out = torch.empty(reference.shape[0], dtype=reference.dtype, device=reference.device)
        group = region % self.groups
        for g, member in enumerate(self.members):
            sel = (group == g).nonzero(as_tuple=True)[0]
            if len(sel):
                out[sel] = d_score(member, reference[sel], candidate[sel])
        return out
