"""Image quality metrics: SSIM, MS-SSIM, local-SSIM and a perceptual distance.

Images arrive in [-1, 1] and are remapped to [0, 1] (dynamic range 1).
SSIM uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
"valid" filtering (no padding), and averages the per-channel maps. When an
image is smaller than the window, the window shrinks to the image side and
sigma scales with it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .descriptors import DescriptorSet
from .errors import ShapeError
from .data import ImageBuffer

WINDOW = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_MIN_SIDE = WINDOW * 2 ** (len(MS_WEIGHTS) - 1)  # 176


def _unit(x) -> torch.Tensor:
    """(C, H, W) float64 tensor in [0, 1] from an ImageBuffer / HWC array / CHW tensor."""
    if isinstance(x, ImageBuffer):
        x = x.pixels
    if isinstance(x, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64).transpose(2, 0, 1))
    else:
        t = x.detach().to(torch.float64)
        if t.ndim == 4:
            if t.shape[0] != 1:
                raise ShapeError("metrics take one image at a time")
            t = t[0]
    return (t + 1.0) / 2.0


def gaussian_window(size: int = WINDOW, sigma: float = WINDOW_SIGMA) -> torch.Tensor:
    r = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(r**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def _ssim_maps(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """SSIM and contrast-structure maps for (C, H, W) tensors in [0, 1]."""
    c = a.shape[0]
    size = min(WINDOW, a.shape[1], a.shape[2])
    win = gaussian_window(size, WINDOW_SIGMA * size / WINDOW).expand(c, 1, size, size)

    def filt(x):
        return F.conv2d(x.unsqueeze(0), win, groups=c)[0]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = K1**2, K2**2
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return lum * cs, cs


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def ssim(a, b) -> float:
    a, b = _unit(a), _unit(b)
    _check_pair(a, b)
    return float(_ssim_maps(a, b)[0].mean())


def ms_ssim(a, b) -> float:
    """Five-scale MS-SSIM with the canonical scale weights.

    Negative contrast-structure terms are clipped to 0 so the result stays
    in [0, 1].
    """
    a, b = _unit(a), _unit(b)
    _check_pair(a, b)
    if min(a.shape[1:]) < MS_MIN_SIDE:
        raise ShapeError(f"MS-SSIM needs images of at least {MS_MIN_SIDE}x{MS_MIN_SIDE}, got {tuple(a.shape[1:])}")
    result = 1.0
    for i, w in enumerate(MS_WEIGHTS):
        s_map, cs_map = _ssim_maps(a, b)
        last = i == len(MS_WEIGHTS) - 1
        term = float((s_map if last else cs_map).mean())
        result *= max(term, 0.0) ** w
        if not last:
            a = F.avg_pool2d(a.unsqueeze(0), 2)[0]
            b = F.avg_pool2d(b.unsqueeze(0), 2)[0]
    return result


def local_ssim(a, b, ds: DescriptorSet) -> float:
    return float(np.mean(region_ssim(a, b, ds)))


def region_ssim(a, b, ds: DescriptorSet) -> list[float]:
    """SSIM of every descriptor crop pair, in descriptor order."""
    if len(ds) == 0:
        raise ValueError("empty descriptor set")
    a, b = _unit(a), _unit(b)
    _check_pair(a, b)
    if tuple(a.shape[1:]) != (ds.level, ds.level):
        raise ShapeError(f"images are {tuple(a.shape[1:])}, descriptors were built at level {ds.level}")
    scores = []
    for rect in ds.rects:
        ys, xs = rect.slices()
        scores.append(float(_ssim_maps(a[:, ys, xs], b[:, ys, xs])[0].mean()))
    return scores


def perceptual_distance(a, b, fx, channel_weights: list[torch.Tensor] | None = None) -> float:
    """Unit-weighted normalized feature distance (LPIPS form without calibration).

    Per network tap: unit-normalize activations across channels, square the
    difference, sum over channels (optionally weighted per channel) and
    average over space. The result is the mean over taps. The identity pixel
    tap is skipped.
    """
    ta, tb = _unit(a).float() * 2 - 1, _unit(b).float() * 2 - 1
    _check_pair(ta, tb)
    with torch.no_grad():
        fa, fb = fx(ta.unsqueeze(0)), fx(tb.unsqueeze(0))
    taps = [i for i, t in enumerate(getattr(fx, "taps", range(len(fa)))) if t != "pixel"]
    if channel_weights is not None and len(channel_weights) != len(taps):
        raise ValueError(f"{len(channel_weights)} weight vectors for {len(taps)} taps")
    dists = []
    for j, i in enumerate(taps):
        na = fa[i] / (fa[i].pow(2).sum(1, keepdim=True).sqrt() + 1e-10)
        nb = fb[i] / (fb[i].pow(2).sum(1, keepdim=True).sqrt() + 1e-10)
        d = (na - nb).pow(2)
        if channel_weights is not None:
            d = d * channel_weights[j].view(1, -1, 1, 1)
        dists.append(d.sum(1).mean())
    return float(torch.stack(dists).mean())


@dataclass
class MetricsReport:
    ssim: float
    ms_ssim: float | None
    local_ssim: float
    perceptual_distance: float
    n_pairs: int = 1
    per_region: list[float] | None = field(default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["per_region"] is None:
            d.pop("per_region")
        return d
