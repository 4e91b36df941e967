"""Independent reference implementations used as test oracles."""

import math

import numpy as np
import torch

from posetransfer.descriptors import Rect


def brute_force_window(center, level, side):
    """Scan every admissible origin; keep the one whose window best centers the rounded point."""
    target = [math.floor(c + 0.5) for c in center]
    best = []
    for t in target:
        cands = range(0, level - side + 1)
        best.append(min(cands, key=lambda o: abs(o + side // 2 - t)))
    return Rect(best[0], best[1], side)


def central_difference_check(fn, x, eps=1e-6):
    """Relative error between autograd and central finite differences of scalar ``fn``."""
    x = x.detach().clone().requires_grad_()
    fn(x).backward()
    analytic = x.grad.detach().clone()
    numeric = torch.zeros_like(x)
    flat = x.detach().view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = fn(x.detach()).item()
        flat[i] = orig - eps
        down = fn(x.detach()).item()
        flat[i] = orig
        numeric.view(-1)[i] = (up - down) / (2 * eps)
    return ((analytic - numeric).norm() / numeric.norm()).item()


def naive_ssim(a: np.ndarray, b: np.ndarray, size=11, sigma=1.5, k1=0.01, k2=0.03) -> float:
    """Double loop over valid window positions; images are HxWxC in [0, 1]."""
    h, w, c = a.shape
    size = min(size, h, w)
    sigma = sigma * size / 11
    half = (size - 1) / 2
    g = [math.exp(-((i - half) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    total = sum(g)
    g = [v / total for v in g]
    c1, c2 = k1**2, k2**2
    scores = []
    for ch in range(c):
        for i in range(h - size + 1):
            for j in range(w - size + 1):
                mx = my = 0.0
                for u in range(size):
                    for v in range(size):
                        wt = g[u] * g[v]
                        mx += wt * a[i + u, j + v, ch]
                        my += wt * b[i + u, j + v, ch]
                vx = vy = cov = 0.0
                for u in range(size):
                    for v in range(size):
                        wt = g[u] * g[v]
                        dx = a[i + u, j + v, ch] - mx
                        dy = b[i + u, j + v, ch] - my
                        vx += wt * dx * dx
                        vy += wt * dy * dy
                        cov += wt * dx * dy
                scores.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(scores))


def dense_spectral_norm(weight: torch.Tensor) -> float:
    """Largest singular value of the (out, in * k * k) weight matrix."""
    return torch.linalg.svdvals(weight.detach().double().flatten(1))[0].item()
