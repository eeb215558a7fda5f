"""Image losses and quality metrics (L1, windowed SSIM, PSNR)."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from microsplat.scene import ImageBuffer

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 100.0


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW_T = torch.tensor(gaussian_window(), dtype=torch.float64)[None, None]


def _as_tensor(img) -> torch.Tensor:
    if isinstance(img, torch.Tensor):
        return img
    if isinstance(img, ImageBuffer):
        img = img.data
    return torch.as_tensor(np.asarray(img, dtype=np.float64))


def _check_dims(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"image dimensions differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over pixels and channels; subgradient 0 at zero residual."""
    return torch.abs(a - b).mean()


def ssim_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of the luminance (RGB mean) with zero-padded Gaussian windows."""
    x = a.mean(dim=-1)[None, None]
    y = b.mean(dim=-1)[None, None]
    pad = SSIM_WINDOW // 2
    win = _WINDOW_T.to(x.dtype)
    mu_x = F.conv2d(x, win, padding=pad)
    mu_y = F.conv2d(y, win, padding=pad)
    sxx = F.conv2d(x * x, win, padding=pad) - mu_x * mu_x
    syy = F.conv2d(y * y, win, padding=pad) - mu_y * mu_y
    sxy = F.conv2d(x * y, win, padding=pad) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den).mean()


def render_loss_t(rendered: torch.Tensor, gt: torch.Tensor, lambda1: float) -> torch.Tensor:
    loss = (1.0 - lambda1) * l1_t(rendered, gt)
    if lambda1 != 0.0:
        loss = loss + lambda1 * (1.0 - ssim_t(rendered, gt))
    return loss


def render_loss(rendered, ground_truth, lambda1: float = 0.2) -> float:
    """``(1 - lambda1) * L1 + lambda1 * (1 - SSIM)``."""
    a, b = _as_tensor(rendered), _as_tensor(ground_truth)
    _check_dims(a, b)
    if not 0.0 <= lambda1 <= 1.0:
        raise ValueError("lambda1 must lie in [0, 1]")
    with torch.no_grad():
        return float(render_loss_t(a, b, lambda1))


def ssim(a, b) -> float:
    ta, tb = _as_tensor(a), _as_tensor(b)
    _check_dims(ta, tb)
    with torch.no_grad():
        return float(ssim_t(ta, tb))


def psnr(a, b) -> float:
    """PSNR in dB for [0,1] images, capped at 100 dB."""
    ta, tb = _as_tensor(a), _as_tensor(b)
    _check_dims(ta, tb)
    mse = float(torch.mean((ta - tb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
