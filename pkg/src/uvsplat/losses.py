"""Training objectives and image-quality metrics.

Photometric loss is lambda_l1 * mean|I - I_gt| + (1 - lambda_l1) * (1 - SSIM).
SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 on
[0, 1] images, averaged over valid windows and channels. The analytic image
gradient is derived through the window correlations, whose adjoint is a full
convolution with the (symmetric) window.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d, correlate2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class LossError(ValueError):
    pass


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _check_pair(img, gt):
    img = np.asarray(img, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if img.shape != gt.shape:
        raise LossError(f"image shapes differ: {img.shape} vs {gt.shape}")
    if img.ndim == 2:
        img = img[:, :, None]
        gt = gt[:, :, None]
    return img, gt


def ssim(img: np.ndarray, gt: np.ndarray, with_grad: bool = False):
    """Mean SSIM over valid windows and channels; optionally d(ssim)/d(img)."""
    img, gt = _check_pair(img, gt)
    H, W, C = img.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise LossError("image smaller than the SSIM window")
    w = gaussian_window()
    total = 0.0
    grad = np.zeros_like(img) if with_grad else None
    n_win = (H - SSIM_WINDOW + 1) * (W - SSIM_WINDOW + 1) * C
    for ch in range(C):
        x = img[:, :, ch]
        y = gt[:, :, ch]
        mu1 = correlate2d(x, w, mode="valid")
        mu2 = correlate2d(y, w, mode="valid")
        s1 = correlate2d(x * x, w, mode="valid")
        s2 = correlate2d(y * y, w, mode="valid")
        s12 = correlate2d(x * y, w, mode="valid")
        var1 = s1 - mu1 * mu1
        var2 = s2 - mu2 * mu2
        cov = s12 - mu1 * mu2
        A1 = 2 * mu1 * mu2 + SSIM_C1
        A2 = 2 * cov + SSIM_C2
        B1 = mu1 * mu1 + mu2 * mu2 + SSIM_C1
        B2 = var1 + var2 + SSIM_C2
        smap = (A1 * A2) / (B1 * B2)
        total += smap.sum()
        if with_grad:
            # partials w.r.t. the window statistics mu1, s1, s12
            d_map = 1.0 / n_win
            d_mu1 = d_map * (
                (2 * mu2 * A2 - 2 * mu2 * A1) / (B1 * B2)
                - smap * (2 * mu1 / B1 - 2 * mu1 / B2)
            )
            d_s1 = d_map * (-smap / B2)
            d_s12 = d_map * (2 * A1 / (B1 * B2))
            # adjoint of the valid correlations (window is symmetric)
            g = convolve2d(d_mu1, w, mode="full")
            g += 2.0 * x * convolve2d(d_s1, w, mode="full")
            g += y * convolve2d(d_s12, w, mode="full")
            grad[:, :, ch] = g
    value = total / n_win
    if with_grad:
        return value, grad
    return value


def photometric_loss(img: np.ndarray, gt: np.ndarray, lambda_l1: float):
    """Combined L1/SSIM loss; returns (loss, d_loss/d_img)."""
    img, gt = _check_pair(img, gt)
    diff = img - gt
    n = diff.size
    l1 = np.abs(diff).mean()
    d_img = lambda_l1 * np.sign(diff) / n
    ssim_val, ssim_grad = ssim(img, gt, with_grad=True)
    loss = lambda_l1 * l1 + (1.0 - lambda_l1) * (1.0 - ssim_val)
    d_img = d_img - (1.0 - lambda_l1) * ssim_grad
    return loss, d_img


def _hinge_norm(values: np.ndarray):
    """||max(values, 0)||_2 over all entries, plus gradient w.r.t. values."""
    h = np.maximum(values, 0.0)
    norm = np.sqrt(np.sum(h * h))
    if norm == 0.0:
        return 0.0, np.zeros_like(values)
    return float(norm), h / norm


def position_reg(mu_l: np.ndarray, eps_xyz: float):
    """Hinge on local position norms beyond eps_xyz; returns (loss, d_mu_l)."""
    r = np.linalg.norm(mu_l, axis=1)
    loss, d_h = _hinge_norm(r - eps_xyz)
    active = (r - eps_xyz) > 0.0
    d_mu = np.zeros_like(mu_l)
    nz = active & (r > 0)
    d_mu[nz] = d_h[nz, None] * mu_l[nz] / r[nz, None]
    return loss, d_mu


def scale_reg(log_s: np.ndarray, eps_scale: float):
    """Hinge on exp(log_s) beyond eps_scale, componentwise; (loss, d_log_s)."""
    e = np.exp(log_s)
    loss, d_h = _hinge_norm(e - eps_scale)
    return loss, d_h * e


def reg_losses(
    eps_xyz: float,
    eps_scale: float,
    mu_l: np.ndarray,
    log_s_l: np.ndarray,
    mu_l2: np.ndarray | None = None,
    log_s_l2: np.ndarray | None = None,
):
    """Position/scale hinge regularizers over stage-1 (and stage-2) geometry.

    Returns (l_xyz, l_scale, grads) where grads maps each provided input
    name to its gradient array.
    """
    l_xyz, d_mu = position_reg(mu_l, eps_xyz)
    l_scale, d_ls = scale_reg(log_s_l, eps_scale)
    grads = {"mu_l": d_mu, "log_s_l": d_ls}
    if mu_l2 is not None:
        l2, d2 = position_reg(mu_l2, eps_xyz)
        l_xyz += l2
        grads["mu_l2"] = d2
    if log_s_l2 is not None:
        l2, d2 = scale_reg(log_s_l2, eps_scale)
        l_scale += l2
        grads["log_s_l2"] = d2
    return l_xyz, l_scale, grads


PSNR_INF = float("inf")


def eval_metrics(img: np.ndarray, gt: np.ndarray) -> dict:
    """L1 / PSNR / SSIM on [0,1] images of identical shape."""
    img, gt = _check_pair(img, gt)
    l1 = float(np.abs(img - gt).mean())
    mse = float(np.mean((img - gt) ** 2))
    psnr = PSNR_INF if mse == 0.0 else 10.0 * np.log10(1.0 / mse)
    return {"l1": l1, "psnr": psnr, "ssim": float(ssim(img, gt))}
