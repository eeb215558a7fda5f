"""Independent reference implementations used as test oracles.

Nothing here imports the package's rendering or metric code.
"""

from __future__ import annotations

import numpy as np

LD = np.longdouble


def quat_matrix_ld(q):
    q = np.asarray(q, dtype=LD)
    q = q / np.sqrt(np.sum(q * q))
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=LD)


def brute_force_render(positions, log_scales, rotations, opacity_logits, colors, background,
                       cam_rot, cam_t, fx, fy, cx, cy, width, height,
                       near=0.01, dilation=0.3, floor=1.0 / 255.0, clip=0.999):
    """Every Gaussian at every pixel, in extended precision, no visibility culling.

    The per-pixel floor and clip belong to the kernel definition and are kept.
    """
    R = np.asarray(cam_rot, dtype=LD)
    t = np.asarray(cam_t, dtype=LD)
    splats = []
    for i in range(len(positions)):
        p = R @ np.asarray(positions[i], dtype=LD) + t
        if p[2] <= near:
            continue
        rot = quat_matrix_ld(rotations[i])
        s2 = np.exp(2 * np.asarray(log_scales[i], dtype=LD))
        cov = rot @ np.diag(s2) @ rot.T
        J = np.array([[fx / p[2], 0, -fx * p[0] / p[2] ** 2],
                      [0, fy / p[2], -fy * p[1] / p[2] ** 2]], dtype=LD)
        c2 = J @ R @ cov @ R.T @ J.T
        a = c2[0, 0] + dilation
        c = c2[1, 1] + dilation
        b = (c2[0, 1] + c2[1, 0]) / 2
        det = a * c - b * b
        mean = np.array([fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy], dtype=LD)
        alpha = 1 / (1 + np.exp(-LD(opacity_logits[i])))
        splats.append((p[2], i, mean, (c / det, -b / det, a / det), alpha,
                       np.asarray(colors[i], dtype=LD)))
    splats.sort(key=lambda s: (s[0], s[1]))
    ys, xs = np.mgrid[0:height, 0:width]
    xs = xs.astype(LD)
    ys = ys.astype(LD)
    out = np.zeros((height, width, 3), dtype=LD)
    trans = np.ones((height, width), dtype=LD)
    for _, _, mean, (ia, ib, ic), alpha, col in splats:
        dx = xs - mean[0]
        dy = ys - mean[1]
        rho = alpha * np.exp(-0.5 * (ia * dx * dx + 2 * ib * dx * dy + ic * dy * dy))
        rho = np.where(rho < floor, 0, np.minimum(rho, clip))
        out += (rho * trans)[..., None] * col
        trans = trans * (1 - rho)
    out += trans[..., None] * np.asarray(background, dtype=LD)
    return out


def gaussian_window_ref(size=11, sigma=1.5):
    w = np.zeros((size, size))
    half = size // 2
    for i in range(size):
        for j in range(size):
            w[i, j] = np.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma**2))
    return w / w.sum()


def ssim_direct(a, b, size=11, sigma=1.5, c1=0.01**2, c2=0.03**2):
    """Windowed SSIM on the RGB-mean luminance by explicit summation (zero padding)."""
    x = np.asarray(a, dtype=np.float64).mean(axis=2)
    y = np.asarray(b, dtype=np.float64).mean(axis=2)
    h, w = x.shape
    win = gaussian_window_ref(size, sigma)
    half = size // 2
    total = 0.0
    for r in range(h):
        for c in range(w):
            mx = my = sxx = syy = sxy = 0.0
            for i in range(size):
                rr = r + i - half
                if rr < 0 or rr >= h:
                    continue
                for j in range(size):
                    cc = c + j - half
                    if cc < 0 or cc >= w:
                        continue
                    wt = win[i, j]
                    xv, yv = x[rr, cc], y[rr, cc]
                    mx += wt * xv
                    my += wt * yv
                    sxx += wt * xv * xv
                    syy += wt * yv * yv
                    sxy += wt * xv * yv
            vx, vy, cov = sxx - mx * mx, syy - my * my, sxy - mx * my
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return total / (h * w)


def psnr_direct(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    mse = sum((float(u) - float(v)) ** 2 for u, v in zip(a, b)) / len(a)
    if mse < 1e-10:
        return 100.0
    return 10.0 * np.log10(1.0 / mse)


def pinhole_jacobian_fd(point, fx, fy, h=1e-6):
    """Central-difference Jacobian of (x, y, z) -> (fx x/z, fy y/z)."""
    def f(p):
        return np.array([fx * p[0] / p[2], fy * p[1] / p[2]])

    J = np.zeros((2, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (f(point + e) - f(point - e)) / (2 * h)
    return J
