"""Numba kernels for tile-binned compositing and its adjoint.

Gaussians arrive already depth sorted. Each kernel walks a fixed 16x16
tile grid; per-tile gradient buffers are summed in tile order so results do
not depend on the thread count.
"""

from __future__ import annotations

import os

# The worker pool is sized once at import; allow a few workers even on small
# machines so thread-count independence stays observable. TBB is skipped
# because older system builds are rejected with a warning; the bundled
# workqueue layer is always available and the trainer calls from one thread.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(4, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba  # noqa: E402
import numpy as np  # noqa: E402
from numba import prange  # noqa: E402

TILE = 16
ALPHA_FLOOR = 1.0 / 255.0
ALPHA_CLIP = 0.999


@numba.njit(cache=True)
def bin_tiles(bbox, width, height):
    """CSR lists of Gaussian indices (ascending) overlapping each tile."""
    tx = (width + TILE - 1) // TILE
    ty = (height + TILE - 1) // TILE
    n_tiles = tx * ty
    m = bbox.shape[0]
    counts = np.zeros(n_tiles, dtype=np.int64)
    for g in range(m):
        x0 = max(0, int(np.floor(bbox[g, 0])) // TILE)
        x1 = min(tx - 1, int(np.floor(bbox[g, 1])) // TILE)
        y0 = max(0, int(np.floor(bbox[g, 2])) // TILE)
        y1 = min(ty - 1, int(np.floor(bbox[g, 3])) // TILE)
        for yy in range(y0, y1 + 1):
            for xx in range(x0, x1 + 1):
                counts[yy * tx + xx] += 1
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    for t in range(n_tiles):
        offsets[t + 1] = offsets[t] + counts[t]
    fill = offsets[:-1].copy()
    items = np.empty(offsets[-1], dtype=np.int64)
    for g in range(m):
        x0 = max(0, int(np.floor(bbox[g, 0])) // TILE)
        x1 = min(tx - 1, int(np.floor(bbox[g, 1])) // TILE)
        y0 = max(0, int(np.floor(bbox[g, 2])) // TILE)
        y1 = min(ty - 1, int(np.floor(bbox[g, 3])) // TILE)
        for yy in range(y0, y1 + 1):
            for xx in range(x0, x1 + 1):
                t = yy * tx + xx
                items[fill[t]] = g
                fill[t] += 1
    return offsets, items


@numba.njit(cache=True, parallel=True)
def composite_forward(mean2d, conic, opacity, color, background, bbox, offsets, items,
                      width, height):
    tx = (width + TILE - 1) // TILE
    n_tiles = offsets.shape[0] - 1
    image = np.zeros((height, width, 3))
    signature = np.zeros((height, width), dtype=np.int64)
    for t in prange(n_tiles):
        ty0 = (t // tx) * TILE
        tx0 = (t % tx) * TILE
        for py in range(ty0, min(ty0 + TILE, height)):
            for px in range(tx0, min(tx0 + TILE, width)):
                trans = 1.0
                r = 0.0
                gch = 0.0
                bch = 0.0
                sig = np.int64(1469598103934665603)
                for k in range(offsets[t], offsets[t + 1]):
                    g = items[k]
                    if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
                        continue
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    power = -0.5 * (conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy
                                    + conic[g, 2] * dy * dy)
                    rho = opacity[g] * np.exp(power)
                    if rho < ALPHA_FLOOR:
                        continue
                    code = 2 * g + 1
                    if rho > ALPHA_CLIP:
                        rho = ALPHA_CLIP
                        code += 1
                    sig = (sig ^ code) * np.int64(1099511628211)
                    w = rho * trans
                    r += color[g, 0] * w
                    gch += color[g, 1] * w
                    bch += color[g, 2] * w
                    trans *= 1.0 - rho
                image[py, px, 0] = r + background[0] * trans
                image[py, px, 1] = gch + background[1] * trans
                image[py, px, 2] = bch + background[2] * trans
                signature[py, px] = sig
    return image, signature


@numba.njit(cache=True, parallel=True)
def composite_backward(grad_image, mean2d, conic, opacity, color, background, bbox, offsets,
                       items, width, height, max_list):
    """Adjoint of ``composite_forward`` for per-pixel upstream gradients."""
    tx = (width + TILE - 1) // TILE
    n_tiles = offsets.shape[0] - 1
    m = mean2d.shape[0]
    # per tile: d mean(2), d conic(3), d opacity(1), d color(3)
    partial = np.zeros((n_tiles, m, 9))
    partial_bg = np.zeros((n_tiles, 3))
    for t in prange(n_tiles):
        ty0 = (t // tx) * TILE
        tx0 = (t % tx) * TILE
        gids = np.empty(max_list, dtype=np.int64)
        rhos = np.empty(max_list)
        gvals = np.empty(max_list)
        clipped = np.empty(max_list, dtype=np.bool_)
        dxs = np.empty(max_list)
        dys = np.empty(max_list)
        trans_before = np.empty(max_list)
        for py in range(ty0, min(ty0 + TILE, height)):
            for px in range(tx0, min(tx0 + TILE, width)):
                gr = grad_image[py, px, 0]
                gg = grad_image[py, px, 1]
                gb = grad_image[py, px, 2]
                trans = 1.0
                cnt = 0
                for k in range(offsets[t], offsets[t + 1]):
                    g = items[k]
                    if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
                        continue
                    dx = px - mean2d[g, 0]
                    dy = py - mean2d[g, 1]
                    power = -0.5 * (conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy
                                    + conic[g, 2] * dy * dy)
                    gauss = np.exp(power)
                    rho = opacity[g] * gauss
                    if rho < ALPHA_FLOOR:
                        continue
                    clip = rho > ALPHA_CLIP
                    if clip:
                        rho = ALPHA_CLIP
                    gids[cnt] = g
                    rhos[cnt] = rho
                    gvals[cnt] = gauss
                    clipped[cnt] = clip
                    dxs[cnt] = dx
                    dys[cnt] = dy
                    trans_before[cnt] = trans
                    trans *= 1.0 - rho
                    cnt += 1
                partial_bg[t, 0] += gr * trans
                partial_bg[t, 1] += gg * trans
                partial_bg[t, 2] += gb * trans
                # colour composited behind splat i, starting from the background
                ar = background[0]
                ag = background[1]
                ab = background[2]
                for s in range(cnt - 1, -1, -1):
                    g = gids[s]
                    rho = rhos[s]
                    tb = trans_before[s]
                    w = rho * tb
                    partial[t, g, 6] += gr * w
                    partial[t, g, 7] += gg * w
                    partial[t, g, 8] += gb * w
                    d_rho = tb * (gr * (color[g, 0] - ar) + gg * (color[g, 1] - ag)
                                  + gb * (color[g, 2] - ab))
                    ar = color[g, 0] * rho + (1.0 - rho) * ar
                    ag = color[g, 1] * rho + (1.0 - rho) * ag
                    ab = color[g, 2] * rho + (1.0 - rho) * ab
                    if clipped[s]:
                        continue
                    partial[t, g, 5] += d_rho * gvals[s]
                    d_power = d_rho * rho
                    dx = dxs[s]
                    dy = dys[s]
                    # d power / d mean = (conic @ d)
                    partial[t, g, 0] += d_power * (conic[g, 0] * dx + conic[g, 1] * dy)
                    partial[t, g, 1] += d_power * (conic[g, 1] * dx + conic[g, 2] * dy)
                    partial[t, g, 2] += d_power * (-0.5 * dx * dx)
                    partial[t, g, 3] += d_power * (-dx * dy)
                    partial[t, g, 4] += d_power * (-0.5 * dy * dy)
    grads = np.zeros((m, 9))
    grad_bg = np.zeros(3)
    for t in range(n_tiles):
        grads += partial[t]
        grad_bg += partial_bg[t]
    return grads, grad_bg


def max_tile_list(offsets: np.ndarray) -> int:
    return int(np.max(np.diff(offsets))) if len(offsets) > 1 else 0
