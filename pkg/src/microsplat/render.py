"""Differentiable splat rasterizer.

Every Gaussian is projected with a first-order (EWA) linearization of the
pinhole map, evaluated at the pixel centres it can reach and alpha-composited
front to back. Pixel ``(col, row)`` sits at image-plane coordinate
``(col, row)``.

The per-pixel opacity of Gaussian ``i`` is ``alpha_i * G_i(p)``; values below
``1/255`` are dropped and the rest are clipped to ``0.999``. Culling only
removes Gaussians that provably fall under the floor everywhere on the
image, so the output equals a brute-force evaluation of every Gaussian at
every pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from microsplat import _raster
from microsplat.scene import NEAR_PLANE, Camera, ImageBuffer, Scene, covariances

DILATION = 0.3
ALPHA_FLOOR = 1.0 / 255.0
ALPHA_CLIP = 0.999

DTYPE = torch.float64


@dataclass
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    source_index: int


def projection_jacobian(cam_point: np.ndarray, fx: float, fy: float) -> np.ndarray:
    x, y, z = cam_point
    return np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])


def cutoff_radius(opacity: float, cov2d: np.ndarray) -> float:
    """Pixel radius beyond which ``opacity * G`` stays under the floor (``-1`` if never above)."""
    if opacity * 255.0 < 1.0:
        return -1.0
    lam_max = float(np.linalg.eigvalsh(cov2d)[-1])
    return math.sqrt(2.0 * math.log(opacity * 255.0) * lam_max)


def project_gaussian(point, camera: Camera, index: int = 0,
                     opacity: float | None = None) -> ProjectedGaussian | None:
    """Project one Gaussian; ``None`` means culled.

    Culling happens behind the near plane, and when the opacity is known
    (passed, or taken from ``point``), also when the Gaussian cannot reach the
    opacity floor on any pixel.
    """
    from microsplat.scene import activate

    _, base_opacity, cov3d = activate(point)
    if opacity is None:
        opacity = base_opacity
    cam = camera.rotation @ point.position + camera.translation
    if cam[2] <= NEAR_PLANE:
        return None
    jac = projection_jacobian(cam, camera.fx, camera.fy)
    tw = jac @ camera.rotation
    cov2d = tw @ cov3d @ tw.T + DILATION * np.eye(2)
    cov2d = 0.5 * (cov2d + cov2d.T)
    mean2d = np.array([camera.fx * cam[0] / cam[2] + camera.cx,
                       camera.fy * cam[1] / cam[2] + camera.cy])
    radius = cutoff_radius(opacity, cov2d)
    if radius < 0 or _outside(mean2d, radius, camera):
        return None
    return ProjectedGaussian(mean2d, cov2d, float(cam[2]), index)


def _outside(mean2d, radius, camera: Camera) -> bool:
    return bool(
        mean2d[0] < -radius or mean2d[0] > camera.width - 1 + radius
        or mean2d[1] < -radius or mean2d[1] > camera.height - 1 + radius
    )


def composite_pixel(sorted_splats, background, check_order: bool = False, depths=None) -> np.ndarray:
    """Front-to-back compositing of ``(color, rho)`` pairs over ``background``."""
    if check_order and depths is not None and np.any(np.diff(np.asarray(depths)) < 0):
        raise ValueError("splats must be sorted front to back")
    out = np.zeros(3)
    transmittance = 1.0
    for color, rho in sorted_splats:
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"splat opacity {rho} outside [0, 1)")
        out += np.asarray(color, dtype=np.float64) * rho * transmittance
        transmittance *= 1.0 - rho
    return out + np.asarray(background, dtype=np.float64) * transmittance


# ---------------------------------------------------------------------------
# Tensor path
# ---------------------------------------------------------------------------


def quat_to_rotmat_t(q: torch.Tensor) -> torch.Tensor:
    q = q / torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(q.shape[:-1] + (3, 3))


def covariance_t(log_scale: torch.Tensor, quat: torch.Tensor) -> torch.Tensor:
    rot = quat_to_rotmat_t(quat)
    s2 = torch.exp(2.0 * log_scale)
    return (rot * s2[:, None, :]) @ rot.transpose(1, 2)


@dataclass
class SceneTensors:
    """Differentiable view of a scene.

    ``rotation_delta`` is a per-point tangent-space offset composed onto the
    stored quaternion; gradients with respect to it are rotation gradients.
    """

    position: torch.Tensor
    log_scale: torch.Tensor
    rotation_base: torch.Tensor
    rotation_delta: torch.Tensor
    opacity_logit: torch.Tensor
    color: torch.Tensor
    background: torch.Tensor

    @classmethod
    def from_scene(cls, scene: Scene, requires_grad: bool = False) -> "SceneTensors":
        def leaf(arr):
            return torch.tensor(np.asarray(arr), dtype=DTYPE, requires_grad=requires_grad)

        return cls(
            leaf(scene.positions), leaf(scene.log_scales),
            torch.tensor(scene.rotations, dtype=DTYPE),
            leaf(np.zeros((len(scene), 3))),
            leaf(scene.opacity_logits), leaf(scene.colors),
            torch.tensor(scene.background, dtype=DTYPE),
        )

    def leaves(self) -> dict[str, torch.Tensor]:
        return {
            "position": self.position, "log_scale": self.log_scale,
            "rotation": self.rotation_delta, "opacity_logit": self.opacity_logit,
            "color": self.color,
        }

    @property
    def quaternion(self) -> torch.Tensor:
        return compose_tangent(self.rotation_base, self.rotation_delta)


def compose_tangent(q: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """``q * (1, delta/2)``: first-order right-multiplied rotation by ``delta``."""
    w1, x1, y1, z1 = q.unbind(-1)
    w2 = torch.ones_like(w1)
    x2, y2, z2 = (0.5 * delta).unbind(-1)
    return torch.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], dim=-1)


@dataclass
class RenderResult:
    image: torch.Tensor                # (H, W, 3)
    index: np.ndarray                  # scene indices of composited Gaussians, depth order
    mean2d: torch.Tensor               # (len(index), 2)
    decisions: list = field(default_factory=list)


class _Composite(torch.autograd.Function):
    @staticmethod
    def forward(ctx, mean2d, conic, opacity, color, background, bbox, offsets, items, width,
                height, holder):
        args = [np.ascontiguousarray(t.detach().numpy())
                for t in (mean2d, conic, opacity, color, background)]
        image, signature = _raster.composite_forward(*args, bbox, offsets, items, width, height)
        ctx.raster_args = (args, bbox, offsets, items, width, height)
        holder["signature"] = signature
        return torch.from_numpy(image)

    @staticmethod
    def backward(ctx, grad_image):
        args, bbox, offsets, items, width, height = ctx.raster_args
        grads, grad_bg = _raster.composite_backward(
            np.ascontiguousarray(grad_image.numpy()), *args, bbox, offsets, items, width,
            height, _raster.max_tile_list(offsets),
        )
        g = torch.from_numpy(grads)
        return (g[:, 0:2], g[:, 2:5], g[:, 5], g[:, 6:9], torch.from_numpy(grad_bg),
                None, None, None, None, None, None)


def set_threads(threads: int) -> None:
    """Size the compositing worker pool (results do not depend on it)."""
    import numba

    numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def render_tensors(st: SceneTensors, camera: Camera) -> RenderResult:
    """Render a ``SceneTensors`` view; differentiable in every leaf."""
    if camera.width <= 0 or camera.height <= 0:
        raise ValueError("image has zero area")
    rot_w = torch.tensor(camera.rotation, dtype=DTYPE)
    trans_w = torch.tensor(camera.translation, dtype=DTYPE)
    n = st.position.shape[0]
    background = st.background
    if n == 0:
        img = background.expand(camera.height, camera.width, 3)
        return RenderResult(img.clone(), np.zeros(0, dtype=np.int64), torch.zeros(0, 2, dtype=DTYPE))

    cam = st.position @ rot_w.T + trans_w
    infront = (cam[:, 2] > NEAR_PLANE).detach().numpy()
    idx = np.flatnonzero(infront)
    cam_v = cam[idx]
    x, y, z = cam_v.unbind(-1)
    fx, fy = camera.fx, camera.fy
    mean2d = torch.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], dim=-1)
    zeros = torch.zeros_like(z)
    jac = torch.stack([
        torch.stack([fx / z, zeros, -fx * x / (z * z)], dim=-1),
        torch.stack([zeros, fy / z, -fy * y / (z * z)], dim=-1),
    ], dim=1)
    cov3d = covariance_t(st.log_scale[idx], st.quaternion[idx])
    tw = jac @ rot_w
    cov2d = tw @ cov3d @ tw.transpose(1, 2)
    a = cov2d[:, 0, 0] + DILATION
    b = 0.5 * (cov2d[:, 0, 1] + cov2d[:, 1, 0])
    c = cov2d[:, 1, 1] + DILATION
    opacity = torch.sigmoid(st.opacity_logit[idx])

    with torch.no_grad():
        lam_max = 0.5 * (a + c) + torch.sqrt(0.25 * (a - c) ** 2 + b * b)
        strength = opacity * 255.0
        reach = torch.sqrt(2.0 * torch.log(torch.clamp(strength, min=1.0)) * lam_max)
        mx, my = mean2d[:, 0], mean2d[:, 1]
        inside = (
            (strength >= 1.0)
            & (mx >= -reach) & (mx <= camera.width - 1 + reach)
            & (my >= -reach) & (my <= camera.height - 1 + reach)
        ).numpy()
    sel = np.flatnonzero(inside)
    depth = z.detach().numpy()[sel]
    order = sel[np.lexsort((idx[sel], depth))]
    index = idx[order]

    det = a * c - b * b
    conic = torch.stack([c / det, -b / det, a / det], dim=-1)[order]
    m2d = mean2d[order]
    op = opacity[order]
    col = st.color[index]
    with torch.no_grad():
        r = reach.numpy()[order]
        mm = m2d.numpy()
        bbox = np.ascontiguousarray(
            np.stack([mm[:, 0] - r, mm[:, 0] + r, mm[:, 1] - r, mm[:, 1] + r], axis=1))
    offsets, items = _raster.bin_tiles(bbox, camera.width, camera.height)
    holder: dict = {}
    image = _Composite.apply(m2d, conic, op, col, background, bbox, offsets, items,
                             camera.width, camera.height, holder)
    return RenderResult(image, index, m2d, [infront, inside, order, holder["signature"]])


def render_image(scene: Scene, camera: Camera) -> ImageBuffer:
    """Render ``scene`` through ``camera`` (deterministic, float64)."""
    if camera.width <= 0 or camera.height <= 0:
        raise ValueError("image has zero area")
    with torch.no_grad():
        out = render_tensors(SceneTensors.from_scene(scene), camera)
    return ImageBuffer(out.image.numpy().copy())


def project_scene(scene: Scene, camera: Camera) -> list[ProjectedGaussian]:
    """Non-culled projections in compositing order (numpy path, for inspection)."""
    out = []
    covs = covariances(scene.log_scales, scene.rotations)
    opac = scene.opacities
    for i in range(len(scene)):
        cam = camera.rotation @ scene.positions[i] + camera.translation
        if cam[2] <= NEAR_PLANE:
            continue
        tw = projection_jacobian(cam, camera.fx, camera.fy) @ camera.rotation
        cov2d = tw @ covs[i] @ tw.T + DILATION * np.eye(2)
        mean2d = np.array([camera.fx * cam[0] / cam[2] + camera.cx,
                           camera.fy * cam[1] / cam[2] + camera.cy])
        radius = cutoff_radius(opac[i], cov2d)
        if radius < 0 or _outside(mean2d, radius, camera):
            continue
        out.append(ProjectedGaussian(mean2d, 0.5 * (cov2d + cov2d.T), float(cam[2]), i))
    out.sort(key=lambda p: (p.depth, p.source_index))
    return out
