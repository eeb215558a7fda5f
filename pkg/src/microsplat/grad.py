"""Loss gradients for scene and encoder parameters, and a finite-difference check.

Gradients come from torch autograd over the tensor forward path, with the
compositing step supplying its own adjoint. Depth order, culling, the
opacity floor/clip, ReLU masks and max-pool argmax are decisions of the
forward pass and are held fixed; the finite-difference check records them
and skips any scalar whose perturbation changes one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from microsplat import gsdo
from microsplat.adp import opacity_reg_t
from microsplat.config import TrainConfig
from microsplat.gsdo import EncoderParams, KnnGraph, NeighborhoodSample
from microsplat.metrics import render_loss_t
from microsplat.render import SceneTensors, render_tensors
from microsplat.scene import Camera, ImageBuffer, Scene, logit

LOSS_KINDS = ("render", "opacity_reg", "cet", "smt", "final")
SCENE_CLASSES = ("position", "log_scale", "rotation", "opacity_logit", "color")


@dataclass
class ParamGradients:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray        # tangent-space, (N, 3)
    opacity_logit: np.ndarray
    color: np.ndarray
    encoder: dict[str, np.ndarray] = field(default_factory=dict)

    def classes(self) -> dict[str, np.ndarray]:
        out = {name: getattr(self, name) for name in SCENE_CLASSES}
        out.update({f"encoder.{k}": v for k, v in self.encoder.items()})
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.classes().values())


@dataclass
class LossStructure:
    """Discrete state frozen across one evaluation: kNN graph and neighbourhoods."""

    graph: KnnGraph | None = None
    sample: NeighborhoodSample | None = None


def prepare_structure(kind: str, scene: Scene, encoder: EncoderParams | None,
                      config: TrainConfig, sample_seed: int | None = None) -> LossStructure:
    if kind not in ("cet", "smt", "final") or encoder is None:
        return LossStructure()
    graph = gsdo.graph_for(scene.positions, encoder)
    sample = None
    if kind in ("smt", "final"):
        k_size = min(config.neighborhood_size, len(scene))
        sample = gsdo.sample_neighborhoods(
            scene.positions, config.n_neighborhoods, k_size,
            config.seed if sample_seed is None else sample_seed,
        )
    return LossStructure(graph, sample)


def evaluate(kind: str, st: SceneTensors, enc: dict[str, torch.Tensor] | None,
             cameras: Sequence[Camera], ground_truths: Sequence, config: TrainConfig,
             structure: LossStructure):
    """Loss tensor for ``kind`` plus the list of forward-pass decisions."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    decisions: list = []
    total = torch.zeros((), dtype=torch.float64)
    if kind in ("render", "final"):
        for cam, gt in zip(cameras, ground_truths):
            out = render_tensors(st, cam)
            gt_t = torch.as_tensor(gt.data if isinstance(gt, ImageBuffer) else np.asarray(gt))
            total = total + render_loss_t(out.image, gt_t, config.lambda1)
            decisions += out.decisions
            decisions.append(np.sign((out.image - gt_t).detach().numpy()))
    if kind == "opacity_reg":
        total = total + opacity_reg_t(st.opacity_logit, config.lambda2, config.lambda3)
    if kind in ("cet", "smt", "final"):
        if enc is None or structure.graph is None:
            raise ValueError(f"loss {kind!r} needs encoder parameters")
        z, inter = gsdo.encode_t(st.position, enc, structure.graph)
        decisions += [inter["argmax"], (inter["f"] > 0).numpy(), (inter["hidden"] > 0).numpy(),
                      ((inter["f"] + inter["r"]) @ enc["W2"].T + enc["b2"] > 0).detach().numpy()]
        if kind in ("cet", "final"):
            cet = gsdo.loss_cet_t(st.position, z, enc)
            total = total + (config.lambda_c * cet if kind == "final" else cet)
        if kind in ("smt", "final"):
            smt = gsdo.loss_smt_t(structure.sample, st.position, z)
            total = total + (config.lambda_s * smt if kind == "final" else smt)
    return total, decisions


def backward(loss_kind: str, scene: Scene, encoder_params: EncoderParams | None,
             cameras: Sequence[Camera], ground_truths: Sequence, config: TrainConfig,
             structure: LossStructure | None = None) -> tuple[float, ParamGradients]:
    """Loss value and exact gradients for every scene and encoder parameter.

    Losses over several views are summed.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if len(scene) == 0:
        raise ValueError("cannot differentiate a loss over an empty scene")
    if structure is None:
        structure = prepare_structure(loss_kind, scene, encoder_params, config)
    st = SceneTensors.from_scene(scene, requires_grad=True)
    enc = encoder_params.tensors(requires_grad=True) if encoder_params is not None else None
    loss, _ = evaluate(loss_kind, st, enc, cameras, ground_truths, config, structure)
    leaves = list(st.leaves().values()) + (list(enc.values()) if enc else [])
    grads = torch.autograd.grad(loss, leaves, allow_unused=True) if loss.requires_grad else [None] * len(leaves)
    arrays = [np.zeros(tuple(t.shape)) if g is None else g.numpy().copy() for t, g in zip(leaves, grads)]
    scene_part = dict(zip(SCENE_CLASSES, arrays[:5]))
    enc_part = dict(zip(enc.keys(), arrays[5:])) if enc else {}
    return float(loss.detach()), ParamGradients(**scene_part, encoder=enc_part)


# ---------------------------------------------------------------------------
# Finite-difference check
# ---------------------------------------------------------------------------


@dataclass
class ClassCheck:
    max_rel_error: float     # over scalars whose gradient magnitude exceeds abs_tolerance
    max_abs_error: float
    checked: int
    skipped: int
    passed: bool


@dataclass
class GradReport:
    seed: int
    results: dict[str, dict[str, ClassCheck]]   # loss kind -> class -> result
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(c.passed for per in self.results.values() for c in per.values())

    def failures(self) -> list[tuple[str, str, float]]:
        return [(k, c, r.max_rel_error) for k, per in self.results.items()
                for c, r in per.items() if not r.passed]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "tolerance": self.tolerance, "passed": self.passed,
            "results": {k: {c: vars(r) for c, r in per.items()} for k, per in self.results.items()},
        }


def random_problem(seed: int, n_points: int = 12, size: int = 16):
    """A small random scene, one camera and a random target image."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.6, 0.6, (n_points, 3))
    quats = rng.normal(size=(n_points, 4))
    scene = Scene(
        pos, np.log(rng.uniform(0.12, 0.4, (n_points, 3))),
        quats / np.linalg.norm(quats, axis=1, keepdims=True),
        logit(rng.uniform(0.3, 0.9, n_points)), rng.uniform(0.05, 0.95, (n_points, 3)),
        rng.uniform(0.0, 0.3, 3),
    )
    scene.extent = 1.0
    cam = Camera.look_at([0.3, -3.0, 0.8], [0.0, 0.0, 0.0], size, size, fx=1.1 * size)
    target = ImageBuffer(rng.uniform(0.0, 1.0, (size, size, 3)))
    return scene, [cam], [target]


def _scalar_views(scene: Scene, encoder: EncoderParams | None):
    """(class name, flat view into a copy, builder) for every perturbable parameter."""
    views = {
        "position": scene.positions, "log_scale": scene.log_scales,
        "opacity_logit": scene.opacity_logits, "color": scene.colors,
    }
    out = {name: arr for name, arr in views.items()}
    out["rotation"] = np.zeros((len(scene), 3))
    if encoder is not None:
        for name, arr in encoder.arrays().items():
            out[f"encoder.{name}"] = arr
    return out


def check_gradients(scene: Scene, encoder_params: EncoderParams | None, config: TrainConfig,
                    seed: int = 0, cameras=None, ground_truths=None,
                    loss_kinds: Sequence[str] = LOSS_KINDS, step: float = 1e-4,
                    tolerance: float = 1e-3, abs_tolerance: float = 1e-6,
                    corrupt: str | None = None) -> GradReport:
    """Compare analytic gradients with central differences for every scalar.

    ``cameras``/``ground_truths`` default to a seeded 16x16 view of the scene.
    ``corrupt`` names a parameter class whose analytic gradient gets +1 added
    (a negative control).
    """
    if len(scene) > 16:
        raise ValueError("gradient checks are limited to 16 Gaussians")
    if cameras is None:
        _, cameras, ground_truths = random_problem(seed, 1, 16)
    for cam in cameras:
        if cam.width > 16 or cam.height > 16:
            raise ValueError("gradient checks are limited to 16x16 images")
    results: dict[str, dict[str, ClassCheck]] = {}
    for kind in loss_kinds:
        enc = encoder_params
        structure = prepare_structure(kind, scene, encoder_params, config, sample_seed=seed)
        _, grads = backward(kind, scene, enc, cameras, ground_truths, config, structure)
        analytic = grads.classes()
        if corrupt is not None and corrupt in analytic:
            analytic[corrupt] = analytic[corrupt] + 1.0

        def run(sc: Scene, en: EncoderParams | None, delta: np.ndarray):
            st = SceneTensors.from_scene(sc)
            st.rotation_delta = torch.tensor(delta, dtype=torch.float64)
            with torch.no_grad():
                enc_t = en.tensors() if en is not None else None
                loss, dec = evaluate(kind, st, enc_t, cameras, ground_truths, config, structure)
            return float(loss), dec

        _, base_dec = run(scene, enc, np.zeros((len(scene), 3)))
        per_class: dict[str, ClassCheck] = {}
        for cls_name, ref in _scalar_views(scene, enc).items():
            worst_rel, worst_abs, checked, skipped, ok = 0.0, 0.0, 0, 0, True
            a_flat = analytic[cls_name].reshape(-1)
            for j in range(ref.size):
                vals = []
                stable = True
                for sign in (1.0, -1.0):
                    sc, en = scene.copy(), enc.copy() if enc is not None else None
                    delta = np.zeros((len(scene), 3))
                    if cls_name == "rotation":
                        delta.reshape(-1)[j] += sign * step
                    elif cls_name.startswith("encoder."):
                        getattr(en, cls_name.split(".", 1)[1]).reshape(-1)[j] += sign * step
                    else:
                        getattr(sc, _SCENE_ATTR[cls_name]).reshape(-1)[j] += sign * step
                    val, dec = run(sc, en, delta)
                    stable &= _same(dec, base_dec)
                    vals.append(val)
                if not stable:
                    skipped += 1
                    continue
                numeric = (vals[0] - vals[1]) / (2 * step)
                a = a_flat[j]
                err = abs(a - numeric)
                scale = max(abs(a), abs(numeric))
                rel = err / scale if scale > 0 else 0.0
                if scale > abs_tolerance:
                    worst_rel = max(worst_rel, rel)
                worst_abs = max(worst_abs, err)
                ok &= rel < tolerance or err < abs_tolerance
                checked += 1
            per_class[cls_name] = ClassCheck(worst_rel, worst_abs, checked, skipped, bool(ok))
        results[kind] = per_class
    return GradReport(seed, results, tolerance)


_SCENE_ATTR = {"position": "positions", "log_scale": "log_scales",
               "opacity_logit": "opacity_logits", "color": "colors"}


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(
        x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b)
    )
