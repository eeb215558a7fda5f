"""Three-phase training: ELBO-controlled densification, opacity-aware pruning,
graph-guided refinement; plus Adam and the ablation ladder."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from microsplat import adp, gsdo
from microsplat.config import TrainConfig
from microsplat.gsdo import EncoderParams
from microsplat.metrics import psnr, render_loss_t, ssim
from microsplat.render import SceneTensors, render_image, render_tensors, set_threads
from microsplat.scene import Camera, ImageBuffer, Scene, quat_to_rotmat

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15
TRACE_COLUMNS = ("iteration", "phase", "L_r", "L_KL", "L_E", "ema", "delta_t", "n_gs", "event")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamSlot:
    m: np.ndarray
    v: np.ndarray
    steps: np.ndarray   # per row, so rows added by densification start fresh


class Adam:
    """Adam over named parameter arrays whose leading axis may grow or shrink."""

    def __init__(self, lrs: dict[str, float], betas=ADAM_BETAS, eps: float = ADAM_EPS):
        self.lrs = dict(lrs)
        self.betas = betas
        self.eps = eps
        self.slots: dict[str, AdamSlot] = {}

    def _slot(self, name: str, shape) -> AdamSlot:
        slot = self.slots.get(name)
        if slot is None or slot.m.shape != tuple(shape):
            lead = shape[0] if len(shape) else 1
            slot = AdamSlot(np.zeros(shape), np.zeros(shape), np.zeros(lead, dtype=np.int64))
            self.slots[name] = slot
        return slot

    def direction(self, name: str, grad: np.ndarray) -> np.ndarray:
        """Update moments with ``grad`` and return the (unscaled) step."""
        b1, b2 = self.betas
        slot = self._slot(name, grad.shape)
        rows = grad.reshape(grad.shape[0], -1) if grad.ndim else grad.reshape(1, -1)
        finite = np.isfinite(rows).all(axis=1)
        if not finite.all():
            log.warning("skipping %d rows of %s with non-finite gradient", int((~finite).sum()), name)
        mask = finite.reshape((-1,) + (1,) * (grad.ndim - 1)) if grad.ndim else finite[0]
        g = np.where(mask, grad, 0.0)
        slot.m = np.where(mask, b1 * slot.m + (1 - b1) * g, slot.m)
        slot.v = np.where(mask, b2 * slot.v + (1 - b2) * g * g, slot.v)
        slot.steps = slot.steps + finite
        t = slot.steps.reshape((-1,) + (1,) * (grad.ndim - 1)) if grad.ndim else slot.steps[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            m_hat = slot.m / (1 - b1 ** t)
            v_hat = slot.v / (1 - b2 ** t)
            step = m_hat / (np.sqrt(v_hat) + self.eps)
        return np.where(mask & (t > 0), step, 0.0)

    def keep_rows(self, name: str, source: np.ndarray, fresh_from: int | None = None) -> None:
        """Reindex state rows after pruning or densification.

        Rows at positions ``>= fresh_from`` in the new layout start with empty
        moments.
        """
        slot = self.slots.get(name)
        if slot is None:
            return
        slot.m, slot.v, slot.steps = slot.m[source], slot.v[source], slot.steps[source]
        if fresh_from is not None:
            slot.m[fresh_from:] = 0.0
            slot.v[fresh_from:] = 0.0
            slot.steps[fresh_from:] = 0


def _quat_mul(q, r):
    w1, x1, y1, z1 = q.T
    w2, x2, y2, z2 = r.T
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=1)


def apply_rotation_step(quats: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Right-compose a tangent-space step onto unit quaternions and renormalize."""
    out = _quat_mul(quats, np.concatenate([np.ones((len(delta), 1)), 0.5 * delta], axis=1))
    return out / np.linalg.norm(out, axis=1, keepdims=True)


SCENE_ATTRS = {"position": "positions", "log_scale": "log_scales", "opacity_logit": "opacity_logits",
               "color": "colors"}


def learning_rates(config: TrainConfig, extent: float) -> dict[str, float]:
    return {
        "position": config.lr_position * extent, "log_scale": config.lr_scale,
        "rotation": config.lr_rotation, "opacity_logit": config.lr_opacity,
        "color": config.lr_color,
    }


def optimizer_step(scene: Scene, grads: dict[str, np.ndarray], optimizer: Adam,
                   encoder: EncoderParams | None = None,
                   encoder_grads: dict[str, np.ndarray] | None = None,
                   encoder_lr: float = 1e-3) -> None:
    """One Adam step in place; quaternions renormalized, colours kept in [0, 1]."""
    for name, attr in SCENE_ATTRS.items():
        if name in grads:
            arr = getattr(scene, attr)
            arr -= optimizer.lrs[name] * optimizer.direction(name, grads[name])
    if "rotation" in grads:
        delta = -optimizer.lrs["rotation"] * optimizer.direction("rotation", grads["rotation"])
        scene.rotations = apply_rotation_step(scene.rotations, delta)
    np.clip(scene.colors, 0.0, 1.0, out=scene.colors)
    if encoder is not None and encoder_grads:
        for name, g in encoder_grads.items():
            key = f"encoder.{name}"
            optimizer.lrs.setdefault(key, encoder_lr)
            getattr(encoder, name)[...] -= optimizer.lrs[key] * optimizer.direction(key, g)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    trace: list[dict] = field(default_factory=list)
    phase_boundaries: list[int] = field(default_factory=list)
    n_gs_trajectory: list[tuple[int, int]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    checkpoints: dict[str, dict] = field(default_factory=dict)   # label -> metrics
    final: dict = field(default_factory=dict)
    peak_n_gs: int = 0
    densify_stop_iteration: int | None = None
    divergence: bool = False
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        """JSON-ready report; wall-clock time is left out so reruns compare byte-equal."""
        return {
            "phase_boundaries": self.phase_boundaries,
            "n_gs_trajectory": [list(p) for p in self.n_gs_trajectory],
            "events": self.events,
            "checkpoints": self.checkpoints,
            "final": self.final,
            "peak_n_gs": self.peak_n_gs,
            "densify_stop_iteration": self.densify_stop_iteration,
            "divergence": self.divergence,
            "trace": self.trace,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        with open(out / "trace.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in self.trace:
                writer.writerow(["" if row.get(c) is None else row.get(c) for c in TRACE_COLUMNS])
        (out / "timing.json").write_text(json.dumps({"wall_clock_s": self.wall_clock}))


def evaluate_views(scene: Scene, cameras: Sequence[Camera], gts: Sequence[ImageBuffer]) -> dict:
    psnrs, ssims = [], []
    for cam, gt in zip(cameras, gts):
        img = render_image(scene, cam)
        psnrs.append(psnr(img, gt))
        ssims.append(ssim(img, gt))
    return {"psnr": float(np.mean(psnrs)), "ssim": float(np.mean(ssims)),
            "psnr_per_view": psnrs, "ssim_per_view": ssims, "n_gs": len(scene)}


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


class Trainer:
    """Mutable training state; phases run in place and ``fork`` copies the state."""

    def __init__(self, scene: Scene, cameras: Sequence[Camera], ground_truths: Sequence[ImageBuffer],
                 config: TrainConfig, checkpoint_dir=None):
        if not cameras or len(cameras) != len(ground_truths):
            raise ValueError("training needs at least one camera with a ground-truth image")
        self.config = config
        self.checkpoint_dir = checkpoint_dir
        self.scene = scene.copy()
        self.cameras = list(cameras)
        self.gts = list(ground_truths)
        self._gt_t = [torch.as_tensor(g.data) for g in self.gts]
        self.extent = scene.extent
        self.n_initial = max(1, len(scene))
        self.optimizer = Adam(learning_rates(config, self.extent))
        self.elbo = adp.ElboState()
        self.encoder: EncoderParams | None = None
        self.iteration = 0
        self.report = RunReport()
        self.report.n_gs_trajectory.append((0, len(self.scene)))
        self.report.peak_n_gs = len(self.scene)
        self._view_rng = np.random.default_rng([config.seed, 1])
        self._split_rng = np.random.default_rng([config.seed, 2])
        self._view_queue: list[int] = []
        self._grad_accum = np.zeros(len(self.scene))
        self._grad_count = np.zeros(len(self.scene))
        self._loss_ema: float | None = None
        self._window_best: float | None = None
        self._started = time.perf_counter()

    # -- bookkeeping -------------------------------------------------------

    def fork(self) -> "Trainer":
        return copy.deepcopy(self)

    def _next_view(self) -> int:
        if not self._view_queue:
            self._view_queue = list(self._view_rng.permutation(len(self.cameras)))
        return int(self._view_queue.pop(0))

    def _event(self, kind: str, **info) -> None:
        self.report.events.append({"iteration": self.iteration, "event": kind, **info})
        self.report.n_gs_trajectory.append((self.iteration, len(self.scene)))
        self.report.peak_n_gs = max(self.report.peak_n_gs, len(self.scene))

    def _reindex(self, source: np.ndarray, fresh_from: int | None = None) -> None:
        for name in ("position", "log_scale", "rotation", "opacity_logit", "color"):
            self.optimizer.keep_rows(name, source, fresh_from)
        self._grad_accum = np.zeros(len(self.scene))
        self._grad_count = np.zeros(len(self.scene))

    def checkpoint_metrics(self, label: str) -> dict:
        metrics = evaluate_views(self.scene, self.cameras, self.gts)
        self.report.checkpoints[label] = {
            "iteration": self.iteration, "psnr": metrics["psnr"], "ssim": metrics["ssim"],
            "n_gs": metrics["n_gs"],
        }
        return metrics

    # -- one iteration -----------------------------------------------------

    def _step(self, phase: int, structure=None, use_reg: bool = False,
              lambda_c: float = 0.0, lambda_s: float = 0.0) -> float:
        cfg = self.config
        v = self._next_view()
        cam = self.cameras[v]
        st = SceneTensors.from_scene(self.scene, requires_grad=True)
        enc_t = self.encoder.tensors(requires_grad=True) if structure is not None else None
        out = render_tensors(st, cam)
        if out.mean2d.requires_grad:
            out.mean2d.retain_grad()
        l_r = render_loss_t(out.image, self._gt_t[v], cfg.lambda1)
        loss = l_r
        if use_reg:
            loss = loss + adp.opacity_reg_t(st.opacity_logit, cfg.lambda2, cfg.lambda3)
        if structure is not None:
            z, _ = gsdo.encode_t(st.position, enc_t, structure.graph)
            if lambda_c > 0:
                loss = loss + lambda_c * gsdo.loss_cet_t(st.position, z, enc_t)
            if lambda_s > 0:
                loss = loss + lambda_s * gsdo.loss_smt_t(structure.sample, st.position, z)
        loss.backward()
        grads = {}
        for name, leaf in st.leaves().items():
            grads[name] = leaf.grad.numpy().copy() if leaf.grad is not None else np.zeros(tuple(leaf.shape))
        if phase == 1 and out.mean2d.grad is not None and len(out.index):
            g = out.mean2d.grad.numpy()
            ndc = np.hypot(g[:, 0] * cam.width / 2.0, g[:, 1] * cam.height / 2.0)
            np.add.at(self._grad_accum, out.index, ndc)
            np.add.at(self._grad_count, out.index, 1.0)
        enc_grads = None
        if structure is not None:
            enc_grads = {k: (t.grad.numpy().copy() if t.grad is not None else np.zeros(tuple(t.shape)))
                         for k, t in enc_t.items()}
        optimizer_step(self.scene, grads, self.optimizer, self.encoder, enc_grads, cfg.lr_encoder)
        self.iteration += 1
        if cfg.checkpoint_every and self.iteration % cfg.checkpoint_every == 0:
            _maybe_checkpoint(self, self.checkpoint_dir, f"iter_{self.iteration:06d}")
        value = float(l_r.detach())
        self._track_divergence(value)
        return value

    def _track_divergence(self, value: float) -> None:
        if not math.isfinite(value):
            self.report.divergence = True
            return
        self._loss_ema = value if self._loss_ema is None else 0.9 * self._loss_ema + 0.1 * value
        if self.iteration % 100 == 0:
            if self._window_best is not None and self._loss_ema > 2.0 * self._window_best:
                self.report.divergence = True
            self._window_best = self._loss_ema if self._window_best is None else min(
                self._window_best, self._loss_ema)

    def _trace(self, phase: int, l_r: float, event: str = "", **extra) -> None:
        row = {"iteration": self.iteration, "phase": phase, "L_r": l_r, "L_KL": None, "L_E": None,
               "ema": None, "delta_t": None, "n_gs": len(self.scene), "event": event}
        row.update(extra)
        self.report.trace.append(row)

    # -- phases ------------------------------------------------------------

    def phase1(self, iterations: int | None = None, use_elbo: bool | None = None) -> None:
        """Fit ``L_r`` while densifying; the ELBO rule can end densification early."""
        cfg = self.config
        acfg = cfg.adp()
        iterations = cfg.phase1_iters if iterations is None else iterations
        use_elbo = cfg.use_elbo if use_elbo is None else use_elbo
        densifying = True
        for local in range(iterations):
            l_r = self._step(1)
            event = ""
            extra = {}
            if use_elbo and not self.elbo.stopped:
                kl = adp.kl_complexity(self.scene, self.extent, self.n_initial, cfg.lambda_xi)
                self.elbo, delta = adp.elbo_step(self.elbo, l_r, kl, acfg)
                extra = {"L_KL": kl, "L_E": -l_r - kl, "ema": self.elbo.ema, "delta_t": delta}
                if self.elbo.stopped:
                    densifying = False
                    event = "stop"
                    self.report.densify_stop_iteration = self.iteration
                    self._event("stop", delta_t=delta)
            if (densifying and local + 1 >= cfg.densify_from
                    and (local + 1) % acfg.densify_interval == 0 and local + 1 < iterations):
                if self._densify(acfg):
                    event = "densify" if not event else event + "+densify"
            self._trace(1, l_r, event, **extra)
        self.report.phase_boundaries.append(self.iteration)

    def _densify(self, acfg: adp.AdpConfig) -> bool:
        mean_grad = np.where(self._grad_count > 0, self._grad_accum / np.maximum(self._grad_count, 1), 0.0)
        result = adp.densify_clone_split(self.scene, mean_grad, acfg, self._split_rng, self.extent)
        cap = self.config.max_gaussians
        if cap and len(result.scene) > cap:
            log.info("densification skipped: %d Gaussians would exceed cap %d", len(result.scene), cap)
            self._grad_accum[:] = 0.0
            self._grad_count[:] = 0.0
            return False
        if result.n_cloned == 0 and result.n_split == 0:
            self._grad_accum[:] = 0.0
            self._grad_count[:] = 0.0
            return False
        n_keep = len(self.scene) - result.n_split
        self.scene = result.scene
        self._reindex(result.source, fresh_from=n_keep)
        self._event("densify", cloned=result.n_cloned, split=result.n_split)
        return True

    def phase2(self, iterations: int | None = None, use_reg: bool | None = None,
               use_pruning: bool | None = None, prune_interval: int | None = None) -> None:
        """Fit ``L_r`` plus the opacity regularizer, pruning on a fixed interval."""
        cfg = self.config
        iterations = cfg.phase2_iters if iterations is None else iterations
        use_reg = cfg.use_opacity_reg if use_reg is None else use_reg
        use_pruning = cfg.use_pruning if use_pruning is None else use_pruning
        interval = cfg.prune_interval if prune_interval is None else prune_interval
        for local in range(iterations):
            l_r = self._step(2, use_reg=use_reg)
            event = ""
            if use_pruning and (local + 1) % interval == 0:
                if self.prune(cfg.prune_threshold):
                    event = "prune"
            self._trace(2, l_r, event)
        self.report.phase_boundaries.append(self.iteration)

    def prune(self, threshold: float) -> bool:
        opacities = self.scene.opacities
        result = adp.prune_low_opacity(self.scene, threshold)
        if result.refused:
            self._event("prune_refused", threshold=threshold)
            return False
        if len(result.removed) == 0:
            return False
        keep = np.setdiff1d(np.arange(len(self.scene)), result.removed)
        self.report.events.append({
            "iteration": self.iteration, "event": "prune", "removed": int(len(result.removed)),
            "max_removed_opacity": float(opacities[result.removed].max()),
            "min_kept_opacity": float(opacities[keep].min()), "threshold": threshold,
        })
        self.scene = result.scene
        self._reindex(keep)
        self.report.n_gs_trajectory.append((self.iteration, len(self.scene)))
        return True

    def phase3(self, iterations: int | None = None, use_gsdo: bool | None = None,
               lambda_c: float | None = None, lambda_s: float | None = None) -> None:
        """Refine with ``L_final``, updating Gaussians and encoder jointly; N_GS is frozen."""
        cfg = self.config
        iterations = cfg.phase3_iters if iterations is None else iterations
        use_gsdo = cfg.use_gsdo if use_gsdo is None else use_gsdo
        lambda_c = cfg.lambda_c if lambda_c is None else lambda_c
        lambda_s = cfg.lambda_s if lambda_s is None else lambda_s
        use_gsdo = use_gsdo and (lambda_c > 0 or lambda_s > 0) and len(self.scene) >= 2
        if use_gsdo and self.encoder is None:
            self.encoder = EncoderParams.init(cfg.feature_dim, cfg.hidden_dim, cfg.knn_k,
                                              seed=cfg.seed + 7919)
        structure = None
        start = self.iteration
        for local in range(iterations):
            if use_gsdo and local % cfg.graph_refresh == 0:
                from microsplat.grad import LossStructure

                k_size = min(cfg.neighborhood_size, len(self.scene))
                structure = LossStructure(
                    gsdo.graph_for(self.scene.positions, self.encoder, self.iteration),
                    gsdo.sample_neighborhoods(self.scene.positions, cfg.n_neighborhoods, k_size,
                                              seed=cfg.seed * 1_000_003 + start + local),
                )
            l_r = self._step(3, structure=structure, lambda_c=lambda_c, lambda_s=lambda_s)
            self._trace(3, l_r)
        self.report.phase_boundaries.append(self.iteration)

    def finish(self) -> RunReport:
        self.report.final = evaluate_views(self.scene, self.cameras, self.gts)
        self.report.wall_clock = time.perf_counter() - self._started
        return self.report


@dataclass
class TrainResult:
    scene: Scene
    encoder: EncoderParams | None
    report: RunReport


def train(scene0: Scene, cameras: Sequence[Camera], ground_truths: Sequence[ImageBuffer],
          config: TrainConfig, checkpoint_dir=None) -> TrainResult:
    """Run the three phases in order and return the final scene, encoder and report."""
    torch.set_num_threads(1)
    set_threads(config.threads)
    trainer = Trainer(scene0, cameras, ground_truths, config, checkpoint_dir)
    trainer.checkpoint_metrics("initial")
    trainer.phase1()
    trainer.checkpoint_metrics("phase1")
    _maybe_checkpoint(trainer, checkpoint_dir, "phase1")
    trainer.phase2()
    trainer.checkpoint_metrics("phase2")
    _maybe_checkpoint(trainer, checkpoint_dir, "phase2")
    trainer.phase3()
    report = trainer.finish()
    _maybe_checkpoint(trainer, checkpoint_dir, "phase3")
    return TrainResult(trainer.scene, trainer.encoder, report)


def _maybe_checkpoint(trainer: Trainer, checkpoint_dir, label: str) -> None:
    if checkpoint_dir is None or not trainer.config.checkpoint_every:
        return
    from microsplat.scene import save_scene

    out = Path(checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(trainer.scene, out / f"{label}.ply")
    if trainer.encoder is not None:
        trainer.encoder.save(out / f"{label}_encoder.bin")


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

LADDER = ("baseline", "+ELBO densification", "+opacity pruning", "+increase iterations",
          "+L_smt", "full model")


@dataclass
class AblationTable:
    rows: list[dict]
    reports: dict[str, RunReport] = field(default_factory=dict)   # variant -> report
    timings: dict[str, float] = field(default_factory=dict)       # group -> seconds

    def row(self, name: str) -> dict:
        for r in self.rows:
            if r["variant"] == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"rows": self.rows}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        with open(out / "ablation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "variant", "psnr", "ssim", "n_gs", "peak_n_gs"])
            for r in self.rows:
                writer.writerow([r["group"], r["variant"], r["psnr"], r["ssim"], r["n_gs"],
                                 r["peak_n_gs"]])


def run_ablation(scene0: Scene, cameras: Sequence[Camera], ground_truths: Sequence[ImageBuffer],
                 config: TrainConfig, fixed_prune_threshold: float = 0.3,
                 intervals: Sequence[int] = ()) -> AblationTable:
    """Component ladder, GSDO-as-post-process pair and optional pruning-interval sweep.

    Variants sharing a prefix of phases share its computation, which is exact
    because a fork copies the whole training state including RNGs.
    """
    torch.set_num_threads(1)
    set_threads(config.threads)
    rows: list[dict] = []

    reports: dict[str, RunReport] = {}
    timings: dict[str, float] = {}
    started = time.perf_counter()

    def record(group: str, name: str, tr: Trainer, **extra) -> None:
        metrics = evaluate_views(tr.scene, tr.cameras, tr.gts)
        reports[name] = copy.deepcopy(tr.report)
        rows.append({"group": group, "variant": name, "psnr": metrics["psnr"],
                     "ssim": metrics["ssim"], "n_gs": metrics["n_gs"],
                     "peak_n_gs": tr.report.peak_n_gs, "iterations": tr.iteration, **extra})

    base = Trainer(scene0, cameras, ground_truths, config)
    base.phase1(use_elbo=False)
    base.phase2(use_reg=False, use_pruning=False)
    record("ladder", "baseline", base)

    elbo = Trainer(scene0, cameras, ground_truths, config)
    elbo.phase1(use_elbo=True)
    plain = elbo.fork()
    plain.phase2(use_reg=False, use_pruning=False)
    record("ladder", "+ELBO densification", plain,
           densify_stop_iteration=elbo.report.densify_stop_iteration)

    pruned = elbo.fork()
    pruned.phase2(use_reg=True, use_pruning=True)
    record("ladder", "+opacity pruning", pruned)

    more = pruned.fork()
    more.phase3(use_gsdo=False)
    record("ladder", "+increase iterations", more)

    smt_only = pruned.fork()
    smt_only.phase3(use_gsdo=True, lambda_c=0.0)
    record("ladder", "+L_smt", smt_only)

    full = pruned.fork()
    full.phase3(use_gsdo=True)
    record("ladder", "full model", full)

    long_base = base.fork()
    long_base.phase3(use_gsdo=False)
    record("reference", "baseline (same total iterations)", long_base)

    post = base.fork()
    post.prune(fixed_prune_threshold)
    record("gsdo-post", "fixed-threshold prune", post, threshold=fixed_prune_threshold)
    post_gsdo = post.fork()
    post_gsdo.phase3(use_gsdo=True)
    record("gsdo-post", "fixed-threshold prune +GSDO", post_gsdo)
    timings["ladder"] = time.perf_counter() - started

    started = time.perf_counter()
    for interval in intervals:
        if interval == config.prune_interval:
            record("interval", f"prune interval {interval}", full, prune_interval=interval)
            continue
        tr = elbo.fork()
        tr.phase2(use_reg=True, use_pruning=True, prune_interval=interval)
        tr.phase3(use_gsdo=True)
        record("interval", f"prune interval {interval}", tr, prune_interval=interval)
    timings["intervals"] = time.perf_counter() - started
    return AblationTable(rows, reports, timings)


def gsdo_post(scene: Scene, cameras: Sequence[Camera], ground_truths: Sequence[ImageBuffer],
              config: TrainConfig, iterations: int | None = None) -> TrainResult:
    """Phase 3 alone on an existing (for example externally pruned) scene."""
    torch.set_num_threads(1)
    set_threads(config.threads)
    trainer = Trainer(scene, cameras, ground_truths, config)
    trainer.checkpoint_metrics("input")
    trainer.phase3(iterations)
    return TrainResult(trainer.scene, trainer.encoder, trainer.finish())
