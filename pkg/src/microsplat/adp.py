"""Adaptive densification and pruning.

ELBO-style densification stop control, the opacity regularizer and the
scheduled low-opacity prune, plus the clone/split density control whose
termination the ELBO rule decides.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from microsplat.scene import Scene, covariances, sigmoid

log = logging.getLogger(__name__)


@dataclass
class AdpConfig:
    lambda_xi: float = 0.1
    ema_decay: float = 0.99
    window: int = 500
    tau: float = 0.005
    patience: int = 3
    lambda2: float = 1e-4
    lambda3: float = 1e-4
    prune_threshold: float = 0.05
    prune_interval: int = 100
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    densify_interval: int = 100

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.window < 1 or self.patience < 1 or self.prune_interval < 1:
            raise ValueError("window, patience and prune_interval must be >= 1")
        if not 0.0 < self.prune_threshold < 1.0:
            raise ValueError("prune_threshold must lie in (0, 1)")
        if self.tau <= 0 or self.lambda_xi < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("tau must be positive and regularizer weights non-negative")

    @property
    def check_every(self) -> int:
        return max(1, self.window // 5)


# ---------------------------------------------------------------------------
# ELBO controller
# ---------------------------------------------------------------------------


def kl_complexity(scene: Scene, extent: float, n_initial: int, lambda_xi: float = 0.1) -> float:
    """Complexity term: ``0.5 [tr(S) - log|S|] + lambda_xi log(1 + xi)``.

    ``S`` is the mean activated covariance over ``(extent / 10)**2`` and
    ``xi`` the point count relative to ``n_initial``.
    """
    if len(scene) == 0:
        raise ValueError("complexity of an empty scene is undefined")
    if extent <= 0 or n_initial < 1:
        raise ValueError("extent must be positive and n_initial >= 1")
    sigma = covariances(scene.log_scales, scene.rotations).mean(axis=0) / (extent / 10.0) ** 2
    return kl_from_covariance(sigma, len(scene) / n_initial, lambda_xi)


def kl_from_covariance(sigma_norm: np.ndarray, xi: float, lambda_xi: float) -> float:
    sign, logdet = np.linalg.slogdet(sigma_norm)
    if sign <= 0:
        raise ValueError("normalized mean covariance is singular")
    return 0.5 * (float(np.trace(sigma_norm)) - float(logdet)) + lambda_xi * math.log1p(xi)


@dataclass
class ElboState:
    ema: float | None = None
    history: deque = field(default_factory=deque)
    iteration: int = 0
    stopped: bool = False
    consecutive_below: int = 0
    stop_iteration: int | None = None

    def copy(self) -> "ElboState":
        return ElboState(self.ema, deque(self.history), self.iteration, self.stopped,
                         self.consecutive_below, self.stop_iteration)


def elbo_step(state: ElboState, render_loss_value: float, kl_value: float,
              config: AdpConfig) -> tuple[ElboState, float | None]:
    """Advance the smoothed-ELBO controller by one iteration.

    Returns the new state and the relative change over the last ``window``
    iterations on evaluation iterations (every ``window // 5``) once the
    history is full, else ``None``. The input state is not modified.
    """
    if state.stopped:
        raise RuntimeError("ELBO controller already stopped")
    new = state.copy()
    elbo = -render_loss_value - kl_value
    previous = new.ema
    new.ema = elbo if previous is None else config.ema_decay * previous + (1 - config.ema_decay) * elbo
    new.iteration += 1
    delta = None
    if len(new.history) == config.window and new.iteration % config.check_every == 0:
        past = new.history[0]
        delta = 0.0 if abs(new.ema) < 1e-12 else abs(new.ema - past) / abs(new.ema)
        if delta < config.tau:
            new.consecutive_below += 1
            if new.consecutive_below >= config.patience:
                new.stopped = True
                new.stop_iteration = new.iteration
        else:
            new.consecutive_below = 0
    new.history.append(new.ema)
    if len(new.history) > config.window:
        new.history.popleft()
    return new, delta


# ---------------------------------------------------------------------------
# Opacity regularizer and pruning
# ---------------------------------------------------------------------------


def opacity_reg_t(opacity_logit: torch.Tensor, lambda2: float, lambda3: float) -> torch.Tensor:
    alpha = torch.sigmoid(opacity_logit)
    return (lambda2 * alpha * alpha + lambda3 * alpha).sum()


def opacity_reg_loss(scene: Scene, lambda2: float, lambda3: float) -> float:
    """``sum_i lambda2 * a_i**2 + lambda3 * a_i`` over base opacities ``a_i``."""
    alpha = sigmoid(scene.opacity_logits)
    return float(np.sum(lambda2 * alpha * alpha + lambda3 * alpha))


@dataclass
class PruneResult:
    scene: Scene
    removed: np.ndarray
    refused: bool = False


def prune_low_opacity(scene: Scene, threshold: float) -> PruneResult:
    """Drop Gaussians with opacity below ``threshold``; never empties the scene."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    alpha = scene.opacities
    keep = alpha >= threshold
    removed = np.flatnonzero(~keep)
    if len(scene) and not keep.any():
        log.warning("prune would remove all %d Gaussians; keeping scene unchanged", len(scene))
        return PruneResult(scene, np.zeros(0, dtype=np.int64), refused=True)
    if len(removed) == 0:
        return PruneResult(scene, removed)
    return PruneResult(scene.subset(np.flatnonzero(keep)), removed)


# ---------------------------------------------------------------------------
# Clone / split density control
# ---------------------------------------------------------------------------


@dataclass
class DensifyResult:
    scene: Scene
    source: np.ndarray     # for each output row, the input row it came from
    n_cloned: int
    n_split: int


def densify_clone_split(scene: Scene, mean_grad: np.ndarray, config: AdpConfig,
                        rng: np.random.Generator, extent: float | None = None) -> DensifyResult:
    """Clone small and split large Gaussians whose mean image-plane gradient is high.

    Output rows are: untouched and cloned originals in order, then clones,
    then pairs of split children.
    """
    extent = scene.extent if extent is None else extent
    mean_grad = np.asarray(mean_grad, dtype=np.float64)
    hot = mean_grad > config.grad_threshold
    big = scene.scales.max(axis=1) >= config.percent_dense * extent
    clone = np.flatnonzero(hot & ~big)
    split = np.flatnonzero(hot & big)
    n = len(scene)
    if len(clone) == 0 and len(split) == 0:
        return DensifyResult(scene, np.arange(n), 0, 0)
    keep = np.setdiff1d(np.arange(n), split)
    children = np.repeat(split, 2)
    source = np.concatenate([keep, clone, children])
    out = scene.subset(source)
    if len(split):
        k = len(keep) + len(clone)
        std = scene.scales[children]
        local = rng.normal(size=(len(children), 3)) * std
        from microsplat.scene import quat_to_rotmat

        rot = quat_to_rotmat(scene.rotations[children])
        out.positions[k:] = scene.positions[children] + np.einsum("nij,nj->ni", rot, local)
        out.log_scales[k:] = scene.log_scales[children] - math.log(1.6)
    return DensifyResult(out, source, len(clone), len(split))
