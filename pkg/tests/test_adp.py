import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from microsplat.adp import (
    AdpConfig,
    ElboState,
    densify_clone_split,
    elbo_step,
    kl_complexity,
    kl_from_covariance,
    opacity_reg_loss,
    opacity_reg_t,
    prune_low_opacity,
)
from microsplat.scene import Scene, logit


def scene_with(opacities=None, log_scales=None, n=None):
    n = n or len(opacities if opacities is not None else log_scales)
    op = np.full(n, 0.5) if opacities is None else np.asarray(opacities, dtype=float)
    ls = np.zeros((n, 3)) if log_scales is None else np.asarray(log_scales, dtype=float)
    return Scene(np.arange(3 * n, dtype=float).reshape(n, 3), ls, np.tile([1.0, 0, 0, 0], (n, 1)),
                 logit(op), np.full((n, 3), 0.5), extent=10.0)


class TestKl:
    def test_identity(self):
        # unit scales with extent 10 give a normalized covariance of I
        assert kl_from_covariance(np.eye(3), 0.0, 7.0) == pytest.approx(1.5)
        assert kl_complexity(scene_with(n=1), 10.0, 1, lambda_xi=0.0) == pytest.approx(1.5)

    def test_doubled(self):
        assert kl_from_covariance(2 * np.eye(3), 0.0, 0.1) == pytest.approx(0.5 * (6 - 3 * math.log(2)))
        assert kl_from_covariance(2 * np.eye(3), 0.0, 0.1) == pytest.approx(1.9603, abs=1e-4)

    def test_density_term(self):
        assert kl_from_covariance(np.eye(3), math.e - 1, 1.0) == pytest.approx(2.5)

    def test_uses_count_ratio(self):
        scene = scene_with(n=4)
        expect = 1.5 + 0.1 * math.log(1 + 4 / 2)
        assert kl_complexity(scene, 10.0, 2, lambda_xi=0.1) == pytest.approx(expect)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            kl_complexity(Scene.empty(), 1.0, 1)


class TestElbo:
    def test_first_step_initializes(self):
        state, delta = elbo_step(ElboState(), 0.3, 0.2, AdpConfig())
        assert state.ema == pytest.approx(-0.5) and delta is None

    def test_ema_arithmetic(self):
        cfg = AdpConfig(ema_decay=0.9)
        state, _ = elbo_step(ElboState(ema=0.0, iteration=1), -1.0, 0.0, cfg)
        assert state.ema == pytest.approx(0.1)

    def test_constant_curve_stops_after_patience(self):
        cfg = AdpConfig(window=50, patience=3)
        state = ElboState()
        stop_at = None
        for t in range(1000):
            state, delta = elbo_step(state, 1.0, 0.5, cfg)
            if delta is not None:
                assert delta == 0.0
            if state.stopped:
                stop_at = state.iteration
                break
        # first evaluation once the history holds w values, then patience - 1 more
        first = cfg.window + (-cfg.window) % cfg.check_every
        first = first if first > cfg.window else first + cfg.check_every
        assert stop_at == first + (cfg.patience - 1) * cfg.check_every

    def test_linear_improvement_never_stops(self):
        cfg = AdpConfig(window=100, tau=0.005, ema_decay=0.9)
        state = ElboState()
        level = -1.0
        deltas = []
        for _ in range(10 * cfg.window):
            level += 0.01 * abs(level) / cfg.window
            state, delta = elbo_step(state, -level, 0.0, cfg)
            if delta is not None:
                deltas.append(delta)
        assert not state.stopped
        assert min(deltas) > cfg.tau

    def test_zero_plateau_delta_is_zero(self):
        cfg = AdpConfig(window=5, patience=1)
        state = ElboState()
        while not state.stopped and state.iteration < 50:
            state, delta = elbo_step(state, 0.0, 0.0, cfg)
            if delta is not None:
                assert delta == 0.0
        assert state.stopped and state.stop_iteration == 6

    def test_refuses_after_stop(self):
        with pytest.raises(RuntimeError):
            elbo_step(ElboState(ema=1.0, stopped=True), 0.0, 0.0, AdpConfig())

    def test_input_state_untouched(self):
        state = ElboState()
        state, _ = elbo_step(state, 1.0, 0.0, AdpConfig())
        before = (state.ema, list(state.history), state.iteration)
        elbo_step(state, 2.0, 0.0, AdpConfig())
        assert (state.ema, list(state.history), state.iteration) == before

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=200), st.floats(0.01, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_pure_bounded_and_monotone(self, losses, decay):
        cfg = AdpConfig(window=10, patience=2, ema_decay=decay, tau=0.05)
        a, b = ElboState(), ElboState()
        stopped_once = False
        for v in losses:
            if a.stopped:
                break
            prev = a.ema
            a, da = elbo_step(a, v, 0.0, cfg)
            b, db = elbo_step(b, v, 0.0, cfg)
            assert a.ema == b.ema and da == db and a.stopped == b.stopped
            if prev is not None:
                lo, hi = min(prev, -v), max(prev, -v)
                assert lo - 1e-12 <= a.ema <= hi + 1e-12
            assert len(a.history) <= cfg.window
            assert not (stopped_once and not a.stopped)
            stopped_once |= a.stopped

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdpConfig(ema_decay=1.0)
        with pytest.raises(ValueError):
            AdpConfig(prune_interval=0)


class TestOpacityReg:
    def test_transparent(self):
        scene = scene_with(n=3)
        scene.opacity_logits[:] = -40.0
        assert opacity_reg_loss(scene, 1.0, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_half(self):
        assert opacity_reg_loss(scene_with([0.5]), 1.0, 1.0) == pytest.approx(0.75)

    def test_linear_only(self):
        op = [0.1, 0.4, 0.7]
        assert opacity_reg_loss(scene_with(op), 0.0, 0.3) == pytest.approx(0.3 * sum(op))

    def test_tensor_form_matches(self):
        scene = scene_with([0.2, 0.9])
        t = opacity_reg_t(torch.tensor(scene.opacity_logits), 0.5, 0.25)
        assert float(t) == pytest.approx(opacity_reg_loss(scene, 0.5, 0.25), abs=1e-15)

    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=10), st.integers(0, 9),
           st.floats(1e-3, 1), st.floats(1e-3, 1))
    @settings(max_examples=60, deadline=None)
    def test_non_negative_and_increasing(self, logits, which, l2, l3):
        scene = scene_with(n=len(logits))
        scene.opacity_logits[:] = logits
        base = opacity_reg_loss(scene, l2, l3)
        assert base >= 0
        scene.opacity_logits[which % len(logits)] += 0.5
        assert opacity_reg_loss(scene, l2, l3) >= base


class TestPrune:
    def test_keeps_opaque(self):
        out = prune_low_opacity(scene_with([0.01, 0.5]), 0.05)
        assert len(out.scene) == 1 and out.removed.tolist() == [0] and not out.refused
        np.testing.assert_allclose(out.scene.opacities, [0.5])

    def test_nothing_to_prune(self):
        scene = scene_with([0.3, 0.5])
        out = prune_low_opacity(scene, 0.05)
        assert out.scene.equals(scene) and len(out.removed) == 0

    def test_refuses_to_empty(self):
        scene = scene_with([0.01, 0.02])
        out = prune_low_opacity(scene, 0.05)
        assert out.refused and out.scene.equals(scene) and len(out.removed) == 0

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            prune_low_opacity(scene_with([0.5]), 1.0)

    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=30), st.floats(0.01, 0.99))
    @settings(max_examples=80, deadline=None)
    def test_partition(self, opacities, threshold):
        scene = scene_with(opacities)
        out = prune_low_opacity(scene, threshold)
        assert len(out.scene) <= len(scene)
        if out.refused:
            return
        alpha = scene.opacities
        assert np.all(alpha[out.removed] < threshold)
        assert np.all(out.scene.opacities >= threshold)
        assert list(out.removed) == sorted(out.removed)
        kept = np.setdiff1d(np.arange(len(scene)), out.removed)
        np.testing.assert_array_equal(out.scene.positions, scene.positions[kept])


class TestDensify:
    cfg = AdpConfig(grad_threshold=1e-3, percent_dense=0.01)

    def test_cold_scene_unchanged(self):
        scene = scene_with(n=3)
        out = densify_clone_split(scene, np.zeros(3), self.cfg, np.random.default_rng(0))
        assert out.scene.equals(scene) and out.n_cloned == out.n_split == 0

    def test_small_point_cloned(self):
        scene = scene_with(log_scales=[[-8.0, -8.0, -8.0]])
        out = densify_clone_split(scene, np.array([1.0]), self.cfg, np.random.default_rng(0))
        assert len(out.scene) == 2 and out.n_cloned == 1
        np.testing.assert_array_equal(out.scene.positions[0], out.scene.positions[1])

    def test_large_point_split(self):
        scene = scene_with(log_scales=[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        out = densify_clone_split(scene, np.array([0.0, 1.0]), self.cfg, np.random.default_rng(0))
        assert len(out.scene) == 3 and out.n_split == 1
        np.testing.assert_allclose(out.scene.log_scales[1:], -math.log(1.6))
        assert out.source.tolist() == [0, 1, 1]
        assert not np.array_equal(out.scene.positions[1], out.scene.positions[2])

    def test_seeded(self):
        scene = scene_with(n=4)
        grads = np.array([1.0, 0.0, 1.0, 1.0])
        a = densify_clone_split(scene, grads, self.cfg, np.random.default_rng(5))
        b = densify_clone_split(scene, grads, self.cfg, np.random.default_rng(5))
        assert a.scene.equals(b.scene)
