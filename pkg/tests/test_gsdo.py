import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from microsplat.gsdo import (
    EncoderParams,
    KnnGraph,
    NeighborhoodSample,
    build_knn_graph,
    embed_initial,
    encode,
    encode_t,
    graph_for,
    loss_cet,
    loss_final,
    loss_smt,
    loss_smt_t,
    sample_neighborhoods,
)


def params(dim=6, hidden=5, k=3, seed=0):
    return EncoderParams.init(dim, hidden, k, seed)


def points(n, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 3))


class TestEmbed:
    def test_zero_weights(self):
        p = params().replace({"W1": np.zeros((6, 3)), "b1": np.zeros(6)})
        assert np.all(embed_initial(points(4), p) == 0)

    def test_relu_clips(self):
        p = params(dim=3).replace({"W1": np.eye(3), "b1": np.zeros(3)})
        np.testing.assert_array_equal(embed_initial([[1.0, -1.0, 0.0]], p), [[1.0, 0.0, 0.0]])

    def test_affine_regime(self):
        p = params()
        p = p.replace({"b1": np.full(6, 100.0)})
        x = points(5)
        np.testing.assert_allclose(embed_initial(x, p), x @ p.W1.T + p.b1, atol=1e-12)


class TestKnn:
    def test_line(self):
        g = build_knn_graph([[0.0], [1.0], [3.0]], 1)
        assert g.neighbors.tolist() == [[1], [0], [1]]

    def test_complete(self):
        g = build_knn_graph(points(4), 10)
        assert g.k == 3
        for i, row in enumerate(g.neighbors):
            assert sorted(row) == [j for j in range(4) if j != i]

    def test_tie_prefers_lower_index(self):
        g = build_knn_graph([[0.0], [-1.0], [1.0]], 1)
        assert g.neighbors[0].tolist() == [1]

    def test_too_small(self):
        with pytest.raises(ValueError):
            build_knn_graph([[0.0]], 1)

    @given(st.integers(0, 10_000), st.integers(2, 30), st.integers(1, 10))
    @settings(max_examples=40, deadline=None)
    def test_invariants(self, seed, n, k):
        feats = np.random.default_rng(seed).normal(size=(n, 4))
        g = build_knn_graph(feats, k)
        assert g.k == min(k, n - 1)
        for i, row in enumerate(g.neighbors):
            assert i not in row and len(set(row)) == len(row)
            d = np.linalg.norm(feats[row] - feats[i], axis=1)
            assert np.all(np.diff(d) >= 0)
            others = np.setdiff1d(np.arange(n), np.append(row, i))
            if len(others):
                assert d.max() <= np.linalg.norm(feats[others] - feats[i], axis=1).min()
        again = build_knn_graph(feats, k)
        np.testing.assert_array_equal(again.neighbors, g.neighbors)


class TestEncode:
    def test_identical_positions(self):
        p = params()
        x = np.tile([0.3, -0.2, 0.5], (5, 1))
        z, inter = encode(x, p, graph_for(x, p))
        np.testing.assert_allclose(inter["r"], 0.0, atol=0)
        np.testing.assert_allclose(inter["m"], inter["f"])
        np.testing.assert_allclose(inter["m_bar"], inter["f"][0])
        np.testing.assert_allclose(z, np.broadcast_to(z[0], z.shape), atol=0)

    def test_two_point_antisymmetry(self):
        p = params(k=1)
        x = points(2)
        _, inter = encode(x, p, graph_for(x, p))
        np.testing.assert_allclose(inter["r"][0], inter["f"][0] - inter["f"][1])
        np.testing.assert_allclose(inter["r"][0], -inter["r"][1])

    @given(st.integers(0, 10_000), st.integers(2, 20))
    @settings(max_examples=30, deadline=None)
    def test_residual_algebraic_oracle(self, seed, n):
        p = params(k=4, seed=seed % 7)
        x = points(n, seed)
        graph = graph_for(x, p)
        _, inter = encode(x, p, graph)
        f = inter["f"]
        expected = graph.k * f - f[graph.neighbors].sum(axis=1)
        np.testing.assert_allclose(inter["r"], expected, atol=1e-12)

    def test_downstream_formulas(self):
        p = params()
        x = points(9, 3)
        z, inter = encode(x, p, graph_for(x, p))
        f, r = inter["f"], inter["r"]
        h = np.maximum((f + r) @ p.W2.T + p.b2, 0)
        np.testing.assert_allclose(inter["h"], h, atol=1e-12)
        m = np.stack([f[row].max(axis=0) for row in graph_for(x, p).neighbors])
        np.testing.assert_allclose(inter["m"], m, atol=0)
        joint = np.concatenate([h, np.broadcast_to(m.mean(axis=0), h.shape)], axis=1)
        expect = np.maximum(joint @ p.fc1_w.T + p.fc1_b, 0) @ p.fc2_w.T + p.fc2_b
        np.testing.assert_allclose(z, expect, atol=1e-12)

    def test_stale_graph(self):
        p = params()
        graph = graph_for(points(5), p)
        with pytest.raises(ValueError):
            encode(points(6), p, graph)

    def test_permutation_equivariance(self):
        p = params(k=3)
        x = points(10, 4)
        graph = graph_for(x, p)
        sample = sample_neighborhoods(x, 4, 3, seed=1)
        z, inter = encode(x, p, graph)
        perm = np.random.default_rng(2).permutation(10)
        inv = np.argsort(perm)
        graph_p = KnnGraph(inv[graph.neighbors[perm]])
        sample_p = NeighborhoodSample(inv[sample.indices])
        zp, inter_p = encode(x[perm], p, graph_p)
        for name in ("f", "r", "h", "m"):
            np.testing.assert_allclose(inter_p[name], inter[name][perm], atol=1e-12)
        np.testing.assert_allclose(zp, z[perm], atol=1e-12)
        np.testing.assert_allclose(inter_p["m_bar"], inter["m_bar"], atol=1e-12)
        assert loss_cet(x[perm], zp, p) == pytest.approx(loss_cet(x, z, p), abs=1e-12)
        assert loss_smt(sample_p, x[perm], zp) == pytest.approx(loss_smt(sample, x, z), abs=1e-12)

    def test_maxpool_routes_to_argmax_only(self):
        p = params(dim=3, k=2).replace({"W1": np.eye(3), "b1": np.full(3, 5.0)})
        # points 1 and 2 tie on the first feature for node 0
        x = np.array([[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [1.0, 0.1, 0.0], [-1.0, 0.0, 0.0]])
        graph = KnnGraph(np.array([[1, 2], [0, 2], [1, 0], [0, 1]]))
        xt = torch.tensor(x, requires_grad=True)
        _, inter = encode_t(xt, p.tensors(), graph)
        assert inter["argmax"][0, 0] == 1
        inter["m"][0, 0].backward()
        grad = xt.grad.numpy()
        assert grad[1, 0] == 1.0
        assert np.count_nonzero(grad) == 1


class TestLosses:
    def test_cet_zero_when_projection_exact(self):
        p = params()
        z = np.random.default_rng(0).normal(size=(4, 6))
        x = z @ p.g_w.T + p.g_b
        assert loss_cet(x, z, p) == pytest.approx(0.0, abs=1e-24)

    def test_cet_translation(self):
        p = params()
        z = np.random.default_rng(0).normal(size=(4, 6))
        t = np.array([0.3, -0.4, 1.2])
        x = z @ p.g_w.T + p.g_b - t
        assert loss_cet(x, z, p) == pytest.approx(t @ t, abs=1e-12)

    def test_cet_cancellation(self):
        p = params()
        z = np.random.default_rng(0).normal(size=(2, 6))
        v = np.array([0.5, 1.0, -2.0])
        x = z @ p.g_w.T + p.g_b + np.stack([v, -v])
        assert loss_cet(x, z, p) == pytest.approx(0.0, abs=1e-24)

    def test_smt_single_term(self):
        sample = NeighborhoodSample(np.array([[0, 1]]))
        z = np.array([[0.0, 0.0], [2.0, 0.0]])
        x = np.array([[0.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
        assert loss_smt(sample, x, z) == pytest.approx(6.0)

    def test_smt_zero_cases(self):
        x = points(6)
        sample = sample_neighborhoods(x, 3, 4, seed=0)
        assert loss_smt(sample, x, np.ones((6, 5))) == 0.0
        assert loss_smt(sample, np.zeros((6, 3)), points(6, 1)) == 0.0

    def test_smt_gradient_finite_at_coincident_points(self):
        x = torch.zeros((4, 3), dtype=torch.float64, requires_grad=True)
        z = torch.randn((4, 2), dtype=torch.float64, requires_grad=True)
        loss_smt_t(NeighborhoodSample(np.array([[0, 1, 2, 3]])), x, z).backward()
        assert torch.isfinite(x.grad).all() and torch.isfinite(z.grad).all()

    def test_final(self):
        assert loss_final(0.3, 2.0, 10.0, 0.0, 0.0) == 0.3
        assert loss_final(0.3, 2.0, 10.0, 0.5, 0.1) == pytest.approx(2.3)
        with pytest.raises(ValueError):
            loss_final(0.3, 1.0, 1.0, -1.0, 0.0)

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 5), st.floats(0, 5))
    @settings(max_examples=50, deadline=None)
    def test_final_dominates_render(self, lr, cet, smt, lc, ls):
        assert loss_final(lr, cet, smt, lc, ls) >= lr


class TestSampling:
    def test_single_covering(self):
        x = points(5)
        s = sample_neighborhoods(x, 1, 5, seed=0)
        assert sorted(s.indices[0]) == list(range(5))
        d = np.linalg.norm(x[s.indices[0]] - x[s.indices[0, 0]], axis=1)
        assert np.all(np.diff(d) >= 0)

    def test_pairs_are_nearest(self):
        x = points(8, 2)
        s = sample_neighborhoods(x, 8, 2, seed=3)
        for seed_pt, nbr in s.indices:
            d = np.linalg.norm(x - x[seed_pt], axis=1)
            d[seed_pt] = np.inf
            assert nbr == np.argmin(d)

    def test_deterministic_and_distinct(self):
        x = points(20)
        a = sample_neighborhoods(x, 6, 5, seed=9)
        b = sample_neighborhoods(x, 6, 5, seed=9)
        np.testing.assert_array_equal(a.indices, b.indices)
        assert all(len(set(row)) == 5 for row in a.indices)
        assert len(set(a.indices[:, 0])) == 6

    def test_errors(self):
        with pytest.raises(ValueError):
            sample_neighborhoods(points(3), 1, 4, seed=0)
        with pytest.raises(ValueError):
            sample_neighborhoods(points(3), 1, 1, seed=0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = params(seed=11)
        p.save(tmp_path / "enc.bin")
        q = EncoderParams.load(tmp_path / "enc.bin")
        assert q.k == p.k
        for name, arr in p.arrays().items():
            np.testing.assert_array_equal(getattr(q, name), arr)
        assert (tmp_path / "enc.bin.json").exists()

    def test_shape_validation(self):
        p = params()
        with pytest.raises(ValueError):
            p.replace({"W2": np.zeros((2, 2))}).validate()
