"""Graph-based spatial distribution optimization.

A point encoder (per-point embedding, kNN residual aggregation, local max
pooling and a scene-level pooled feature, then two FC layers) maps Gaussian
centres to latent features. Two losses built on it: a global centroid
alignment through a linear projection back to 3D, and a local smoothness
term over sampled neighbourhoods.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

ENCODER_FIELDS = ("W1", "b1", "W2", "b2", "fc1_w", "fc1_b", "fc2_w", "fc2_b", "g_w", "g_b")


@dataclass
class EncoderParams:
    """Encoder weights. Linear maps are stored as ``(out, in)`` matrices."""

    W1: np.ndarray      # (D, 3)
    b1: np.ndarray      # (D,)
    W2: np.ndarray      # (D, D)
    b2: np.ndarray      # (D,)
    fc1_w: np.ndarray   # (D', 2D)
    fc1_b: np.ndarray   # (D',)
    fc2_w: np.ndarray   # (D, D')
    fc2_b: np.ndarray   # (D,)
    g_w: np.ndarray     # (3, D)
    g_b: np.ndarray     # (3,)
    k: int = 8

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.fc1_w.shape[0]

    @classmethod
    def init(cls, dim: int = 32, hidden: int = 32, k: int = 8, seed: int = 0) -> "EncoderParams":
        rng = np.random.default_rng(seed)

        def layer(out_dim, in_dim):
            bound = 1.0 / np.sqrt(in_dim)
            return rng.uniform(-bound, bound, (out_dim, in_dim)), rng.uniform(-bound, bound, out_dim)

        w1, b1 = layer(dim, 3)
        w2, b2 = layer(dim, dim)
        f1w, f1b = layer(hidden, 2 * dim)
        f2w, f2b = layer(dim, hidden)
        gw, gb = layer(3, dim)
        return cls(w1, b1, w2, b2, f1w, f1b, f2w, f2b, gw, gb, k)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in ENCODER_FIELDS}

    def tensors(self, requires_grad: bool = False) -> dict[str, torch.Tensor]:
        return {name: torch.tensor(arr, dtype=torch.float64, requires_grad=requires_grad)
                for name, arr in self.arrays().items()}

    def replace(self, arrays: dict[str, np.ndarray]) -> "EncoderParams":
        merged = self.arrays()
        merged.update({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})
        return EncoderParams(**merged, k=self.k)

    def copy(self) -> "EncoderParams":
        return self.replace({k: v.copy() for k, v in self.arrays().items()})

    def validate(self) -> None:
        d, h = self.dim, self.hidden
        expected = {"W1": (d, 3), "b1": (d,), "W2": (d, d), "b2": (d,), "fc1_w": (h, 2 * d),
                    "fc1_b": (h,), "fc2_w": (d, h), "fc2_b": (d,), "g_w": (3, d), "g_b": (3,)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"encoder {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"encoder {name} has non-finite entries")

    def save(self, path) -> None:
        """Flat little-endian float64 blob plus a ``.json`` shape manifest."""
        path = Path(path)
        entries, offset, blobs = [], 0, []
        for name, arr in self.arrays().items():
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").reshape(-1))
        path.write_bytes(np.concatenate(blobs).tobytes())
        manifest = {"dtype": "float64-le", "k": self.k, "tensors": entries}
        Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, path) -> "EncoderParams":
        path = Path(path)
        manifest = json.loads(Path(str(path) + ".json").read_text())
        flat = np.frombuffer(path.read_bytes(), dtype="<f8")
        arrays = {}
        for entry in manifest["tensors"]:
            size = int(np.prod(entry["shape"])) if entry["shape"] else 1
            arrays[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).copy()
        missing = set(ENCODER_FIELDS) - set(arrays)
        if missing:
            raise ValueError(f"encoder checkpoint missing tensors: {sorted(missing)}")
        params = cls(**arrays, k=int(manifest.get("k", 8)))
        params.validate()
        return params


@dataclass
class KnnGraph:
    neighbors: np.ndarray   # (N, k) int64, ascending distance
    built_at: int = 0

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


@dataclass
class NeighborhoodSample:
    indices: np.ndarray     # (M, K) int64, seed point first

    @property
    def M(self) -> int:
        return self.indices.shape[0]

    @property
    def K(self) -> int:
        return self.indices.shape[1]


def _squared_distances(points: np.ndarray, rows: slice) -> np.ndarray:
    diff = points[rows, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def build_knn_graph(features, k: int, built_at: int = 0) -> KnnGraph:
    """Exact Euclidean kNN without self edges; ties go to the lower index."""
    feats = np.asarray(features, dtype=np.float64)
    n = len(feats)
    if n < 2:
        raise ValueError("kNN graph needs at least two points")
    k = min(int(k), n - 1)
    neighbors = np.empty((n, k), dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, n * feats.shape[1]))
    for start in range(0, n, chunk):
        rows = slice(start, min(n, start + chunk))
        d2 = _squared_distances(feats, rows)
        d2[np.arange(rows.stop - rows.start), np.arange(rows.start, rows.stop)] = np.inf
        neighbors[rows] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return KnnGraph(neighbors, built_at)


def sample_neighborhoods(positions, M: int, K: int, seed: int) -> NeighborhoodSample:
    """``M`` seeded neighbourhoods of ``K`` points: a seed and its nearest neighbours.

    ``M`` is capped at the point count. Each row is ordered by distance to its
    seed (seed first, ties by index).
    """
    pos = np.asarray(positions, dtype=np.float64)
    n = len(pos)
    if K < 2:
        raise ValueError("neighbourhood size K must be >= 2")
    if n < K:
        raise ValueError(f"need at least K={K} points, have {n}")
    rng = np.random.default_rng(seed)
    seeds = rng.choice(n, size=min(M, n), replace=False)
    rows = []
    for s in seeds:
        d2 = np.sum((pos - pos[s]) ** 2, axis=1)
        not_seed = np.arange(n) != s
        order = np.lexsort((np.arange(n), not_seed, d2))
        rows.append(order[:K])
    return NeighborhoodSample(np.array(rows, dtype=np.int64))


# ---------------------------------------------------------------------------
# Encoder and losses (torch; numpy wrappers below)
# ---------------------------------------------------------------------------


def embed_t(x: torch.Tensor, p: dict[str, torch.Tensor]) -> torch.Tensor:
    return torch.relu(x @ p["W1"].T + p["b1"])


def encode_t(x: torch.Tensor, p: dict[str, torch.Tensor], graph: KnnGraph):
    """Latent features ``z`` and intermediates ``(f, r, h, m, m_bar, argmax)``."""
    n = x.shape[0]
    if graph.neighbors.shape[0] != n:
        raise ValueError(f"kNN graph covers {graph.neighbors.shape[0]} points, scene has {n}")
    nbr = torch.from_numpy(graph.neighbors)
    f = embed_t(x, p)
    f_nbr = f[nbr]                                   # (N, k, D)
    r = (f[:, None, :] - f_nbr).sum(dim=1)
    h = torch.relu((f + r) @ p["W2"].T + p["b2"])
    # max-pool routed through an explicit argmax: first max in ascending point index
    by_index = np.sort(graph.neighbors, axis=1)
    vals = f.detach().numpy()[by_index]              # (N, k, D)
    arg = np.take_along_axis(by_index, np.argmax(vals, axis=1), axis=1)   # (N, D) point ids
    m = torch.gather(f, 0, torch.from_numpy(arg))
    m_bar = m.mean(dim=0)
    joint = torch.cat([h, m_bar.expand(n, -1)], dim=1)
    hidden = torch.relu(joint @ p["fc1_w"].T + p["fc1_b"])
    z = hidden @ p["fc2_w"].T + p["fc2_b"]
    inter = {"f": f, "r": r, "h": h, "m": m, "m_bar": m_bar, "argmax": arg, "hidden": hidden}
    return z, inter


def project_t(z: torch.Tensor, p: dict[str, torch.Tensor]) -> torch.Tensor:
    return z @ p["g_w"].T + p["g_b"]


def loss_cet_t(x: torch.Tensor, z: torch.Tensor, p: dict[str, torch.Tensor]) -> torch.Tensor:
    if x.shape[0] == 0:
        raise ValueError("centroid alignment of an empty scene is undefined")
    gap = (x - project_t(z, p)).mean(dim=0)
    return torch.dot(gap, gap)


def loss_smt_t(sample: NeighborhoodSample, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    if sample.K < 2:
        raise ValueError("neighbourhood size K must be >= 2")
    idx = torch.from_numpy(sample.indices)
    zs, xs = z[idx], x[idx]
    dz = torch.linalg.vector_norm(zs[:, 1:] - zs[:, :-1], dim=-1)
    dx = torch.linalg.vector_norm(xs[:, 1:] - xs[:, :-1], dim=-1)
    return (dz * dx).sum() / (sample.M * (sample.K - 1))


def _t(a):
    return a if isinstance(a, torch.Tensor) else torch.tensor(np.asarray(a), dtype=torch.float64)


def embed_initial(positions, params: EncoderParams) -> np.ndarray:
    with torch.no_grad():
        return embed_t(_t(positions), params.tensors()).numpy()


def encode(positions, params: EncoderParams, graph: KnnGraph):
    """Numpy wrapper of :func:`encode_t` returning ``(z, intermediates)``."""
    with torch.no_grad():
        z, inter = encode_t(_t(positions), params.tensors(), graph)
    return z.numpy(), {k: (v.numpy() if isinstance(v, torch.Tensor) else v) for k, v in inter.items()}


def loss_cet(positions, z, params: EncoderParams) -> float:
    with torch.no_grad():
        return float(loss_cet_t(_t(positions), _t(z), params.tensors()))


def loss_smt(sample: NeighborhoodSample, positions, z) -> float:
    with torch.no_grad():
        return float(loss_smt_t(sample, _t(positions), _t(z)))


def loss_final(render_loss, cet, smt, lambda_c: float, lambda_s: float):
    if lambda_c < 0 or lambda_s < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda_c * cet + lambda_s * smt + render_loss


def graph_for(positions, params: EncoderParams, built_at: int = 0) -> KnnGraph:
    return build_knn_graph(embed_initial(positions, params), params.k, built_at)
