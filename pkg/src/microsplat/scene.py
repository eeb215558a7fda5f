"""Gaussian, scene, camera and image types with their file formats."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NEAR_PLANE = 0.01
PLY_PROPERTIES = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "red", "green", "blue",
)
_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


class ParameterError(ValueError):
    """A Gaussian parameter is non-finite or otherwise corrupted."""


class SchemaError(ValueError):
    """An input file does not match the expected schema."""


class ConfigError(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) wxyz quaternions (normalized here)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return rot.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """wxyz quaternion of a single proper rotation matrix (w >= 0)."""
    m = np.asarray(rot, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


@dataclass
class GaussianPoint:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.opacity_logit = float(self.opacity_logit)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)


def activate(point: GaussianPoint) -> tuple[np.ndarray, float, np.ndarray]:
    """Return ``(scale, opacity, covariance)`` for one Gaussian.

    ``covariance = R diag(scale**2) R^T`` with ``R`` from the (normalized)
    rotation quaternion.
    """
    values = np.concatenate(
        [point.position, point.log_scale, point.rotation, [point.opacity_logit], point.color]
    )
    if not np.all(np.isfinite(values)):
        raise ParameterError("non-finite Gaussian parameter")
    if np.linalg.norm(point.rotation) == 0:
        raise ParameterError("zero-length rotation quaternion")
    scale = np.exp(point.log_scale)
    rot = quat_to_rotmat(point.rotation)
    cov = (rot * scale**2) @ rot.T
    cov = 0.5 * (cov + cov.T)
    return scale, float(sigmoid(point.opacity_logit)), cov


def covariances(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    rot = quat_to_rotmat(rotations)
    s2 = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    cov = np.einsum("nij,nj,nkj->nik", rot, s2, rot)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def bounding_radius(positions: np.ndarray) -> float:
    """Radius of the centroid-centred sphere enclosing ``positions``."""
    if len(positions) == 0:
        return 1.0
    center = positions.mean(axis=0)
    radius = float(np.max(np.linalg.norm(positions - center, axis=1)))
    return radius if radius > 0 else 1.0


@dataclass
class Scene:
    """Structure-of-arrays Gaussian collection.

    Arrays are float64 with shapes ``(N,3)``, ``(N,3)``, ``(N,4)``, ``(N,)``
    and ``(N,3)``; row ``i`` is Gaussian ``i``.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    extent: float = 1.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        self.extent = float(self.extent)

    @classmethod
    def empty(cls, background=(0.0, 0.0, 0.0), extent: float = 1.0) -> "Scene":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, 3)), background, extent)

    @classmethod
    def from_points(cls, points: Iterable[GaussianPoint], background=(0.0, 0.0, 0.0),
                    extent: float | None = None) -> "Scene":
        points = list(points)
        if not points:
            return cls.empty(background, 1.0 if extent is None else extent)
        scene = cls(
            np.array([p.position for p in points]),
            np.array([p.log_scale for p in points]),
            np.array([p.rotation for p in points]),
            np.array([p.opacity_logit for p in points]),
            np.array([p.color for p in points]),
            background,
        )
        scene.extent = bounding_radius(scene.positions) if extent is None else float(extent)
        return scene

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_gs(self) -> int:
        return len(self.positions)

    @property
    def points(self) -> list[GaussianPoint]:
        return [self.point(i) for i in range(len(self))]

    def point(self, i: int) -> GaussianPoint:
        return GaussianPoint(self.positions[i], self.log_scales[i], self.rotations[i],
                             self.opacity_logits[i], self.colors[i])

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariances(self) -> np.ndarray:
        return covariances(self.log_scales, self.rotations)

    def copy(self) -> "Scene":
        return Scene(self.positions.copy(), self.log_scales.copy(), self.rotations.copy(),
                     self.opacity_logits.copy(), self.colors.copy(), self.background.copy(),
                     self.extent)

    def subset(self, index) -> "Scene":
        index = np.asarray(index)
        return Scene(self.positions[index], self.log_scales[index], self.rotations[index],
                     self.opacity_logits[index], self.colors[index], self.background.copy(),
                     self.extent)

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def validate(self) -> None:
        for name in ("positions", "log_scales", "rotations", "opacity_logits", "colors"):
            arr = getattr(self, name)
            bad = ~np.isfinite(arr.reshape(len(self), -1)).all(axis=1)
            if bad.any():
                raise ParameterError(f"non-finite {name} at element {int(np.flatnonzero(bad)[0])}")

    def equals(self, other: "Scene") -> bool:
        return (
            len(self) == len(other)
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("positions", "log_scales", "rotations", "opacity_logits", "colors")
            )
        )


@dataclass
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    id: int = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)
        if self.fx <= 0 or self.fy <= 0:
            raise SchemaError("camera focal lengths must be positive")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6) or abs(
            np.linalg.det(self.rotation) - 1.0
        ) > 1e-6:
            raise SchemaError("camera rotation must be orthonormal with determinant +1")

    @classmethod
    def look_at(cls, eye, target, width: int, height: int, fx: float, fy: float | None = None,
                up=(0.0, 0.0, 1.0), id: int = 0) -> "Camera":
        """Camera at ``eye`` looking at ``target`` (x right, y down, z forward)."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        return cls(width, height, fx, fx if fy is None else fy, (width - 1) / 2.0,
                   (height - 1) / 2.0, rot, -rot @ eye, id)

    def to_json(self) -> dict:
        return {
            "id": self.id, "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "R": [float(v) for v in self.rotation.reshape(-1)],
            "t": [float(v) for v in self.translation],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Camera":
        try:
            return cls(obj["width"], obj["height"], float(obj["fx"]), float(obj["fy"]),
                       float(obj["cx"]), float(obj["cy"]), np.array(obj["R"], dtype=np.float64),
                       np.array(obj["t"], dtype=np.float64), int(obj.get("id", 0)))
        except KeyError as exc:
            raise SchemaError(f"camera entry missing field {exc.args[0]!r}") from None


def save_cameras(cameras: Sequence[Camera], path) -> None:
    Path(path).write_text(json.dumps([c.to_json() for c in cameras], indent=1))


def load_cameras(path) -> list[Camera]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise SchemaError("camera file must hold a JSON array")
    return [Camera.from_json(obj) for obj in data]


@dataclass
class ImageBuffer:
    """Row-major ``(height, width, 3)`` float64 RGB image."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise SchemaError(f"image data must have shape (H, W, 3), got {self.data.shape}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def to_uint8(self) -> np.ndarray:
        return np.round(np.clip(self.data, 0.0, 1.0) * 255.0).astype(np.uint8)

    def save(self, path) -> None:
        from PIL import Image

        Image.fromarray(self.to_uint8(), mode="RGB").save(path)

    @classmethod
    def load(cls, path) -> "ImageBuffer":
        """Read PNG or binary PPM (P6) into [0,1] floats."""
        from PIL import Image

        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
        return cls(arr / 255.0)


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def save_scene(scene: Scene, path, binary: bool = True, dtype: str = "double") -> None:
    """Write the scene as a PLY vertex list.

    ``dtype="double"`` keeps float64 values bit-exact through a round trip;
    ``"float"`` writes the narrower float32 layout other tools expect.
    """
    if dtype not in ("float", "double"):
        raise ValueError("dtype must be 'float' or 'double'")
    n = len(scene)
    cols = np.concatenate(
        [scene.positions, scene.log_scales, scene.rotations, scene.opacity_logits[:, None],
         scene.colors],
        axis=1,
    )
    fmt = "binary_little_endian" if binary else "ascii"
    bg = " ".join(repr(float(v)) for v in scene.background)
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"comment background {bg}",
        f"comment extent {float(scene.extent)!r}",
        f"element vertex {n}",
        *[f"property {dtype} {name}" for name in PLY_PROPERTIES],
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            np_dtype = "<f8" if dtype == "double" else "<f4"
            fh.write(np.ascontiguousarray(cols, dtype=np_dtype).tobytes())
        else:
            for row in cols:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


def _parse_header(fh) -> tuple[str, list[tuple[str, int, list[tuple[str, str]]]], dict]:
    first = fh.readline().strip()
    if first != b"ply":
        raise SchemaError("malformed PLY header: missing 'ply' magic")
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    comments: dict[str, str] = {}
    while True:
        raw = fh.readline()
        if not raw:
            raise SchemaError("malformed PLY header: missing end_header")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens:
            continue
        key = tokens[0]
        if key == "end_header":
            break
        if key == "format":
            if len(tokens) != 3 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise SchemaError(f"unsupported PLY format line: {' '.join(tokens)}")
            fmt = tokens[1]
        elif key == "comment":
            if len(tokens) >= 2:
                comments[tokens[1]] = " ".join(tokens[2:])
        elif key == "element":
            if len(tokens) != 3:
                raise SchemaError(f"malformed element line: {' '.join(tokens)}")
            try:
                elements.append((tokens[1], int(tokens[2]), []))
            except ValueError:
                raise SchemaError(f"malformed element count: {tokens[2]}") from None
        elif key == "property":
            if not elements:
                raise SchemaError("property declared before any element")
            if tokens[1] == "list":
                raise SchemaError("list properties are not supported")
            if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                raise SchemaError(f"malformed property line: {' '.join(tokens)}")
            elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif key == "obj_info":
            continue
        else:
            raise SchemaError(f"malformed PLY header line: {' '.join(tokens)}")
    if fmt is None:
        raise SchemaError("malformed PLY header: missing format line")
    return fmt, elements, comments


def load_scene(path) -> Scene:
    """Read a PLY scene; quaternions are renormalized on load."""
    with open(path, "rb") as fh:
        fmt, elements, comments = _parse_header(fh)
        if not elements or elements[0][0] != "vertex":
            raise SchemaError("PLY must start with a 'vertex' element")
        _, n, props = elements[0]
        names = [p[0] for p in props]
        for required in PLY_PROPERTIES:
            if required not in names:
                raise SchemaError(f"PLY vertex element missing property {required!r}")
        dtype = np.dtype([(name, t) for name, t in props])
        if fmt == "binary_little_endian":
            buf = fh.read(dtype.itemsize * n)
            if len(buf) < dtype.itemsize * n:
                raise SchemaError(
                    f"PLY body truncated at vertex {len(buf) // max(dtype.itemsize, 1)}"
                )
            rec = np.frombuffer(buf, dtype=dtype, count=n)
            table = np.stack([rec[name].astype(np.float64) for name in PLY_PROPERTIES], axis=1) \
                if n else np.zeros((0, len(PLY_PROPERTIES)))
        else:
            rows = []
            for i in range(n):
                line = fh.readline().split()
                if len(line) != len(names):
                    raise SchemaError(f"PLY vertex {i} has {len(line)} values, expected {len(names)}")
                try:
                    vals = dict(zip(names, (float(v) for v in line)))
                except ValueError:
                    raise SchemaError(f"PLY vertex {i} has a non-numeric value") from None
                rows.append([vals[name] for name in PLY_PROPERTIES])
            table = np.array(rows, dtype=np.float64).reshape(n, len(PLY_PROPERTIES))
    bad = ~np.isfinite(table).all(axis=1)
    if bad.any():
        raise SchemaError(f"PLY vertex {int(np.flatnonzero(bad)[0])} has a non-finite value")
    rot = table[:, 6:10]
    norms = np.linalg.norm(rot, axis=1)
    if (norms == 0).any():
        raise SchemaError(f"PLY vertex {int(np.flatnonzero(norms == 0)[0])} has a zero quaternion")
    rot = rot / norms[:, None]
    background = np.zeros(3)
    if "background" in comments:
        background = np.array([float(v) for v in comments["background"].split()])
    scene = Scene(table[:, 0:3], table[:, 3:6], rot, table[:, 10], table[:, 11:14], background)
    if "extent" in comments:
        scene.extent = float(comments["extent"])
    else:
        scene.extent = bounding_radius(scene.positions)
    return scene


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

SCENE_KINDS = ("textured-sphere", "box-room", "random-blobs")


def _frame_from_normal(normals: np.ndarray) -> np.ndarray:
    """Quaternions whose local z axis maps onto each normal."""
    quats = np.empty((len(normals), 4))
    for i, nrm in enumerate(normals):
        nrm = nrm / np.linalg.norm(nrm)
        helper = np.array([1.0, 0.0, 0.0]) if abs(nrm[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(helper, nrm)
        u /= np.linalg.norm(u)
        v = np.cross(nrm, u)
        quats[i] = rotmat_to_quat(np.stack([u, v, nrm], axis=1))
    return quats


def _teacher_sphere(rng: np.random.Generator, count: int):
    k = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * k / count)
    theta = np.pi * (1 + 5**0.5) * k
    normals = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)
    positions = normals.copy()
    lon = np.arctan2(normals[:, 1], normals[:, 0])
    lat = np.arcsin(np.clip(normals[:, 2], -1, 1))
    stripes = (np.floor(lon / (np.pi / 4)) + np.floor(lat / (np.pi / 6))) % 2
    base = np.array([[0.85, 0.3, 0.2], [0.2, 0.45, 0.85]])
    colors = base[stripes.astype(int)] + rng.uniform(-0.05, 0.05, (count, 3))
    spacing = math.sqrt(4 * math.pi / count)
    log_scales = np.log(np.column_stack([np.full(count, 0.6 * spacing)] * 2 + [np.full(count, 0.05 * spacing)]))
    return positions, log_scales, _frame_from_normal(normals), colors


def _teacher_box(rng: np.random.Generator, count: int):
    # floor + three walls + a central block
    faces = [
        (np.array([0, 0, -0.8]), np.array([1, 0, 0]), np.array([0, 1, 0]), 1.3, 1.3),
        (np.array([-1.3, 0, 0]), np.array([0, 1, 0]), np.array([0, 0, 1]), 1.3, 0.8),
        (np.array([0, 1.3, 0]), np.array([1, 0, 0]), np.array([0, 0, 1]), 1.3, 0.8),
        (np.array([1.3, 0, 0]), np.array([0, 1, 0]), np.array([0, 0, 1]), 1.3, 0.8),
        (np.array([0, 0, 0.0]), np.array([1, 0, 0]), np.array([0, 1, 0]), 0.35, 0.35),
    ]
    palette = np.array([
        [0.8, 0.8, 0.75], [0.3, 0.3, 0.35],
        [0.75, 0.35, 0.3], [0.95, 0.85, 0.5],
        [0.3, 0.6, 0.35], [0.85, 0.9, 0.85],
        [0.3, 0.4, 0.8], [0.9, 0.9, 0.95],
        [0.9, 0.6, 0.1], [0.2, 0.1, 0.05],
    ])
    areas = np.array([4 * a * b for _, _, _, a, b in faces])
    counts = np.maximum(1, np.floor(areas / areas.sum() * count).astype(int))
    counts[0] += count - counts.sum()
    pos, nrm, col, scl = [], [], [], []
    for f, ((center, u, v, a, b), c) in enumerate(zip(faces, counts)):
        if c <= 0:
            continue
        uv = rng.uniform(-1, 1, (c, 2))
        pos.append(center + uv[:, :1] * a * u + uv[:, 1:] * b * v)
        nrm.append(np.tile(np.cross(u, v), (c, 1)))
        checker = ((np.floor((uv[:, 0] + 1) * 2) + np.floor((uv[:, 1] + 1) * 2)) % 2).astype(int)
        col.append(palette[2 * f + checker] + rng.uniform(-0.03, 0.03, (c, 3)))
        scl.append(np.full(c, math.sqrt(areas[f] / c) * 0.6))
    pos, nrm, col, scl = map(np.concatenate, (pos, nrm, col, scl))
    log_scales = np.log(np.column_stack([scl, scl, 0.08 * scl]))
    return pos, log_scales, _frame_from_normal(nrm), col


def _teacher_blobs(rng: np.random.Generator, count: int):
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    positions = direction * rng.uniform(0, 1, (count, 1)) ** (1 / 3)
    log_scales = np.log(rng.uniform(0.04, 0.25, (count, 3)))
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    colors = rng.uniform(0.05, 0.95, (count, 3))
    return positions, log_scales, quats, colors


def _knn_mean_distance(positions: np.ndarray, k: int = 3) -> np.ndarray:
    n = len(positions)
    if n < 2:
        return np.full(n, 0.1)
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    k = min(k, n - 1)
    return np.sort(d, axis=1)[:, :k].mean(axis=1)


@dataclass
class SyntheticScene:
    teacher: Scene
    initial: Scene
    cameras: list[Camera]
    images: list[ImageBuffer]


def generate_synthetic_scene(kind: str = "box-room", seed: int = 0, count: int = 300,
                             n_views: int = 8, image_size: int = 64,
                             background=(0.0, 0.0, 0.0), init_fraction: float = 0.1) -> SyntheticScene:
    """Teacher scene, ring cameras, ground-truth renders and a sparse initialization.

    The initialization keeps a random ``init_fraction`` of the teacher's
    centres and colours, with isotropic scales from neighbour spacing and a
    uniform low opacity, mimicking a sparse point-cloud start.
    """
    from microsplat.render import render_image

    if kind not in SCENE_KINDS:
        raise ConfigError(f"unknown scene kind {kind!r}; expected one of {', '.join(SCENE_KINDS)}")
    if count < 1:
        raise ConfigError("count must be >= 1")
    if not 4 <= n_views <= 12:
        raise ConfigError("n_views must lie in [4, 12]")
    background = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,)).copy()
    rng = np.random.default_rng(seed)
    if count == 1:
        pos, ls, quat, col = (np.zeros((1, 3)), np.log(np.full((1, 3), 0.3)),
                              np.array([[1.0, 0, 0, 0]]), rng.uniform(0.2, 0.9, (1, 3)))
    elif kind == "textured-sphere":
        pos, ls, quat, col = _teacher_sphere(rng, count)
    elif kind == "box-room":
        pos, ls, quat, col = _teacher_box(rng, count)
    else:
        pos, ls, quat, col = _teacher_blobs(rng, count)
    col = np.clip(col, 0.0, 1.0)
    teacher = Scene(pos, ls, quat, np.full(len(pos), logit(0.95)), col, background)
    teacher.extent = bounding_radius(teacher.positions)

    cameras = []
    radius = 3.2 * teacher.extent if count > 1 else 3.0
    for v in range(n_views):
        ang = 2 * np.pi * v / n_views + 0.3
        height = (0.9 if v % 2 == 0 else 0.45) * radius * 0.5
        eye = np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cameras.append(Camera.look_at(eye, np.zeros(3), image_size, image_size,
                                      fx=0.95 * image_size, id=v))
    images = [render_image(teacher, cam) for cam in cameras]

    n_init = max(1, int(round(init_fraction * len(teacher))))
    keep = np.sort(rng.choice(len(teacher), size=n_init, replace=False))
    init_pos = teacher.positions[keep].copy()
    init_scale = np.clip(_knn_mean_distance(init_pos), 1e-3 * teacher.extent, None)
    initial = Scene(
        init_pos,
        np.log(np.repeat(init_scale[:, None], 3, axis=1)),
        np.tile([1.0, 0.0, 0.0, 0.0], (n_init, 1)),
        np.full(n_init, logit(0.1)),
        teacher.colors[keep].copy(),
        background,
    )
    initial.extent = bounding_radius(initial.positions)
    return SyntheticScene(teacher, initial, cameras, images)
