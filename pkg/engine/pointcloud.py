# engine/pointcloud.py

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from engine.errors import EmptyCloudError, FormatError

# Query chunks are sized so a (chunk, n, 3) difference block stays around 32 MB.
_NN_BLOCK_ELEMENTS = 4_000_000


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None
    category: str | None = None
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        if len(pts) < 1:
            raise EmptyCloudError("point cloud has no points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if len(labels) != len(pts):
                raise ValueError(
                    f"labels length {len(labels)} does not match point count {len(pts)}"
                )
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)

    @property
    def is_labeled(self):
        return self.labels is not None

    def with_labels(self, labels):
        return PointCloud(self.points, labels, self.category, self.name)

    def point(self, index):
        return Point3(*(float(v) for v in self.points[index]))


def as_points(value):
    """Accept a PointCloud, a Point3 list or an (n, 3) array and return an (n, 3) float array."""
    if isinstance(value, PointCloud):
        return value.points
    pts = np.asarray(value, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {pts.shape}")
    return pts


# ---------------- IO ----------------

def _infer_format(path, configured_format):
    fmt = str(configured_format or "auto").strip().casefold()
    if fmt in {"xyz", "xyz-text", "txt"}:
        return "xyz"
    if fmt in {"off", "off-mesh-vertices"}:
        return "off"

    ext = Path(path).suffix.strip().casefold()
    if ext in {".xyz", ".txt", ".pts"}:
        return "xyz"
    if ext == ".off":
        return "off"
    raise ValueError(f"Unsupported point cloud extension for {path}: {ext}")


def _parse_floats(tokens, line_no, path):
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise FormatError(f"cannot parse coordinates {' '.join(tokens)!r}", line=line_no, path=path)
    if not all(np.isfinite(values)):
        raise FormatError("non-finite coordinate", line=line_no, path=path)
    return values


def _read_xyz(path):
    points = []
    labels = []
    has_labels = None

    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.replace(",", " ").split()
            if len(tokens) not in (3, 4):
                raise FormatError(
                    f"expected 3 coordinates and an optional label, got {len(tokens)} columns",
                    line=line_no,
                    path=path,
                )
            row_labeled = len(tokens) == 4
            if has_labels is None:
                has_labels = row_labeled
            elif has_labels != row_labeled:
                raise FormatError("label column present on some lines only", line=line_no, path=path)

            points.append(_parse_floats(tokens[:3], line_no, path))
            if row_labeled:
                try:
                    labels.append(int(tokens[3]))
                except ValueError:
                    raise FormatError(f"part label {tokens[3]!r} is not an integer", line=line_no, path=path)

    if not points:
        raise EmptyCloudError("file contains no points", path=path)
    return np.array(points), (np.array(labels) if has_labels else None)


def _read_off(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = [(i, l.strip()) for i, l in enumerate(f, start=1)]
    lines = [(i, l) for i, l in lines if l and not l.startswith("#")]
    if not lines:
        raise EmptyCloudError("file is empty", path=path)

    header_no, header = lines[0]
    if not header.upper().startswith("OFF"):
        raise FormatError(f"missing OFF header, got {header!r}", line=header_no, path=path)

    # Some ModelNet files glue the counts onto the header ("OFF490 518 0").
    rest = header[3:].strip()
    body = lines[1:]
    if rest:
        counts_no, counts = header_no, rest
    else:
        if not body:
            raise FormatError("missing vertex/face counts", line=header_no, path=path)
        (counts_no, counts), body = body[0], body[1:]

    try:
        n_vertices = int(counts.split()[0])
    except (ValueError, IndexError):
        raise FormatError(f"cannot parse counts line {counts!r}", line=counts_no, path=path)
    if n_vertices == 0:
        raise EmptyCloudError("mesh has no vertices", path=path)
    if len(body) < n_vertices:
        raise FormatError(
            f"expected {n_vertices} vertex lines, file has {len(body)}",
            line=body[-1][0] if body else counts_no,
            path=path,
        )

    points = []
    for line_no, text in body[:n_vertices]:
        tokens = text.split()
        if len(tokens) < 3:
            raise FormatError("vertex line needs 3 coordinates", line=line_no, path=path)
        points.append(_parse_floats(tokens[:3], line_no, path))
    return np.array(points), None


def load_cloud(path, format=None, category=None):
    """
    Load a point cloud from xyz text (optional 4th label column) or the
    vertex block of an OFF mesh. Faces are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Point cloud not found: {path}")

    fmt = _infer_format(path, format)
    if fmt == "off":
        points, labels = _read_off(path)
    else:
        points, labels = _read_xyz(path)
    return PointCloud(points, labels, category=category, name=path.stem)


def save_cloud(cloud: PointCloud, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for i, (x, y, z) in enumerate(cloud.points.tolist()):
            line = f"{x!r} {y!r} {z!r}"
            if cloud.labels is not None:
                line += f" {int(cloud.labels[i])}"
            f.write(line + "\n")
    return path


# ---------------- SAMPLING / QUERIES ----------------

def subsample(cloud: PointCloud, n: int, seed) -> PointCloud:
    """Random n points without replacement, kept in original order. `seed` is anything default_rng accepts."""
    if n < 1:
        raise ValueError(f"subsample size must be >= 1, got {n}")
    if len(cloud) <= n:
        return cloud

    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=n, replace=False))
    labels = cloud.labels[idx] if cloud.labels is not None else None
    return PointCloud(cloud.points[idx], labels, cloud.category, cloud.name)


def nearest_neighbors(queries, cloud):
    """
    Brute-force nearest neighbour of every query row in `cloud`.
    Returns (indices, distances); ties go to the lowest cloud index.
    """
    target = as_points(cloud)
    if len(target) == 0:
        raise ValueError("nearest neighbour search on an empty cloud")
    q = as_points(queries)

    indices = np.empty(len(q), dtype=np.int64)
    sq_dist = np.empty(len(q), dtype=np.float64)
    block = max(1, _NN_BLOCK_ELEMENTS // (3 * len(target)))
    for start in range(0, len(q), block):
        chunk = q[start:start + block]
        diff = chunk[:, None, :] - target[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        best = np.argmin(d2, axis=1)
        indices[start:start + block] = best
        sq_dist[start:start + block] = d2[np.arange(len(chunk)), best]
    return indices, np.sqrt(sq_dist)


def nearest_neighbor(query, cloud) -> tuple[int, float]:
    idx, dist = nearest_neighbors(np.asarray(query, dtype=np.float64).reshape(1, 3), cloud)
    return int(idx[0]), float(dist[0])


def pairwise_distances(cloud) -> np.ndarray:
    pts = as_points(cloud)
    if len(pts) == 0:
        raise ValueError("pairwise distances of an empty cloud")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, 0.0)
    return dist
