# engine/partition.py

from dataclasses import dataclass, field

import numpy as np

from engine.pointcloud import Point3, PointCloud, as_points, pairwise_distances

DEFAULT_TAU = 0.283


@dataclass(frozen=True, eq=False)
class NeighborhoodMatrix:
    entries: np.ndarray
    threshold: float

    def __len__(self):
        return len(self.entries)

    def neighbors(self, i):
        return np.flatnonzero(self.entries[i])


@dataclass(eq=False)
class SemanticGraph:
    node_positions: np.ndarray
    part_labels: list[int]
    class_label: int
    adjacency: np.ndarray = None
    name: str | None = field(default=None)

    def __post_init__(self):
        self.node_positions = np.asarray(self.node_positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.node_positions)
        if n < 1:
            raise ValueError("semantic graph needs at least one node")
        if not np.all(np.isfinite(self.node_positions)):
            raise ValueError("semantic graph node positions must be finite")
        if len(self.part_labels) != n:
            raise ValueError(f"{len(self.part_labels)} part labels for {n} nodes")
        if self.adjacency is None:
            self.adjacency = complete_adjacency(n)

    @property
    def num_nodes(self):
        return len(self.node_positions)


def complete_adjacency(n):
    """All ordered pairs of distinct nodes; self-loops are added later by the model."""
    return np.ones((n, n), dtype=np.int64) - np.eye(n, dtype=np.int64)


def _check_part(part_points, tau=None):
    pts = as_points(part_points)
    if len(pts) == 0:
        raise ValueError("part has no points")
    if tau is not None and tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    return pts


def build_neighborhood(part_points, tau: float = DEFAULT_TAU) -> NeighborhoodMatrix:
    pts = _check_part(part_points, tau)
    entries = (pairwise_distances(pts) <= tau).astype(np.uint8)
    np.fill_diagonal(entries, 1)
    return NeighborhoodMatrix(entries=entries, threshold=float(tau))


def split_subpart_indices(part_points, tau: float = DEFAULT_TAU) -> list[np.ndarray]:
    """
    Connected components of the thresholded neighbourhood graph, as sorted
    index arrays. Components come out ordered by their smallest index.
    """
    neighborhood = build_neighborhood(part_points, tau)
    n = len(neighborhood)
    visited = np.zeros(n, dtype=bool)
    components = []

    for start in range(n):
        if visited[start]:
            continue
        visited[start] = True
        stack = [start]
        members = []
        while stack:
            v = stack.pop()
            members.append(v)
            for w in neighborhood.neighbors(v):
                if not visited[w]:
                    visited[w] = True
                    stack.append(w)
        components.append(np.sort(np.array(members, dtype=np.int64)))

    return components


def split_subparts(part_points, tau: float = DEFAULT_TAU) -> list[np.ndarray]:
    pts = _check_part(part_points, tau)
    return [pts[idx] for idx in split_subpart_indices(pts, tau)]


def extract_node(part_points) -> Point3:
    pts = _check_part(part_points)
    return Point3(*(float(v) for v in pts.mean(axis=0)))


def build_graph(labeled_cloud: PointCloud, tau: float = DEFAULT_TAU, class_label: int = 0) -> SemanticGraph:
    """
    One node per spatially connected sub-part of every labeled part, placed at
    the sub-part centroid, fully connected in both directions.
    """
    if not labeled_cloud.is_labeled:
        raise ValueError(f"cloud {labeled_cloud.name!r} has no part labels")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")

    positions = []
    part_labels = []
    for label in np.unique(labeled_cloud.labels):
        part = labeled_cloud.points[labeled_cloud.labels == label]
        for subpart in split_subparts(part, tau):
            positions.append(extract_node(subpart))
            part_labels.append(int(label))

    return SemanticGraph(
        node_positions=np.array(positions, dtype=np.float64),
        part_labels=part_labels,
        class_label=int(class_label),
        name=labeled_cloud.name,
    )
