from pathlib import Path

import numpy as np

from engine.data import GraphDataset
from engine.gnn import GraphSample
from engine.partition import complete_adjacency
from engine.pointcloud import PointCloud, save_cloud
from engine.registration import RigidTransform
from engine.seeding import substream

GRID_SPACING = 0.05


def _grid(x_range, y_range, z, spacing=GRID_SPACING):
    xs = np.arange(x_range[0], x_range[1] + spacing / 2, spacing)
    ys = np.arange(y_range[0], y_range[1] + spacing / 2, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])


def _disk(radius, z, spacing=GRID_SPACING):
    pts = _grid((-radius, radius), (-radius, radius), z, spacing)
    return pts[np.hypot(pts[:, 0], pts[:, 1]) <= radius + 1e-9]


def _segment(x, y, z_low, z_high, spacing=GRID_SPACING):
    zs = np.arange(z_low, z_high + spacing / 2, spacing)
    return np.column_stack([np.full(len(zs), x), np.full(len(zs), y), zs])


def _assemble(parts, name, category):
    points = np.vstack([p for p, _ in parts])
    labels = np.concatenate([np.full(len(p), label, dtype=np.int64) for p, label in parts])
    return PointCloud(points, labels, category=category, name=name)


def table_cloud(name="table"):
    """Top (label 0) over four legs sharing label 1; the legs are far enough apart to form four sub-parts."""
    parts = [(_grid((-0.5, 0.5), (-0.3, 0.3), 0.4), 0)]
    for x in (-0.45, 0.45):
        for y in (-0.25, 0.25):
            parts.append((_segment(x, y, -0.4, 0.35), 1))
    return _assemble(parts, name, "table")


def stool_cloud(name="stool"):
    parts = [(_disk(0.35, 0.3), 0)]
    for angle in (0.0, 2 * np.pi / 3, 4 * np.pi / 3):
        parts.append((_segment(0.3 * np.cos(angle), 0.3 * np.sin(angle), -0.4, 0.25), 1))
    return _assemble(parts, name, "stool")


def lamp_cloud(name="lamp"):
    shade = []
    for z in np.arange(0.3, 0.5 + GRID_SPACING / 2, GRID_SPACING):
        radius = 0.25 - (z - 0.3) * 0.5
        count = max(8, int(2 * np.pi * radius / GRID_SPACING))
        theta = np.arange(count) * 2 * np.pi / count
        shade.append(np.column_stack([radius * np.cos(theta), radius * np.sin(theta), np.full(count, z)]))
    parts = [
        (_disk(0.3, -0.5), 0),
        (_segment(0.0, 0.0, -0.45, 0.25), 1),
        (np.vstack(shade), 2),
    ]
    return _assemble(parts, name, "lamp")


SHAPES = {
    "table": table_cloud,
    "stool": stool_cloud,
    "lamp": lamp_cloud,
}


def random_rotation(rng, max_degrees):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    theta = np.deg2rad(rng.uniform(-max_degrees, max_degrees))
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def random_transform(rng, max_degrees=15.0, max_shift=0.1) -> RigidTransform:
    return RigidTransform(random_rotation(rng, max_degrees), rng.uniform(-max_shift, max_shift, size=3))


def perturbed_copy(cloud: PointCloud, rng, max_degrees=15.0, max_shift=0.1, keep=0.9, noise=0.0, name=None):
    """
    A rigidly moved, thinned (and optionally jittered) copy of `cloud`.
    Labels ride along as ground truth; returns (copy, transform applied).
    """
    n = len(cloud)
    count = max(3, int(round(n * keep)))
    idx = np.sort(rng.choice(n, size=min(count, n), replace=False))
    transform = random_transform(rng, max_degrees, max_shift)
    points = transform.apply(cloud.points[idx])
    if noise > 0:
        points = points + rng.normal(scale=noise, size=points.shape)
    labels = cloud.labels[idx] if cloud.is_labeled else None
    return PointCloud(points, labels, category=cloud.category, name=name or cloud.name), transform


def write_cloud_corpus(out_dir, per_category=3, seed=0, max_degrees=10.0, max_shift=0.05, noise=0.0, categories=None):
    """
    Lay out templates/<category>/, sources/<category>/ (unlabeled) and
    truth/<category>/ (labeled ground truth) under out_dir.
    """
    out_dir = Path(out_dir)
    rng = substream(seed, "synthetic")
    categories = list(categories or SHAPES)
    written = {"templates": [], "sources": [], "truth": []}

    for category in categories:
        if category not in SHAPES:
            raise ValueError(f"unknown synthetic category {category!r}; known: {sorted(SHAPES)}")
        template = SHAPES[category](name=category)
        written["templates"].append(save_cloud(template, out_dir / "templates" / category / f"{category}.xyz"))

        for i in range(per_category):
            name = f"{category}_{i:03d}"
            moved, _ = perturbed_copy(template, rng, max_degrees, max_shift, noise=noise, name=name)
            written["truth"].append(save_cloud(moved, out_dir / "truth" / category / f"{name}.xyz"))
            unlabeled = PointCloud(moved.points, None, category=category, name=name)
            written["sources"].append(save_cloud(unlabeled, out_dir / "sources" / category / f"{name}.xyz"))

    print(f"Wrote synthetic corpus: {len(categories)} categories, {per_category} sources each -> {out_dir}")
    return written


def graph_families(per_class=50, seed=0) -> GraphDataset:
    """
    Two separable families of complete graphs: small tight ones (2-3 nodes,
    spread 0.1) and large loose ones (6-8 nodes, spread 1.0).
    """
    rng = substream(seed, "synthetic")
    families = (
        ("compact", (2, 3), 0.1),
        ("sprawling", (6, 8), 1.0),
    )
    samples = []
    for i in range(per_class):
        for label, (family, (low, high), spread) in enumerate(families):
            n = int(rng.integers(low, high + 1))
            positions = rng.normal(scale=spread, size=(n, 3))
            samples.append(GraphSample(positions, complete_adjacency(n), label, name=f"{family}_{i:03d}"))
    return GraphDataset(samples, [f for f, _, _ in families], "position3d", name="graph_families")
