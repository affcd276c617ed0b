# engine/registration.py

from dataclasses import dataclass, field

import numpy as np

from engine.pointcloud import PointCloud, as_points, nearest_neighbors

DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-6

# Relative singular-value floor below which the cross-covariance is treated as rank deficient.
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class RigidTransform:
    R: np.ndarray
    T: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError("R must be a proper rotation matrix")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        return as_points(points) @ self.R.T + self.T

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying `inner` first, then self."""
        return RigidTransform(
            self.R @ inner.R,
            self.R @ inner.T + self.T,
            degenerate=self.degenerate or inner.degenerate,
        )


@dataclass
class IcpResult:
    transform: RigidTransform
    final_error: float
    iterations: int
    converged: bool
    error_history: list[float] = field(default_factory=list)


def rigid_solve(source_pts, target_pts) -> RigidTransform:
    """
    Least-squares rotation + translation mapping source_pts onto target_pts
    (index correspondence, no scaling).
    """
    A = as_points(source_pts)
    B = as_points(target_pts)
    if A.shape != B.shape:
        raise ValueError(f"point lists differ in shape: {A.shape} vs {B.shape}")
    if len(A) < 3:
        raise ValueError(f"rigid_solve needs at least 3 correspondences, got {len(A)}")

    centroid_A = A.mean(axis=0)
    centroid_B = B.mean(axis=0)

    H = (A - centroid_A).T @ (B - centroid_B)
    U, S, Vt = np.linalg.svd(H)
    V = Vt.T

    # special reflection case
    d = 1.0 if np.linalg.det(V @ U.T) >= 0 else -1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T

    # Collinear (or coincident) configurations leave the rotation about the line undetermined.
    scale = S[0] if S[0] > 0 else 1.0
    degenerate = bool(S[0] <= RANK_TOL or S[1] <= RANK_TOL * scale)

    T = centroid_B - R @ centroid_A
    return RigidTransform(R, T, degenerate=degenerate)


def correspondence_error(moved_points, template_points):
    idx, dist = nearest_neighbors(moved_points, template_points)
    return idx, float(np.mean(dist * dist))


def icp_register(
    source: PointCloud,
    template: PointCloud,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> IcpResult:
    """
    Align `source` onto `template`, starting from the identity transform.

    Each iteration matches every transformed source point to its nearest
    template point, solves the rigid transform for those pairs and composes it
    onto the running estimate. Stops when the mean squared correspondence
    distance changes by less than `tol`, or after `max_iters` iterations.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")

    src = as_points(source)
    tpl = as_points(template)

    transform = RigidTransform.identity()
    moved = src
    idx, error = correspondence_error(moved, tpl)
    history = [error]

    converged = False
    iterations = 0
    for itr in range(1, max_iters + 1):
        delta = rigid_solve(moved, tpl[idx])
        transform = delta.compose(transform)
        moved = transform.apply(src)

        idx, new_error = correspondence_error(moved, tpl)
        history.append(new_error)
        iterations = itr

        if abs(error - new_error) < tol:
            converged = True
            break
        error = new_error

    return IcpResult(
        transform=transform,
        final_error=history[-1],
        iterations=iterations,
        converged=converged,
        error_history=history,
    )


def transfer_labels(source: PointCloud, template: PointCloud, transform: RigidTransform) -> PointCloud:
    if not template.is_labeled:
        raise ValueError("label transfer needs a labeled template")
    moved = transform.apply(source.points)
    idx, _ = nearest_neighbors(moved, template.points)
    return source.with_labels(template.labels[idx])


def register_best_template(source: PointCloud, templates, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
    """
    Register `source` against every template and keep the one with the lowest
    final error. Returns (template_index, IcpResult).
    """
    templates = list(templates)
    if not templates:
        raise ValueError("no templates to register against")

    best_index = None
    best_result = None
    for i, template in enumerate(templates):
        result = icp_register(source, template, max_iters=max_iters, tol=tol)
        if best_result is None or result.final_error < best_result.final_error:
            best_index, best_result = i, result
    return best_index, best_result
