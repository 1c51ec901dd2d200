"""Kinematic body stand-in and the pinhole camera model.

The body is a seeded random tree of J bones (default 53).  Rest offsets are
linear in the shape vector: offset_j(beta) = basis_j @ [1; beta], with beta[0]
acting as an isotropic size factor (0.1 per unit).  The "vertex" set is the J
joint positions plus two interpolated points per bone, J + 2(J-1) points total
(157 for the default body).  Joint 0 is the root and doubles as the head
reference keypoint: its position is the person's translation t.

Pose conventions: forward kinematics consumes local (parent-relative)
rotations and composes world orientations down the tree.  The probabilistic
side stores the root orientation in camera frame plus the remaining bones in
the root's body frame; converters below map between the two.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (BehindCamera, DimensionMismatch, NonPositiveDepth,
                     ParamOutOfRange)
from .so3 import Rotation

__all__ = [
    "CameraIntrinsics",
    "KinematicBody",
    "default_body",
    "project",
    "project_points",
    "backproject",
    "world_from_local",
    "local_from_world",
    "world_from_root_body",
    "root_body_from_world",
    "DEFAULT_N_JOINTS",
    "DEFAULT_BETA_DIM",
]

DEFAULT_N_JOINTS = 53
DEFAULT_BETA_DIM = 11
_BODY_SEED = 1803
_SIZE_COEFF = 0.1        # bone-length gain per unit of beta[0]
_INTERP_FRACTIONS = (1.0 / 3.0, 2.0 / 3.0)


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    """Pinhole camera: focal length f (pixels), principal point p, image size."""

    f: float
    p: np.ndarray
    image_size: tuple

    def __post_init__(self):
        object.__setattr__(self, "f", float(self.f))
        p = np.asarray(self.p, dtype=float)
        if p.shape != (2,):
            raise DimensionMismatch(f"principal point must be a 2-vector, got {p.shape}")
        w, h = self.image_size
        if self.f <= 0:
            raise ParamOutOfRange(f"focal length must be positive, got {self.f}")
        if not (0 <= p[0] <= w and 0 <= p[1] <= h):
            raise ParamOutOfRange(f"principal point {p} outside image {(w, h)}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "image_size", (int(w), int(h)))

    def to_dict(self) -> dict:
        return {"f": self.f, "p": self.p.tolist(), "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(f=d["f"], p=np.array(d["p"]), image_size=tuple(d["image_size"]))


def project(k: CameraIntrinsics, x) -> np.ndarray:
    """Perspective projection (f x/z + p_x, f y/z + p_y); z must exceed 1e-6."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise DimensionMismatch(f"expected a 3D point, got {x.shape}")
    if x[2] <= 1e-6:
        raise BehindCamera(f"point depth {x[2]:.3g} is at or behind the pinhole")
    return k.f * x[:2] / x[2] + k.p


def project_points(k: CameraIntrinsics, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionMismatch(f"expected (n, 3) points, got {pts.shape}")
    z = pts[:, 2]
    if np.any(z <= 1e-6):
        raise BehindCamera("some points are at or behind the pinhole")
    return k.f * pts[:, :2] / z[:, None] + k.p


def backproject(k: CameraIntrinsics, c, d: float) -> np.ndarray:
    """Inverse of project at depth d: ((c - p) d / f, d)."""
    c = np.asarray(c, dtype=float)
    if c.shape != (2,):
        raise DimensionMismatch(f"expected a 2D pixel, got {c.shape}")
    if d <= 0:
        raise NonPositiveDepth(f"depth must be positive, got {d}")
    xy = (c - k.p) * d / k.f
    return np.array([xy[0], xy[1], float(d)])


def _as_matrix_stack(theta, n: int) -> np.ndarray:
    """Accept a list of Rotation or an (n, 3, 3) array; return (n, 3, 3)."""
    if isinstance(theta, np.ndarray):
        if theta.shape != (n, 3, 3):
            raise DimensionMismatch(f"expected ({n}, 3, 3) rotations, got {theta.shape}")
        return theta
    if len(theta) != n:
        raise DimensionMismatch(f"expected {n} rotations, got {len(theta)}")
    return np.stack([r.as_matrix() for r in theta])


class KinematicBody:
    """Seeded random bone tree with shape-dependent rest offsets."""

    def __init__(self, parents: np.ndarray, basis: np.ndarray):
        parents = np.asarray(parents, dtype=int)
        basis = np.asarray(basis, dtype=float)
        j = parents.shape[0]
        if parents[0] != -1 or np.any(parents[1:] >= np.arange(1, j)):
            raise DimensionMismatch("parents must define a tree rooted at joint 0")
        if basis.shape[0] != j or basis.shape[2] != 3:
            raise DimensionMismatch(f"basis shape {basis.shape} incompatible with J={j}")
        self.parents = parents
        self.basis = basis
        self.n_joints = j
        self.beta_dim = basis.shape[1] - 1

    @property
    def n_points(self) -> int:
        return self.n_joints + 2 * (self.n_joints - 1)

    def rest_offsets(self, beta) -> np.ndarray:
        """Per-joint rest offsets basis_j @ [1; beta], shape (J, 3)."""
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.beta_dim,):
            raise DimensionMismatch(f"beta must have dim {self.beta_dim}, got {beta.shape}")
        aug = np.concatenate(([1.0], beta))
        return np.einsum("jkc,k->jc", self.basis, aug)

    def bone_lengths(self, beta) -> np.ndarray:
        """Lengths of the J-1 non-root bones."""
        return np.linalg.norm(self.rest_offsets(beta)[1:], axis=1)

    def joint_positions(self, theta_local, beta, t) -> np.ndarray:
        """World joint positions from local rotations; root sits at t."""
        mats = _as_matrix_stack(theta_local, self.n_joints)
        offsets = self.rest_offsets(beta)
        t = np.asarray(t, dtype=float)
        world = np.empty_like(mats)
        pos = np.empty((self.n_joints, 3))
        world[0] = mats[0]
        pos[0] = t
        for j in range(1, self.n_joints):
            par = self.parents[j]
            pos[j] = pos[par] + world[par] @ offsets[j]
            world[j] = world[par] @ mats[j]
        return pos

    def body_points(self, joints: np.ndarray) -> np.ndarray:
        """Joints plus two interpolated points per bone: the vertex analog."""
        segs = []
        par = self.parents[1:]
        for frac in _INTERP_FRACTIONS:
            segs.append(joints[par] + frac * (joints[1:] - joints[par]))
        return np.concatenate([joints] + segs, axis=0)

    def forward_kinematics(self, theta_local, beta, t) -> np.ndarray:
        """All body points (J + 2(J-1), 3) for local pose, shape, translation."""
        return self.body_points(self.joint_positions(theta_local, beta, t))

    def to_dict(self) -> dict:
        return {"parents": self.parents.tolist(), "basis": self.basis.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KinematicBody":
        return cls(np.array(d["parents"]), np.array(d["basis"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "KinematicBody":
        return cls.from_dict(json.loads(text))

    @classmethod
    def random(cls, seed: int = _BODY_SEED, n_joints: int = DEFAULT_N_JOINTS,
               beta_dim: int = DEFAULT_BETA_DIM) -> "KinematicBody":
        """Deterministic random body: tree + offsets + shape basis.

        Rest lengths ~ U[0.04, 0.12] m; beta[0] scales every offset by
        0.1 per unit; remaining components perturb offsets by at most 2% of
        the rest length each, keeping lengths positive for ||beta|| <= 3.
        """
        rng = np.random.default_rng(seed)
        parents = np.full(n_joints, -1, dtype=int)
        for j in range(1, n_joints):
            parents[j] = rng.integers(0, j)
        basis = np.zeros((n_joints, 1 + beta_dim, 3))
        for j in range(1, n_joints):
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            rest = direction * rng.uniform(0.04, 0.12)
            basis[j, 0] = rest
            basis[j, 1] = _SIZE_COEFF * rest
            for k in range(2, 1 + beta_dim):
                w = rng.standard_normal(3)
                basis[j, k] = 0.02 * np.linalg.norm(rest) * w / np.linalg.norm(w)
        return cls(parents, basis)


_default_body: KinematicBody | None = None


def default_body() -> KinematicBody:
    """Shared default 53-joint body (deterministic, built once)."""
    global _default_body
    if _default_body is None:
        _default_body = KinematicBody.random()
    return _default_body


# pose representation converters --------------------------------------------


def world_from_local(parents: np.ndarray, theta_local) -> np.ndarray:
    """Compose local rotations down the tree into world orientations (J,3,3)."""
    n = parents.shape[0]
    mats = _as_matrix_stack(theta_local, n)
    world = np.empty_like(mats)
    world[0] = mats[0]
    for j in range(1, n):
        world[j] = world[parents[j]] @ mats[j]
    return world


def local_from_world(parents: np.ndarray, world) -> np.ndarray:
    n = parents.shape[0]
    mats = _as_matrix_stack(world, n)
    local = np.empty_like(mats)
    local[0] = mats[0]
    for j in range(1, n):
        local[j] = mats[parents[j]].T @ mats[j]
    return local


def world_from_root_body(parents: np.ndarray, root_body) -> np.ndarray:
    """Root-plus-body-frame pose to world orientations.

    Slot 0 holds the root (already a world/camera-frame orientation); slots
    1..J-1 hold bone orientations in the root's body frame, so world_j =
    root @ body_j.
    """
    n = parents.shape[0]
    mats = _as_matrix_stack(root_body, n)
    world = np.empty_like(mats)
    world[0] = mats[0]
    world[1:] = mats[0][None] @ mats[1:]
    return world


def root_body_from_world(parents: np.ndarray, world) -> np.ndarray:
    n = parents.shape[0]
    mats = _as_matrix_stack(world, n)
    out = np.empty_like(mats)
    out[0] = mats[0]
    out[1:] = mats[0].T[None] @ mats[1:]
    return out
