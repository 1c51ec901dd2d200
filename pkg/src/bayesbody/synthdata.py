"""Synthetic scenes with the size/distance/focal ambiguity built in.

Scenes hold ground-truth people (shape, expression, pose, translation) seen
from one or more ring-placed cameras.  Observations are deliberately lossy:
per-cell descriptors of the projected 2D point pattern (coordinates in cell
units, never raw depth, focal, or metric size) pushed through a fixed seeded
random projection, plus a global scene descriptor standing in for a [CLS]
feature.  A person twice as large at twice the distance produces the same
descriptors, so depth is irreducible from features alone; the `ambiguity_probe`
certifies this with a ridge regressor.

World frame = view 0's camera frame.  Per-view ground truth is expressed in
that view's camera frame via the stored extrinsics x_cam = R x_world + tau.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .body import (CameraIntrinsics, KinematicBody, backproject, default_body,
                   project_points, root_body_from_world, world_from_local)
from .errors import DimensionMismatch, EmptyList, ParamOutOfRange, PlacementFailure
from .graph import Assignment, PersonAssignment
from .so3 import Rotation

__all__ = [
    "Profile",
    "PROFILES",
    "GeneratorConfig",
    "GtPerson",
    "SceneObservation",
    "Scene",
    "generate_scene",
    "generate_dataset",
    "matched_extent_pair",
    "dataset_stats",
    "ambiguity_probe",
    "gt_assignment",
    "save_dataset",
    "load_dataset",
    "cell_of",
    "center2d_value",
    "center2d_pixels",
]

_PATCH_DESC_DIM = 12
_GLOBAL_DESC_DIM = 8
_PROJECTION_SEED = 71040


@dataclass(frozen=True)
class Profile:
    """Knobs that shape the ambiguity structure of generated scenes."""

    name: str
    beta0: str              # "wide" | "gauss" | "heavy"
    noise: float            # feature noise std
    d_range: tuple = (2.2, 5.5)
    lnf_sigma: float = 0.3
    pose_kappa: float = 40.0   # per-bone rest-pose Fisher concentration


PROFILES = {
    "size-distance": Profile("size-distance", beta0="wide", noise=0.01),
    "noiseless": Profile("noiseless", beta0="wide", noise=0.0),
    "diverse": Profile("diverse", beta0="heavy", noise=0.01),
    "bedlam-like": Profile("bedlam-like", beta0="gauss", noise=0.01),
}


@dataclass(frozen=True)
class GeneratorConfig:
    feature_dim: int = 64
    grid: tuple = (8, 8)          # (h, w) cells
    image_size: tuple = (512, 512)
    head_margin: float = 64.0     # heads sampled this far from image borders
    min_depth: float = 0.2        # every body point must stay beyond this


@dataclass
class GtPerson:
    """Ground truth for one person in one view's camera frame."""

    person_id: int
    t: np.ndarray                  # (3,): head/root position
    theta_local: np.ndarray        # (J, 3, 3) local rotations, FK-ready
    beta: np.ndarray
    gamma: np.ndarray
    head_px: np.ndarray            # (2,): projection of t
    cell: tuple                    # (u, v) grid cell of the head


@dataclass
class SceneObservation:
    """One view: lossy features plus ground truth annotations."""

    patch_features: np.ndarray     # (h, w, feature_dim)
    global_feature: np.ndarray     # (feature_dim,)
    gt: list                       # list of GtPerson
    k: CameraIntrinsics
    view_id: int
    scene_id: int


@dataclass
class Scene:
    scene_id: int
    seed: int
    profile: str
    views: list                    # list of SceneObservation
    extrinsics: list               # list of (r (3,3), tau (3,)) per view


# deterministic building blocks ------------------------------------------------


def _projections(feature_dim: int):
    """Fixed seeded random projections shared by every scene."""
    rng = np.random.default_rng(_PROJECTION_SEED)
    w_patch = rng.normal(0.0, 1.0 / np.sqrt(_PATCH_DESC_DIM),
                         size=(_PATCH_DESC_DIM, feature_dim))
    w_global = rng.normal(0.0, 1.0 / np.sqrt(_GLOBAL_DESC_DIM),
                          size=(_GLOBAL_DESC_DIM, feature_dim))
    return w_patch, w_global


def _beta0_sample(kind: str, rng: np.random.Generator) -> float:
    if kind == "wide":
        x = rng.normal(0.0, 3.0)
    elif kind == "gauss":
        x = rng.normal(0.0, 1.0)
    elif kind == "heavy":
        x = rng.standard_t(3) * 1.2
    else:
        raise ParamOutOfRange(f"unknown beta0 sampler {kind!r}")
    return float(np.clip(x, -5.0, 5.0))


def _iso_fisher_angle_table(kappa: float):
    """Inverse-CDF table of the isotropic Fisher angle density.

    p(phi) proportional to (1 - cos phi) exp(2 kappa cos phi) on [0, pi].
    """
    phi = np.linspace(0.0, np.pi, 4096)
    with np.errstate(divide="ignore"):
        logp = np.log1p(-np.cos(phi)) + 2.0 * kappa * (np.cos(phi) - 1.0)
    p = np.exp(logp - logp.max())
    cdf = np.concatenate([[0.0], np.cumsum((p[1:] + p[:-1]) * 0.5 * np.diff(phi))])
    return phi, cdf / cdf[-1]


_angle_tables: dict = {}


def _rest_pose_wobble(kappa: float, rng: np.random.Generator) -> Rotation:
    """One rotation from the isotropic Fisher prior around the identity."""
    if kappa not in _angle_tables:
        _angle_tables[kappa] = _iso_fisher_angle_table(kappa)
    phi, cdf = _angle_tables[kappa]
    angle = float(np.interp(rng.uniform(), cdf, phi))
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    if angle < 1e-12:
        return Rotation.identity()
    return Rotation.from_axis_angle(axis, angle)


def _sample_person(pid: int, profile: Profile, body: KinematicBody,
                   rng: np.random.Generator) -> dict:
    beta = rng.normal(0.0, 1.0, size=body.beta_dim)
    norm_rest = np.linalg.norm(beta[1:])
    if norm_rest > 3.0:
        beta[1:] *= 3.0 / norm_rest
    beta[0] = _beta0_sample(profile.beta0, rng)
    gamma = rng.normal(0.0, 1.0, size=10)
    theta = np.empty((body.n_joints, 3, 3))
    theta[0] = Rotation.random(rng).as_matrix()
    for j in range(1, body.n_joints):
        theta[j] = _rest_pose_wobble(profile.pose_kappa, rng).as_matrix()
    return {"person_id": pid, "beta": beta, "gamma": gamma, "theta_local": theta}


def _ring_extrinsics(n_views: int, centroid: np.ndarray,
                     rng: np.random.Generator) -> list:
    """View 0 is the identity; the rest orbit the scene centroid."""
    out = [(np.eye(3), np.zeros(3))]
    radius = float(np.linalg.norm(centroid))
    for i in range(1, n_views):
        phi = 2.0 * np.pi * i / n_views + rng.uniform(-0.2, 0.2)
        r_i = radius * (1.0 + rng.uniform(-0.1, 0.1))
        height = rng.uniform(-0.5, 0.5)
        pos = centroid + r_i * np.array([np.sin(phi), 0.0, -np.cos(phi)])
        pos[1] += height
        z = centroid - pos
        z /= np.linalg.norm(z)
        up = np.array([0.0, 1.0, 0.0])
        x = np.cross(up, z)
        if np.linalg.norm(x) < 1e-9:
            up = np.array([1.0, 0.0, 0.0])
            x = np.cross(up, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        r = np.stack([x, y, z])
        out.append((r, -r @ pos))
    return out


def cell_of(px: np.ndarray, grid: tuple, image_size: tuple) -> tuple:
    """(u, v) cell containing pixel px, clipped onto the grid."""
    h, w = grid
    wpx, hpx = image_size
    u = min(int(px[0] / (wpx / w)), w - 1)
    v = min(int(px[1] / (hpx / h)), h - 1)
    return (max(u, 0), max(v, 0))


def center2d_value(px: np.ndarray, cell: tuple, grid: tuple,
                   image_size: tuple) -> np.ndarray:
    """Pixel -> node value: offset from cell center in half-cell units."""
    h, w = grid
    wpx, hpx = image_size
    cw, ch = wpx / w, hpx / h
    center = np.array([(cell[0] + 0.5) * cw, (cell[1] + 0.5) * ch])
    return (np.asarray(px, dtype=float) - center) / np.array([cw / 2.0, ch / 2.0])


def center2d_pixels(value: np.ndarray, cell: tuple, grid: tuple,
                    image_size: tuple) -> np.ndarray:
    """Inverse of center2d_value."""
    h, w = grid
    wpx, hpx = image_size
    cw, ch = wpx / w, hpx / h
    center = np.array([(cell[0] + 0.5) * cw, (cell[1] + 0.5) * ch])
    return center + np.asarray(value, dtype=float) * np.array([cw / 2.0, ch / 2.0])


def _patch_descriptor(local_pts: np.ndarray, head_local) -> np.ndarray:
    """2D point-pattern summary of one cell, coordinates in cell units."""
    d = np.zeros(_PATCH_DESC_DIM)
    n = local_pts.shape[0]
    if n:
        d[0] = n / 16.0
        d[1:3] = local_pts.mean(axis=0)
        d[3:5] = local_pts.std(axis=0)
        if n > 1:
            diffs = local_pts[:, None, :] - local_pts[None, :, :]
            d[5] = np.sqrt((diffs ** 2).sum(-1)).mean()
        ext = local_pts.max(axis=0) - local_pts.min(axis=0)
        d[6:8] = ext
        d[8] = np.linalg.norm(local_pts - 0.5, axis=1).min()
    if head_local is not None:
        d[9] = 1.0
        d[10:12] = head_local
    return d


def _view_features(body: KinematicBody, persons: list, view_gt: list,
                   k: CameraIntrinsics, profile: Profile, cfg: GeneratorConfig,
                   noise_rng: np.random.Generator):
    """Patch grid + global feature from projected 2D point patterns only."""
    h, w = cfg.grid
    wpx, hpx = k.image_size
    cw, ch = wpx / w, hpx / h
    w_patch, w_global = _projections(cfg.feature_dim)

    all_px = []
    for gt in view_gt:
        pts = body.forward_kinematics(gt.theta_local, gt.beta, gt.t)
        keep = pts[:, 2] > 1e-6
        px = project_points(k, pts[keep])
        inside = ((px[:, 0] >= 0) & (px[:, 0] < wpx)
                  & (px[:, 1] >= 0) & (px[:, 1] < hpx))
        all_px.append(px[inside])
    pts2d = np.concatenate(all_px, axis=0) if all_px else np.zeros((0, 2))

    heads = {gt.cell: gt.head_px for gt in view_gt}
    cells_u = np.clip((pts2d[:, 0] / cw).astype(int), 0, w - 1) if len(pts2d) else []
    cells_v = np.clip((pts2d[:, 1] / ch).astype(int), 0, h - 1) if len(pts2d) else []

    patch = np.zeros((h, w, cfg.feature_dim))
    for v in range(h):
        for u in range(w):
            mask = (cells_u == u) & (cells_v == v) if len(pts2d) else np.zeros(0, bool)
            local = ((pts2d[mask] - np.array([u * cw, v * ch]))
                     / np.array([cw, ch])) if len(pts2d) else np.zeros((0, 2))
            head_local = None
            if (u, v) in heads:
                head_local = (heads[(u, v)] - np.array([u * cw, v * ch])) \
                    / np.array([cw, ch])
            desc = _patch_descriptor(local, head_local)
            patch[v, u] = desc @ w_patch

    gdesc = np.zeros(_GLOBAL_DESC_DIM)
    if len(pts2d):
        lo, hi = pts2d.min(axis=0), pts2d.max(axis=0)
        center = pts2d.mean(axis=0)
        gdesc[0] = len(pts2d) / (body.n_points * 8.0)
        gdesc[1] = (hi[0] - lo[0]) / wpx
        gdesc[2] = (hi[1] - lo[1]) / hpx
        gdesc[3] = center[0] / wpx
        gdesc[4] = center[1] / hpx
        gdesc[5] = np.linalg.norm(pts2d - center, axis=1).mean() / cw
        occupied = {(int(cu), int(cv)) for cu, cv in zip(cells_u, cells_v)}
        gdesc[6] = len(occupied) / (h * w)
    gdesc[7] = len(view_gt) / 8.0
    global_feat = gdesc @ w_global

    if profile.noise > 0.0:
        patch = patch + noise_rng.normal(0.0, profile.noise, size=patch.shape)
        global_feat = global_feat + noise_rng.normal(0.0, profile.noise,
                                                     size=global_feat.shape)
    return patch, global_feat


def _assemble_scene(scene_id: int, seed: int, profile: Profile,
                    cfg: GeneratorConfig, body: KinematicBody, persons: list,
                    ks: list, extrinsics: list,
                    noise_rng: np.random.Generator):
    """Deterministic build of a Scene once all samples are fixed.

    Returns None when a placement constraint fails (head outside image or
    margin, body point too close to a camera, two heads in one cell).
    """
    h, w = cfg.grid
    views = []
    for view_id, (k, (r, tau)) in enumerate(zip(ks, extrinsics)):
        wpx, hpx = k.image_size
        view_gt = []
        seen_cells = set()
        for person in persons:
            t = r @ person["t_world"] + tau
            theta = person["theta_local"].copy()
            theta[0] = r @ theta[0]
            pts = body.forward_kinematics(theta, person["beta"], t)
            if np.any(pts[:, 2] < cfg.min_depth):
                return None
            head_px = project_points(k, t[None])[0]
            m = cfg.head_margin
            if not (m <= head_px[0] <= wpx - m and m <= head_px[1] <= hpx - m):
                return None
            cell = cell_of(head_px, cfg.grid, k.image_size)
            if cell in seen_cells:
                return None
            seen_cells.add(cell)
            view_gt.append(GtPerson(person_id=person["person_id"], t=t,
                                    theta_local=theta, beta=person["beta"],
                                    gamma=person["gamma"], head_px=head_px,
                                    cell=cell))
        patch, global_feat = _view_features(body, persons, view_gt, k, profile,
                                            cfg, noise_rng)
        views.append(SceneObservation(patch_features=patch,
                                      global_feature=global_feat, gt=view_gt,
                                      k=k, view_id=view_id, scene_id=scene_id))
    return Scene(scene_id=scene_id, seed=seed, profile=profile.name,
                 views=views, extrinsics=extrinsics)


def generate_scene(seed: int, n_people: int, n_views: int,
                   ambiguity_profile: str = "size-distance",
                   config: GeneratorConfig | None = None,
                   body: KinematicBody | None = None,
                   scene_id: int = 0) -> Scene:
    """One scene with per-view observations; deterministic in `seed`."""
    if not (1 <= n_people <= 8):
        raise ParamOutOfRange(f"n_people must be in [1, 8], got {n_people}")
    if not (1 <= n_views <= 8):
        raise ParamOutOfRange(f"n_views must be in [1, 8], got {n_views}")
    if ambiguity_profile not in PROFILES:
        raise ParamOutOfRange(f"unknown profile {ambiguity_profile!r}")
    profile = PROFILES[ambiguity_profile]
    cfg = config or GeneratorConfig()
    body = body or default_body()
    rng = np.random.default_rng(seed)

    for _ in range(100):
        ks = []
        for _v in range(n_views):
            f = float(np.exp(rng.normal(np.log(1000.0), profile.lnf_sigma)))
            p = np.array(cfg.image_size) / 2.0 + rng.uniform(-8.0, 8.0, size=2)
            ks.append(CameraIntrinsics(f=f, p=p, image_size=cfg.image_size))
        persons = []
        for pid in range(n_people):
            person = _sample_person(pid, profile, body, rng)
            head_px = np.array([
                rng.uniform(cfg.head_margin, cfg.image_size[0] - cfg.head_margin),
                rng.uniform(cfg.head_margin, cfg.image_size[1] - cfg.head_margin)])
            d = rng.uniform(*profile.d_range)
            person["t_world"] = backproject(ks[0], head_px, d)
            persons.append(person)
        centroid = np.mean([p["t_world"] for p in persons], axis=0)
        extrinsics = _ring_extrinsics(n_views, centroid, rng)
        scene = _assemble_scene(scene_id, seed, profile, cfg, body, persons,
                                ks, extrinsics, rng)
        if scene is not None:
            return scene
    raise PlacementFailure(
        f"could not place {n_people} people across {n_views} views in 100 attempts")


def generate_dataset(n_scenes: int, n_views: int, seed: int,
                     ambiguity_profile: str = "size-distance",
                     people_range: tuple = (1, 2),
                     config: GeneratorConfig | None = None,
                     body: KinematicBody | None = None) -> list:
    """List of scenes with per-scene derived seeds."""
    if n_scenes < 1:
        raise ParamOutOfRange("n_scenes must be positive")
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n_scenes):
        scene_seed = int(rng.integers(0, 2 ** 62))
        n_people = int(rng.integers(people_range[0], people_range[1] + 1))
        scenes.append(generate_scene(scene_seed, n_people, n_views,
                                     ambiguity_profile, config=config,
                                     body=body, scene_id=i))
    return scenes


def matched_extent_pair(seed: int, delta: float = 2.0,
                        config: GeneratorConfig | None = None,
                        body: KinematicBody | None = None):
    """Two single-person scenes with equal projected extents.

    Person B has beta0 larger by `delta` and distance scaled by the matching
    size ratio, so B's 3D points are a uniform scaling of A's about the
    pinhole and the projections coincide exactly.  Rest-shape components are
    zero (only then is the scaling exact) and feature noise is off.
    """
    cfg = config or GeneratorConfig()
    body = body or default_body()
    profile = PROFILES["noiseless"]
    rng = np.random.default_rng(seed)

    f = float(np.exp(rng.normal(np.log(1000.0), profile.lnf_sigma)))
    p = np.array(cfg.image_size) / 2.0
    k = CameraIntrinsics(f=f, p=p, image_size=cfg.image_size)
    person = _sample_person(0, profile, body, rng)
    person["beta"] = np.zeros(body.beta_dim)
    person["beta"][0] = float(np.clip(rng.normal(0.0, 1.0), -2.0, 2.0))
    head_px = np.array(cfg.image_size) / 2.0 + rng.uniform(-40.0, 40.0, size=2)
    d = rng.uniform(2.5, 4.0)
    person["t_world"] = backproject(k, head_px, d)

    scale = (1.0 + 0.1 * (person["beta"][0] + delta)) / (1.0 + 0.1 * person["beta"][0])
    person_b = {**person, "beta": person["beta"].copy(),
                "theta_local": person["theta_local"].copy()}
    person_b["beta"][0] = person["beta"][0] + delta
    person_b["t_world"] = backproject(k, head_px, d * scale)

    eye = [(np.eye(3), np.zeros(3))]
    a = _assemble_scene(0, seed, profile, cfg, body, [person], [k], eye,
                        np.random.default_rng(0))
    b = _assemble_scene(1, seed, profile, cfg, body, [person_b], [k], eye,
                        np.random.default_rng(0))
    if a is None or b is None:
        raise PlacementFailure("matched pair fell outside placement constraints")
    return a, b


# ground-truth plumbing ---------------------------------------------------------


def gt_assignment(view: SceneObservation, grid: tuple | None = None,
                  k_input: CameraIntrinsics | None = None,
                  body: KinematicBody | None = None) -> Assignment:
    """Full ground-truth assignment of one view, in node-value space.

    With `k_input` the assignment is expressed under that assumed camera:
    the camera node takes k_input and the encoded depth becomes
    ln(d / f_input).  Pixel-space quantities (head keypoint, cells) are
    observations and do not move with the assumed camera.  `body` must be
    the body the scene was generated with (the shared default if omitted).
    """
    h, w, _ = view.patch_features.shape
    grid = grid or (h, w)
    k = k_input or view.k
    if tuple(k.image_size) != tuple(view.k.image_size):
        raise DimensionMismatch("assumed camera must share the view's image size")
    persons = []
    for gt in view.gt:
        parents = body.parents if body is not None else _parents_of(gt.theta_local)
        pose_value = root_body_from_world(
            parents, world_from_local(parents, gt.theta_local))
        persons.append(PersonAssignment(
            cell=gt.cell,
            center2d=center2d_value(gt.head_px, gt.cell, grid, k.image_size),
            encoded_depth=float(np.log(gt.t[2] / k.f)),
            shape=gt.beta,
            expression=gt.gamma,
            pose=pose_value))
    return Assignment(intrinsics=k, persons=persons)


_gt_body_parents: np.ndarray | None = None


def _parents_of(theta_local: np.ndarray) -> np.ndarray:
    global _gt_body_parents
    if _gt_body_parents is None or _gt_body_parents.shape[0] != theta_local.shape[0]:
        if theta_local.shape[0] == default_body().n_joints:
            _gt_body_parents = default_body().parents
        else:
            raise DimensionMismatch(
                "gt_assignment needs the default body's joint count")
    return _gt_body_parents


# statistics and the ambiguity probe -------------------------------------------


def dataset_stats(dataset: list) -> dict:
    """Deterministic summary: shape histogram, depth range, people counts."""
    if not dataset:
        raise EmptyList("dataset_stats needs at least one scene")
    beta0, depths, counts = [], [], []
    for scene in dataset:
        view0 = scene.views[0]
        counts.append(len(view0.gt))
        for gt in view0.gt:
            beta0.append(float(gt.beta[0]))
            depths.append(float(gt.t[2]))
    beta0 = np.array(beta0)
    depths = np.array(depths)
    hist, edges = np.histogram(beta0, bins=16, range=(-5.0, 5.0))
    centered = beta0 - beta0.mean()
    m2 = float((centered ** 2).mean())
    kurt = float((centered ** 4).mean() / m2 ** 2 - 3.0) if m2 > 0 else 0.0
    return {
        "n_scenes": len(dataset),
        "profile": dataset[0].profile,
        "people_per_scene_mean": float(np.mean(counts)),
        "people_per_scene_min": int(np.min(counts)),
        "people_per_scene_max": int(np.max(counts)),
        "beta0_hist": hist.tolist(),
        "beta0_hist_edges": edges.tolist(),
        "beta0_excess_kurtosis": kurt,
        "depth_min": float(depths.min()),
        "depth_max": float(depths.max()),
        "depth_mean": float(depths.mean()),
    }


def _ridge_r2(x: np.ndarray, y: np.ndarray, alpha: float = 1e-2) -> float:
    """Held-out R^2 of a ridge regressor (even rows train, odd rows test)."""
    xtr, xte = x[0::2], x[1::2]
    ytr, yte = y[0::2], y[1::2]
    mu, sd = xtr.mean(axis=0), xtr.std(axis=0) + 1e-9
    xtr = (xtr - mu) / sd
    xte = (xte - mu) / sd
    ym = ytr.mean()
    w = np.linalg.solve(xtr.T @ xtr + alpha * np.eye(x.shape[1]),
                        xtr.T @ (ytr - ym))
    pred = xte @ w + ym
    ss_res = float(((yte - pred) ** 2).sum())
    ss_tot = float(((yte - yte.mean()) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def ambiguity_probe(dataset: list, body: KinematicBody | None = None) -> dict:
    """Ridge-probe R^2 for 2D extent (should be high) and depth (low).

    Uses view 0 of single-person scenes; the probe input is the global
    feature concatenated with the mean patch feature.
    """
    body = body or default_body()
    xs, extents, depths = [], [], []
    for scene in dataset:
        view = scene.views[0]
        if len(view.gt) != 1:
            continue
        gt = view.gt[0]
        pts = body.forward_kinematics(gt.theta_local, gt.beta, gt.t)
        px = project_points(view.k, pts[pts[:, 2] > 1e-6])
        ext = px.max(axis=0) - px.min(axis=0)
        extents.append(float(np.linalg.norm(ext)))
        depths.append(float(gt.t[2]))
        xs.append(np.concatenate([view.global_feature,
                                  view.patch_features.mean(axis=(0, 1))]))
    if len(xs) < 8:
        raise EmptyList("ambiguity probe needs >= 8 single-person scenes")
    x = np.stack(xs)
    return {"extent_r2": _ridge_r2(x, np.array(extents)),
            "depth_r2": _ridge_r2(x, np.array(depths)),
            "n_probe_scenes": len(xs)}


# persistence -------------------------------------------------------------------


def _scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "profile": scene.profile,
        "extrinsics": [{"r": r.tolist(), "tau": tau.tolist()}
                       for r, tau in scene.extrinsics],
        "views": [{
            "view_id": v.view_id,
            "k": v.k.to_dict(),
            "patch_features": v.patch_features.tolist(),
            "global_feature": v.global_feature.tolist(),
            "gt": [{
                "person_id": g.person_id,
                "t": g.t.tolist(),
                "theta_local": g.theta_local.tolist(),
                "beta": g.beta.tolist(),
                "gamma": g.gamma.tolist(),
                "head_px": g.head_px.tolist(),
                "cell": list(g.cell),
            } for g in v.gt],
        } for v in scene.views],
    }


def _scene_from_dict(d: dict) -> Scene:
    views = []
    for v in d["views"]:
        gt = [GtPerson(person_id=g["person_id"], t=np.array(g["t"]),
                       theta_local=np.array(g["theta_local"]),
                       beta=np.array(g["beta"]), gamma=np.array(g["gamma"]),
                       head_px=np.array(g["head_px"]), cell=tuple(g["cell"]))
              for g in v["gt"]]
        views.append(SceneObservation(
            patch_features=np.array(v["patch_features"]),
            global_feature=np.array(v["global_feature"]),
            gt=gt, k=CameraIntrinsics.from_dict(v["k"]),
            view_id=v["view_id"], scene_id=d["scene_id"]))
    extr = [(np.array(e["r"]), np.array(e["tau"])) for e in d["extrinsics"]]
    return Scene(scene_id=d["scene_id"], seed=d["seed"], profile=d["profile"],
                 views=views, extrinsics=extr)


def save_dataset(dataset: list, directory: str) -> str:
    """Write scenes + manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for scene in dataset:
        name = f"scene_{scene.scene_id:05d}.json"
        body_text = json.dumps(_scene_to_dict(scene), sort_keys=True,
                               separators=(",", ":"))
        with open(os.path.join(directory, name), "w") as fh:
            fh.write(body_text)
        names.append((name, hashlib.sha256(body_text.encode()).hexdigest()))
    manifest = {
        "format_version": 1,
        "kind": "bayesbody-dataset",
        "count": len(dataset),
        "profile": dataset[0].profile if dataset else None,
        "n_views": len(dataset[0].views) if dataset else 0,
        "seeds": [s.seed for s in dataset],
        "scenes": [{"file": n, "sha256": h} for n, h in names],
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
    return path


def load_dataset(directory: str) -> list:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "bayesbody-dataset":
        raise DimensionMismatch(f"{directory} does not hold a dataset manifest")
    out = []
    for entry in manifest["scenes"]:
        with open(os.path.join(directory, entry["file"])) as fh:
            out.append(_scene_from_dict(json.load(fh)))
    return out
