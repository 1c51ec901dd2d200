"""Prediction extraction: greedy modes, sampling, and multi-view fusion.

Given a trained network and one observation, `extract_mode` runs detection and
then sweeps the attribute nodes in topological order, assigning each node the
mode of its conditional distribution given already-assigned parents; known
values are injected verbatim and simply skip their node.  `sample_hypotheses`
replaces modes with ancestral draws.  Across views, `match_people` associates
single-view predictions with Hungarian matching on rigid-alignment costs,
`rigid_align_init` recovers the per-view canonicalizing rotations, and
`fuse_pose_multiview` turns the per-view Fisher beliefs into one consensus
rotation per bone in closed form: the product of the per-view densities is a
single density with parameter sum(theta0_i F_j_i), so its mode is one special
Procrustes projection.

Pose values everywhere use the network's node-value convention: slot 0 is the
root orientation in that view's camera frame and slots 1..J-1 are bone
orientations in the root's body frame (frame-independent).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .body import (CameraIntrinsics, KinematicBody, backproject, default_body,
                   local_from_world, project, root_body_from_world,
                   world_from_root_body)
from .detection import DetectionGrid, detect
from .distributions import (DiagGaussianParams, fisher_sample, gaussian_fuse,
                            gaussian_sample, lognormal_sample)
from .errors import (DegenerateInput, DegeneratePointSet, DimensionMismatch,
                     EmptyList, ParamOutOfRange)
from .graph import (ATTRIBUTE_NODES, Assignment, BayesNet, PersonAssignment,
                    camera_mode, camera_ray_augment, detection_scores,
                    joint_log_density, per_person_log_densities, predict_node)
from .so3 import special_svd
from .synthdata import center2d_pixels, center2d_value

__all__ = [
    "KnownValues",
    "PersonState",
    "ExtractResult",
    "MultiViewSet",
    "FusedPerson",
    "FusionResult",
    "extract_mode",
    "sample_hypotheses",
    "fuse_pose_multiview",
    "rigid_align",
    "rigid_align_init",
    "pair_match_cost",
    "hungarian",
    "match_people",
    "fuse_multiview",
]

_DEGEN_TOL = 1e-12


@dataclass(frozen=True)
class KnownValues:
    """Values injected into mode extraction instead of being predicted.

    `per_cell` maps a detection cell (u, v) to {node name: value} in
    node-value space; `intrinsics` clamps the camera node for the whole view.
    """

    intrinsics: CameraIntrinsics | None = None
    per_cell: dict = field(default_factory=dict)


@dataclass
class PersonState:
    """One extracted person.  `t` is derived, never independently assigned."""

    cell: tuple
    score: float
    theta: np.ndarray              # (J, 3, 3) node-value pose
    beta: np.ndarray
    gamma: np.ndarray
    encoded_depth: float
    center2d_val: np.ndarray       # offset from cell center, half-cell units
    k: CameraIntrinsics
    grid_shape: tuple              # (h, w) detection cells
    params: dict = field(default_factory=dict)   # node -> distribution params
    clamped: frozenset = frozenset()
    log_density: float | None = None

    @property
    def center2d(self) -> np.ndarray:
        """Head keypoint in pixels."""
        return center2d_pixels(self.center2d_val, self.cell, self.grid_shape,
                               self.k.image_size)

    @property
    def t(self) -> np.ndarray:
        """Root position: backprojected head at depth d = f exp(encoded depth)."""
        return backproject(self.k, self.center2d,
                           self.k.f * float(np.exp(self.encoded_depth)))

    def value_of(self, node: str):
        return {"center2d": self.center2d_val, "encoded_depth": self.encoded_depth,
                "shape": self.beta, "expression": self.gamma,
                "pose": self.theta}[node]

    def world_pose(self) -> np.ndarray:
        """Absolute camera-frame orientation of every bone."""
        return world_from_root_body(default_body().parents, self.theta)

    def local_pose(self, body: KinematicBody | None = None) -> np.ndarray:
        body = body or default_body()
        return local_from_world(body.parents, world_from_root_body(
            body.parents, self.theta))

    def body_points(self, body: KinematicBody | None = None) -> np.ndarray:
        body = body or default_body()
        return body.forward_kinematics(self.local_pose(body), self.beta, self.t)

    def to_assignment(self) -> PersonAssignment:
        return PersonAssignment(cell=self.cell, center2d=self.center2d_val,
                                encoded_depth=self.encoded_depth,
                                shape=self.beta, expression=self.gamma,
                                pose=self.theta)


@dataclass
class ExtractResult:
    intrinsics: CameraIntrinsics
    persons: list
    grid: DetectionGrid
    intrinsics_clamped: bool
    log_density: float

    def assignment(self) -> Assignment:
        return Assignment(intrinsics=self.intrinsics,
                          persons=[p.to_assignment() for p in self.persons])


@dataclass
class MultiViewSet:
    """Per-view predictions plus cross-view person correspondences."""

    views: list                    # list of ExtractResult
    correspondences: list          # per person: list of (view index, person index)


@dataclass
class FusedPerson:
    state: PersonState             # expressed in the reference view's frame
    source: list                   # (view index, person index) pairs
    alignments: list               # per source view: (r, t) mapping into reference
    view_states: dict              # view index -> fused attributes in that frame,
                                   # translation re-derived from the view's own
                                   # center and encoded depth
    per_view_t: dict               # view index -> re-derived t per view
    residuals: dict                # view index -> rms point distance to consensus


@dataclass
class FusionResult:
    fused: list                    # list of FusedPerson
    multi_view: MultiViewSet


# greedy mode extraction -------------------------------------------------------


def _node_mode(params):
    if isinstance(params, DiagGaussianParams):
        return params.mu.copy()
    return np.stack([p.r_mode.as_matrix() for p in params])


def extract_mode(net: BayesNet, obs, known: KnownValues | None = None,
                 threshold: float = 0.5,
                 image_size: tuple | None = None) -> ExtractResult:
    """Detection followed by a topological sweep of conditional modes."""
    known = known or KnownValues()
    if image_size is None:
        image_size = known.intrinsics.image_size if known.intrinsics \
            else obs.k.image_size
    if known.intrinsics is not None:
        k = known.intrinsics
        k_clamped = True
    else:
        cam = predict_node(net, "intrinsics",
                           {"global_feature": obs.global_feature})
        k = camera_mode(cam, image_size)
        k_clamped = False

    grid = detection_scores(net, obs, k)
    h, w = grid.shape
    persons = []
    for det in detect(grid, threshold):
        cell = (det.u, det.v)
        clamps = known.per_cell.get(cell, {})
        aug = camera_ray_augment(obs.patch_features[det.v, det.u], cell, k,
                                 (h, w))
        values: dict = {}
        params: dict = {}
        for node in net.node_order:
            if node not in ATTRIBUTE_NODES:
                continue
            if node in clamps:
                values[node] = clamps[node]
                params[node] = None
                continue
            parent_values = {}
            for parent in net.nodes[node].parents:
                parent_values[parent] = aug if parent == "detection_features" \
                    else values[parent]
            params[node] = predict_node(net, node, parent_values)
            values[node] = _node_mode(params[node])
        persons.append(PersonState(
            cell=cell, score=det.score, theta=np.asarray(values["pose"]),
            beta=np.asarray(values["shape"]),
            gamma=np.asarray(values["expression"]),
            encoded_depth=float(np.asarray(values["encoded_depth"]).reshape(())),
            center2d_val=np.asarray(values["center2d"], dtype=float),
            k=k, grid_shape=(h, w), params=params,
            clamped=frozenset(clamps)))

    result = ExtractResult(intrinsics=k, persons=persons, grid=grid,
                           intrinsics_clamped=k_clamped, log_density=0.0)
    asg = result.assignment()
    result.log_density = joint_log_density(net, asg, obs)
    if persons:
        for person, ld in zip(persons, per_person_log_densities(net, asg, obs)):
            person.log_density = float(ld)
    return result


def sample_hypotheses(net: BayesNet, obs, n: int, seed,
                      known: KnownValues | None = None,
                      threshold: float = 0.5,
                      image_size: tuple | None = None) -> list:
    """Ancestral samples of full assignments, each with its log density.

    Detection cells are the thresholded maxima under each hypothesis's
    intrinsics; attribute nodes are sampled in topological order from their
    conditionals given sampled parents.  Returns (Assignment, log density)
    pairs, deterministic under a fixed seed.
    """
    if n < 1:
        raise ParamOutOfRange("sample count must be >= 1")
    known = known or KnownValues()
    if image_size is None:
        image_size = known.intrinsics.image_size if known.intrinsics \
            else obs.k.image_size
    rng = np.random.default_rng(seed)
    cam = None if known.intrinsics is not None else predict_node(
        net, "intrinsics", {"global_feature": obs.global_feature})

    out = []
    for _ in range(n):
        if known.intrinsics is not None:
            k = known.intrinsics
        else:
            f = float(lognormal_sample(cam.focal, rng, 1)[0])
            z = gaussian_sample(cam.principal, rng, 1)[0]
            half = np.array(image_size) / 2.0
            p = np.clip(half + z * half,
                        [1e-6, 1e-6], np.array(image_size) - 1e-6)
            k = CameraIntrinsics(f=f, p=p, image_size=image_size)
        grid = detection_scores(net, obs, k)
        h, w = grid.shape
        persons = []
        for det in detect(grid, threshold):
            cell = (det.u, det.v)
            clamps = known.per_cell.get(cell, {})
            aug = camera_ray_augment(obs.patch_features[det.v, det.u], cell,
                                     k, (h, w))
            values: dict = {}
            for node in net.node_order:
                if node not in ATTRIBUTE_NODES:
                    continue
                if node in clamps:
                    values[node] = clamps[node]
                    continue
                parent_values = {}
                for parent in net.nodes[node].parents:
                    parent_values[parent] = aug \
                        if parent == "detection_features" else values[parent]
                params = predict_node(net, node, parent_values)
                if isinstance(params, DiagGaussianParams):
                    values[node] = gaussian_sample(params, rng, 1)[0]
                else:
                    values[node] = np.stack([
                        fisher_sample(pj, net.normalizer, rng, 1)[0].as_matrix()
                        for pj in params])
            persons.append(PersonAssignment(
                cell=cell,
                center2d=np.asarray(values["center2d"], dtype=float),
                encoded_depth=float(np.asarray(values["encoded_depth"]).reshape(())),
                shape=np.asarray(values["shape"]),
                expression=np.asarray(values["expression"]),
                pose=np.asarray(values["pose"])))
        asg = Assignment(intrinsics=k, persons=persons)
        out.append((asg, joint_log_density(net, asg, obs)))
    return out


# closed-form multi-view pose fusion --------------------------------------------


def fuse_pose_multiview(per_view: list) -> np.ndarray:
    """Consensus bone rotations from per-view Fisher beliefs.

    `per_view` holds one (theta0, f_matrices) pair per view: theta0 is that
    view's canonicalizing rotation (3, 3) and f_matrices the assembled Fisher
    parameters (n_bones, 3, 3).  The product of the per-view densities in the
    common frame has parameter sum_i theta0_i @ F_j_i per bone, so the fused
    rotation is its special Procrustes projection, which maximizes the summed
    trace objective exactly.
    """
    if not per_view:
        raise EmptyList("fuse_pose_multiview needs at least one view")
    summed = None
    n_bones = None
    for theta0, fs in per_view:
        theta0 = np.asarray(theta0, dtype=float)
        fs = np.asarray(fs, dtype=float)
        if theta0.shape != (3, 3):
            raise DimensionMismatch(f"theta0 must be (3, 3), got {theta0.shape}")
        if fs.ndim != 3 or fs.shape[-2:] != (3, 3):
            raise DimensionMismatch(f"F stack must be (n, 3, 3), got {fs.shape}")
        if n_bones is None:
            n_bones = fs.shape[0]
            summed = np.zeros_like(fs)
        elif fs.shape[0] != n_bones:
            raise DimensionMismatch("views disagree on bone count")
        summed += np.einsum("ab,jbc->jac", theta0, fs)
    u, d, v = special_svd(summed)
    bad = d[:, 1] + d[:, 2] <= _DEGEN_TOL * np.maximum(d[:, 0], 1.0)
    if np.any(bad):
        raise DegenerateInput(
            f"summed Fisher parameter is rank <= 1 for bones {np.where(bad)[0]}")
    return u @ np.swapaxes(v, -1, -2)


# rigid alignment and matching ---------------------------------------------------


def rigid_align(target: np.ndarray, source: np.ndarray):
    """Least-squares rotation + translation with r @ source + t ~ target."""
    target = np.asarray(target, dtype=float)
    source = np.asarray(source, dtype=float)
    if target.shape != source.shape or target.ndim != 2 or target.shape[1] != 3:
        raise DimensionMismatch("point sets must share an (n, 3) shape")
    if target.shape[0] < 3:
        raise DegeneratePointSet("rigid alignment needs >= 3 points")
    ct, cs = target.mean(axis=0), source.mean(axis=0)
    h = (target - ct).T @ (source - cs)
    _, d, _ = special_svd(h)
    if d[1] + d[2] <= _DEGEN_TOL * max(d[0], 1.0):
        raise DegeneratePointSet("point sets are collinear; alignment not unique")
    u, _, v = special_svd(h)
    r = u @ v.T
    return r, ct - r @ cs


def rigid_align_init(states_per_view: list, body: KinematicBody | None = None):
    """Canonicalizing rotations theta0_i and transforms into view 1's frame.

    Each state's predicted body points are rigidly aligned onto the first
    view's; theta0_i composes the alignment rotation with that view's
    predicted global (root) orientation.  A single view gets the identity.
    """
    if not states_per_view:
        raise EmptyList("rigid_align_init needs at least one view")
    body = body or default_body()
    points = [s.body_points(body) for s in states_per_view]
    transforms = [(np.eye(3), np.zeros(3))]
    for pts in points[1:]:
        transforms.append(rigid_align(points[0], pts))
    theta0 = [transforms[i][0] @ states_per_view[i].theta[0]
              for i in range(len(states_per_view))]
    return theta0, transforms


def pair_match_cost(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Mean point distance after rigidly aligning b onto a."""
    r, t = rigid_align(points_a, points_b)
    return float(np.linalg.norm(points_a - (points_b @ r.T + t), axis=1).mean())


def hungarian(cost: np.ndarray) -> list:
    """Minimum-total-cost assignment as sorted (row, col) pairs."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise DimensionMismatch(f"cost matrix must be 2-D, got {cost.shape}")
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def match_people(view_a: list, view_b: list,
                 body: KinematicBody | None = None) -> list:
    """Hungarian matching of two views' people on rigid-alignment costs.

    Cost(a, b) is the mean body-point distance after rigidly aligning the
    pair.  Uneven lists are padded to square with twice the median cost, so a
    person whose best pairing is worse than that stays unmatched.
    """
    if not view_a or not view_b:
        return []
    body = body or default_body()
    pts_a = [s.body_points(body) for s in view_a]
    pts_b = [s.body_points(body) for s in view_b]
    cost = np.array([[pair_match_cost(pa, pb) for pb in pts_b] for pa in pts_a])
    n, m = cost.shape
    if n == m:
        return hungarian(cost)
    size = max(n, m)
    pad_value = 2.0 * float(np.median(cost))
    padded = np.full((size, size), pad_value)
    padded[:n, :m] = cost
    return [(i, j) for i, j in hungarian(padded) if i < n and j < m]


# full multi-view fusion ----------------------------------------------------------


def _fused_params(params_list, values_list):
    """Gaussian fusion, short-circuited by clamped (exact) values."""
    for params, value in zip(params_list, values_list):
        if params is None:
            return None, value
    return gaussian_fuse(params_list), None


def fuse_multiview(net: BayesNet, views: list, known: list | None = None,
                   threshold: float = 0.5,
                   body: KinematicBody | None = None) -> FusionResult:
    """Extract every view, match people to view 1, fuse matched groups.

    Shape and expression fuse as Gaussian products; pose fuses in closed form
    after rigid alignment.  Translation is per view: `view_states` carry the
    fused attributes re-expressed in each view's frame with t re-derived from
    that view's own center and encoded depth (camera extrinsics are never
    observed, so absolute position stays a per-view quantity).  The reference
    `state` additionally averages the aligned per-view translations.  People
    of later views that match nobody in view 1 are dropped.
    """
    if not views:
        raise EmptyList("fuse_multiview needs at least one view")
    body = body or default_body()
    if known is None:
        known = [None] * len(views)
    if len(known) != len(views):
        raise DimensionMismatch("known list must align with views")
    results = [extract_mode(net, obs, known=kv, threshold=threshold)
               for obs, kv in zip(views, known)]

    groups = [[(0, i)] for i in range(len(results[0].persons))]
    for vi in range(1, len(results)):
        pairs = match_people(results[0].persons, results[vi].persons, body)
        for i, j in pairs:
            groups[i].append((vi, j))
    mvs = MultiViewSet(views=results, correspondences=groups)

    fused = []
    for group in groups:
        states = [results[vi].persons[pi] for vi, pi in group]
        if len(states) == 1:
            fused.append(FusedPerson(state=states[0], source=group,
                                     alignments=[(np.eye(3), np.zeros(3))],
                                     view_states={group[0][0]: states[0]},
                                     per_view_t={group[0][0]: states[0].t},
                                     residuals={group[0][0]: 0.0}))
            continue
        theta0, transforms = rigid_align_init(states, body)

        beta_params, beta_clamp = _fused_params(
            [s.params.get("shape") for s in states], [s.beta for s in states])
        beta = beta_clamp if beta_params is None else beta_params.mu.copy()
        gamma_params, gamma_clamp = _fused_params(
            [s.params.get("expression") for s in states],
            [s.gamma for s in states])
        gamma = gamma_clamp if gamma_params is None else gamma_params.mu.copy()

        pose_sources = [(vi, s) for (vi, _), s in zip(group, states)
                        if s.params.get("pose") is not None]
        if pose_sources:
            idx = [i for i, s in enumerate(states)
                   if s.params.get("pose") is not None]
            root = fuse_pose_multiview(
                [(transforms[i][0],
                  states[i].params["pose"][0].assembled()[None])
                 for i in idx])[0]
            bones = fuse_pose_multiview(
                [(theta0[i],
                  np.stack([p.assembled()
                            for p in states[i].params["pose"][1:]]))
                 for i in idx])
            world = np.concatenate([root[None], bones], axis=0)
        else:
            world = transforms[0][0] @ world_from_root_body(
                body.parents, states[0].theta)
        theta = root_body_from_world(body.parents, world)

        ts = [transforms[i][0] @ s.t + transforms[i][1]
              for i, s in enumerate(states)]
        t_fused = np.mean(ts, axis=0)

        fused_params = {"shape": beta_params, "expression": gamma_params,
                        "pose": None, "center2d": None, "encoded_depth": None}
        view_states = {}
        for i, (vi, _) in enumerate(group):
            s = states[i]
            world_i = transforms[i][0].T @ world
            view_states[vi] = PersonState(
                cell=s.cell, score=s.score,
                theta=root_body_from_world(body.parents, world_i),
                beta=np.asarray(beta), gamma=np.asarray(gamma),
                encoded_depth=s.encoded_depth,
                center2d_val=s.center2d_val, k=s.k, grid_shape=s.grid_shape,
                params=dict(fused_params), clamped=s.clamped)
        per_view_t = {vi: st.t for vi, st in view_states.items()}

        ref = states[0]
        k0 = ref.k
        head_px = project(k0, t_fused)
        fused_state = PersonState(
            cell=ref.cell, score=max(s.score for s in states), theta=theta,
            beta=np.asarray(beta), gamma=np.asarray(gamma),
            encoded_depth=float(np.log(t_fused[2] / k0.f)),
            center2d_val=center2d_value(head_px, ref.cell, ref.grid_shape,
                                        k0.image_size),
            k=k0, grid_shape=ref.grid_shape, params=dict(fused_params),
            clamped=frozenset().union(*[s.clamped for s in states]))

        aligned = [states[i].body_points(body) @ transforms[i][0].T
                   + transforms[i][1] for i in range(len(states))]
        consensus = np.mean(aligned, axis=0)
        residuals = {vi: float(np.sqrt(((aligned[i] - consensus) ** 2)
                                       .sum(axis=1).mean()))
                     for i, (vi, _) in enumerate(group)}
        fused.append(FusedPerson(state=fused_state, source=group,
                                 alignments=transforms,
                                 view_states=view_states,
                                 per_view_t=per_view_t, residuals=residuals))
    return FusionResult(fused=fused, multi_view=mvs)
