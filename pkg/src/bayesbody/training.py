"""Head optimization: cross-entropy plus mode-guiding losses, Adam updates.

The objective is L = L_prob + L_mesh + L_reproj.  L_prob is the negative mean
joint log density of ground truth under the network (detection cells without
a person contribute their miss terms).  The mode-guiding losses differentiate
through the decoded conditional modes themselves: attribute modes are decoded
at the ground-truth cells on the tape, the body is posed by forward
kinematics, and the points are compared to ground truth either human-centered
(L_mesh) or reprojected into the assumed camera (L_reproj).

Half of the batches assume the true camera; the other half assume a camera
whose horizontal field of view is drawn uniformly from `fov_range_deg` (one
draw per batch).  On those batches the ground-truth assignment is re-expressed
under the assumed camera (encoded depth becomes ln(d / f_input)), which is
what teaches the size/distance/focal ambiguity, and L_mesh is skipped because
metric shape is not identifiable without the true camera.

Reprojection uses a depth floor: predicted points with z below 1e-3 project
as if at z = 1e-3, and a hinge penalty `behind_penalty * mean(relu(1e-3 - z))`
is added so violating points still feel a pushback gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body import CameraIntrinsics, KinematicBody, default_body, project_points
from .errors import (DimensionMismatch, EmptyList, NonFiniteLoss,
                     ParamOutOfRange)
from .graph import Assignment, BayesNet, camera_ray_augment, joint_log_density_var
from .synthdata import gt_assignment

__all__ = [
    "LossBreakdown",
    "TrainConfig",
    "Adam",
    "loss_prob",
    "loss_reproj",
    "loss_mesh",
    "train",
    "write_loss_csv",
]

_Z_FLOOR = 1e-3


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step loss terms; total = l_prob + l_mesh + l_reproj exactly."""

    l_prob: float
    l_mesh: float
    l_reproj: float
    total: float


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-6
    batch_size: int = 16
    steps: int = 100
    seed: int = 0
    fov_range_deg: tuple = (5.0, 170.0)
    gt_intrinsics_fraction: float = 0.5
    point_norm: str = "l1"           # per-point norm in L_mesh / L_reproj
    behind_penalty: float = 1.0      # weight of the depth-floor hinge term
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ParamOutOfRange("batch_size must be >= 1 and steps >= 0")
        if not (0.0 <= self.gt_intrinsics_fraction <= 1.0):
            raise ParamOutOfRange("gt_intrinsics_fraction must be in [0, 1]")
        lo, hi = self.fov_range_deg
        if not (0.0 < lo <= hi < 180.0):
            raise ParamOutOfRange("fov range must satisfy 0 < lo <= hi < 180")
        if self.point_norm not in ("l1", "l2"):
            raise ParamOutOfRange("point_norm must be 'l1' or 'l2'")


class Adam:
    """Adam moments over a fixed parameter list; reads .grad, writes .value."""

    def __init__(self, params: list, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(learning_rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = (self.lr * (self.m[i] / bc1)
                      / (np.sqrt(self.v[i] / bc2) + self.eps))
            p.value = p.value - update


# cross-entropy objective ------------------------------------------------------


def loss_prob(net: BayesNet, batch: list) -> ad.Var:
    """-(1/n) sum of joint log densities over (obs, Assignment) pairs.

    Parameters
    ----------
    net : BayesNet
        Network whose heads receive gradients.
    batch : list
        Pairs of (observation, ground-truth Assignment); the assignment's
        intrinsics are whatever camera the batch assumes.

    Returns
    -------
    Var
        Scalar tape node; call `ad.backward` on it (or on a sum including it).
    """
    if not batch:
        raise EmptyList("loss_prob needs at least one scene")
    totals = []
    for obs, asg in batch:
        total, _, _ = joint_log_density_var(net, asg, obs)
        totals.append(total)
    acc = totals[0]
    for t in totals[1:]:
        acc = ad.add(acc, t)
    return ad.mul(acc, -1.0 / len(batch))


# differentiable mode decode at ground-truth cells ------------------------------


def _mode_values(net: BayesNet, items: list) -> dict:
    """Tape-valued conditional modes for each (obs, k_input, person) row.

    Rows are persons; each row's detection features are the person's patch
    feature augmented with the assumed camera's ray.  Gaussian modes are the
    predicted means; the pose mode is the nearest-rotation projection of the
    per-bone mode blocks.  Parents feed children their decoded modes.
    """
    feats = []
    for obs, k_input, person in items:
        h, w, _ = obs.patch_features.shape
        u, v = person.cell
        feats.append(camera_ray_augment(obs.patch_features[v, u],
                                        (u, v), k_input, (h, w)))
    feats = np.stack(feats)
    n = feats.shape[0]

    values: dict = {}
    for name in net.node_order[3:]:
        spec = net.nodes[name]
        parent_vals = [feats if p == "detection_features" else values[p]
                       for p in spec.parents]
        raw = net.heads[name].forward(parent_vals)
        if spec.family == "gaussian":
            values[name] = raw[:, :spec.dim]
        else:
            blocks = ad.reshape(raw, (n, spec.dim, 21))
            values[name] = ad.procrustes(
                ad.reshape(blocks[:, :, 0:9], (n, spec.dim, 3, 3)))
    return values


def _fk_points_var(body: KinematicBody, pose: ad.Var, beta: ad.Var,
                   t) -> ad.Var:
    """Batched tape forward kinematics -> (n, J + 2(J-1), 3) body points.

    `pose` is (n, J, 3, 3) in node-value form (root + body-frame bones); `t`
    is an (n, 3) root position (Var or constant).
    """
    n = beta.value.shape[0]
    root = pose[:, 0:1]
    world = ad.concat([root, ad.matmul(root, pose[:, 1:])], axis=1)
    beta_ext = ad.concat([np.ones((n, 1)), beta], axis=1)
    basis_flat = body.basis.transpose(1, 0, 2).reshape(1 + body.beta_dim, -1)
    offsets = ad.reshape(ad.matmul(beta_ext, basis_flat),
                         (n, body.n_joints, 3))
    pos = [None] * body.n_joints
    pos[0] = t if isinstance(t, ad.Var) else ad.var(np.asarray(t, float))
    for j in range(1, body.n_joints):
        par = int(body.parents[j])
        step = ad.matmul(world[:, par], ad.reshape(offsets[:, j], (n, 3, 1)))
        pos[j] = ad.add(pos[par], ad.reshape(step, (n, 3)))
    joints = ad.stack(pos, axis=1)
    par = body.parents[1:]
    parts = [joints]
    for frac in (1.0 / 3.0, 2.0 / 3.0):
        base = joints[:, par]
        parts.append(ad.add(base, ad.mul(ad.sub(joints[:, 1:], base), frac)))
    return ad.concat(parts, axis=1)


def _derived_t_var(items: list, values: dict) -> ad.Var:
    """Batched root position from predicted center offset and encoded depth."""
    centers, halves, ps, fs = [], [], [], []
    for obs, k_input, person in items:
        h, w, _ = obs.patch_features.shape
        wpx, hpx = k_input.image_size
        cw, ch = wpx / w, hpx / h
        u, v = person.cell
        centers.append([(u + 0.5) * cw, (v + 0.5) * ch])
        halves.append([cw / 2.0, ch / 2.0])
        ps.append(k_input.p)
        fs.append([k_input.f])
    centers, halves = np.array(centers), np.array(halves)
    ps, fs = np.array(ps), np.array(fs)
    px = ad.add(ad.mul(values["center2d"], halves), centers)
    d = ad.mul(ad.exp(values["encoded_depth"]), fs)
    xy = ad.mul(ad.sub(px, ps), ad.div(d, fs))
    return ad.concat([xy, d], axis=1)


def _point_residual(point_norm: str, diff: ad.Var) -> ad.Var:
    """Mean over points of the per-point norm of (n, V, c) differences."""
    if point_norm == "l1":
        return ad.mean_(ad.sum_(ad.abs_(diff), axis=-1))
    return ad.mean_(ad.sqrt(ad.add(ad.sum_(ad.square(diff), axis=-1), 1e-12)))


def _gt_person_of(obs, person):
    for gt in obs.gt:
        if gt.cell == person.cell:
            return gt
    raise DimensionMismatch(f"no ground-truth person at cell {person.cell}")


def _reproj_loss_from(values: dict, items: list, body: KinematicBody,
                      point_norm: str, behind_penalty: float) -> ad.Var:
    t_hat = _derived_t_var(items, values)
    points = _fk_points_var(body, values["pose"], values["shape"], t_hat)
    fs = np.array([it[1].f for it in items]).reshape(-1, 1, 1)
    ps = np.stack([it[1].p for it in items])[:, None, :]
    xy = points[:, :, :2]
    z = points[:, :, 2:]
    proj = ad.add(ad.mul(ad.div(xy, ad.clip_min(z, _Z_FLOOR)), fs), ps)
    targets = []
    for obs, _, person in items:
        gt = _gt_person_of(obs, person)
        targets.append(project_points(
            obs.k, body.forward_kinematics(gt.theta_local, gt.beta, gt.t)))
    loss = _point_residual(point_norm, ad.sub(proj, np.stack(targets)))
    pen = ad.mean_(ad.relu(ad.sub(_Z_FLOOR, z)))
    return ad.add(loss, ad.mul(pen, behind_penalty))


def _mesh_loss_from(values: dict, items: list, body: KinematicBody,
                    point_norm: str) -> ad.Var:
    points = _fk_points_var(body, values["pose"], values["shape"],
                            np.zeros((len(items), 3)))
    targets = []
    for obs, _, person in items:
        gt = _gt_person_of(obs, person)
        targets.append(body.forward_kinematics(gt.theta_local, gt.beta,
                                               np.zeros(3)))
    return _point_residual(point_norm, ad.sub(points, np.stack(targets)))


def _items_of(views: list, k_inputs: list, assignments: list) -> list:
    items = []
    for obs, k_input, asg in zip(views, k_inputs, assignments):
        for person in asg.persons:
            items.append((obs, k_input, person))
    return items


def loss_reproj(net: BayesNet, obs, k_input: CameraIntrinsics, gt: Assignment,
                body: KinematicBody | None = None, point_norm: str = "l1",
                behind_penalty: float = 1.0) -> ad.Var:
    """Mean per-point reprojection residual of the decoded modes (tape node).

    Predicted points are projected under the assumed camera `k_input`,
    ground-truth points under the observation's true camera.  Predicted
    depths below the 1e-3 floor are clamped for projection and charged the
    hinge penalty described in the module docstring.
    """
    body = body or default_body()
    items = _items_of([obs], [k_input], [gt])
    if not items:
        raise EmptyList("loss_reproj needs at least one annotated person")
    return _reproj_loss_from(_mode_values(net, items), items, body,
                             point_norm, behind_penalty)


def loss_mesh(net: BayesNet, obs, gt: Assignment,
              body: KinematicBody | None = None,
              point_norm: str = "l1") -> ad.Var:
    """Mean human-centered point residual of the decoded modes (tape node).

    Both prediction and ground truth are expressed relative to their own root
    position, so translation errors cancel by construction.
    """
    body = body or default_body()
    items = _items_of([obs], [gt.intrinsics], [gt])
    if not items:
        raise EmptyList("loss_mesh needs at least one annotated person")
    return _mesh_loss_from(_mode_values(net, items), items, body, point_norm)


# the training loop --------------------------------------------------------------


def _fov_camera(fov_deg: float, image_size: tuple) -> CameraIntrinsics:
    """Assumed camera with the given horizontal field of view, centered."""
    wpx, hpx = image_size
    f = (wpx / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return CameraIntrinsics(f=f, p=np.array([wpx / 2.0, hpx / 2.0]),
                            image_size=(wpx, hpx))


def train(net: BayesNet, dataset: list, config: TrainConfig,
          body: KinematicBody | None = None, loss_csv: str | None = None,
          checkpoint: str | None = None) -> list:
    """Mini-batch Adam on all head parameters; returns the loss curve.

    Parameters
    ----------
    net : BayesNet
        Updated in place.
    dataset : list
        Scenes (every view is pooled into one observation pool) or bare
        observations.
    config : TrainConfig
        Optimization settings; runs are deterministic under config.seed.
    body : KinematicBody, optional
        Body for the mode-guiding losses; the shared default if omitted.
    loss_csv, checkpoint : str, optional
        Output paths for the loss curve and the final parameters.

    Returns
    -------
    list of LossBreakdown
        One entry per step.

    Raises
    ------
    NonFiniteLoss
        If any batch produces a non-finite total, naming the batch.
    """
    if not dataset:
        raise EmptyList("training needs a nonempty dataset")
    body = body or default_body()
    views = []
    for entry in dataset:
        views.extend(entry.views if hasattr(entry, "views") else [entry])
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.parameters, config.learning_rate,
               config.adam_beta1, config.adam_beta2, config.adam_eps)
    curve = []
    for step in range(config.steps):
        idx = rng.integers(0, len(views), size=config.batch_size)
        batch_views = [views[i] for i in idx]
        use_gt_k = bool(rng.uniform() < config.gt_intrinsics_fraction)
        if use_gt_k:
            k_inputs = [v.k for v in batch_views]
        else:
            fov = float(rng.uniform(*config.fov_range_deg))
            k_inputs = [_fov_camera(fov, v.k.image_size) for v in batch_views]
        assignments = [gt_assignment(v, k_input=k, body=body)
                       for v, k in zip(batch_views, k_inputs)]

        lp = loss_prob(net, list(zip(batch_views, assignments)))
        items = _items_of(batch_views, k_inputs, assignments)
        values = _mode_values(net, items)
        lm = _mesh_loss_from(values, items, body, config.point_norm) \
            if use_gt_k else None
        lr_ = _reproj_loss_from(values, items, body, config.point_norm,
                                config.behind_penalty)

        total = lp if lm is None else ad.add(lp, lm)
        total = ad.add(total, lr_)
        if not np.isfinite(total.value):
            raise NonFiniteLoss(f"non-finite total loss in batch {step}")

        opt.zero_grad()
        ad.backward(total)
        opt.step()
        l_prob = float(lp.value)
        l_mesh = float(lm.value) if lm is not None else 0.0
        l_reproj = float(lr_.value)
        curve.append(LossBreakdown(l_prob=l_prob, l_mesh=l_mesh,
                                   l_reproj=l_reproj,
                                   total=l_prob + l_mesh + l_reproj))
    if loss_csv is not None:
        write_loss_csv(curve, loss_csv)
    if checkpoint is not None:
        net.save(checkpoint)
    return curve


def write_loss_csv(curve: list, path: str) -> None:
    """Write the loss curve as CSV with full-precision floats."""
    lines = ["step,l_prob,l_mesh,l_reproj,total"]
    for i, row in enumerate(curve):
        lines.append(f"{i},{row.l_prob!r},{row.l_mesh!r},"
                     f"{row.l_reproj!r},{row.total!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
