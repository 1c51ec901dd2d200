"""The Bayesian network over camera and human attributes.

Nodes and connectivity: `intrinsics` is conditioned on the observation's
global scene feature; `detection_features` is a deterministic node that
augments each patch feature with the camera ray through its cell (this is how
intrinsics condition everything downstream); `detection_score` is a per-cell
Bernoulli; the per-person attribute nodes (`center2d`, `encoded_depth`,
`shape`, `expression`, `pose`) form a DAG chosen by a connectivity preset.

Every stochastic node owns an MLP head mapping its parents' values to
distribution parameters: out = W_out relu(sum_p W_p v_p + b_hidden) + b_out.
Output weights start at zero; the pose head's output bias starts at the
identity rotation per bone so the Procrustes decode never sees an all-zero
matrix at initialization.

Value conventions (decode plumbing happens in `inference`):
- `center2d` values are offsets from the cell center in half-cell units.
- `encoded_depth` is ln(d/f) directly.
- `pose` values stack J rotation matrices: slot 0 is the root orientation in
  camera frame; slots 1..J-1 are bone orientations in the root's body frame.
- the intrinsics node's value is a CameraIntrinsics; its density is log-normal
  over f (centered at ln 1000) times a Gaussian over the principal point in
  half-image units.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .body import CameraIntrinsics
from .detection import DetectionGrid
from .distributions import (DiagGaussianParams, FisherNormalizer,
                            LogNormalParams, MatrixFisherParams,
                            gaussian_log_density, lognormal_log_density,
                            lognormal_mode)
from .errors import (DegenerateInput, DimensionMismatch, IncompleteAssignment,
                     MissingParent, ParamOutOfRange)
from .so3 import Rotation, build_grid, procrustes_matrices

__all__ = [
    "NodeSpec",
    "MlpHead",
    "CameraParams",
    "BayesNet",
    "PersonAssignment",
    "Assignment",
    "PRESETS",
    "ATTRIBUTE_NODES",
    "ED_BASE",
    "LN_F_BASE",
    "camera_ray_augment",
    "camera_log_density",
    "camera_mode",
    "predict_node",
    "detection_scores",
    "joint_log_density",
    "per_person_log_densities",
    "joint_log_density_var",
]

LN_F_BASE = float(np.log(1000.0))

# Freshly initialized heads output zeros, so decode-time/bias offsets place
# each family in its natural regime: focal lengths near 1000 px and encoded
# depths near a subject standing 3.5 m from that canonical camera.
ED_BASE = float(np.log(3.5 / 1000.0))

ATTRIBUTE_NODES = ("center2d", "encoded_depth", "shape", "expression", "pose")

# Cross-attribute edges per preset; every attribute node additionally has
# detection_features as its first parent.
PRESETS = {
    "naive_bayes": (),
    "condimen": (("shape", "encoded_depth"), ("shape", "pose")),
    "variant1": (("shape", "encoded_depth"), ("shape", "pose"),
                 ("shape", "expression"), ("encoded_depth", "pose"),
                 ("encoded_depth", "center2d")),
    "variant2": (("encoded_depth", "shape"), ("shape", "pose"),
                 ("shape", "expression"), ("encoded_depth", "pose"),
                 ("encoded_depth", "center2d")),
}


@dataclass(frozen=True)
class NodeSpec:
    """One node: name, distribution family, value dimension, ordered parents."""

    name: str
    family: str
    dim: int
    parents: tuple


@dataclass(frozen=True, eq=False)
class CameraParams:
    """Intrinsics node parameters: log-normal focal + Gaussian principal point.

    The principal-point Gaussian lives in half-image units: z = (p - center) /
    (w/2, h/2).  `camera_log_density` adds the constant Jacobian so the value
    is a proper density over pixels.
    """

    focal: LogNormalParams
    principal: DiagGaussianParams


def camera_log_density(params: CameraParams, k: CameraIntrinsics) -> float:
    w, h = k.image_size
    z = (k.p - np.array([w / 2.0, h / 2.0])) / np.array([w / 2.0, h / 2.0])
    return (lognormal_log_density(params.focal, k.f)
            + gaussian_log_density(params.principal, z)
            - np.log(w / 2.0) - np.log(h / 2.0))


def camera_mode(params: CameraParams, image_size: tuple) -> CameraIntrinsics:
    """Componentwise mode, principal point clipped into the image."""
    w, h = image_size
    f = lognormal_mode(params.focal)
    half = np.array([w / 2.0, h / 2.0])
    p = np.clip(half + params.principal.mode() * half, 0.0, [w, h])
    return CameraIntrinsics(f=f, p=p, image_size=image_size)


def camera_ray_augment(patch_feature: np.ndarray, cell: tuple,
                       k: CameraIntrinsics, grid_shape: tuple) -> np.ndarray:
    """Append the unit camera ray through the cell center to a patch feature.

    `cell` is (u, v) on an (h, w) grid over the full image; the ray through
    pixel q is normalize(((q - p) / f, 1)).
    """
    h, w = grid_shape
    u, v = cell
    if not (0 <= u < w and 0 <= v < h):
        raise ParamOutOfRange(f"cell {cell} outside {w}x{h} grid")
    wpx, hpx = k.image_size
    center = np.array([(u + 0.5) * wpx / w, (v + 0.5) * hpx / h])
    ray = np.concatenate([(center - k.p) / k.f, [1.0]])
    ray /= np.linalg.norm(ray)
    return np.concatenate([np.asarray(patch_feature, dtype=float), ray])


def _augment_all(patch_features: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Camera-ray augmentation of every cell: (h*w, fdim+3), rows v*w + u."""
    h, w, fdim = patch_features.shape
    wpx, hpx = k.image_size
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    cx = (us + 0.5) * wpx / w
    cy = (vs + 0.5) * hpx / h
    rays = np.stack([(cx - k.p[0]) / k.f, (cy - k.p[1]) / k.f,
                     np.ones_like(cx)], axis=-1)
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    return np.concatenate([patch_features, rays], axis=-1).reshape(h * w, fdim + 3)


class MlpHead:
    """Single-hidden-layer head: out = W_out relu(sum_p v_p W_p + b_h) + b_out."""

    def __init__(self, parent_dims, out_dim: int, hidden_dim: int,
                 rng: np.random.Generator, out_bias=None):
        self.parent_dims = tuple(int(d) for d in parent_dims)
        self.out_dim = int(out_dim)
        self.hidden_dim = int(hidden_dim)
        self.w_in = [ad.var(rng.normal(0.0, np.sqrt(2.0 / d), size=(d, hidden_dim)))
                     for d in self.parent_dims]
        self.b_hidden = ad.var(np.zeros(hidden_dim))
        self.w_out = ad.var(np.zeros((hidden_dim, out_dim)))
        bias = np.zeros(out_dim) if out_bias is None else np.asarray(out_bias, float)
        if bias.shape != (out_dim,):
            raise DimensionMismatch(f"output bias must have dim {out_dim}")
        self.b_out = ad.var(bias.copy())

    @property
    def params(self) -> list:
        return list(self.w_in) + [self.b_hidden, self.w_out, self.b_out]

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def forward(self, values) -> ad.Var:
        """values: one (n, d_p) array or Var per parent -> (n, out_dim) Var."""
        if len(values) != len(self.w_in):
            raise MissingParent(
                f"head expects {len(self.w_in)} parent values, got {len(values)}")
        acc = None
        for v, w in zip(values, self.w_in):
            arr = v.value if isinstance(v, ad.Var) else np.asarray(v, float)
            if arr.ndim != 2 or arr.shape[1] != w.value.shape[0]:
                raise DimensionMismatch(
                    f"parent value shape {arr.shape} incompatible with "
                    f"projection {w.value.shape}")
            term = ad.matmul(v if isinstance(v, ad.Var) else arr, w)
            acc = term if acc is None else ad.add(acc, term)
        hidden = ad.relu(ad.add(acc, self.b_hidden))
        return ad.add(ad.matmul(hidden, self.w_out), self.b_out)

    def to_dict(self) -> dict:
        return {
            "parent_dims": list(self.parent_dims),
            "out_dim": self.out_dim,
            "hidden_dim": self.hidden_dim,
            "w_in": [w.value.tolist() for w in self.w_in],
            "b_hidden": self.b_hidden.value.tolist(),
            "w_out": self.w_out.value.tolist(),
            "b_out": self.b_out.value.tolist(),
        }

    def load_state(self, d: dict) -> None:
        for w, stored in zip(self.w_in, d["w_in"]):
            arr = np.asarray(stored, dtype=float)
            if arr.shape != w.value.shape:
                raise DimensionMismatch(
                    f"checkpoint weight shape {arr.shape} != {w.value.shape}")
            w.value = arr
        self.b_hidden.value = np.asarray(d["b_hidden"], dtype=float)
        self.w_out.value = np.asarray(d["w_out"], dtype=float)
        self.b_out.value = np.asarray(d["b_out"], dtype=float)


def _pose_out_bias(n_bones: int) -> np.ndarray:
    """Per-bone bias (mode = I, spread axes = I, lambda_raw = 0)."""
    eye = np.eye(3).reshape(9)
    block = np.concatenate([eye, eye, np.zeros(3)])
    return np.tile(block, n_bones)


def _toposort(edges, names, priority) -> list:
    """Kahn's algorithm with a fixed priority tie-break; raises on cycles."""
    names = list(names)
    indeg = {n: 0 for n in names}
    children = {n: [] for n in names}
    for a, b in edges:
        indeg[b] += 1
        children[a].append(b)
    ready = sorted([n for n in names if indeg[n] == 0], key=priority)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort(key=priority)
    if len(order) != len(names):
        raise DegenerateInput(f"connectivity contains a cycle: {edges}")
    return order


class BayesNet:
    """Attribute nodes, preset connectivity, and per-node MLP heads."""

    FORMAT_VERSION = 1

    def __init__(self, preset: str = "condimen", feature_dim: int = 64,
                 hidden_dim: int = 256, n_bones: int = 53, beta_dim: int = 11,
                 gamma_dim: int = 10, seed: int = 0, grid_level: int = 3):
        if preset not in PRESETS:
            raise ParamOutOfRange(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        self.preset = preset
        self.feature_dim = int(feature_dim)
        self.hidden_dim = int(hidden_dim)
        self.n_bones = int(n_bones)
        self.beta_dim = int(beta_dim)
        self.gamma_dim = int(gamma_dim)
        self.seed = int(seed)
        self.grid_level = int(grid_level)
        self._normalizer = None

        cross = PRESETS[preset]
        parents = {n: ["detection_features"] for n in ATTRIBUTE_NODES}
        for a, b in cross:
            parents[b].append(a)
        prio = {n: i for i, n in enumerate(ATTRIBUTE_NODES)}
        attr_order = _toposort(cross, ATTRIBUTE_NODES, lambda n: prio[n])
        # keep each node's cross parents in canonical attribute order
        dims = {"center2d": 2, "encoded_depth": 1, "shape": self.beta_dim,
                "expression": self.gamma_dim, "pose": self.n_bones}
        fam = {"center2d": "gaussian", "encoded_depth": "gaussian",
               "shape": "gaussian", "expression": "gaussian", "pose": "fisher"}
        self.nodes: dict = {}
        self.nodes["intrinsics"] = NodeSpec("intrinsics", "camera", 3,
                                            ("global_feature",))
        self.nodes["detection_features"] = NodeSpec(
            "detection_features", "deterministic", self.feature_dim + 3,
            ("intrinsics",))
        self.nodes["detection_score"] = NodeSpec(
            "detection_score", "bernoulli", 1, ("detection_features",))
        for n in attr_order:
            cross_parents = sorted(parents[n][1:], key=lambda p: prio[p])
            self.nodes[n] = NodeSpec(n, fam[n], dims[n],
                                     ("detection_features", *cross_parents))
        self.node_order = ["intrinsics", "detection_features",
                           "detection_score"] + attr_order

        rng = np.random.default_rng(seed)
        self.heads: dict = {}
        for name in self.node_order:
            spec = self.nodes[name]
            if spec.family == "deterministic":
                continue
            pdims = [self._parent_dim(p) for p in spec.parents]
            out_bias = None
            if spec.family == "fisher":
                out_bias = _pose_out_bias(self.n_bones)
            elif name == "encoded_depth":
                out_bias = np.array([ED_BASE, 0.0])
            self.heads[name] = MlpHead(pdims, self._head_out_dim(spec),
                                       hidden_dim, rng, out_bias=out_bias)

    def _parent_dim(self, parent: str) -> int:
        if parent == "global_feature":
            return self.feature_dim
        if parent == "detection_features":
            return self.feature_dim + 3
        return self.nodes[parent].dim

    @staticmethod
    def _head_out_dim(spec: NodeSpec) -> int:
        if spec.family == "gaussian":
            return 2 * spec.dim
        if spec.family == "camera":
            return 6
        if spec.family == "fisher":
            return 21 * spec.dim
        if spec.family == "bernoulli":
            return 1
        raise ParamOutOfRange(f"unknown family {spec.family!r}")

    @property
    def n_params(self) -> int:
        return sum(h.n_params for h in self.heads.values())

    @property
    def parameters(self) -> list:
        """All head parameters as Vars, in deterministic order."""
        out = []
        for name in self.node_order:
            if name in self.heads:
                out.extend(self.heads[name].params)
        return out

    @property
    def normalizer(self) -> FisherNormalizer:
        if self._normalizer is None:
            self._normalizer = FisherNormalizer(build_grid(self.grid_level))
        return self._normalizer

    # persistence -------------------------------------------------------

    def save(self, path: str) -> None:
        data = {
            "format_version": self.FORMAT_VERSION,
            "kind": "bayesbody-checkpoint",
            "preset": self.preset,
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "n_bones": self.n_bones,
            "beta_dim": self.beta_dim,
            "gamma_dim": self.gamma_dim,
            "seed": self.seed,
            "grid_level": self.grid_level,
            "heads": {name: h.to_dict() for name, h in self.heads.items()},
        }
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(data, fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "BayesNet":
        with open(path) as fh:
            data = json.load(fh)
        if data.get("kind") != "bayesbody-checkpoint":
            raise DegenerateInput(f"{path} is not a checkpoint file")
        if data.get("format_version") != cls.FORMAT_VERSION:
            raise DegenerateInput(
                f"unsupported checkpoint version {data.get('format_version')}")
        net = cls(preset=data["preset"], feature_dim=data["feature_dim"],
                  hidden_dim=data["hidden_dim"], n_bones=data["n_bones"],
                  beta_dim=data["beta_dim"], gamma_dim=data["gamma_dim"],
                  seed=data["seed"], grid_level=data["grid_level"])
        for name, head in net.heads.items():
            head.load_state(data["heads"][name])
        return net


# parameter decoding ---------------------------------------------------------


def _decode_params(net: BayesNet, spec: NodeSpec, raw: np.ndarray):
    if spec.family == "gaussian":
        d = spec.dim
        return DiagGaussianParams(mu=raw[:d], sigma_raw=raw[d:])
    if spec.family == "camera":
        return CameraParams(
            focal=LogNormalParams(mu_log=raw[0] + LN_F_BASE, sigma_raw=raw[1]),
            principal=DiagGaussianParams(mu=raw[2:4], sigma_raw=raw[4:6]))
    if spec.family == "bernoulli":
        return float(1.0 / (1.0 + np.exp(-raw[0])))
    if spec.family == "fisher":
        blocks = raw.reshape(spec.dim, 21)
        modes = procrustes_matrices(blocks[:, :9].reshape(-1, 3, 3),
                                    on_degenerate="identity")
        axes = procrustes_matrices(blocks[:, 9:18].reshape(-1, 3, 3),
                                   on_degenerate="identity")
        return [MatrixFisherParams(r_mode=Rotation.from_matrix(modes[j]),
                                   spread_axes=Rotation.from_matrix(axes[j]),
                                   lambda_raw=blocks[j, 18:])
                for j in range(spec.dim)]
    raise ParamOutOfRange(f"unknown family {spec.family!r}")


def predict_node(net: BayesNet, node: str, parent_values: dict):
    """Distribution parameters of `node` given exactly its parents' values."""
    if node not in net.nodes or node not in net.heads:
        raise MissingParent(f"{node!r} is not a stochastic node of this network")
    spec = net.nodes[node]
    missing = [p for p in spec.parents if p not in parent_values]
    if missing:
        raise MissingParent(f"node {node!r} missing parent values {missing}")
    extra = [p for p in parent_values if p not in spec.parents]
    if extra:
        raise DimensionMismatch(f"node {node!r} got unexpected parents {extra}")
    vals = []
    for p in spec.parents:
        v = np.asarray(parent_values[p], dtype=float).reshape(1, -1)
        if v.shape[1] != net._parent_dim(p):
            raise DimensionMismatch(
                f"parent {p!r} of {node!r} must have dim {net._parent_dim(p)}, "
                f"got {v.shape[1]}")
        vals.append(v)
    with ad.no_grad():
        raw = net.heads[node].forward(vals).value[0]
    return _decode_params(net, spec, raw)


def detection_scores(net: BayesNet, obs, k: CameraIntrinsics) -> DetectionGrid:
    """Per-cell detection probabilities under intrinsics k."""
    h, w, _ = obs.patch_features.shape
    aug = _augment_all(obs.patch_features, k)
    with ad.no_grad():
        logits = net.heads["detection_score"].forward([aug]).value[:, 0]
    return DetectionGrid(1.0 / (1.0 + np.exp(-logits)).reshape(h, w))


# joint density ---------------------------------------------------------------


@dataclass
class PersonAssignment:
    """Per-person node values (in node-value space, see module docstring)."""

    cell: tuple
    center2d: np.ndarray
    encoded_depth: float
    shape: np.ndarray
    expression: np.ndarray
    pose: np.ndarray          # (n_bones, 3, 3): root + body-frame bones

    def value_of(self, node: str):
        return getattr(self, node)


@dataclass
class Assignment:
    """Full assignment for a scene: intrinsics plus one entry per person."""

    intrinsics: CameraIntrinsics
    persons: list = field(default_factory=list)


def _validate_assignment(net: BayesNet, values: Assignment, grid_shape) -> None:
    if not isinstance(values.intrinsics, CameraIntrinsics):
        raise IncompleteAssignment("assignment lacks intrinsics")
    h, w = grid_shape
    for i, person in enumerate(values.persons):
        u, v = person.cell
        if not (0 <= u < w and 0 <= v < h):
            raise IncompleteAssignment(f"person {i} cell {person.cell} outside grid")
        checks = {"center2d": (2,), "encoded_depth": (1,),
                  "shape": (net.beta_dim,), "expression": (net.gamma_dim,),
                  "pose": (net.n_bones, 3, 3)}
        for name, shape in checks.items():
            val = np.atleast_1d(np.asarray(person.value_of(name), dtype=float))
            if name == "pose":
                val = np.asarray(person.value_of(name), dtype=float)
            if val.shape != shape:
                raise IncompleteAssignment(
                    f"person {i} node {name!r} has shape {val.shape}, expected {shape}")


def _gaussian_logpdf_var(out: ad.Var, x: np.ndarray, dim: int) -> ad.Var:
    """(n, 2D) head output + (n, D) values -> (n,) log densities."""
    mu = out[:, :dim]
    sigma = 1.0 + ad.exp(out[:, dim:])
    z = ad.div(ad.sub(x, mu), sigma)
    quad = ad.sum_(ad.square(z), axis=1)
    logdet = ad.sum_(ad.log(sigma), axis=1)
    const = 0.5 * dim * np.log(2.0 * np.pi)
    return ad.sub(ad.mul(quad, -0.5), ad.add(logdet, const))


def _camera_logpdf_var(out: ad.Var, k: CameraIntrinsics) -> ad.Var:
    """(1, 6) head output -> scalar log density at k (over f and p in pixels)."""
    w, h = k.image_size
    half = np.array([w / 2.0, h / 2.0])
    lnf = np.log(k.f)
    mu_log = ad.add(out[0, 0], LN_F_BASE)
    sig_f = 1.0 + ad.exp(out[0, 1])
    zf = ad.div(ad.sub(lnf, mu_log), sig_f)
    term_f = ad.sub(ad.mul(ad.square(zf), -0.5),
                    ad.add(ad.log(sig_f), 0.5 * np.log(2.0 * np.pi) + lnf))
    zp = (k.p - half) / half
    term_p = _gaussian_logpdf_var(ad.reshape(out[:, 2:6], (1, 4)),
                                  zp.reshape(1, 2), 2)
    jac = -np.log(half[0]) - np.log(half[1])
    return ad.add(ad.add(term_f, ad.reshape(term_p, ())), jac)


def _pose_logpdf_var(net: BayesNet, out: ad.Var, r_gt: np.ndarray) -> ad.Var:
    """(n, 21J) head output + (n, J, 3, 3) rotations -> (n,) log densities."""
    n = r_gt.shape[0]
    j = net.n_bones
    blocks = ad.reshape(out, (n, j, 21))
    modes = ad.procrustes(ad.reshape(blocks[:, :, 0:9], (n, j, 3, 3)))
    axes = ad.procrustes(ad.reshape(blocks[:, :, 9:18], (n, j, 3, 3)))
    svals = ad.mul(ad.sigmoid(blocks[:, :, 18:21]), 2.0)
    scaled = ad.mul(axes, ad.reshape(svals, (n, j, 1, 3)))
    f = ad.matmul(modes, ad.matmul(scaled, ad.transpose_last2(axes)))
    logp = ad.fisher_log_prob(f, r_gt, net.normalizer)
    return ad.sum_(logp, axis=1)


def _bernoulli_logpdf_var(logits: ad.Var, y: np.ndarray) -> ad.Var:
    """(n, 1) logits + (n,) binary labels -> scalar sum of log likelihoods."""
    flat = ad.reshape(logits, (-1,))
    return ad.sum_(ad.sub(ad.mul(flat, y), ad.softplus(flat)))


def joint_log_density_var(net: BayesNet, values: Assignment, obs):
    """Tape-building joint log density.

    Returns (total, per_person, parts) where per_person lists each person's
    summed attribute-node terms and parts = (intrinsics term, detection term).
    """
    h, w, fdim = obs.patch_features.shape
    if fdim != net.feature_dim:
        raise DimensionMismatch(
            f"observation feature dim {fdim} != network feature dim {net.feature_dim}")
    _validate_assignment(net, values, (h, w))
    k = values.intrinsics

    out_k = net.heads["intrinsics"].forward(
        [np.asarray(obs.global_feature, float).reshape(1, -1)])
    term_k = _camera_logpdf_var(out_k, k)

    aug = _augment_all(obs.patch_features, k)
    logits = net.heads["detection_score"].forward([aug])
    y = np.zeros(h * w)
    for person in values.persons:
        u, v = person.cell
        y[v * w + u] = 1.0
    term_det = _bernoulli_logpdf_var(logits, y)

    n = len(values.persons)
    per_person = [None] * n
    if n:
        rows = np.array([p.cell[1] * w + p.cell[0] for p in values.persons])
        feats = aug[rows]
        assigned = {
            "center2d": np.stack([np.asarray(p.center2d, float) for p in values.persons]),
            "encoded_depth": np.array([[float(np.asarray(p.encoded_depth).reshape(()))]
                                       for p in values.persons]),
            "shape": np.stack([np.asarray(p.shape, float) for p in values.persons]),
            "expression": np.stack([np.asarray(p.expression, float) for p in values.persons]),
        }
        pose_gt = np.stack([np.asarray(p.pose, float) for p in values.persons])
        terms = []
        for name in net.node_order[3:]:
            spec = net.nodes[name]
            parent_vals = []
            for parent in spec.parents:
                if parent == "detection_features":
                    parent_vals.append(feats)
                else:
                    parent_vals.append(assigned[parent])
            out = net.heads[name].forward(parent_vals)
            if spec.family == "gaussian":
                terms.append(_gaussian_logpdf_var(out, assigned[name], spec.dim))
            else:
                terms.append(_pose_logpdf_var(net, out, pose_gt))
        acc = terms[0]
        for t in terms[1:]:
            acc = ad.add(acc, t)
        for i in range(n):
            per_person[i] = acc[i]
        total_people = ad.sum_(acc)
        total = ad.add(ad.add(term_k, term_det), total_people)
    else:
        total = ad.add(term_k, term_det)
    return total, per_person, (term_k, term_det)


def joint_log_density(net: BayesNet, values: Assignment, obs) -> float:
    """Sum of every node's conditional log density at the assigned values."""
    with ad.no_grad():
        total, _, _ = joint_log_density_var(net, values, obs)
    return float(total.value)


def per_person_log_densities(net: BayesNet, values: Assignment, obs) -> np.ndarray:
    """Each person's summed attribute-node conditional log densities."""
    with ad.no_grad():
        _, per_person, _ = joint_log_density_var(net, values, obs)
    return np.array([float(p.value) for p in per_person])
