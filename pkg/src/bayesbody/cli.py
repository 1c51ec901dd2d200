"""Experiment runner: dataset generation, training, evaluation, statistics.

One config object drives four verbs.  ``generate`` writes a seeded synthetic
dataset plus a stats report (including the ridge-probe ambiguity check),
``train`` fits a network on a dataset and writes a checkpoint plus a loss
curve CSV, ``eval`` scores a checkpoint under a set of conditioning regimes
and view counts and writes per-person records, per-regime reports, and one
comparison table, and ``stats`` recomputes the report for an existing dataset.

Conditioning regimes clamp ground-truth values during mode extraction:
``intr`` clamps the camera node to the true intrinsics, ``dist`` additionally
clamps each detected ground-truth cell's encoded depth to ln(d/f), and
``shape`` clamps the shape coefficients; clamps attach to the cell containing
each ground-truth person's head keypoint.

Configuration comes from an optional TOML or JSON file plus command-line flag
overrides; the resolved config is snapshotted as JSON next to the outputs.
Relative output paths are resolved under the ``BAYESBODY_OUTPUT_ROOT``
environment variable when it is set.  Every command is deterministic given
(config, seed): re-runs produce byte-identical CSV and JSON outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .body import KinematicBody, default_body
from .errors import BayesBodyError, EmptyList, NonFiniteLoss, ParamOutOfRange
from .graph import PRESETS, BayesNet
from .inference import KnownValues, PersonState, extract_mode, fuse_multiview
from .metrics import (EvalReport, PredictedPerson, TruthPerson, evaluate,
                      write_records_csv, write_report_json)
from .synthdata import (PROFILES, GeneratorConfig, ambiguity_probe,
                        dataset_stats, generate_dataset, load_dataset,
                        save_dataset)
from .training import TrainConfig, train

__all__ = [
    "REGIMES",
    "OUTPUT_ROOT_ENV",
    "ExperimentConfig",
    "ResolvedPaths",
    "resolve_paths",
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "save_config",
    "known_values_for",
    "cmd_generate",
    "cmd_train",
    "cmd_eval",
    "cmd_stats",
    "build_parser",
    "main",
]

REGIMES = ("none", "intr", "intr_dist", "intr_shape", "intr_shape_dist")
OUTPUT_ROOT_ENV = "BAYESBODY_OUTPUT_ROOT"

_GAMMA_DIM = 10   # the generator always draws 10 expression coefficients


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; shared by all four commands.

    Paths left empty inherit defaults under ``output_dir`` (dataset in
    ``<output_dir>/dataset``, checkpoint at ``<output_dir>/checkpoint.json``),
    and ``eval_dataset_dir`` falls back to ``dataset_dir``.
    """

    # paths and seeding
    seed: int = 0
    output_dir: str = "runs/exp"
    dataset_dir: str = ""
    eval_dataset_dir: str = ""
    checkpoint: str = ""
    # dataset generation
    scenes: int = 64
    views: int = 1
    people_min: int = 1
    people_max: int = 2
    profile: str = "size-distance"
    feature_dim: int = 64
    grid: tuple = (8, 8)
    image_size: tuple = (512, 512)
    # model
    preset: str = "condimen"
    hidden_dim: int = 64
    grid_level: int = 2
    # evaluation
    regimes: tuple = REGIMES
    threshold: float = 0.5
    match_rule: str = "pa_pje"
    pck_mm: float = 150.0
    # training
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "image_size",
                           tuple(int(s) for s in self.image_size))
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", _train_from_dict(self.train))
        if self.preset not in PRESETS:
            raise ParamOutOfRange(
                f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.profile not in PROFILES:
            raise ParamOutOfRange(
                f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        for regime in self.regimes:
            if regime not in REGIMES:
                raise ParamOutOfRange(
                    f"unknown regime {regime!r}; choose from {list(REGIMES)}")
        if not self.regimes:
            raise ParamOutOfRange("at least one regime is required")
        if self.scenes < 1 or self.views < 1:
            raise ParamOutOfRange("scenes and views must be >= 1")
        if not 1 <= self.people_min <= self.people_max:
            raise ParamOutOfRange("need 1 <= people_min <= people_max")
        if self.feature_dim < 1 or self.hidden_dim < 1:
            raise ParamOutOfRange("feature_dim and hidden_dim must be >= 1")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ParamOutOfRange("grid must be two positive cell counts")
        if len(self.image_size) != 2 or min(self.image_size) < 2:
            raise ParamOutOfRange("image_size must be two pixel counts >= 2")
        if not 0.0 <= self.threshold <= 1.0:
            raise ParamOutOfRange("threshold must lie in [0, 1]")
        if self.match_rule not in ("pa_pje", "pje"):
            raise ParamOutOfRange("match_rule must be 'pa_pje' or 'pje'")
        if self.pck_mm <= 0.0:
            raise ParamOutOfRange("pck_mm must be positive")


@dataclass(frozen=True)
class ResolvedPaths:
    """Filesystem locations derived from a config and the output-root env."""

    output_dir: str
    dataset_dir: str
    eval_dataset_dir: str
    checkpoint: str
    loss_csv: str
    config_json: str


def resolve_paths(config: ExperimentConfig) -> ResolvedPaths:
    """Apply the output-root env var and the empty-path defaults."""
    root = os.environ.get(OUTPUT_ROOT_ENV, "")

    def under_root(p: str) -> str:
        return os.path.join(root, p) if root and not os.path.isabs(p) else p

    out = under_root(config.output_dir)
    dataset = under_root(config.dataset_dir) if config.dataset_dir \
        else os.path.join(out, "dataset")
    eval_ds = under_root(config.eval_dataset_dir) if config.eval_dataset_dir \
        else dataset
    ckpt = under_root(config.checkpoint) if config.checkpoint \
        else os.path.join(out, "checkpoint.json")
    return ResolvedPaths(output_dir=out, dataset_dir=dataset,
                         eval_dataset_dir=eval_ds, checkpoint=ckpt,
                         loss_csv=os.path.join(out, "loss.csv"),
                         config_json=os.path.join(out, "config.json"))


# config serialization ----------------------------------------------------------


def _train_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ParamOutOfRange(f"unknown train config keys {unknown}")
    d = dict(d)
    if "fov_range_deg" in d:
        d["fov_range_deg"] = tuple(float(v) for v in d["fov_range_deg"])
    return TrainConfig(**d)


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config from plain parsed data; unknown keys are errors."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ParamOutOfRange(f"unknown config keys {unknown}")
    return ExperimentConfig(**d)


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-data mirror of a config; tuples become lists."""
    d = dataclasses.asdict(config)
    for key in ("grid", "image_size", "regimes"):
        d[key] = list(d[key])
    d["train"]["fov_range_deg"] = list(d["train"]["fov_range_deg"])
    return d


def load_config(path: str) -> dict:
    """Parse a TOML or JSON config file into plain data."""
    if path.endswith(".toml"):
        import tomli
        with open(path, "rb") as fh:
            return tomli.load(fh)
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    raise ParamOutOfRange(f"config file must end in .toml or .json: {path!r}")


def save_config(config: ExperimentConfig, path: str) -> None:
    """Snapshot a config as deterministic JSON (reparses to an equal config)."""
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, sort_keys=True, indent=2)
        fh.write("\n")


# shared helpers -----------------------------------------------------------------


def _fmt(x) -> str:
    """Full-precision, bitwise-stable text for CSV cells."""
    return repr(float(x)) if isinstance(x, float) else str(x)


def known_values_for(regime: str, view) -> KnownValues:
    """Clamps implementing one conditioning regime for one view.

    ``intr`` fixes the camera node to the view's true intrinsics; ``dist``
    and ``shape`` add per-cell clamps (encoded depth ln(d/f) under the true
    camera, shape coefficients) at each ground-truth person's head cell.
    """
    if regime not in REGIMES:
        raise ParamOutOfRange(
            f"unknown regime {regime!r}; choose from {list(REGIMES)}")
    per_cell: dict = {}
    for gt in view.gt:
        clamps = {}
        if "dist" in regime:
            clamps["encoded_depth"] = np.array([np.log(gt.t[2] / view.k.f)])
        if "shape" in regime:
            clamps["shape"] = gt.beta.copy()
        if clamps:
            per_cell[gt.cell] = clamps
    intrinsics = view.k if regime != "none" else None
    return KnownValues(intrinsics=intrinsics, per_cell=per_cell)


def _predicted(state: PersonState, body: KinematicBody,
               log_density) -> PredictedPerson:
    pts = state.body_points(body)
    return PredictedPerson(joints=pts[:body.n_joints], points=pts,
                           t=state.t, log_density=log_density)


def _truth(gt, body: KinematicBody) -> TruthPerson:
    pts = body.forward_kinematics(gt.theta_local, gt.beta, gt.t)
    return TruthPerson(joints=pts[:body.n_joints], points=pts, t=gt.t)


def _eval_regime(net: BayesNet, dataset: list, regime: str, views: int,
                 threshold: float, match_rule: str,
                 body: KinematicBody) -> EvalReport:
    """Score one regime at one view count; scenes are scored in view 0.

    With one view the prediction is the extracted mode.  With several, the
    consensus state is used: fused attributes plus the translation averaged
    over the per-view estimates aligned into view 0's frame; confidence
    comes from the view-0 source person.
    """
    predictions, truths = [], []
    for scene in dataset:
        if len(scene.views) < views:
            raise ParamOutOfRange(
                f"scene {scene.scene_id} has {len(scene.views)} views, "
                f"need {views}")
        used = scene.views[:views]
        known = [known_values_for(regime, v) for v in used]
        preds = []
        if views == 1:
            result = extract_mode(net, used[0], known=known[0],
                                  threshold=threshold)
            preds = [_predicted(p, body, p.log_density)
                     for p in result.persons]
        else:
            fusion = fuse_multiview(net, used, known=known,
                                    threshold=threshold, body=body)
            anchors = fusion.multi_view.views[0].persons
            for fp in fusion.fused:
                anchor = anchors[dict(fp.source)[0]]
                preds.append(_predicted(fp.state, body, anchor.log_density))
        predictions.append(preds)
        truths.append([_truth(g, body) for g in used[0].gt])
    return evaluate(predictions, truths, match_rule=match_rule)


def _write_records_jsonl(report: EvalReport, path: str) -> None:
    """Per-person records as JSON-lines (one object per ground-truth person)."""
    with open(path, "w") as fh:
        for r in report.records:
            fh.write(json.dumps({
                "scene_id": r.scene_id, "gt_index": r.gt_index,
                "pred_index": r.pred_index, "matched": r.matched,
                "pve_mm": r.pve_mm, "pa_pve_mm": r.pa_pve_mm,
                "pje_mm": r.pje_mm, "pa_pje_mm": r.pa_pje_mm,
                "pe_mm": r.pe_mm, "neg_log_density": r.neg_log_density,
            }, sort_keys=True))
            fh.write("\n")


def _write_comparison_csv(rows: list, pck_mm: float, path: str) -> None:
    """Regime-by-metric table; one row per evaluated regime."""
    tag = f"{pck_mm:g}mm"
    lines = [("regime,views,pve_mm,pa_pve_mm,pje_mm,pa_pje_mm,pe_mm,"
              f"pck_{tag}_matched,pck_{tag}_all,likelihood_error_corr,"
              "n_gt,n_matched,n_false_positives")]
    for regime, views, report in rows:
        matched = [r for r in report.records if r.matched]
        pa_pje = float(np.mean([r.pa_pje_mm for r in matched])) if matched \
            else float("nan")
        cells = [regime, views, report.pve, report.pa_pve, report.pje,
                 pa_pje, report.pe, report.pck_at(pck_mm, "matched"),
                 report.pck_at(pck_mm, "all"), report.likelihood_error_corr,
                 report.n_gt, report.n_matched, report.n_false_positives]
        lines.append(",".join(_fmt(c) for c in cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _stats_payload(dataset: list) -> dict:
    stats = dataset_stats(dataset)
    try:
        probe = ambiguity_probe(dataset)
    except EmptyList:
        probe = None
    return {"dataset": stats, "ambiguity_probe": probe}


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# commands -----------------------------------------------------------------------


def cmd_generate(config: ExperimentConfig) -> int:
    """Write a seeded dataset, its manifest, and a stats report."""
    paths = resolve_paths(config)
    os.makedirs(paths.output_dir, exist_ok=True)
    save_config(config, paths.config_json)
    gen_cfg = GeneratorConfig(feature_dim=config.feature_dim,
                              grid=config.grid, image_size=config.image_size)
    dataset = generate_dataset(config.scenes, config.views, config.seed,
                               ambiguity_profile=config.profile,
                               people_range=(config.people_min,
                                             config.people_max),
                               config=gen_cfg)
    manifest = save_dataset(dataset, paths.dataset_dir)
    payload = _stats_payload(dataset)
    stats_path = os.path.join(paths.dataset_dir, "stats.json")
    _write_json(payload, stats_path)
    print(f"wrote {len(dataset)} scenes ({config.views} views, "
          f"profile {config.profile}) to {paths.dataset_dir}")
    print(f"manifest: {manifest}")
    probe = payload["ambiguity_probe"]
    if probe is not None:
        print(f"ambiguity probe: extent_r2={probe['extent_r2']:.3f} "
              f"depth_r2={probe['depth_r2']:.3f}")
    return 0


def cmd_train(config: ExperimentConfig) -> int:
    """Fit a network on the dataset; write checkpoint and loss CSV."""
    paths = resolve_paths(config)
    os.makedirs(paths.output_dir, exist_ok=True)
    save_config(config, paths.config_json)
    dataset = load_dataset(paths.dataset_dir)
    body = default_body()
    feature_dim = dataset[0].views[0].patch_features.shape[-1]
    net = BayesNet(preset=config.preset, feature_dim=feature_dim,
                   hidden_dim=config.hidden_dim, n_bones=body.n_joints,
                   beta_dim=body.beta_dim, gamma_dim=_GAMMA_DIM,
                   seed=config.seed, grid_level=config.grid_level)
    curve = train(net, dataset, config.train, body=body,
                  loss_csv=paths.loss_csv, checkpoint=paths.checkpoint)
    print(f"trained {config.preset} for {config.train.steps} steps on "
          f"{len(dataset)} scenes")
    if curve:
        print(f"l_prob: first={curve[0].l_prob:.4f} last={curve[-1].l_prob:.4f}")
    print(f"checkpoint: {paths.checkpoint}")
    print(f"loss curve: {paths.loss_csv}")
    return 0


def cmd_eval(config: ExperimentConfig) -> int:
    """Score a checkpoint per regime; write records, reports, comparison."""
    paths = resolve_paths(config)
    os.makedirs(paths.output_dir, exist_ok=True)
    save_config(config, paths.config_json)
    net = BayesNet.load(paths.checkpoint)
    dataset = load_dataset(paths.eval_dataset_dir)
    body = default_body()
    rows = []
    for regime in config.regimes:
        report = _eval_regime(net, dataset, regime, config.views,
                              config.threshold, config.match_rule, body)
        stem = os.path.join(paths.output_dir,
                            f"{regime}_views{config.views}")
        write_records_csv(report, stem + "_records.csv")
        _write_records_jsonl(report, stem + "_records.jsonl")
        write_report_json(report, stem + "_report.json", pck_mm=config.pck_mm)
        rows.append((regime, config.views, report))
        print(f"{regime:>16}: pe={report.pe:9.1f}mm pve={report.pve:9.1f}mm "
              f"pa_pve={report.pa_pve:8.1f}mm matched "
              f"{report.n_matched}/{report.n_gt}")
    table = os.path.join(paths.output_dir,
                         f"comparison_views{config.views}.csv")
    _write_comparison_csv(rows, config.pck_mm, table)
    print(f"comparison table: {table}")
    return 0


def cmd_stats(config: ExperimentConfig) -> int:
    """Recompute the stats report for an existing dataset."""
    paths = resolve_paths(config)
    os.makedirs(paths.output_dir, exist_ok=True)
    dataset = load_dataset(paths.dataset_dir)
    payload = _stats_payload(dataset)
    stats_path = os.path.join(paths.output_dir, "stats.json")
    _write_json(payload, stats_path)
    stats = payload["dataset"]
    print(f"{stats['n_scenes']} scenes, profile {stats['profile']}, "
          f"{stats['people_per_scene_mean']:.2f} people/scene, depth "
          f"[{stats['depth_min']:.2f}, {stats['depth_max']:.2f}]m")
    probe = payload["ambiguity_probe"]
    if probe is not None:
        print(f"ambiguity probe: extent_r2={probe['extent_r2']:.3f} "
              f"depth_r2={probe['depth_r2']:.3f}")
    print(f"stats report: {stats_path}")
    return 0


# argument parsing ----------------------------------------------------------------


_TOP_FLAGS = {
    "out": "output_dir", "dataset": "dataset_dir",
    "eval_dataset": "eval_dataset_dir", "checkpoint": "checkpoint",
    "seed": "seed", "scenes": "scenes", "views": "views",
    "people_min": "people_min", "people_max": "people_max",
    "profile": "profile", "feature_dim": "feature_dim", "preset": "preset",
    "hidden_dim": "hidden_dim", "grid_level": "grid_level",
    "threshold": "threshold", "match_rule": "match_rule", "pck_mm": "pck_mm",
}

_TRAIN_FLAGS = {
    "steps": "steps", "lr": "learning_rate", "batch_size": "batch_size",
    "train_seed": "seed", "gt_k_fraction": "gt_intrinsics_fraction",
    "point_norm": "point_norm", "behind_penalty": "behind_penalty",
}


def _add_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="TOML or JSON config file")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--dataset", help="dataset directory")
    sp.add_argument("--eval-dataset", help="held-out dataset directory")
    sp.add_argument("--checkpoint", help="checkpoint path")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--scenes", type=int)
    sp.add_argument("--views", type=int)
    sp.add_argument("--people-min", type=int)
    sp.add_argument("--people-max", type=int)
    sp.add_argument("--profile", choices=sorted(PROFILES))
    sp.add_argument("--feature-dim", type=int)
    sp.add_argument("--grid", type=int, nargs=2, metavar=("H", "W"))
    sp.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--hidden-dim", type=int)
    sp.add_argument("--grid-level", type=int)
    sp.add_argument("--regimes", nargs="+", choices=REGIMES)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--match-rule", choices=("pa_pje", "pje"))
    sp.add_argument("--pck-mm", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--train-seed", type=int)
    sp.add_argument("--gt-k-fraction", type=float)
    sp.add_argument("--point-norm", choices=("l1", "l2"))
    sp.add_argument("--behind-penalty", type=float)
    sp.add_argument("--fov-min", type=float)
    sp.add_argument("--fov-max", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesbody",
        description="Probabilistic multi-person body recovery experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a seeded synthetic dataset plus stats report",
        "train": "fit a network; write checkpoint and loss curve",
        "eval": "score a checkpoint under conditioning regimes",
        "stats": "recompute the stats report for an existing dataset",
    }
    for name, text in helps.items():
        _add_flags(sub.add_parser(name, help=text))
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    train_data = dict(data.pop("train", {}))
    for flag, key in _TOP_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    for key in ("grid", "image_size", "regimes"):
        value = getattr(args, key)
        if value is not None:
            data[key] = tuple(value)
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            train_data[key] = value
    if args.fov_min is not None or args.fov_max is not None:
        base = train_data.get("fov_range_deg", TrainConfig().fov_range_deg)
        lo = args.fov_min if args.fov_min is not None else base[0]
        hi = args.fov_max if args.fov_max is not None else base[1]
        train_data["fov_range_deg"] = (float(lo), float(hi))
    if train_data:
        data["train"] = train_data
    return config_from_dict(data)


def main(argv=None) -> int:
    """Entry point; returns a process exit code."""
    args = build_parser().parse_args(argv)
    commands = {"generate": cmd_generate, "train": cmd_train,
                "eval": cmd_eval, "stats": cmd_stats}
    try:
        config = _config_from_args(args)
        return commands[args.command](config)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BayesBodyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
