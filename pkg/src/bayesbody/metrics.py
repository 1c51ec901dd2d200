"""Point-error evaluation: PVE/PA-PVE/PJE/PE analogs, PCK, and correlation.

All errors are reported in millimeters on the stand-in body.  "Vertices" are
the full body-point set (joints plus interpolated bone points); "joints" are
the joint positions alone.  Ground-truth persons are matched to predictions
per scene by minimal Procrustes-aligned joint error; unmatched ground truth
counts as a miss (zero correct keypoints under the "all" PCK scope),
unmatched predictions as false positives.

Procrustes alignment includes a scale factor by default; pass
with_scale=False for the rigid variant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .errors import DegeneratePointSet, DimensionMismatch, ParamOutOfRange
from .inference import hungarian
from .so3 import special_procrustes

__all__ = [
    "PredictedPerson",
    "TruthPerson",
    "PersonRecord",
    "EvalReport",
    "procrustes_align",
    "evaluate",
    "write_records_csv",
    "write_report_json",
]

MM = 1000.0
DEFAULT_PCK_MM = 150.0


def _points(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != 3:
        raise DimensionMismatch(f"{name} must be (n, 3), got {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class PredictedPerson:
    """One predicted person in a view's camera frame (meters)."""

    joints: np.ndarray            # (J, 3)
    points: np.ndarray            # (P, 3) joints + interpolated bone points
    t: np.ndarray                 # (3,) root position
    log_density: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "joints", _points(self.joints, "joints"))
        object.__setattr__(self, "points", _points(self.points, "points"))
        t = np.asarray(self.t, dtype=float)
        if t.shape != (3,):
            raise DimensionMismatch(f"t must be a 3-vector, got {t.shape}")
        object.__setattr__(self, "t", t)


@dataclass(frozen=True, eq=False)
class TruthPerson:
    """Ground-truth counterpart of PredictedPerson."""

    joints: np.ndarray
    points: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "joints", _points(self.joints, "joints"))
        object.__setattr__(self, "points", _points(self.points, "points"))
        t = np.asarray(self.t, dtype=float)
        if t.shape != (3,):
            raise DimensionMismatch(f"t must be a 3-vector, got {t.shape}")
        object.__setattr__(self, "t", t)


@dataclass(frozen=True, eq=False)
class PersonRecord:
    """Errors of one ground-truth person; miss records hold NaN errors."""

    scene_id: int
    gt_index: int
    pred_index: int | None        # None when the person was missed
    pve_mm: float
    pa_pve_mm: float
    pje_mm: float
    pa_pje_mm: float
    pe_mm: float
    neg_log_density: float | None
    joint_errors_mm: np.ndarray   # per-joint raw errors; NaN-filled on a miss

    @property
    def matched(self) -> bool:
        return self.pred_index is not None


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Aggregate means over matched persons plus the per-person records."""

    pve: float
    pa_pve: float
    pje: float
    pe: float
    likelihood_error_corr: float
    records: list = field(default_factory=list)
    n_gt: int = 0
    n_matched: int = 0
    n_false_positives: int = 0

    def pck_at(self, threshold_mm: float, scope: str = "matched") -> float:
        """Fraction of joints within threshold; misses count in scope 'all'."""
        if scope not in ("matched", "all"):
            raise ParamOutOfRange(f"unknown PCK scope {scope!r}")
        correct = 0
        total = 0
        for rec in self.records:
            if rec.matched:
                correct += int(np.sum(rec.joint_errors_mm <= threshold_mm))
                total += rec.joint_errors_mm.size
            elif scope == "all":
                total += rec.joint_errors_mm.size
        return correct / total if total else float("nan")


def procrustes_align(pred: np.ndarray, gt: np.ndarray,
                     with_scale: bool = True) -> np.ndarray:
    """Optimally aligned copy of `pred` (rotation, translation, opt. scale).

    Minimizes the summed squared distance to `gt`; the rotation is the
    nearest-rotation projection of the cross-covariance.

    Parameters
    ----------
    pred, gt : ndarray
        Matching (n, 3) point sets, n >= 3 and not collinear.
    with_scale : bool
        Include the least-squares scale factor (similarity alignment).

    Returns
    -------
    ndarray
        (n, 3) aligned prediction.

    Raises
    ------
    DegeneratePointSet
        On fewer than 3 points or collinear input.
    """
    pred = _points(pred, "pred")
    gt = _points(gt, "gt")
    if pred.shape != gt.shape:
        raise DimensionMismatch(
            f"point sets must match, got {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 3:
        raise DegeneratePointSet("alignment needs >= 3 points")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    cp, cg = pred - mu_p, gt - mu_g
    for name, centered in (("pred", cp), ("gt", cg)):
        svals = np.linalg.svd(centered, compute_uv=False)
        if svals[1] <= 1e-12 * max(svals[0], 1.0):
            raise DegeneratePointSet(f"{name} points are collinear")
    m = cg.T @ cp
    r = special_procrustes(m).as_matrix()
    if with_scale:
        s = float(np.sum(r * m) / np.sum(cp * cp))
    else:
        s = 1.0
    return (s * (cp @ r.T)) + mu_g


def _pair_errors(scene_id: int, gt_index: int, pred_index: int,
                 pred: PredictedPerson, gt: TruthPerson,
                 with_scale: bool) -> PersonRecord:
    if pred.joints.shape != gt.joints.shape or pred.points.shape != gt.points.shape:
        raise DimensionMismatch("prediction and ground truth body sizes differ")
    joint_err = np.linalg.norm(pred.joints - gt.joints, axis=1) * MM
    pve = float(np.mean(np.linalg.norm(pred.points - gt.points, axis=1))) * MM
    pa_points = procrustes_align(pred.points, gt.points, with_scale)
    pa_pve = float(np.mean(np.linalg.norm(pa_points - gt.points, axis=1))) * MM
    pa_joints = procrustes_align(pred.joints, gt.joints, with_scale)
    pa_pje = float(np.mean(np.linalg.norm(pa_joints - gt.joints, axis=1))) * MM
    return PersonRecord(
        scene_id=scene_id, gt_index=gt_index, pred_index=pred_index,
        pve_mm=pve, pa_pve_mm=pa_pve, pje_mm=float(np.mean(joint_err)),
        pa_pje_mm=pa_pje, pe_mm=float(np.linalg.norm(pred.t - gt.t)) * MM,
        neg_log_density=(None if pred.log_density is None
                         else -float(pred.log_density)),
        joint_errors_mm=joint_err)


def _pa_pje_cost(preds: list, gts: list, with_scale: bool) -> np.ndarray:
    cost = np.zeros((len(gts), len(preds)))
    for i, gt in enumerate(gts):
        for j, pred in enumerate(preds):
            aligned = procrustes_align(pred.joints, gt.joints, with_scale)
            cost[i, j] = np.mean(np.linalg.norm(aligned - gt.joints, axis=1))
    return cost


def evaluate(predictions: list, ground_truth: list,
             match_rule: str = "pa_pje",
             with_scale: bool = True) -> EvalReport:
    """Match predictions to ground truth per scene and aggregate errors.

    Parameters
    ----------
    predictions : list
        Per scene, a list of PredictedPerson.
    ground_truth : list
        Per scene, a list of TruthPerson; same scene order as predictions.
    match_rule : str
        "pa_pje" (Procrustes-aligned joint error, the default) or "pje".
    with_scale : bool
        Scale toggle for every Procrustes alignment involved.

    Returns
    -------
    EvalReport
        Mean errors over matched persons (NaN when nothing matched), the
        per-person records, and the Spearman correlation between per-person
        negative log density and the PVE analog.
    """
    if len(predictions) != len(ground_truth):
        raise DimensionMismatch(
            f"{len(predictions)} prediction scenes vs "
            f"{len(ground_truth)} ground-truth scenes")
    if match_rule not in ("pa_pje", "pje"):
        raise ParamOutOfRange(f"unknown match rule {match_rule!r}")
    records = []
    n_fp = 0
    for scene_id, (preds, gts) in enumerate(zip(predictions, ground_truth)):
        matched_pred = set()
        if preds and gts:
            if match_rule == "pa_pje":
                cost = _pa_pje_cost(preds, gts, with_scale)
            else:
                cost = np.array([[np.mean(np.linalg.norm(
                    p.joints - g.joints, axis=1)) for p in preds]
                    for g in gts])
            pairs = hungarian(cost)
        else:
            pairs = []
        by_gt = {i: j for i, j in pairs}
        for gi, gt in enumerate(gts):
            if gi in by_gt:
                pj = by_gt[gi]
                matched_pred.add(pj)
                records.append(_pair_errors(scene_id, gi, pj, preds[pj], gt,
                                            with_scale))
            else:
                nan_joints = np.full(gt.joints.shape[0], np.nan)
                records.append(PersonRecord(
                    scene_id=scene_id, gt_index=gi, pred_index=None,
                    pve_mm=float("nan"), pa_pve_mm=float("nan"),
                    pje_mm=float("nan"), pa_pje_mm=float("nan"),
                    pe_mm=float("nan"), neg_log_density=None,
                    joint_errors_mm=nan_joints))
        n_fp += len(preds) - len(matched_pred)

    matched = [r for r in records if r.matched]

    def agg(attr):
        return (float(np.mean([getattr(r, attr) for r in matched]))
                if matched else float("nan"))

    corr = float("nan")
    scored = [r for r in matched if r.neg_log_density is not None]
    if len(scored) >= 2:
        nld = [r.neg_log_density for r in scored]
        err = [r.pve_mm for r in scored]
        if np.std(nld) > 0 and np.std(err) > 0:
            corr = float(spearmanr(nld, err).statistic)
    return EvalReport(pve=agg("pve_mm"), pa_pve=agg("pa_pve_mm"),
                      pje=agg("pje_mm"), pe=agg("pe_mm"),
                      likelihood_error_corr=corr, records=records,
                      n_gt=len(records), n_matched=len(matched),
                      n_false_positives=n_fp)


def write_records_csv(report: EvalReport, path: str) -> None:
    """Per-person records as CSV with a header row (misses included)."""
    lines = ["scene_id,gt_index,pred_index,matched,pve_mm,pa_pve_mm,"
             "pje_mm,pa_pje_mm,pe_mm,neg_log_density"]
    for r in report.records:
        pred = "" if r.pred_index is None else str(r.pred_index)
        nld = "" if r.neg_log_density is None else repr(r.neg_log_density)
        lines.append(f"{r.scene_id},{r.gt_index},{pred},{int(r.matched)},"
                     f"{r.pve_mm!r},{r.pa_pve_mm!r},{r.pje_mm!r},"
                     f"{r.pa_pje_mm!r},{r.pe_mm!r},{nld}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report_json(report: EvalReport, path: str,
                      pck_mm: float = DEFAULT_PCK_MM) -> None:
    """Aggregate report as deterministic JSON."""
    data = {
        "pve_mm": report.pve,
        "pa_pve_mm": report.pa_pve,
        "pje_mm": report.pje,
        "pe_mm": report.pe,
        "pck_threshold_mm": pck_mm,
        "pck_matched": report.pck_at(pck_mm, "matched"),
        "pck_all": report.pck_at(pck_mm, "all"),
        "likelihood_error_corr": report.likelihood_error_corr,
        "n_gt": report.n_gt,
        "n_matched": report.n_matched,
        "n_false_positives": report.n_false_positives,
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
