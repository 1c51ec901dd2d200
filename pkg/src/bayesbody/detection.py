"""Center-style person detection on the feature grid.

Each grid cell carries a Bernoulli probability that a person's head projects
into it.  `detect` thresholds the score map and keeps strict 3x3 local maxima;
ties between equal neighbors go to the cell with the lowest (v, u), so exactly
one of a flat plateau survives and the output is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ParamOutOfRange

__all__ = ["DetectionGrid", "Detection", "detect"]


@dataclass(frozen=True, eq=False)
class DetectionGrid:
    """h x w map of per-cell detection probabilities."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2:
            raise DimensionMismatch(f"scores must be 2D (h, w), got {s.shape}")
        if np.any(s < 0) or np.any(s > 1) or not np.all(np.isfinite(s)):
            raise ParamOutOfRange("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", s)

    @property
    def shape(self) -> tuple:
        return self.scores.shape

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def height(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class Detection:
    """A surviving cell: (u, v) column/row indices plus its score."""

    u: int
    v: int
    score: float


def detect(grid: DetectionGrid, threshold: float = 0.5) -> list:
    """Thresholded strict 3x3 non-maximum suppression.

    A cell survives iff its score is >= threshold and, for every neighbor in
    its 3x3 window, either the score is strictly larger or it is equal and
    the cell precedes the neighbor in (v, u) lexicographic order.  Survivors
    come back sorted by descending score (ties again by (v, u)).
    """
    if not (0.0 < threshold < 1.0):
        raise ParamOutOfRange(f"threshold must be in (0, 1), got {threshold}")
    s = grid.scores
    h, w = s.shape
    out = []
    for v in range(h):
        for u in range(w):
            score = s[v, u]
            if score < threshold:
                continue
            keep = True
            for dv in (-1, 0, 1):
                for du in (-1, 0, 1):
                    if dv == 0 and du == 0:
                        continue
                    nv, nu = v + dv, u + du
                    if not (0 <= nv < h and 0 <= nu < w):
                        continue
                    other = s[nv, nu]
                    if other > score or (other == score and (nv, nu) < (v, u)):
                        keep = False
                        break
                if not keep:
                    break
            if keep:
                out.append(Detection(u=u, v=v, score=float(score)))
    out.sort(key=lambda d: (-d.score, d.v, d.u))
    return out
