"""Rotations, the special Procrustes projection and deterministic SO(3) grids.

Rotations are stored as canonicalized unit quaternions ``[w, x, y, z]`` with a
nonnegative scalar part (ties broken by making the first nonzero component
positive), so representation equality implies rotation equality.

The grid covers SO(3) with ``72 * 8**level`` near-uniform cells built from an
equal-area partition of the sphere (ring-scheme pixel centers, ``12 * 4**level``
cells) crossed with ``6 * 2**level`` evenly spaced circle-fiber samples, lifted
to quaternions through the Hopf map.  It backs grid integration of rotation
densities and mode verification.
"""

from __future__ import annotations

import struct
import threading

import numpy as np

from .errors import DegenerateInput, DimensionMismatch, LevelOutOfRange

__all__ = [
    "Rotation",
    "special_procrustes",
    "procrustes_matrices",
    "special_svd",
    "special_procrustes_vjp",
    "geodesic_distance",
    "So3Grid",
    "build_grid",
    "MIN_GRID_LEVEL",
    "MAX_GRID_LEVEL",
]

MIN_GRID_LEVEL = 0
MAX_GRID_LEVEL = 4

_GRID_MAGIC = b"SO3G"
_GRID_FORMAT_VERSION = 1


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    """Normalize and sign-canonicalize quaternions, shape (..., 4)."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0) or not np.all(np.isfinite(q)):
        raise DegenerateInput("quaternion has zero norm or non-finite entries")
    q = q / norm
    # Sign rule: w > 0; on w == 0 the first nonzero of (x, y, z) is positive.
    sign = np.sign(q[..., 0])
    for k in (1, 2, 3):
        sign = np.where(sign == 0.0, np.sign(q[..., k]), sign)
    return q * sign[..., None]


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) to rotation matrices (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3), dtype=float)
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Single rotation matrix (3, 3) to a unit quaternion [w, x, y, z].

    Uses the largest-pivot branch rule, stable for every rotation.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise DimensionMismatch(f"expected (3, 3) matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DegenerateInput("matrix has non-finite entries")
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > m[0, 0] and t > m[1, 1] and t > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + t)
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
             (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s,
             (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] >= m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s,
             (m[1, 2] + m[2, 1]) / s)
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
             (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    return np.array(q, dtype=float)


class Rotation:
    """Immutable rotation backed by a canonical unit quaternion."""

    __slots__ = ("_q",)

    def __init__(self, quat):
        q = _canonical_quat(np.asarray(quat, dtype=float))
        if q.shape != (4,):
            raise DimensionMismatch(f"expected 4-vector quaternion, got {q.shape}")
        q.setflags(write=False)
        object.__setattr__(self, "_q", q)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("Rotation is immutable")

    @property
    def quat(self) -> np.ndarray:
        """Canonical unit quaternion [w, x, y, z] (read-only view)."""
        return self._q

    @classmethod
    def identity(cls) -> "Rotation":
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        return cls(_matrix_to_quat(m))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        if axis.shape != (3,):
            raise DimensionMismatch(f"expected 3-vector axis, got {axis.shape}")
        n = np.linalg.norm(axis)
        if n == 0.0:
            if angle == 0.0:
                return cls.identity()
            raise DegenerateInput("zero axis with nonzero angle")
        half = 0.5 * float(angle)
        return cls(np.concatenate(([np.cos(half)], np.sin(half) * axis / n)))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        """Haar-uniform rotation from four unit-projected normals."""
        return cls(rng.standard_normal(4))

    def as_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self._q)

    def compose(self, other: "Rotation") -> "Rotation":
        """Rotation equal to applying ``other`` first, then ``self``."""
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other._q
        return Rotation((
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        w, x, y, z = self._q
        return Rotation((w, -x, -y, -z))

    def apply(self, points) -> np.ndarray:
        """Rotate points of shape (..., 3)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != 3:
            raise DimensionMismatch(f"expected (..., 3) points, got {pts.shape}")
        return pts @ self.as_matrix().T

    def angle_to(self, other: "Rotation") -> float:
        return geodesic_distance(self, other)

    def __repr__(self) -> str:
        w, x, y, z = self._q
        return f"Rotation(w={w:.6f}, x={x:.6f}, y={y:.6f}, z={z:.6f})"


def geodesic_distance(a: Rotation, b: Rotation) -> float:
    """Rotation angle of a^-1 b, i.e. arccos of the clamped (trace - 1) / 2.

    Evaluated through the quaternion dot product, which equals the trace form
    exactly: trace(A^T B) = 4 (qa . qb)^2 - 1.
    """
    d = float(np.dot(a.quat, b.quat))
    c = 2.0 * d * d - 1.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def special_svd(m: np.ndarray):
    """SVD ``m = U diag(d) V^T`` with U, V in SO(3) and d possibly negative.

    d holds the proper singular values: (s1, s2, sign(det(U0 V0^T)) * s3) for
    the ordinary SVD factors.  Works on stacked input of shape (..., 3, 3).
    """
    u, s, vt = np.linalg.svd(np.asarray(m, dtype=float))
    du = np.linalg.det(u)
    dv = np.linalg.det(vt)
    u = u.copy()
    vt = vt.copy()
    u[..., :, 2] *= du[..., None]
    vt[..., 2, :] *= dv[..., None]
    d = s.copy()
    d[..., 2] *= du * dv
    return u, d, np.swapaxes(vt, -1, -2)


def procrustes_matrices(m: np.ndarray, on_degenerate: str = "raise") -> np.ndarray:
    """Project stacked (..., 3, 3) matrices to their nearest rotations.

    The projection is U V^T from the special SVD, which flips the direction of
    least variance when a plain orthogonal projection would produce a
    reflection.  Non-unique cases (rank < 2, or equal smallest singular values
    combined with a reflection) raise DegenerateInput, or yield the identity
    when ``on_degenerate="identity"`` (used by decoders that must not fail).
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise DimensionMismatch(f"expected (..., 3, 3), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DegenerateInput("matrix has non-finite entries")
    u, d, v = special_svd(m)
    r = u @ np.swapaxes(v, -1, -2)
    # Unique iff d2 + d3 > 0; tolerance relative to the largest singular value.
    bad = d[..., 1] + d[..., 2] <= 1e-12 * np.maximum(d[..., 0], 1.0)
    if np.any(bad):
        if on_degenerate == "identity":
            r = r.copy()
            r[bad] = np.eye(3)
        else:
            raise DegenerateInput("projection to SO(3) is not unique")
    return r


def special_procrustes(m: np.ndarray) -> Rotation:
    """Nearest rotation to a single 3x3 matrix (Frobenius sense)."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise DimensionMismatch(f"expected (3, 3) matrix, got {m.shape}")
    return Rotation.from_matrix(procrustes_matrices(m))


def special_procrustes_vjp(u: np.ndarray, d: np.ndarray, v: np.ndarray,
                           grad_r: np.ndarray) -> np.ndarray:
    """Pull a cotangent on R = U V^T back to the input of the projection.

    With the special SVD M = U diag(d) V^T, the differential of the projection
    is dR = U W V^T, W_ij = (A_ij - A_ji) / (d_i + d_j) for A = U^T dM V, so the
    adjoint is dL/dM = U H V^T with H_ij = (G~_ij - G~_ji) / (d_i + d_j),
    G~ = U^T (dL/dR) V.  Accepts stacked (..., 3, 3) input.
    """
    g = np.swapaxes(u, -1, -2) @ grad_r @ v
    denom = d[..., :, None] + d[..., None, :]
    h = (g - np.swapaxes(g, -1, -2)) / denom
    return u @ h @ np.swapaxes(v, -1, -2)


def _sphere_ring_centers(nside: int):
    """Equal-area ring-scheme pixel centers on the unit sphere.

    Returns (theta, phi) arrays of length 12 * nside**2, rings ordered north to
    south, longitude increasing inside each ring.
    """
    zs, phis = [], []
    # Polar cap rings hold 4i pixels at z = +-(1 - i^2 / (3 nside^2)).
    for i in range(1, nside):
        zs.append(np.full(4 * i, 1.0 - i * i / (3.0 * nside * nside)))
        phis.append((np.pi / (2.0 * i)) * (np.arange(4 * i) + 0.5))
    for i in range(nside, 3 * nside + 1):
        s = (i - nside + 1) % 2
        zs.append(np.full(4 * nside, 4.0 / 3.0 - 2.0 * i / (3.0 * nside)))
        phis.append((np.pi / (2.0 * nside)) * (np.arange(4 * nside) + 1.0 - 0.5 * s))
    for i in range(nside - 1, 0, -1):
        zs.append(np.full(4 * i, -(1.0 - i * i / (3.0 * nside * nside))))
        phis.append((np.pi / (2.0 * i)) * (np.arange(4 * i) + 0.5))
    z = np.concatenate(zs)
    phi = np.concatenate(phis)
    return np.arccos(z), phi


def _hopf_to_quat(theta: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Hopf coordinates (sphere point theta/phi, fiber angle psi) to quaternions."""
    ct, st = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.stack([
        ct * np.cos(psi / 2.0),
        ct * np.sin(psi / 2.0),
        st * np.cos(phi + psi / 2.0),
        st * np.sin(phi + psi / 2.0),
    ], axis=-1)


class So3Grid:
    """Deterministic near-uniform covering of SO(3) with equal cell weights."""

    __slots__ = ("level", "quats", "_matrices", "_flat")

    def __init__(self, level: int, quats: np.ndarray):
        expected = 72 * 8 ** level
        if quats.shape != (expected, 4):
            raise DimensionMismatch(
                f"level {level} grid must have shape ({expected}, 4), got {quats.shape}")
        quats = np.ascontiguousarray(quats, dtype=float)
        quats.setflags(write=False)
        object.__setattr__(self, "level", int(level))
        object.__setattr__(self, "quats", quats)
        object.__setattr__(self, "_matrices", None)
        object.__setattr__(self, "_flat", None)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("So3Grid is immutable")

    def __len__(self) -> int:
        return self.quats.shape[0]

    @property
    def cell_weight(self) -> float:
        """Uniform integration weight 1 / n_cells."""
        return 1.0 / self.quats.shape[0]

    @property
    def nominal_cell_radius(self) -> float:
        """Nominal covering radius pi / (2 * 2**level) in radians."""
        return np.pi / (2.0 * 2 ** self.level)

    def matrices(self) -> np.ndarray:
        """All grid rotations as a (n, 3, 3) array (computed once, cached)."""
        if self._matrices is None:
            m = _quat_to_matrix(self.quats)
            m.setflags(write=False)
            object.__setattr__(self, "_matrices", m)
        return self._matrices

    def matrices_flat(self) -> np.ndarray:
        """Grid rotations flattened row-major to (n, 9), cached."""
        if self._flat is None:
            f = np.ascontiguousarray(self.matrices().reshape(-1, 9))
            f.setflags(write=False)
            object.__setattr__(self, "_flat", f)
        return self._flat

    def nearest_index(self, r: Rotation) -> int:
        """Index of the grid rotation closest to r in geodesic distance."""
        return int(np.argmax(np.abs(self.quats @ r.quat)))

    def save(self, path) -> None:
        """Write the grid to a little-endian binary file.

        Layout: magic ``SO3G``, u32 format version, u32 level, u64 cell count,
        then count * 4 float64 quaternion components.
        """
        header = struct.pack("<4sIIQ", _GRID_MAGIC, _GRID_FORMAT_VERSION,
                             self.level, self.quats.shape[0])
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.quats.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "So3Grid":
        with open(path, "rb") as fh:
            header = fh.read(struct.calcsize("<4sIIQ"))
            magic, version, level, count = struct.unpack("<4sIIQ", header)
            if magic != _GRID_MAGIC:
                raise DegenerateInput(f"bad grid file magic {magic!r}")
            if version != _GRID_FORMAT_VERSION:
                raise DegenerateInput(f"unsupported grid format version {version}")
            if not MIN_GRID_LEVEL <= level <= MAX_GRID_LEVEL:
                raise LevelOutOfRange(f"grid level {level} outside "
                                      f"[{MIN_GRID_LEVEL}, {MAX_GRID_LEVEL}]")
            if count != 72 * 8 ** level:
                raise DimensionMismatch(
                    f"level {level} grid must have {72 * 8 ** level} cells, file says {count}")
            data = np.frombuffer(fh.read(count * 4 * 8), dtype="<f8")
        if data.size != count * 4:
            raise DegenerateInput("grid file truncated")
        return cls(level, data.reshape(count, 4).astype(float))


_grid_cache: dict[int, So3Grid] = {}
_grid_lock = threading.Lock()


def build_grid(level: int) -> So3Grid:
    """Build (or fetch memoized) the level-``level`` SO(3) grid.

    Bitwise deterministic for a given level; concurrent callers share one
    instance (first writer wins).
    """
    if not isinstance(level, (int, np.integer)) or isinstance(level, bool):
        raise LevelOutOfRange(f"grid level must be an integer, got {level!r}")
    if not MIN_GRID_LEVEL <= level <= MAX_GRID_LEVEL:
        raise LevelOutOfRange(
            f"grid level {level} outside [{MIN_GRID_LEVEL}, {MAX_GRID_LEVEL}]")
    level = int(level)
    grid = _grid_cache.get(level)
    if grid is not None:
        return grid
    nside = 2 ** level
    theta, phi = _sphere_ring_centers(nside)
    n_psi = 6 * 2 ** level
    psi = (np.arange(n_psi) + 0.5) * (2.0 * np.pi / n_psi)
    quats = _hopf_to_quat(np.repeat(theta, n_psi), np.repeat(phi, n_psi),
                          np.tile(psi, theta.size))
    quats = _canonical_quat(quats)
    with _grid_lock:
        return _grid_cache.setdefault(level, So3Grid(level, quats))
