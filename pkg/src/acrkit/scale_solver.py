"""Absolute translation scale from a homogeneous linear system.

Given correspondences between two images and their scale-free relative pose
``<R, t_dir>`` (mapping A-camera coordinates into B-camera coordinates),
minimizing the 3-D warping error over per-point depths and the unknown
scale yields, per correspondence, the quadratic

    F_i = 1/2 a Da^2 - b Da Db + g Da S + 1/2 d Db^2 - e Db S + 1/2 z S^2

whose stationarity conditions stack into a block-sparse homogeneous system
``A y = 0`` of shape 3N x (2N+1), with y = (da_1, db_1, ..., da_N, db_N, s).
Only the ratios between entries of the minimum-norm solution are
meaningful; the gauge fixed here is ``||y|| = 1`` with ``s > 0``.

The chain :func:`init_scale` -> :func:`depth_map_current` ->
:func:`depth_map_reference` -> :func:`iteration_scale` converts those
ratios into metric depths and the metric motion scale of each
relocalization iteration, starting from one known physical translation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    AmbiguousNullspaceError,
    CheiralityError,
    DegenerateInitError,
    InsufficientDataError,
    InvalidInputError,
    MissingDepthError,
)
from .geometry import DirectionalPose, Intrinsics, PixelPoint
from .pose_estimation import CorrespondenceSet

# Below this column count the dense symmetric eigensolver is used; above,
# the sparse shift-invert path (the system is block-arrowhead).
DENSE_EIG_LIMIT = 160

# Matching singular values closer than this mean the nullspace dimension
# exceeds one and the geometry cannot fix the scale.
AMBIGUITY_GAP = 1e-8

# Default cap on correspondences fed into one solve.
MAX_SYSTEM_POINTS = 512

MIN_SYSTEM_POINTS = 8


@dataclass(frozen=True)
class CoefficientBlock:
    """The six quadratic-form coefficients of one correspondence."""

    alpha: float
    beta: float
    gamma: float
    delta: float
    epsilon: float
    zeta: float

    def matrix(self) -> np.ndarray:
        """Symmetric 3x3 stationarity block over (da, db, s)."""
        return np.array(
            [
                [self.alpha, -self.beta, self.gamma],
                [-self.beta, self.delta, -self.epsilon],
                [self.gamma, -self.epsilon, self.zeta],
            ]
        )

    def energy(self, da: float, db: float, s: float) -> float:
        """Value of the warping quadratic F at (da, db, s)."""
        return (
            0.5 * self.alpha * da * da
            - self.beta * da * db
            + self.gamma * da * s
            + 0.5 * self.delta * db * db
            - self.epsilon * db * s
            + 0.5 * self.zeta * s * s
        )


def coefficient_block(
    qa: PixelPoint, qb: PixelPoint, intr: Intrinsics, pose: DirectionalPose
) -> CoefficientBlock:
    """Coefficients for a single correspondence.

    ``qa`` lives in image A and ``qb`` in image B; ``pose`` maps A-camera
    coordinates into B-camera coordinates.
    """
    arr = _coefficient_arrays(
        np.array([[qa.u, qa.v]]), np.array([[qb.u, qb.v]]), intr, pose
    )
    return CoefficientBlock(*(float(arr[0, j]) for j in range(6)))


def _coefficient_arrays(
    a_px: np.ndarray, b_px: np.ndarray, intr: Intrinsics, pose: DirectionalPose
) -> np.ndarray:
    """(N, 6) array of (alpha, beta, gamma, delta, epsilon, zeta)."""
    k_inv = intr.inverse_matrix()
    r_inv = pose.rotation.matrix.T
    t_dir = pose.direction
    xa = np.hstack([a_px, np.ones((a_px.shape[0], 1))]) @ k_inv.T
    xb = np.hstack([b_px, np.ones((b_px.shape[0], 1))]) @ k_inv.T
    xb_w = xb @ r_inv.T  # R^-1 K^-1 qb
    t_w = r_inv @ t_dir  # R^-1 t_dir
    alpha = np.einsum("ij,ij->i", xa, xa)
    beta = np.einsum("ij,ij->i", xa, xb_w)
    gamma = xa @ t_w
    delta = np.einsum("ij,ij->i", xb_w, xb_w)
    epsilon = xb_w @ t_w
    zeta = np.full(a_px.shape[0], float(t_w @ t_w))
    return np.column_stack([alpha, beta, gamma, delta, epsilon, zeta])


def coefficient_blocks(
    c: CorrespondenceSet, intr: Intrinsics, pose: DirectionalPose
) -> list:
    """Per-correspondence blocks for a whole set."""
    arr = _coefficient_arrays(c.a, c.b, intr, pose)
    return [CoefficientBlock(*(float(v) for v in row)) for row in arr]


def _block_array(blocks) -> np.ndarray:
    if isinstance(blocks, np.ndarray):
        arr = np.asarray(blocks, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 6:
            raise InvalidInputError("coefficient array must be (N, 6)")
        return arr
    return np.array(
        [[b.alpha, b.beta, b.gamma, b.delta, b.epsilon, b.zeta] for b in blocks]
    )


def assemble_system(blocks) -> np.ndarray:
    """Dense 3N x (2N+1) stationarity system.

    Row triple i carries ``(a_i, -b_i, g_i)``, ``(-b_i, d_i, -e_i)`` and
    ``(g_i, -e_i, z_i)`` in columns (2i, 2i+1, 2N).
    """
    arr = _block_array(blocks)
    n = arr.shape[0]
    if n < 1:
        raise InsufficientDataError("need at least one coefficient block")
    a = np.zeros((3 * n, 2 * n + 1))
    rows = np.arange(n)
    alpha, beta, gamma, delta, epsilon, zeta = arr.T
    a[3 * rows, 2 * rows] = alpha
    a[3 * rows, 2 * rows + 1] = -beta
    a[3 * rows, 2 * n] = gamma
    a[3 * rows + 1, 2 * rows] = -beta
    a[3 * rows + 1, 2 * rows + 1] = delta
    a[3 * rows + 1, 2 * n] = -epsilon
    a[3 * rows + 2, 2 * rows] = gamma
    a[3 * rows + 2, 2 * rows + 1] = -epsilon
    a[3 * rows + 2, 2 * n] = zeta
    return a


def _assemble_sparse(arr: np.ndarray) -> scipy.sparse.csr_matrix:
    n = arr.shape[0]
    alpha, beta, gamma, delta, epsilon, zeta = arr.T
    rows = np.repeat(3 * np.arange(n), 3) + np.tile([0, 1, 2], n)
    row_idx = np.concatenate([rows, rows, rows])
    i = np.arange(n)
    col_da = np.repeat(2 * i, 3)
    col_db = np.repeat(2 * i + 1, 3)
    col_s = np.full(3 * n, 2 * n)
    col_idx = np.concatenate([col_da, col_db, col_s])
    val_da = np.column_stack([alpha, -beta, gamma]).ravel()
    val_db = np.column_stack([-beta, delta, -epsilon]).ravel()
    val_s = np.column_stack([gamma, -epsilon, zeta]).ravel()
    values = np.concatenate([val_da, val_db, val_s])
    return scipy.sparse.csr_matrix(
        (values, (row_idx, col_idx)), shape=(3 * n, 2 * n + 1)
    )


@dataclass(frozen=True, eq=False)
class ScaleSolution:
    """Minimum-norm solution of the stationarity system.

    ``y`` holds (da_1, db_1, ..., da_N, db_N, s) with unit norm and s > 0;
    only ratios are meaningful.  ``track_id`` keeps the correspondence
    identities so depth values can be chained across image pairs.
    """

    y: np.ndarray
    residual: float
    track_id: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        y.flags.writeable = False
        object.__setattr__(self, "y", y)
        tracks = self.track_id
        if tracks is None:
            tracks = np.arange(self.n_points, dtype=np.int64)
        tracks = np.asarray(tracks, dtype=np.int64)
        if tracks.shape != (self.n_points,):
            raise InvalidInputError("track_id must have one entry per point")
        tracks.flags.writeable = False
        object.__setattr__(self, "track_id", tracks)

    @property
    def n_points(self) -> int:
        return (self.y.size - 1) // 2

    @property
    def s(self) -> float:
        return float(self.y[-1])

    @property
    def d_a(self) -> np.ndarray:
        return self.y[0:-1:2]

    @property
    def d_b(self) -> np.ndarray:
        return self.y[1:-1:2]


def _two_smallest_eigenpairs(g):
    """Two smallest eigenpairs of the (sparse or dense) normal matrix."""
    size = g.shape[0]
    if size <= DENSE_EIG_LIMIT or not scipy.sparse.issparse(g):
        gd = g.toarray() if scipy.sparse.issparse(g) else np.asarray(g)
        w, v = scipy.linalg.eigh(gd, subset_by_index=[0, min(1, size - 1)])
        return w, v
    # Shift-invert around a slightly negative sigma: G is positive
    # semidefinite, so G - sigma I stays factorizable even when the
    # smallest eigenvalue is exactly zero.  The start vector is fixed for
    # reproducibility.
    scale = float(abs(g.diagonal()).max()) or 1.0
    v0 = np.full(size, 1.0 / np.sqrt(size))
    try:
        w, v = scipy.sparse.linalg.eigsh(
            g.tocsc(), k=2, sigma=-1e-12 * scale, which="LM", v0=v0
        )
    except Exception:
        w, v = scipy.linalg.eigh(g.toarray(), subset_by_index=[0, 1])
        return w, v
    order = np.argsort(w)
    return w[order], v[:, order]


def solve_nullspace(a, track_id=None) -> ScaleSolution:
    """Minimum non-zero solution of the assembled system.

    Computes the right singular vector of the smallest singular value (via
    the normal matrix, using a sparse shift-invert eigensolver for large
    systems), sign-normalized so the scale entry is positive.

    Raises:
        AmbiguousNullspaceError: the two smallest singular values coincide
            within 1e-8 (degenerate geometry such as pure rotation).
        CheiralityError: any recovered depth ratio is non-positive after
            sign normalization.
    """
    if scipy.sparse.issparse(a):
        g = (a.T @ a).tocsc()
        n_cols = a.shape[1]
    else:
        a = np.asarray(a, dtype=float)
        if a.ndim != 2:
            raise InvalidInputError("system matrix must be 2-D")
        n_cols = a.shape[1]
        if n_cols > DENSE_EIG_LIMIT:
            g = scipy.sparse.csc_matrix(a.T @ a)
        else:
            g = a.T @ a
    if n_cols < 3 or (n_cols - 1) % 2 != 0:
        raise InvalidInputError("system must have 2N+1 columns")

    w, v = _two_smallest_eigenpairs(g)
    svals = np.sqrt(np.clip(w, 0.0, None))
    if len(svals) > 1 and svals[1] - svals[0] < AMBIGUITY_GAP:
        raise AmbiguousNullspaceError(
            f"nullspace is not one-dimensional (sigma gap {svals[1] - svals[0]:.3e})"
        )
    y = v[:, 0]
    y = y / np.linalg.norm(y)
    if y[-1] < 0:
        y = -y
    solution = ScaleSolution(y=y, residual=float(svals[0]), track_id=track_id)
    if np.any(solution.d_a <= 0) or np.any(solution.d_b <= 0) or solution.s <= 0:
        raise CheiralityError("non-positive depth ratio in scale solution")
    return solution


def solve_scale_system(
    c: CorrespondenceSet,
    intr: Intrinsics,
    pose: DirectionalPose,
    max_points: int = MAX_SYSTEM_POINTS,
    min_points: int = MIN_SYSTEM_POINTS,
    subsample_seed: int = 0,
) -> ScaleSolution:
    """Build and solve the system for one correspondence set.

    Sets larger than ``max_points`` are subsampled deterministically to
    keep the solve cheap; smaller than ``min_points`` is rejected for
    noise resilience.
    """
    if len(c) < min_points:
        raise InsufficientDataError(
            f"scale system needs >= {min_points} correspondences, got {len(c)}"
        )
    use = c
    if len(c) > max_points:
        rng = np.random.default_rng(subsample_seed)
        idx = np.sort(rng.choice(len(c), size=max_points, replace=False))
        use = c.subset(idx)
    arr = _coefficient_arrays(use.a, use.b, intr, pose)
    return solve_nullspace(_assemble_sparse(arr), track_id=use.track_id)


@dataclass(frozen=True)
class SparseDepthMap:
    """Metric depths per correspondence track, in meters."""

    depths: dict

    def __post_init__(self):
        d = {int(k): float(v) for k, v in self.depths.items()}
        if any(v <= 0 for v in d.values()):
            raise CheiralityError("sparse depth map contains non-positive depth")
        object.__setattr__(self, "depths", d)

    def __len__(self) -> int:
        return len(self.depths)

    def __contains__(self, track: int) -> bool:
        return int(track) in self.depths

    def __getitem__(self, track: int) -> float:
        try:
            return self.depths[int(track)]
        except KeyError:
            raise MissingDepthError(f"no depth for track {track}") from None

    def to_json_dict(self) -> dict:
        return {str(k): v for k, v in sorted(self.depths.items())}

    @staticmethod
    def from_json_dict(doc: dict) -> "SparseDepthMap":
        return SparseDepthMap({int(k): float(v) for k, v in doc.items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @staticmethod
    def load(path) -> "SparseDepthMap":
        return SparseDepthMap.from_json_dict(json.loads(Path(path).read_text()))


def init_scale(executed_translation, estimated: DirectionalPose) -> float:
    """Metric scale of the initialization motion.

    A known pure hand translation induces a camera translation of equal
    norm regardless of the hidden hand-eye pose, so the scale is just the
    executed norm divided by the (unit) estimated direction norm.
    """
    t = np.asarray(executed_translation, dtype=float)
    norm = float(np.linalg.norm(t))
    if norm < 1e-15:
        raise DegenerateInitError("executed init translation is zero")
    return norm / float(np.linalg.norm(estimated.direction))


def depth_map_current(solution: ScaleSolution, s_init: float) -> SparseDepthMap:
    """Metric depths of the current image from the init-pair solution.

    The solution must come from the (current, init) image pair, with the
    current image on the A side; depths follow from d_a * S_init / s.
    """
    if s_init <= 0:
        raise InvalidInputError("init scale must be positive")
    factor = s_init / solution.s
    depths = solution.d_a * factor
    if np.any(depths <= 0):
        raise CheiralityError("negative depth in current-image depth map")
    return SparseDepthMap(dict(zip(solution.track_id.tolist(), depths.tolist())))


def depth_map_reference(
    ref_solution: ScaleSolution, d0: SparseDepthMap
) -> SparseDepthMap:
    """Metric depths of the reference image.

    ``ref_solution`` comes from the (reference, current) pair with the
    reference image on the A side; every track must already carry a metric
    depth for the current image in ``d0``.
    """
    depths = {}
    for i, track in enumerate(ref_solution.track_id.tolist()):
        if track not in d0:
            raise MissingDepthError(f"track {track} missing from current depth map")
        depths[track] = d0[track] * float(
            ref_solution.d_a[i] / ref_solution.d_b[i]
        )
    if any(v <= 0 for v in depths.values()):
        raise CheiralityError("negative depth in reference depth map")
    return SparseDepthMap(depths)


def iteration_scale(
    iter_solution: ScaleSolution, dref: SparseDepthMap, mode: str = "mean"
) -> float:
    """Metric scale of the current relocalization motion.

    Averages ``s * D_ref / d_ref`` over the correspondences shared with the
    reference depth map.  ``mode`` selects the plain arithmetic mean
    (default, faithful to the formulation) or a median for noisy data.
    """
    ratios = []
    for i, track in enumerate(iter_solution.track_id.tolist()):
        if track in dref:
            ratios.append(
                iter_solution.s * dref[track] / float(iter_solution.d_a[i])
            )
    if not ratios:
        raise MissingDepthError("no shared tracks with the reference depth map")
    if mode == "median":
        return float(np.median(ratios))
    if mode != "mean":
        raise InvalidInputError(f"unknown averaging mode {mode!r}")
    return float(np.mean(ratios))
