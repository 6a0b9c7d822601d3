"""Scale-free relative pose from 2-D correspondences.

Two estimation paths are provided:

* the primary path estimates a plane-induced homography with RANSAC and
  factors it analytically into rotation, translation direction and plane
  normal (cheirality plus reprojection residual resolve the ambiguity);
* a normalized eight-point epipolar path serves as the comparison baseline.

Both paths consume a :class:`CorrespondenceSet` whose A-side points live in
the first image and B-side points in the second; the recovered pose maps
A-camera coordinates into B-camera coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheiralityError,
    DegenerateModelError,
    InsufficientDataError,
    InvalidInputError,
)
from .geometry import DirectionalPose, Intrinsics, Rotation, _project_to_so3

# Label value used in memory for "no plane label" (JSON files use null).
NO_LABEL = -1

# Singular-value spread below which a homography is treated as a pure
# rotation (zero baseline); the translation direction is undefined there.
ZERO_MOTION_SPREAD = 1e-6


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Paired pixel coordinates between two images.

    Attributes:
        a: (N, 2) pixel coordinates in image A.
        b: (N, 2) pixel coordinates in image B.
        plane_label: (N,) integer labels; ``NO_LABEL`` where absent.
        track_id: (N,) stable integer identity of each correspondence
            across image pairs (assigned by the simulator or ingest layer).
    """

    a: np.ndarray
    b: np.ndarray
    plane_label: np.ndarray = None
    track_id: np.ndarray = None

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.a, dtype=float))
        b = np.ascontiguousarray(np.asarray(self.b, dtype=float))
        if a.ndim != 2 or a.shape[1] != 2 or b.shape != a.shape:
            raise InvalidInputError("correspondence arrays must both be (N, 2)")
        n = a.shape[0]
        labels = self.plane_label
        if labels is None:
            labels = np.full(n, NO_LABEL, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        tracks = self.track_id
        if tracks is None:
            tracks = np.arange(n, dtype=np.int64)
        tracks = np.asarray(tracks, dtype=np.int64)
        if labels.shape != (n,) or tracks.shape != (n,):
            raise InvalidInputError("label/track arrays must have length N")
        for arr in (a, b, labels, tracks):
            arr.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "plane_label", labels)
        object.__setattr__(self, "track_id", tracks)

    def __len__(self) -> int:
        return self.a.shape[0]

    def subset(self, index) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.a[index], self.b[index], self.plane_label[index], self.track_id[index]
        )

    def swapped(self) -> "CorrespondenceSet":
        """The same pairs with the A and B sides exchanged."""
        return CorrespondenceSet(self.b, self.a, self.plane_label, self.track_id)

    def to_json_dict(self) -> dict:
        pairs = np.hstack([self.a, self.b])
        doc = {
            "pairs": [[float(v) for v in row] for row in pairs],
            "plane_label": [
                None if int(l) == NO_LABEL else int(l) for l in self.plane_label
            ],
        }
        if not np.array_equal(self.track_id, np.arange(len(self))):
            doc["track_id"] = [int(t) for t in self.track_id]
        return doc

    @staticmethod
    def from_json_dict(doc: dict) -> "CorrespondenceSet":
        pairs = np.asarray(doc["pairs"], dtype=float)
        if pairs.size == 0:
            pairs = pairs.reshape(0, 4)
        if pairs.ndim != 2 or pairs.shape[1] != 4:
            raise InvalidInputError("pairs must be rows of [uA, vA, uB, vB]")
        labels = doc.get("plane_label")
        if labels is not None:
            labels = np.array(
                [NO_LABEL if l is None else int(l) for l in labels], dtype=np.int64
            )
        tracks = doc.get("track_id")
        if tracks is not None:
            tracks = np.asarray(tracks, dtype=np.int64)
        return CorrespondenceSet(pairs[:, :2], pairs[:, 2:], labels, tracks)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @staticmethod
    def load(path) -> "CorrespondenceSet":
        return CorrespondenceSet.from_json_dict(json.loads(Path(path).read_text()))


def join_on_tracks(first: CorrespondenceSet, second: CorrespondenceSet) -> CorrespondenceSet:
    """Pair the B-sides of two correspondence sets that share an A image.

    Both inputs must be correspondences against the same reference (their
    A-sides); the result pairs ``first.b`` with ``second.b`` for every track
    visible in both, so it relates the two non-reference images directly.
    """
    common, idx_first, idx_second = np.intersect1d(
        first.track_id, second.track_id, return_indices=True
    )
    if common.size == 0:
        raise InsufficientDataError("no shared tracks between observations")
    return CorrespondenceSet(
        first.b[idx_first],
        second.b[idx_second],
        first.plane_label[idx_first],
        common,
    )


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map between image planes.

    The stored matrix is normalized so its middle singular value equals 1,
    which is the conditioning expected by the analytic decomposition.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise InvalidInputError("homography must be 3x3")
        svals = np.linalg.svd(m, compute_uv=False)
        if svals[1] < 1e-12 * max(svals[0], 1.0) or svals[2] <= 0:
            raise DegenerateModelError("homography is singular")
        m = m / svals[1]
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True, eq=False)
class PoseHypothesis:
    """One candidate relative pose with its reliability ingredients.

    ``support`` is the inlier count behind the estimate and ``spread`` the
    bounding-box area ratio of those inliers; both feed pose fusion.
    ``zero_motion`` marks a homography indistinguishable from a pure
    rotation (translation direction undefined); ``unstable_translation``
    marks an epipolar estimate with too little parallax to trust the
    direction.
    """

    pose: DirectionalPose
    plane_normal: np.ndarray = None
    support: int = 0
    spread: float = 1.0
    zero_motion: bool = False
    unstable_translation: bool = False

    def __post_init__(self):
        if self.plane_normal is not None:
            n = np.asarray(self.plane_normal, dtype=float)
            n = n / np.linalg.norm(n)
            n.flags.writeable = False
            object.__setattr__(self, "plane_normal", n)


def point_spread(points, image_size) -> float:
    """Bounding-box area of ``points`` divided by the image area, in [0, 1]."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.shape[0] < 1:
        raise InsufficientDataError("point_spread needs at least one point")
    w, h = float(image_size[0]), float(image_size[1])
    if w <= 0 or h <= 0:
        raise InvalidInputError("image size must be positive")
    extent = pts.max(axis=0) - pts.min(axis=0)
    return float(min(1.0, (extent[0] * extent[1]) / (w * h)))


# ---------------------------------------------------------------------------
# Homography estimation
# ---------------------------------------------------------------------------


def _normalize_points(pts: np.ndarray):
    """Hartley normalization: zero centroid, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / d if d > 1e-12 else 1.0
    t = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return (pts - centroid) * scale, t


def homography_dlt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normalized direct linear transform for ``b ~ H a`` (pixel inputs)."""
    n = a.shape[0]
    if n < 4:
        raise InsufficientDataError("homography needs at least 4 pairs")
    an, ta = _normalize_points(a)
    bn, tb = _normalize_points(b)
    m = np.zeros((2 * n, 9))
    x, y = an[:, 0], an[:, 1]
    u, v = bn[:, 0], bn[:, 1]
    m[0::2, 0] = x
    m[0::2, 1] = y
    m[0::2, 2] = 1.0
    m[0::2, 6] = -u * x
    m[0::2, 7] = -u * y
    m[0::2, 8] = -u
    m[1::2, 3] = x
    m[1::2, 4] = y
    m[1::2, 5] = 1.0
    m[1::2, 6] = -v * x
    m[1::2, 7] = -v * y
    m[1::2, 8] = -v
    _, svals, vt = np.linalg.svd(m)
    if svals[-2] < 1e-10 * svals[0]:
        raise DegenerateModelError("degenerate point configuration")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(tb) @ h @ ta


def symmetric_transfer_error(h: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pair symmetric transfer error sqrt(d_fwd^2 + d_bwd^2) in pixels."""
    h_inv = np.linalg.inv(h)

    def _transfer(m, src):
        p = src @ m[:, :2].T + m[:, 2]
        w = p[:, 2]
        bad = np.abs(w) < 1e-12
        w = np.where(bad, 1.0, w)
        out = p[:, :2] / w[:, None]
        out[bad] = np.inf
        return out

    fwd = _transfer(h, a) - b
    bwd = _transfer(h_inv, b) - a
    with np.errstate(invalid="ignore"):
        err = np.sqrt(np.einsum("ij,ij->i", fwd, fwd) + np.einsum("ij,ij->i", bwd, bwd))
    return np.where(np.isfinite(err), err, np.inf)


def _adaptive_iters(inlier_ratio: float, sample_size: int, confidence: float = 0.9999) -> int:
    w = min(max(inlier_ratio, 0.0), 1.0 - 1e-12)
    p_good = w**sample_size
    if p_good >= 1.0 - 1e-12:
        return 1
    if p_good <= 1e-9:
        return np.iinfo(np.int64).max  # never below the caller's budget
    return int(np.ceil(np.log(1.0 - confidence) / np.log1p(-p_good)))


def estimate_homography_ransac(
    c: CorrespondenceSet,
    intr: Intrinsics,
    threshold_px: float = 1.0,
    max_iters: int = 2000,
    seed: int = 0,
    refine_iters: int = 3,
):
    """RANSAC homography under symmetric transfer error.

    The final model is a normalized DLT refit on the consensus set of the
    best minimal sample.  Deterministic for a fixed ``seed``.

    Args:
        c: correspondence set (at least 4 pairs).
        intr: accepted for interface symmetry with the epipolar path; the
            pixel-space estimation itself does not use it.
        threshold_px: inlier gate on the symmetric transfer error.
        max_iters: RANSAC iteration budget (adaptively shrunk).
        seed: RNG seed.
        refine_iters: rounds of consensus re-stabilization after the
            refit (1 reproduces the plain refit-on-inliers protocol).

    Returns:
        (Homography, inlier mask) with the mask over the input pairs.
    """
    n = len(c)
    if n < 4:
        raise InsufficientDataError(f"homography RANSAC needs >= 4 pairs, got {n}")
    rng = np.random.default_rng(seed)
    a, b = c.a, c.b

    best_mask = None
    best_count = -1
    target = max(1, int(max_iters))
    it = 0
    while it < target:
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = homography_dlt(a[idx], b[idx])
        except DegenerateModelError:
            continue
        try:
            err = symmetric_transfer_error(h, a, b)
        except np.linalg.LinAlgError:
            continue
        mask = err <= threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            target = min(target, _adaptive_iters(count / n, 4))
    if best_mask is None or best_count < 4:
        raise DegenerateModelError("RANSAC found no homography with 4 inliers")
    # Refit on the consensus and optionally let the consensus
    # re-stabilize: the minimal-sample consensus is biased toward its own
    # noise realization, and a couple of least-squares rounds remove most
    # of that bias.
    mask = best_mask
    h = homography_dlt(a[mask], b[mask])
    for _ in range(max(0, refine_iters - 1)):
        new_mask = symmetric_transfer_error(h, a, b) <= threshold_px
        if int(new_mask.sum()) < 4 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        h = homography_dlt(a[mask], b[mask])
    return Homography(h), mask


# ---------------------------------------------------------------------------
# Homography decomposition (analytic SVD factorization)
# ---------------------------------------------------------------------------


def _rays(intr: Intrinsics, px: np.ndarray) -> np.ndarray:
    k_inv = intr.inverse_matrix()
    homog = np.hstack([px, np.ones((px.shape[0], 1))])
    return homog @ k_inv.T


def _faugeras_candidates(h_cal: np.ndarray):
    """All analytic factorizations H ~ R + t n^T of a calibrated homography.

    Returns (candidates, spread) where candidates is a list of
    ``(R, t, n)`` triples and spread is the relative singular-value spread
    ``(d1 - d3) / d2`` used for the zero-baseline test.  Each triple is
    gauge-consistent, i.e. ``h_cal = c (R + t n^T)`` for a positive or
    negative scalar ``c``; the plane-in-front and positive-depth tests
    (left to the caller) reject the triples with ``c < 0``.
    """
    u, d, vt = np.linalg.svd(h_cal)
    d1, d2, d3 = d
    spread = (d1 - d3) / d2
    if spread < ZERO_MOTION_SPREAD:
        return [], spread
    s = np.linalg.det(u) * np.linalg.det(vt)
    v = vt.T

    denom = d1 * d1 - d3 * d3
    x1 = np.sqrt(max((d1 * d1 - d2 * d2) / denom, 0.0))
    x3 = np.sqrt(max((d2 * d2 - d3 * d3) / denom, 0.0))

    candidates = []
    aux_st = np.sqrt(max((d1 * d1 - d2 * d2) * (d2 * d2 - d3 * d3), 0.0)) / (
        (d1 + d3) * d2
    )
    ct = (d2 * d2 + d1 * d3) / ((d1 + d3) * d2)
    for e1 in (1.0, -1.0):
        for e3 in (1.0, -1.0):
            st = e1 * e3 * aux_st
            rp = np.array([[ct, 0.0, -st], [0.0, 1.0, 0.0], [st, 0.0, ct]])
            tp = (d1 - d3) * np.array([e1 * x1, 0.0, -e3 * x3])
            npl = np.array([e1 * x1, 0.0, e3 * x3])
            # The factorization reads h_cal = s d' R + t_raw n^T with
            # d' = +d2 here; dividing t_raw by (s d') restores the unit
            # plane-distance gauge used by the cheirality tests.
            candidates.append((s * (u @ rp @ vt), (u @ tp) / (s * d2), v @ npl))

    if d1 - d3 > 1e-12 * d2:
        aux_sp = np.sqrt(max((d1 * d1 - d2 * d2) * (d2 * d2 - d3 * d3), 0.0)) / (
            (d1 - d3) * d2
        )
        cp = (d1 * d3 - d2 * d2) / ((d1 - d3) * d2)
        for e1 in (1.0, -1.0):
            for e3 in (1.0, -1.0):
                sp = e1 * e3 * aux_sp
                rp = np.array([[cp, 0.0, sp], [0.0, -1.0, 0.0], [sp, 0.0, -cp]])
                tp = (d1 + d3) * np.array([e1 * x1, 0.0, e3 * x3])
                npl = np.array([e1 * x1, 0.0, e3 * x3])
                # d' = -d2 on this branch.
                candidates.append(
                    (s * (u @ rp @ vt), (u @ tp) / (-s * d2), v @ npl)
                )
    return candidates, spread


def decompose_homography_candidates(
    h: Homography,
    intr: Intrinsics,
    c: CorrespondenceSet,
    image_size=None,
) -> list:
    """All physically valid factorizations of a plane-induced homography.

    After the cheirality tests (plane in front of the first camera,
    positive point depths in both views) at most two distinct solutions
    survive; they reproduce the homography equally well, so the residual
    cannot break the tie for a single plane.  The list is ordered by
    reprojection residual, with ties resolved toward the solution whose
    plane normal is most aligned with the mean viewing ray (a plane facing
    the camera is the likelier physical interpretation).  Callers
    with several planes should instead pick the mutually consistent
    combination; see :func:`acrkit.fusion.i2pe`.

    A homography with (numerically) equal singular values is returned as a
    single zero-motion hypothesis with the rotation recovered and the
    translation direction undefined.
    """
    if len(c) < 1:
        raise InsufficientDataError("decomposition needs correspondences")
    k = intr.matrix()
    k_inv = intr.inverse_matrix()
    h_cal = k_inv @ h.matrix @ k

    rays_a = _rays(intr, c.a)
    rays_b = _rays(intr, c.b)
    mean_ray = rays_a.mean(axis=0)
    mean_ray = mean_ray / np.linalg.norm(mean_ray)

    # Fix the overall sign so that x_b^T H x_a > 0 for genuine pairs.
    signs = np.einsum("ij,ij->i", rays_b, rays_a @ h_cal.T)
    if np.median(signs) < 0:
        h_cal = -h_cal

    spread_val = point_spread(c.a, image_size) if image_size else 1.0
    candidates, _ = _faugeras_candidates(h_cal)
    if not candidates:
        r = Rotation.from_matrix(
            h_cal / np.linalg.svd(h_cal, compute_uv=False)[1], reproject=True
        )
        return [
            PoseHypothesis(
                pose=DirectionalPose(r, np.array([0.0, 0.0, 1.0])),
                plane_normal=None,
                support=len(c),
                spread=spread_val,
                zero_motion=True,
            )
        ]

    surviving = []
    for r_m, t, n in candidates:
        n_norm = np.linalg.norm(n)
        t_norm = np.linalg.norm(t)
        if n_norm < 1e-12 or t_norm < 1e-12:
            continue
        n = n / n_norm
        # Plane must lie in front of camera A; (t, n) -> (-t, -n) is the
        # same factorization, so flip to make that so.
        front = rays_a @ n
        if np.median(front) < 0:
            n = -n
            t = -t
            front = -front
        if np.any(front <= 0):
            continue
        depth_a = 1.0 / front  # plane distance gauge d = 1
        pts_b = (rays_a * depth_a[:, None]) @ r_m.T + t
        if np.any(pts_b[:, 2] <= 0):
            continue
        h_cand = k @ (r_m + np.outer(t, n)) @ k_inv
        residual = float(np.mean(symmetric_transfer_error(h_cand, c.a, c.b)))
        t_dir = t / np.linalg.norm(t)
        duplicate = False
        for other in surviving:
            if (
                np.abs(other[1] - r_m).max() < 1e-9
                and float(other[2] @ t_dir) > 1.0 - 1e-12
            ):
                duplicate = True
                break
        if not duplicate:
            surviving.append((residual, r_m, t_dir, n, float(n @ mean_ray)))
    if not surviving:
        raise CheiralityError("no decomposition with full positive-depth support")
    surviving.sort(key=lambda item: (round(item[0], 9), -item[4]))
    return [
        PoseHypothesis(
            pose=DirectionalPose(Rotation.from_matrix(r_m, reproject=True), t_dir),
            plane_normal=n,
            support=len(c),
            spread=spread_val,
        )
        for _, r_m, t_dir, n, _ in surviving
    ]


def decompose_homography(
    h: Homography,
    intr: Intrinsics,
    c: CorrespondenceSet,
    image_size=None,
) -> PoseHypothesis:
    """Best factorization of a plane-induced homography.

    Among the analytic solutions, keeps those giving every input pair
    positive depth in both views and returns the one with the lowest
    reprojection residual (ties resolved toward the camera-facing plane
    normal, see :func:`decompose_homography_candidates`).

    Raises:
        CheiralityError: no solution places all points in front of both
            cameras.
    """
    return decompose_homography_candidates(h, intr, c, image_size)[0]


# ---------------------------------------------------------------------------
# Epipolar baseline (normalized 8-point solver)
# ---------------------------------------------------------------------------


def _essential_from_rays(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Least-squares essential matrix for x_b^T E x_a = 0, constraints enforced."""
    m = np.column_stack(
        [
            xb[:, 0] * xa[:, 0],
            xb[:, 0] * xa[:, 1],
            xb[:, 0] * xa[:, 2],
            xb[:, 1] * xa[:, 0],
            xb[:, 1] * xa[:, 1],
            xb[:, 1] * xa[:, 2],
            xb[:, 2] * xa[:, 0],
            xb[:, 2] * xa[:, 1],
            xb[:, 2] * xa[:, 2],
        ]
    )
    _, _, vt = np.linalg.svd(m, full_matrices=False)
    e = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u[:, -1] *= -1
    if np.linalg.det(vt) < 0:
        vt[-1] *= -1
    sm = 0.5 * (s[0] + s[1])
    return u @ np.diag([sm, sm, 0.0]) @ vt


def sampson_error(f: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """First-order geometric (Sampson) distance in pixels for b^T F a = 0."""
    ah = np.hstack([a, np.ones((a.shape[0], 1))])
    bh = np.hstack([b, np.ones((b.shape[0], 1))])
    fa = ah @ f.T
    ftb = bh @ f
    num = np.einsum("ij,ij->i", bh, fa)
    den = fa[:, 0] ** 2 + fa[:, 1] ** 2 + ftb[:, 0] ** 2 + ftb[:, 1] ** 2
    den = np.where(den < 1e-18, 1e-18, den)
    return np.abs(num) / np.sqrt(den)


def _triangulate(r_m: np.ndarray, t: np.ndarray, xa: np.ndarray, xb: np.ndarray):
    """Linear triangulation for candidate (R, t); returns depths in both views."""
    n = xa.shape[0]
    rows = np.zeros((n, 4, 4))
    # Camera A: P = [I | 0]; camera B: P = [R | t].
    rows[:, 0, 0] = -1.0
    rows[:, 0, 2] = xa[:, 0] / xa[:, 2]
    rows[:, 1, 1] = -1.0
    rows[:, 1, 2] = xa[:, 1] / xa[:, 2]
    pb = np.concatenate([r_m, t[:, None]], axis=1)
    rows[:, 2, :] = (xb[:, 0] / xb[:, 2])[:, None] * pb[2] - pb[0]
    rows[:, 3, :] = (xb[:, 1] / xb[:, 2])[:, None] * pb[2] - pb[1]
    _, _, vt = np.linalg.svd(rows)
    pts = vt[:, -1, :]
    w = pts[:, 3]
    w = np.where(np.abs(w) < 1e-15, 1e-15, w)
    x = pts[:, :3] / w[:, None]
    za = x[:, 2]
    zb = x @ r_m[2] + t[2]
    return x, za, zb


def estimate_epipolar(
    c: CorrespondenceSet,
    intr: Intrinsics,
    threshold_px: float = 1.0,
    max_iters: int = 2000,
    seed: int = 0,
    parallax_min_deg: float = 0.1,
    refine_iters: int = 3,
) -> PoseHypothesis:
    """Relative pose via a normalized 8-point solver inside RANSAC.

    The essential matrix is estimated on calibrated rays with Sampson error
    (in pixels) as the inlier gate, decomposed into the four (R, t)
    candidates, and disambiguated by a positive-depth vote.  When the median
    triangulation parallax falls below ``parallax_min_deg`` the translation
    direction is unreliable and the result carries the
    ``unstable_translation`` flag.
    """
    n = len(c)
    if n < 8:
        raise InsufficientDataError(f"epipolar estimation needs >= 8 pairs, got {n}")
    rng = np.random.default_rng(seed)
    xa = _rays(intr, c.a)
    xb = _rays(intr, c.b)
    k = intr.matrix()
    k_inv = intr.inverse_matrix()

    best_mask = None
    best_count = -1
    target = max(1, int(max_iters))
    it = 0
    while it < target:
        it += 1
        idx = rng.choice(n, size=8, replace=False)
        e = _essential_from_rays(xa[idx], xb[idx])
        f = k_inv.T @ e @ k_inv
        err = sampson_error(f, c.a, c.b)
        mask = err <= threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            target = min(target, _adaptive_iters(count / n, 8))
    if best_mask is None or best_count < 8:
        raise DegenerateModelError("RANSAC found no essential matrix with 8 inliers")
    mask = best_mask
    e = _essential_from_rays(xa[mask], xb[mask])
    for _ in range(max(0, refine_iters - 1)):
        f = k_inv.T @ e @ k_inv
        new_mask = sampson_error(f, c.a, c.b) <= threshold_px
        if int(new_mask.sum()) < 8 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        e = _essential_from_rays(xa[mask], xb[mask])
    best_mask = mask
    best_count = int(mask.sum())

    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u[:, -1] *= -1
    if np.linalg.det(vt) < 0:
        vt[-1] *= -1
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]

    # Cheirality vote on a capped subset of inliers.
    in_idx = np.flatnonzero(best_mask)
    if in_idx.size > 200:
        in_idx = in_idx[
            np.linspace(0, in_idx.size - 1, 200).round().astype(int)
        ]
    sa, sb = xa[in_idx], xb[in_idx]
    best_cand = None
    best_votes = -1
    for r_m, t_c in ((r1, t), (r1, -t), (r2, t), (r2, -t)):
        pts, za, zb = _triangulate(r_m, t_c, sa, sb)
        votes = int(np.sum((za > 0) & (zb > 0)))
        if votes > best_votes:
            best_votes = votes
            best_cand = (r_m, t_c, pts, za, zb)
    r_m, t_c, pts, za, zb = best_cand

    # Parallax: angle at the 3-D point between the two viewing rays.
    center_b = -r_m.T @ t_c
    rays1 = pts
    rays2 = pts - center_b
    nrm = np.linalg.norm(rays1, axis=1) * np.linalg.norm(rays2, axis=1)
    ok = nrm > 1e-15
    cosang = np.clip(
        np.einsum("ij,ij->i", rays1, rays2)[ok] / nrm[ok], -1.0, 1.0
    )
    parallax = float(np.median(np.degrees(np.arccos(cosang)))) if ok.any() else 0.0
    unstable = parallax < parallax_min_deg

    return PoseHypothesis(
        pose=DirectionalPose(Rotation.from_matrix(r_m, reproject=True), t_c),
        plane_normal=None,
        support=best_count,
        spread=1.0,
        unstable_translation=unstable,
    )
