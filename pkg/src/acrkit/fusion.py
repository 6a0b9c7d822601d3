"""Per-plane pose hypotheses fused into one relative pose estimate.

The pipeline entry point :func:`i2pe` erodes the two plane masks, matches
plane regions across them, estimates one homography per matched pair from
the correspondences restricted to that pair, decomposes each homography,
and fuses the resulting hypotheses weighted by correspondence count and
spatial spread.  Correspondences outside the matched plane regions never
reach the estimators, which is what makes the estimate insensitive to
off-plane contamination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AcrError,
    AmbiguousDirectionError,
    CheiralityError,
    DegenerateModelError,
    EstimationFailureError,
    InsufficientDataError,
    InvalidInputError,
)
from .geometry import DirectionalPose, Intrinsics, Rotation, rotation_angle, direction_angle
from .plane_match import PlaneSegmentMap, erode_mask, match_plane_maps
from .pose_estimation import (
    CorrespondenceSet,
    PoseHypothesis,
    decompose_homography_candidates,
    estimate_homography_ransac,
    point_spread,
)


@dataclass(frozen=True)
class FusionWeights:
    """Non-negative per-hypothesis weights normalized to sum 1."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise InvalidInputError("weights must be a non-empty vector")
        if np.any(v < 0):
            raise InvalidInputError("weights must be non-negative")
        total = v.sum()
        v = v / total if total > 0 else np.full(v.size, 1.0 / v.size)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def hypothesis_weight(h: PoseHypothesis) -> float:
    """Unnormalized reliability: correspondence count times spatial spread."""
    return float(h.support) * float(h.spread)


def weights_from_hypotheses(hypotheses) -> FusionWeights:
    return FusionWeights(np.array([hypothesis_weight(h) for h in hypotheses]))


def fuse_poses(hypotheses, weights: FusionWeights) -> DirectionalPose:
    """Weighted fusion of directional poses.

    The rotation is the weighted chordal-L2 mean (largest eigenvector of
    the weighted quaternion outer-product sum, which handles the q/-q sign
    ambiguity); the direction is the normalized weighted sum of the unit
    directions after aligning every direction to the hemisphere of the
    highest-weight hypothesis.
    """
    hyps = list(hypotheses)
    if not hyps:
        raise InsufficientDataError("no hypotheses to fuse")
    if len(weights) != len(hyps):
        raise InvalidInputError("one weight per hypothesis required")
    w = weights.values

    quats = np.array([h.pose.rotation.quaternion() for h in hyps])
    acc = np.zeros((4, 4))
    for q, wi in zip(quats, w):
        acc += wi * np.outer(q, q)
    vals, vecs = np.linalg.eigh(acc)
    rotation = Rotation.from_quaternion(vecs[:, -1])

    anchor = hyps[int(np.argmax(w))].pose.direction
    summed = np.zeros(3)
    for h, wi in zip(hyps, w):
        d = h.pose.direction
        if float(d @ anchor) < 0:
            d = -d
        summed += wi * d
    norm = np.linalg.norm(summed)
    if norm < 1e-9:
        raise AmbiguousDirectionError("weighted direction sum vanished")
    return DirectionalPose(rotation, summed / norm)


@dataclass(frozen=True)
class I2peConfig:
    """Knobs of the plane-mediated estimation pipeline."""

    erosion_radius: int = 5
    ransac_threshold_px: float = 1.0
    ransac_max_iters: int = 2000
    seed: int = 0
    edge_sigma_frac: float = 0.1  # of the reference image diagonal
    normalize_affinity: bool = True
    match_mode: str = "exact"  # spectral fallback on budget overrun
    min_pair_correspondences: int = 4
    fusion: str = "weighted"  # or "winner"


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    """Fused estimate plus the per-plane evidence behind it.

    ``inlier_track_ids`` are the correspondences that survived the
    per-plane consensus; downstream consumers (the scale system in
    particular) must not see anything else.
    """

    pose: DirectionalPose
    zero_motion: bool
    hypotheses: tuple
    weights: FusionWeights
    plane_pairs: tuple
    inlier_track_ids: np.ndarray = None
    # Per matched pair: the full cheirality-valid candidate list and the
    # consensus correspondences behind it.  Loop drivers re-select among
    # these with structural priors (see acrkit.acr_loop).
    pair_candidates: tuple = ()
    pair_inliers: tuple = ()

    def report(self) -> dict:
        """JSON-ready summary of the per-plane hypotheses."""
        return {
            "zero_motion": self.zero_motion,
            "plane_pairs": [list(p) for p in self.plane_pairs],
            "hypotheses": [
                {
                    "ref_plane": pair[0],
                    "cur_plane": pair[1],
                    "support": h.support,
                    "spread": h.spread,
                    "weight": float(w),
                    "zero_motion": h.zero_motion,
                    "rotation": [float(v) for v in h.pose.rotation.matrix.reshape(-1)],
                    "direction": [float(v) for v in h.pose.direction],
                    "plane_normal": None
                    if h.plane_normal is None
                    else [float(v) for v in h.plane_normal],
                }
                for pair, h, w in zip(
                    self.plane_pairs, self.hypotheses, self.weights.values
                )
            ],
        }


def _pairwise_disagreement(a: PoseHypothesis, b: PoseHypothesis) -> float:
    rot = rotation_angle(a.pose.rotation.compose(b.pose.rotation.inverse()))
    if a.zero_motion or b.zero_motion:
        return rot
    return rot + direction_angle(a.pose.direction, b.pose.direction)


def _select_consistent(candidate_lists) -> list:
    """One hypothesis per plane, chosen for mutual agreement.

    Homography decomposition leaves up to two physically valid solutions
    per plane; only the true relative pose repeats across planes, so the
    combination minimizing the summed pairwise disagreement selects it.
    The search space is at most 2^K and K is small at desk scale.
    """
    sizes = [len(lst) for lst in candidate_lists]
    if all(s == 1 for s in sizes) or len(candidate_lists) == 1:
        return [lst[0] for lst in candidate_lists]
    best = None
    best_cost = np.inf
    for combo in np.ndindex(*sizes):
        chosen = [lst[i] for lst, i in zip(candidate_lists, combo)]
        cost = 0.0
        for i in range(len(chosen)):
            for j in range(i + 1, len(chosen)):
                cost += _pairwise_disagreement(chosen[i], chosen[j])
        # Deterministic preference for the per-plane front candidates.
        cost += 1e-9 * sum(combo)
        if cost < best_cost:
            best_cost = cost
            best = chosen
    return best


def i2pe(
    c: CorrespondenceSet,
    m_ref: PlaneSegmentMap,
    m_cur: PlaneSegmentMap,
    intr: Intrinsics,
    cfg: I2peConfig = None,
) -> PoseEstimate:
    """Plane-mediated relative pose between a reference and a current image.

    The A side of ``c`` must hold reference-image pixels and the B side
    current-image pixels; the returned pose maps reference-camera
    coordinates into current-camera coordinates.

    Raises:
        EstimationFailureError: no matched plane pair yields a usable
            homography (fewer than the configured in-plane correspondences,
            or every decomposition fails).
    """
    cfg = cfg or I2peConfig()
    ref = m_ref.eroded(cfg.erosion_radius)
    cur = m_cur.eroded(cfg.erosion_radius)
    sigma = cfg.edge_sigma_frac * math.hypot(m_ref.width, m_ref.height)
    pairs = match_plane_maps(
        ref,
        cur,
        c,
        sigma=sigma,
        normalize=cfg.normalize_affinity,
        mode=cfg.match_mode,
    )
    if not pairs:
        raise EstimationFailureError("no matchable plane pairs")

    labels_ref = ref.label_at(c.a)
    labels_cur = cur.label_at(c.b)
    image_size = (m_ref.width, m_ref.height)

    candidate_lists = []
    kept_pairs = []
    inlier_tracks = []
    pair_inlier_sets = []
    for index, (ref_id, cur_id) in enumerate(pairs):
        mask = (labels_ref == ref_id) & (labels_cur == cur_id)
        if int(mask.sum()) < max(cfg.min_pair_correspondences, 4):
            continue
        subset = c.subset(mask)
        try:
            h, inliers = estimate_homography_ransac(
                subset,
                intr,
                threshold_px=cfg.ransac_threshold_px,
                max_iters=cfg.ransac_max_iters,
                seed=cfg.seed + index,
            )
            inlier_set = subset.subset(inliers)
            candidates = decompose_homography_candidates(
                h, intr, inlier_set, image_size=image_size
            )
        except (DegenerateModelError, CheiralityError, InsufficientDataError):
            continue
        spread = point_spread(inlier_set.a, image_size)
        candidate_lists.append(
            [replace(cand, spread=spread) for cand in candidates]
        )
        kept_pairs.append((ref_id, cur_id))
        inlier_tracks.append(inlier_set.track_id)
        pair_inlier_sets.append(inlier_set)
    if not candidate_lists:
        raise EstimationFailureError(
            "no plane pair with enough consistent correspondences"
        )
    inlier_track_ids = np.unique(np.concatenate(inlier_tracks))

    hypotheses = _select_consistent(candidate_lists)
    return _fuse_hypotheses(
        hypotheses,
        kept_pairs,
        inlier_track_ids,
        cfg,
        pair_candidates=tuple(tuple(lst) for lst in candidate_lists),
        pair_inliers=tuple(pair_inlier_sets),
    )


def _fuse_hypotheses(
    hypotheses,
    kept_pairs,
    inlier_track_ids,
    cfg: I2peConfig,
    pair_candidates=(),
    pair_inliers=(),
) -> PoseEstimate:
    hypotheses = list(hypotheses)
    kept_pairs = list(kept_pairs)
    weights = weights_from_hypotheses(hypotheses)

    zero_flags = np.array([h.zero_motion for h in hypotheses])
    zero_weight = float(weights.values[zero_flags].sum())
    if zero_weight > 0.5:
        # Dominant zero-baseline evidence: rotation is still meaningful,
        # the direction is not.
        rot_pose = fuse_rotation_only(hypotheses, weights)
        return PoseEstimate(
            pose=rot_pose,
            zero_motion=True,
            hypotheses=tuple(hypotheses),
            weights=weights,
            plane_pairs=tuple(kept_pairs),
            inlier_track_ids=inlier_track_ids,
            pair_candidates=pair_candidates,
            pair_inliers=pair_inliers,
        )
    if zero_flags.any():
        keep = ~zero_flags
        hypotheses = [h for h, k in zip(hypotheses, keep) if k]
        kept_pairs = [p for p, k in zip(kept_pairs, keep) if k]
        weights = weights_from_hypotheses(hypotheses)

    if cfg.fusion == "winner":
        best = int(np.argmax(weights.values))
        fused = hypotheses[best].pose
    elif cfg.fusion == "weighted":
        fused = fuse_poses(hypotheses, weights)
    else:
        raise InvalidInputError(f"unknown fusion mode {cfg.fusion!r}")
    return PoseEstimate(
        pose=fused,
        zero_motion=False,
        hypotheses=tuple(hypotheses),
        weights=weights,
        plane_pairs=tuple(kept_pairs),
        inlier_track_ids=inlier_track_ids,
        pair_candidates=pair_candidates,
        pair_inliers=pair_inliers,
    )


def reselect_candidates(estimate: PoseEstimate, chooser, cfg: I2peConfig) -> PoseEstimate:
    """Re-fuse an estimate after choosing among per-pair candidates.

    A plane-induced homography factors into up to two physically valid
    poses that the image data alone cannot separate; ``chooser`` receives
    ``(pair_index, candidates, inliers)`` and returns the index of the
    candidate to keep (None to keep the heuristic head).  Loop drivers use
    structural priors (a commanded pure translation, or consistency with
    the recovered depth map) as the chooser.
    """
    if not estimate.pair_candidates:
        return estimate
    chosen = []
    for index, (candidates, inliers) in enumerate(
        zip(estimate.pair_candidates, estimate.pair_inliers)
    ):
        pick = 0
        if len(candidates) > 1:
            picked = chooser(index, candidates, inliers)
            if picked is not None:
                pick = int(picked)
        chosen.append(candidates[pick])
    return _fuse_hypotheses(
        chosen,
        list(estimate.plane_pairs),
        estimate.inlier_track_ids,
        cfg,
        pair_candidates=estimate.pair_candidates,
        pair_inliers=estimate.pair_inliers,
    )


def fuse_rotation_only(hypotheses, weights: FusionWeights) -> DirectionalPose:
    """Chordal-mean rotation with a placeholder direction (zero motion)."""
    hyps = list(hypotheses)
    acc = np.zeros((4, 4))
    for h, wi in zip(hyps, weights.values):
        q = h.pose.rotation.quaternion()
        acc += wi * np.outer(q, q)
    _, vecs = np.linalg.eigh(acc)
    return DirectionalPose(
        Rotation.from_quaternion(vecs[:, -1]), np.array([0.0, 0.0, 1.0])
    )
