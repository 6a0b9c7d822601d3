"""Synthetic ground-truth world for exercising the relocalization stack.

A scene is a set of planar patches (plus optional free clutter points)
observed by a virtual pinhole camera.  Observations pair the reference view
(extrinsic identity) with a current view and degrade the current pixels two
ways:

* uniform matching noise: a chosen fraction of pixels receives additive
  U(-r, r) per axis;
* an illumination-contamination proxy: correspondences whose track lies
  outside the detected plane regions turn into uniform in-image outliers at
  a high rate, in-plane ones at a low rate, and a dropout fraction vanishes
  entirely.  This encodes the premise that descriptors on planar regions
  survive lighting change while others mismatch, without simulating
  photometry.

The :class:`SimulatedExecutor` drives the relocalization loop through a
hidden hand-eye pose: every commanded hand motion is conjugated by it
before moving the camera, and the executor never reveals it.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .acr_loop import MotionExecutor, Observation, ObservationTruth
from .errors import EmptyObservationError, InvalidInputError, InvalidSceneError
from .geometry import DirectionalPose, Intrinsics, Pose, Rotation, compose, rotation_angle, direction_angle
from .plane_match import PlaneSegmentMap
from .pose_estimation import (
    CorrespondenceSet,
    decompose_homography,
    estimate_epipolar,
    estimate_homography_ransac,
)

# Virtual full-frame body: 5760x3840 px, 36x24 mm sensor, 35 mm lens.
CANON_IMAGE_SIZE = (5760, 3840)
CANON_INTRINSICS = Intrinsics(fx=5600.0, fy=5600.0, cx=2880.0, cy=1920.0)


@dataclass(frozen=True, eq=False)
class PlaneSpec:
    """One planar patch: ``normal . X = offset`` with a convex polygon.

    The polygon lives in plane-local (u, v) coordinates (meters) around
    ``center`` (a point on the plane, defaulting to ``offset * normal``).
    ``detected`` states whether the segmentation knows this plane; points
    of undetected planes count as off-plane for the lighting proxy.
    """

    normal: tuple
    offset: float
    half_extents: tuple = (0.2, 0.15)
    polygon: tuple = None  # overrides half_extents when given
    count: int = 250
    center: tuple = None
    detected: bool = True

    def unit_normal(self) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise InvalidSceneError("plane normal must be nonzero")
        return n / norm

    def local_polygon(self) -> np.ndarray:
        if self.polygon is not None:
            poly = np.asarray(self.polygon, dtype=float)
            if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
                raise InvalidSceneError("polygon needs at least 3 (u, v) vertices")
            return poly
        hu, hv = float(self.half_extents[0]), float(self.half_extents[1])
        if hu <= 0 or hv <= 0:
            raise InvalidSceneError("degenerate polygon extents")
        return np.array([[-hu, -hv], [hu, -hv], [hu, hv], [-hu, hv]])

    def basis(self):
        """(origin, e_u, e_v) of the local frame; deterministic in normal."""
        n = self.unit_normal()
        helper = (
            np.array([0.0, 0.0, 1.0])
            if abs(n[2]) < 0.9
            else np.array([1.0, 0.0, 0.0])
        )
        e_u = np.cross(helper, n)
        e_u = e_u / np.linalg.norm(e_u)
        e_v = np.cross(n, e_u)
        if self.center is not None:
            origin = np.asarray(self.center, dtype=float)
            # Keep the origin exactly on the plane.
            origin = origin + (self.offset - float(n @ origin)) * n
        else:
            origin = self.offset * n
        return origin, e_u, e_v


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Scene description: planar patches plus optional free clutter points."""

    planes: tuple
    seed: int = 0
    clutter_count: int = 0
    clutter_box: tuple = None  # ((x0,x1),(y0,y1),(z0,z1)) in meters

    def __post_init__(self):
        if not self.planes and self.clutter_count == 0:
            raise InvalidSceneError("scene needs at least one plane or clutter")
        for p in self.planes:
            if p.count < 4:
                raise InvalidSceneError("each plane needs at least 4 points")
            if p.offset <= 0:
                raise InvalidSceneError(
                    "plane offsets must be positive (in front of the reference)"
                )
        if self.clutter_count and self.clutter_box is None:
            raise InvalidSceneError("clutter_count needs a clutter_box")


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Uniform matching noise: a mu-fraction of pixels gets U(-r, r)."""

    magnitude_r: float = 0.0
    ratio_mu: float = 0.0

    def __post_init__(self):
        if self.magnitude_r < 0:
            raise InvalidInputError("noise magnitude must be non-negative")
        if not 0.0 <= self.ratio_mu <= 1.0:
            raise InvalidInputError("noise ratio must be within [0, 1]")


@dataclass(frozen=True, eq=False)
class LightingProxySpec:
    """Differential contamination standing in for illumination change."""

    off_plane_outlier_fraction: float = 0.0
    in_plane_outlier_fraction: float = 0.0
    dropout_fraction: float = 0.0

    def __post_init__(self):
        for v in (
            self.off_plane_outlier_fraction,
            self.in_plane_outlier_fraction,
            self.dropout_fraction,
        ):
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError("lighting fractions must be within [0, 1]")
        if self.in_plane_outlier_fraction > self.off_plane_outlier_fraction:
            raise InvalidInputError(
                "in-plane contamination must not exceed off-plane contamination"
            )


@dataclass(frozen=True, eq=False)
class RigSpec:
    """Camera intrinsics plus the hidden hand-eye pose of the platform."""

    hand_eye: Pose
    intrinsics: Intrinsics = CANON_INTRINSICS
    image_size: tuple = CANON_IMAGE_SIZE


@dataclass(frozen=True, eq=False)
class World:
    """Sampled scene: points in the reference-camera (world) frame."""

    points: np.ndarray  # (N, 3)
    plane_index: np.ndarray  # (N,) 1-based plane id, 0 for clutter
    track_id: np.ndarray  # (N,)
    spec: SceneSpec

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def detected_plane_ids(self) -> list:
        return [
            i + 1 for i, p in enumerate(self.spec.planes) if p.detected
        ]

    def in_plane_tracks(self) -> np.ndarray:
        detected = np.asarray(self.detected_plane_ids, dtype=np.int64)
        return np.isin(self.plane_index, detected)


def _sample_polygon(rng, polygon: np.ndarray, count: int) -> np.ndarray:
    """Uniform rejection sampling inside a convex polygon (local coords)."""
    lo = polygon.min(axis=0)
    hi = polygon.max(axis=0)
    out = np.empty((count, 2))
    filled = 0
    # Half-plane representation with consistent orientation.
    area = 0.0
    for i in range(len(polygon)):
        j = (i + 1) % len(polygon)
        area += (
            polygon[i, 0] * polygon[j, 1] - polygon[j, 0] * polygon[i, 1]
        )
    orient = 1.0 if area > 0 else -1.0
    edges = [
        (polygon[i], polygon[(i + 1) % len(polygon)])
        for i in range(len(polygon))
    ]
    while filled < count:
        draw = rng.uniform(lo, hi, size=(max(count - filled, 16) * 2, 2))
        inside = np.ones(draw.shape[0], dtype=bool)
        for p, q in edges:
            cross = (q[0] - p[0]) * (draw[:, 1] - p[1]) - (q[1] - p[1]) * (
                draw[:, 0] - p[0]
            )
            inside &= orient * cross >= 0
        good = draw[inside]
        take = min(count - filled, good.shape[0])
        out[filled : filled + take] = good[:take]
        filled += take
    return out


def generate_scene(spec: SceneSpec) -> World:
    """Deterministic world sampling: uniform points per plane polygon plus
    uniform clutter in its box, with stable track ids in generation order."""
    rng = np.random.default_rng(spec.seed)
    points = []
    labels = []
    for index, plane in enumerate(spec.planes):
        origin, e_u, e_v = plane.basis()
        uv = _sample_polygon(rng, plane.local_polygon(), plane.count)
        pts = origin + uv[:, 0:1] * e_u + uv[:, 1:2] * e_v
        points.append(pts)
        labels.append(np.full(plane.count, index + 1, dtype=np.int64))
    if spec.clutter_count:
        box = np.asarray(spec.clutter_box, dtype=float)
        pts = rng.uniform(box[:, 0], box[:, 1], size=(spec.clutter_count, 3))
        points.append(pts)
        labels.append(np.zeros(spec.clutter_count, dtype=np.int64))
    all_points = np.vstack(points)
    all_labels = np.concatenate(labels)
    return World(
        points=all_points,
        plane_index=all_labels,
        track_id=np.arange(all_points.shape[0], dtype=np.int64),
        spec=spec,
    )


def _project(intr: Intrinsics, extrinsic: Pose, points: np.ndarray):
    cam = points @ extrinsic.rotation.matrix.T + extrinsic.translation
    depths = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.stack(
            [
                intr.fx * cam[:, 0] / depths + intr.cx,
                intr.fy * cam[:, 1] / depths + intr.cy,
            ],
            axis=1,
        )
    return px, depths


def _inside_convex(polygon: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    area = 0.0
    k = polygon.shape[0]
    for i in range(k):
        j = (i + 1) % k
        area += polygon[i, 0] * polygon[j, 1] - polygon[j, 0] * polygon[i, 1]
    orient = 1.0 if area > 0 else -1.0
    inside = np.ones(u.shape, dtype=bool)
    for i in range(k):
        j = (i + 1) % k
        ex, ey = polygon[j] - polygon[i]
        cross = ex * (v - polygon[i, 1]) - ey * (u - polygon[i, 0])
        inside &= orient * cross >= 0
    return inside


def _occluded(
    world: World, extrinsic: Pose, intr: Intrinsics, px: np.ndarray, depths: np.ndarray
) -> np.ndarray:
    """True for tracks whose viewing ray hits a nearer plane patch.

    Plane patches are opaque: a point (on another plane, or free clutter)
    behind a patch that covers its pixel is not observable in that view.
    """
    k_inv = intr.inverse_matrix()
    rays = np.hstack([px, np.ones((px.shape[0], 1))]) @ k_inv.T
    r_m = extrinsic.rotation.matrix
    t_e = extrinsic.translation
    occluded = np.zeros(px.shape[0], dtype=bool)
    for index, plane in enumerate(world.spec.planes):
        origin, e_u, e_v = plane.basis()
        n_w = plane.unit_normal()
        n_c = r_m @ n_w
        c_c = plane.offset + float(n_c @ t_e)
        denom = rays @ n_c
        with np.errstate(divide="ignore", invalid="ignore"):
            d_hit = c_c / denom
        candidate = (
            (np.abs(denom) > 1e-12)
            & (d_hit > 1e-9)
            & (d_hit < depths - 1e-9)
            & (world.plane_index != index + 1)
        )
        if not candidate.any():
            continue
        hit_cam = rays[candidate] * d_hit[candidate, None]
        hit_world = (hit_cam - t_e) @ r_m
        rel = hit_world - origin
        inside = _inside_convex(plane.local_polygon(), rel @ e_u, rel @ e_v)
        sel = np.flatnonzero(candidate)
        occluded[sel[inside]] = True
    return occluded


def render_plane_mask(
    world: World, extrinsic: Pose, intr: Intrinsics, image_size
) -> PlaneSegmentMap:
    """Label map from the projected plane polygons (detected planes only).

    Overlaps resolve per pixel by plane depth along the viewing ray (a
    z-buffer), so the labeling always names the visible surface; ids are
    recompacted to stay contiguous when a plane falls outside the view.
    Pixels within half a pixel of a polygon edge count as inside, so
    sampled points never round out of their own region.
    """
    w, h = int(image_size[0]), int(image_size[1])
    labels = np.zeros((h, w), dtype=np.int32)
    zbuf = np.full((h, w), np.inf)
    r_m = extrinsic.rotation.matrix
    t_e = extrinsic.translation
    k_inv = intr.inverse_matrix()

    for index, plane in enumerate(world.spec.planes):
        if not plane.detected:
            continue
        origin, e_u, e_v = plane.basis()
        poly = plane.local_polygon()
        verts = origin + poly[:, 0:1] * e_u + poly[:, 1:2] * e_v
        px, depths = _project(intr, extrinsic, verts)
        if np.any(depths <= 1e-9):
            continue
        lo = np.floor(px.min(axis=0)).astype(int)
        hi = np.ceil(px.max(axis=0)).astype(int)
        x0, y0 = max(lo[0], 0), max(lo[1], 0)
        x1, y1 = min(hi[0], w - 1), min(hi[1], h - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        gx, gy = np.meshgrid(xs, ys)
        inside = np.ones(gx.shape, dtype=bool)
        area = 0.0
        k = px.shape[0]
        for i in range(k):
            j = (i + 1) % k
            area += px[i, 0] * px[j, 1] - px[j, 0] * px[i, 1]
        orient = 1.0 if area > 0 else -1.0
        for i in range(k):
            j = (i + 1) % k
            ex, ey = px[j, 0] - px[i, 0], px[j, 1] - px[i, 1]
            cross = ex * (gy - px[i, 1]) - ey * (gx - px[i, 0])
            margin = 0.71 * math.hypot(ex, ey)  # half-pixel cushion
            inside &= orient * cross >= -margin
        if not inside.any():
            continue
        # Depth of this plane along each pixel ray.
        n_c = r_m @ plane.unit_normal()
        c_c = plane.offset + float(n_c @ t_e)
        rays = np.stack(
            [gx + 0.0, gy + 0.0, np.ones_like(gx, dtype=float)], axis=-1
        ) @ k_inv.T
        denom = rays @ n_c
        with np.errstate(divide="ignore", invalid="ignore"):
            depth = c_c / denom
        visible = inside & (depth > 0) & (depth < zbuf[y0 : y1 + 1, x0 : x1 + 1])
        if visible.any():
            sub_l = labels[y0 : y1 + 1, x0 : x1 + 1]
            sub_z = zbuf[y0 : y1 + 1, x0 : x1 + 1]
            sub_l[visible] = index + 1
            sub_z[visible] = depth[visible]

    # Recompact ids that survived rendering.
    present = sorted(set(np.unique(labels)) - {0})
    remap = {old: new + 1 for new, old in enumerate(present)}
    if remap:
        out = np.zeros_like(labels)
        for old, new in remap.items():
            out[labels == old] = new
        labels = out
    return PlaneSegmentMap(labels)


def observe(
    world: World,
    camera_pose: Pose,
    intr: Intrinsics,
    image_size,
    noise: NoiseSpec = None,
    lighting: LightingProxySpec = None,
    seed: int = 0,
    reference_pose: Pose = None,
    render_masks: bool = True,
    reference_mask: PlaneSegmentMap = None,
) -> Observation:
    """One observation of the current view paired against the reference.

    ``camera_pose`` and ``reference_pose`` are extrinsics in the world
    frame (the reference defaults to identity).  Tracks must be visible
    (positive depth, inside the image) in both views to appear.  Noise and
    the lighting proxy corrupt only the current-view pixels.

    Mask rendering dominates the cost at full resolution; callers that
    only need correspondences pass ``render_masks=False``, and loop
    drivers reuse a precomputed ``reference_mask``.
    """
    noise = noise or NoiseSpec()
    lighting = lighting or LightingProxySpec()
    reference_pose = reference_pose or Pose.identity()
    w, h = int(image_size[0]), int(image_size[1])
    rng = np.random.default_rng(seed)

    px_ref, d_ref = _project(intr, reference_pose, world.points)
    px_cur, d_cur = _project(intr, camera_pose, world.points)

    def _in_view(px, depths):
        return (
            (depths > 1e-9)
            & (px[:, 0] >= 0)
            & (px[:, 0] <= w - 1)
            & (px[:, 1] >= 0)
            & (px[:, 1] <= h - 1)
        )

    visible = _in_view(px_ref, d_ref) & _in_view(px_cur, d_cur)
    if visible.any():
        blocked = _occluded(world, reference_pose, intr, px_ref, d_ref) | _occluded(
            world, camera_pose, intr, px_cur, d_cur
        )
        visible &= ~blocked
    if not visible.any():
        raise EmptyObservationError("no track visible in both views")

    idx = np.flatnonzero(visible)
    a = px_ref[idx].copy()
    b_clean = px_cur[idx].copy()
    b = b_clean.copy()
    tracks = world.track_id[idx]
    plane_ids = world.plane_index[idx]
    n = idx.size

    # Matching noise on a mu-fraction of current pixels.
    n_noisy = int(round(noise.ratio_mu * n))
    if n_noisy and noise.magnitude_r > 0:
        chosen = rng.choice(n, size=n_noisy, replace=False)
        b[chosen] += rng.uniform(
            -noise.magnitude_r, noise.magnitude_r, size=(n_noisy, 2)
        )
    elif n_noisy:
        rng.choice(n, size=n_noisy, replace=False)  # keep the stream aligned

    # Lighting proxy: replace fractions of in-plane and off-plane pixels.
    in_plane = np.isin(
        plane_ids, np.asarray(world.detected_plane_ids, dtype=np.int64)
    )
    for selector, fraction in (
        (~in_plane, lighting.off_plane_outlier_fraction),
        (in_plane, lighting.in_plane_outlier_fraction),
    ):
        pool = np.flatnonzero(selector)
        n_out = int(round(fraction * pool.size))
        if n_out:
            chosen = rng.choice(pool, size=n_out, replace=False)
            b[chosen, 0] = rng.uniform(0, w - 1, size=n_out)
            b[chosen, 1] = rng.uniform(0, h - 1, size=n_out)

    keep = np.arange(n)
    n_drop = int(round(lighting.dropout_fraction * n))
    if n_drop:
        dropped = rng.choice(n, size=n_drop, replace=False)
        keep = np.setdiff1d(keep, dropped)
        if keep.size == 0:
            raise EmptyObservationError("dropout removed every correspondence")

    correspondences = CorrespondenceSet(
        a[keep], b[keep], plane_ids[keep], tracks[keep]
    )
    relative = compose(camera_pose, reference_pose.inverse())
    truth = ObservationTruth(
        relative_pose=relative,
        depths_ref=dict(zip(tracks.tolist(), d_ref[idx].tolist())),
        depths_cur=dict(zip(tracks.tolist(), d_cur[idx].tolist())),
        clean_a=a[keep],
        clean_b=b_clean[keep],
    )
    mask_ref = None
    mask_cur = None
    if render_masks:
        mask_ref = reference_mask or render_plane_mask(
            world, reference_pose, intr, image_size
        )
        mask_cur = render_plane_mask(world, camera_pose, intr, image_size)
    return Observation(
        correspondences=correspondences,
        mask_ref=mask_ref,
        mask_cur=mask_cur,
        truth=truth,
    )


def random_pose(rng, max_rotation_deg: float, max_offset_m: float) -> Pose:
    """Uniform random axis, rotation angle and offset within the bounds."""
    axis = rng.standard_normal(3)
    while np.linalg.norm(axis) < 1e-9:
        axis = rng.standard_normal(3)
    angle = rng.uniform(0.0, max_rotation_deg)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    offset = direction * rng.uniform(0.0, max_offset_m)
    return Pose(Rotation.from_axis_angle(axis, angle), offset)


class SimulatedExecutor:
    """MotionExecutor backed by the synthetic world.

    Commands pass through the hidden hand-eye pose X: a hand motion M
    induces the camera motion X M X^-1.  The executor tracks the current
    camera extrinsic and returns observations against the reference view;
    the ground truth goes only into the observation sidecar.
    """

    def __init__(
        self,
        world: World,
        rig: RigSpec,
        initial_offset: Pose,
        noise: NoiseSpec = None,
        lighting: LightingProxySpec = None,
        seed: int = 0,
    ):
        self._world = world
        self._rig = rig
        self._extrinsic = initial_offset  # maps reference frame to current
        self._noise = noise or NoiseSpec()
        self._lighting = lighting or LightingProxySpec()
        self._seed = seed
        self._observations = 0
        self.motions_executed = 0
        self._mask_ref = render_plane_mask(
            world, Pose.identity(), rig.intrinsics, rig.image_size
        )

    @property
    def intrinsics(self) -> Intrinsics:
        return self._rig.intrinsics

    @property
    def image_size(self) -> tuple:
        return self._rig.image_size

    @property
    def true_residual(self) -> Pose:
        """Ground-truth current extrinsic (tests only; the loop gets the
        equivalent through observation sidecars)."""
        return self._extrinsic

    def observe(self) -> Observation:
        child = np.random.default_rng(
            np.random.SeedSequence((self._seed, self._observations))
        )
        self._observations += 1
        return observe(
            self._world,
            self._extrinsic,
            self._rig.intrinsics,
            self._rig.image_size,
            noise=self._noise,
            lighting=self._lighting,
            seed=int(child.integers(0, 2**63 - 1)),
            reference_mask=self._mask_ref,
        )

    def execute(self, command: Pose) -> Observation:
        x = self._rig.hand_eye
        camera_motion = compose(compose(x, command), x.inverse())
        self._extrinsic = compose(camera_motion.inverse(), self._extrinsic)
        self.motions_executed += 1
        return self.observe()


# ---------------------------------------------------------------------------
# Ready-made scenes
# ---------------------------------------------------------------------------

DESK_IMAGE_SIZE = (1280, 960)
DESK_INTRINSICS = Intrinsics(fx=1200.0, fy=1200.0, cx=640.0, cy=480.0)


def corner_scene(points_per_plane: int = 240, seed: int = 0) -> SceneSpec:
    """Three mutually tilted patches (a desk corner): good epipolar geometry."""
    n_left = (0.70, 0.0, 0.714)
    n_top = (0.0, 0.70, 0.714)
    planes = (
        PlaneSpec(
            normal=(0.0, 0.0, 1.0),
            offset=0.6,
            center=(0.0, 0.0, 0.6),
            half_extents=(0.21, 0.15),
            count=points_per_plane,
        ),
        PlaneSpec(
            normal=n_left,
            offset=float(np.array(n_left) @ np.array((-0.17, 0.0, 0.62))),
            center=(-0.17, 0.0, 0.62),
            half_extents=(0.10, 0.13),
            count=points_per_plane,
        ),
        PlaneSpec(
            normal=n_top,
            offset=float(np.array(n_top) @ np.array((0.15, -0.13, 0.63))),
            center=(0.15, -0.13, 0.63),
            half_extents=(0.10, 0.10),
            count=points_per_plane,
        ),
    )
    return SceneSpec(planes=planes, seed=seed)


MURAL_IMAGE_SIZE = (1706, 1280)
MURAL_INTRINSICS = Intrinsics(fx=2400.0, fy=2400.0, cx=853.0, cy=640.0)


def mural_scene(
    points_per_patch: int = 350,
    background_points: int = 700,
    clutter: int = 80,
    seed: int = 0,
) -> SceneSpec:
    """A flat heritage wall: detected patches plus undetected texture.

    Three detected segments lie on one tilted wall plane together with a
    large undetected background region of the same wall (the texture a
    segmentation would miss) and a little true 3-D clutter.  Because the
    clean geometry is dominated by a single plane, the unrestricted
    epipolar path is structurally degenerate here while the plane-mediated
    path remains perfectly posed; this is the regime where the
    illumination proxy separates the two.
    """
    n = np.array([np.sin(np.radians(17.0)), 0.12, np.cos(np.radians(17.0))])
    n = n / np.linalg.norm(n)
    wall_point = np.array([0.0, 0.0, 0.62])
    offset = float(n @ wall_point)

    def patch(center_uv, extents, count, detected=True, polygon=None):
        # Centers given in wall-local (u, v) meters around the wall point.
        helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e_u = np.cross(helper, n)
        e_u = e_u / np.linalg.norm(e_u)
        e_v = np.cross(n, e_u)
        center = wall_point + center_uv[0] * e_u + center_uv[1] * e_v
        return PlaneSpec(
            normal=tuple(n),
            offset=offset,
            center=tuple(center),
            half_extents=extents,
            polygon=polygon,
            count=count,
            detected=detected,
        )

    planes = (
        patch((-0.14, 0.08), (0.105, 0.080), points_per_patch),
        patch((0.14, 0.07), (0.105, 0.080), points_per_patch),
        patch((0.0, -0.12), (0.115, 0.075), points_per_patch),
        patch((0.0, 0.0), (0.30, 0.22), background_points, detected=False),
    )
    return SceneSpec(
        planes=planes,
        seed=seed,
        clutter_count=clutter,
        clutter_box=((-0.24, 0.24), (-0.18, 0.18), (0.56, 0.66)),
    )


def single_plane_scene(points: int = 1000, seed: int = 0) -> SceneSpec:
    """The noise-benchmark scene: one fronto-parallel plane, Canon optics."""
    return SceneSpec(
        planes=(
            PlaneSpec(
                normal=(0.0, 0.0, 1.0),
                offset=1.5,
                center=(0.0, 0.0, 1.5),
                half_extents=(0.20, 0.14),
                count=points,
            ),
        ),
        seed=seed,
    )


BENCH_MOTION = Pose(
    Rotation.from_axis_angle((0.3, 0.8, 0.52), 10.0),
    np.array([0.26, -0.17, 0.10]),
)

# The RANSAC budget of the benchmark estimators.  The SLAM-library
# homography initializer this path mirrors draws 200 minimal samples, and
# the benchmark keeps that: at 90% contamination a 200-draw search almost
# never lands on the clean minimal set, which is the regime the benchmark
# is meant to expose.  The library-wide default elsewhere remains 2000.
# For the same reason the benchmark keeps the single refit-on-inliers of
# that implementation rather than the iterated consensus re-stabilization
# the relocalization loop uses.
BENCH_RANSAC_ITERS = 200
BENCH_REFINE_ITERS = 1


# ---------------------------------------------------------------------------
# Noise-robustness benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    """One benchmark measurement."""

    r: float
    mu: float
    trial: int
    method: str
    rot_err_deg: float
    dir_err_deg: float


def _bench_trial(args):
    (
        world,
        motion,
        intr,
        image_size,
        r,
        mu,
        trial,
        seed,
        i_r,
        i_mu,
        threshold_px,
        max_iters,
    ) = args
    child = np.random.default_rng(np.random.SeedSequence((seed, i_r, i_mu, trial)))
    obs_seed = int(child.integers(0, 2**63 - 1))
    obs = observe(
        world,
        motion,
        intr,
        image_size,
        noise=NoiseSpec(magnitude_r=r, ratio_mu=mu),
        seed=obs_seed,
        render_masks=False,
    )
    c = obs.correspondences
    truth_r = motion.rotation
    truth_dir = motion.translation / np.linalg.norm(motion.translation)
    rows = []
    try:
        h, mask = estimate_homography_ransac(
            c,
            intr,
            threshold_px=threshold_px,
            max_iters=max_iters,
            seed=obs_seed,
            refine_iters=BENCH_REFINE_ITERS,
        )
        hyp = decompose_homography(h, intr, c.subset(mask))
        rot_err = rotation_angle(hyp.pose.rotation.compose(truth_r.inverse()))
        dir_err = (
            float("nan")
            if hyp.zero_motion
            else direction_angle(hyp.pose.direction, truth_dir)
        )
    except Exception:
        rot_err, dir_err = float("nan"), float("nan")
    rows.append(BenchRow(r, mu, trial, "de-h", rot_err, dir_err))
    try:
        hyp = estimate_epipolar(
            c,
            intr,
            threshold_px=threshold_px,
            max_iters=max_iters,
            seed=obs_seed,
            refine_iters=BENCH_REFINE_ITERS,
        )
        rot_err = rotation_angle(hyp.pose.rotation.compose(truth_r.inverse()))
        dir_err = direction_angle(hyp.pose.direction, truth_dir)
    except Exception:
        rot_err, dir_err = float("nan"), float("nan")
    rows.append(BenchRow(r, mu, trial, "epipolar", rot_err, dir_err))
    return rows


def worker_count() -> int:
    """Worker cap from the ACRKIT_THREADS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("ACRKIT_THREADS", "1")))
    except ValueError:
        return 1


def bench_noise_sweep(
    scene: SceneSpec,
    motion: Pose,
    r_values,
    mu_values,
    trials: int,
    seed: int = 0,
    intr: Intrinsics = CANON_INTRINSICS,
    image_size=CANON_IMAGE_SIZE,
    threshold_px: float = 1.0,
    max_iters: int = BENCH_RANSAC_ITERS,
) -> list:
    """Rotation/direction errors of both estimators over a noise grid.

    For every (r, mu, trial) cell a fresh contaminated observation of the
    fixed motion is generated and both estimators run on the identical
    data.  Deterministic per seed; trials parallelize across threads when
    ACRKIT_THREADS allows.
    """
    world = generate_scene(scene)
    jobs = [
        (
            world,
            motion,
            intr,
            image_size,
            float(r),
            float(mu),
            trial,
            seed,
            i_r,
            i_mu,
            threshold_px,
            max_iters,
        )
        for i_r, r in enumerate(r_values)
        for i_mu, mu in enumerate(mu_values)
        for trial in range(trials)
    ]
    workers = worker_count()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_bench_trial, jobs))
    else:
        nested = [_bench_trial(job) for job in jobs]
    return [row for rows in nested for row in rows]
