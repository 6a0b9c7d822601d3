"""Plane-region matching across two segmentations.

Detected plane regions of the reference and current images are matched by
maximizing a quadratic assignment objective: node affinities count shared
feature correspondences between region pairs, edge affinities compare the
minimum inter-region pixel distances within each image.  The assignment is
constrained to a one-to-one mapping of all reference planes into the
(equal or larger) set of current planes.

Region masks are integer label maps (0 = background) with contiguous ids;
the file format is a 16-bit binary PGM whose pixel value is the label id.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
from scipy.spatial import cKDTree

from .errors import (
    BudgetExceededError,
    InsufficientDataError,
    InvalidInputError,
    MissingPlaneError,
    OrientationError,
)
from .pose_estimation import CorrespondenceSet

EXACT_ENUMERATION_BUDGET = 1_000_000


@dataclass(frozen=True, eq=False)
class PlaneSegmentMap:
    """Per-pixel plane labeling; 0 is background, ids run 1..H contiguously."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise InvalidInputError("label map must be 2-D")
        if lab.size and lab.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        lab = lab.astype(np.int32, copy=True)
        present = np.unique(lab)
        present = present[present > 0]
        h = int(present.max()) if present.size else 0
        if present.size != h:
            raise InvalidInputError("plane ids must be contiguous 1..H")
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "_num_planes", h)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def num_planes(self) -> int:
        return self._num_planes

    @property
    def plane_ids(self) -> range:
        return range(1, self.num_planes + 1)

    def region_pixels(self, plane_id: int) -> np.ndarray:
        """(K, 2) array of (row, col) pixel indices of one region."""
        if plane_id not in self.plane_ids:
            raise MissingPlaneError(f"no plane with id {plane_id}")
        rows, cols = np.nonzero(self.labels == plane_id)
        return np.column_stack([rows, cols])

    def label_at(self, points_xy: np.ndarray) -> np.ndarray:
        """Labels under (u, v) pixel coordinates; out-of-image maps to 0."""
        pts = np.asarray(points_xy, dtype=float)
        col = np.rint(pts[:, 0]).astype(int)
        row = np.rint(pts[:, 1]).astype(int)
        inside = (row >= 0) & (row < self.height) & (col >= 0) & (col < self.width)
        out = np.zeros(len(pts), dtype=np.int32)
        out[inside] = self.labels[row[inside], col[inside]]
        return out

    def to_pgm_bytes(self) -> bytes:
        if self.num_planes > 65535:
            raise InvalidInputError("more plane ids than a 16-bit PGM can hold")
        header = f"P5\n{self.width} {self.height}\n65535\n".encode("ascii")
        return header + self.labels.astype(">u2").tobytes()

    @staticmethod
    def from_pgm_bytes(data: bytes) -> "PlaneSegmentMap":
        m = re.match(
            rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", data
        )
        if not m:
            raise InvalidInputError("not a binary PGM (P5) stream")
        width, height, maxval = (int(m.group(i)) for i in (1, 2, 3))
        pixels = data[m.end():]
        if maxval > 255:
            arr = np.frombuffer(pixels, dtype=">u2", count=width * height)
        else:
            arr = np.frombuffer(pixels, dtype=np.uint8, count=width * height)
        return PlaneSegmentMap(arr.reshape(height, width).astype(np.int32))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_pgm_bytes())

    @staticmethod
    def load(path) -> "PlaneSegmentMap":
        with open(path, "rb") as fh:
            return PlaneSegmentMap.from_pgm_bytes(fh.read())

    def eroded(self, radius: int) -> "PlaneSegmentMap":
        """Cached :func:`erode_mask`; safe because label maps are immutable."""
        cache = getattr(self, "_eroded_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_eroded_cache", cache)
        if radius not in cache:
            cache[radius] = erode_mask(self, radius)
        return cache[radius]


def disk_structuring_element(radius: int) -> np.ndarray:
    """Boolean disk of the given pixel radius."""
    r = int(radius)
    grid = np.arange(-r, r + 1)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    return (yy * yy + xx * xx) <= r * r


def erode_mask(m: PlaneSegmentMap, radius: int) -> PlaneSegmentMap:
    """Erode every region by a disk; empty regions drop, ids recompact.

    Equivalent to per-label binary erosion with a disk structuring element
    (pixels outside the image count as background).  A pixel survives iff
    its Euclidean distance to the nearest non-region pixel exceeds the
    radius, which the distance transform evaluates exactly.
    """
    if radius < 0:
        raise InvalidInputError("erosion radius must be non-negative")
    if radius == 0 or m.num_planes == 0:
        return m
    out = np.zeros_like(m.labels)
    next_id = 0
    for plane_id in m.plane_ids:
        region = m.labels == plane_id
        rows, cols = np.nonzero(region)
        # The transform only needs the region bounding box plus a
        # background band of one pixel.
        r0, r1 = rows.min(), rows.max()
        c0, c1 = cols.min(), cols.max()
        crop = region[r0 : r1 + 1, c0 : c1 + 1]
        padded = np.zeros((crop.shape[0] + 2, crop.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = crop
        dist = scipy.ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
        survived = dist > radius
        if survived.any():
            next_id += 1
            target = out[r0 : r1 + 1, c0 : c1 + 1]
            target[survived] = next_id
    return PlaneSegmentMap(out)


def _boundary_pixels(region: np.ndarray) -> np.ndarray:
    # Outside the bounding box there are no region pixels, so the erosion
    # treats the crop border as background.
    rows, cols = np.nonzero(region)
    r0, r1 = rows.min(), rows.max()
    c0, c1 = cols.min(), cols.max()
    crop = region[r0 : r1 + 1, c0 : c1 + 1]
    interior = scipy.ndimage.binary_erosion(crop, border_value=0)
    rr, cc = np.nonzero(crop & ~interior)
    return np.column_stack([rr + r0, cc + c0])


def min_region_distance(m: PlaneSegmentMap, a: int, b: int) -> float:
    """Minimum Euclidean pixel distance between two regions.

    Adjacent regions (any pixel pair within an 8-neighborhood) are reported
    as touching, i.e. distance 0.
    """
    pa = _boundary_pixels(m.labels == a) if a in m.plane_ids else None
    pb = _boundary_pixels(m.labels == b) if b in m.plane_ids else None
    if pa is None or pb is None:
        raise MissingPlaneError(f"unknown plane id {a if pa is None else b}")
    tree = cKDTree(pb)
    d, _ = tree.query(pa, k=1)
    dmin = float(d.min())
    return 0.0 if dmin <= math.sqrt(2.0) + 1e-12 else dmin


@dataclass(frozen=True, eq=False)
class PlaneGraph:
    """Complete graph over region ids with min-distance edge weights."""

    plane_ids: tuple
    distances: np.ndarray  # (H, H) symmetric, zero diagonal

    @staticmethod
    def from_mask(m: PlaneSegmentMap) -> "PlaneGraph":
        ids = tuple(m.plane_ids)
        h = len(ids)
        d = np.zeros((h, h))
        boundaries = [_boundary_pixels(m.labels == pid) for pid in ids]
        for i in range(h):
            tree = cKDTree(boundaries[i])
            for j in range(i + 1, h):
                dist, _ = tree.query(boundaries[j], k=1)
                dmin = float(dist.min())
                if dmin <= math.sqrt(2.0) + 1e-12:
                    dmin = 0.0
                d[i, j] = d[j, i] = dmin
        return PlaneGraph(ids, d)


def node_affinity(
    c: CorrespondenceSet,
    m_ref: PlaneSegmentMap,
    m_cur: PlaneSegmentMap,
    a: int,
    c_id: int,
) -> int:
    """Count of correspondences with the A point in region ``a`` of the
    reference mask and the B point in region ``c_id`` of the current mask."""
    la = m_ref.label_at(c.a)
    lb = m_cur.label_at(c.b)
    return int(np.sum((la == a) & (lb == c_id)))


def node_affinity_matrix(
    c: CorrespondenceSet, m_ref: PlaneSegmentMap, m_cur: PlaneSegmentMap
) -> np.ndarray:
    """(H, M) matrix of correspondence counts per region pair."""
    h, m = m_ref.num_planes, m_cur.num_planes
    la = m_ref.label_at(c.a)
    lb = m_cur.label_at(c.b)
    counts = np.zeros((h, m), dtype=float)
    valid = (la > 0) & (lb > 0)
    np.add.at(counts, (la[valid] - 1, lb[valid] - 1), 1.0)
    return counts


def edge_affinity(d_ref: float, d_cur: float, sigma: float) -> float:
    """Similarity ``exp(-|d_ref - d_cur| / sigma)`` of two edge weights."""
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    return float(np.exp(-abs(d_ref - d_cur) / sigma))


def assemble_affinity(
    node_aff: np.ndarray,
    graph_ref: PlaneGraph,
    graph_cur: PlaneGraph,
    sigma: float,
    normalize: bool = True,
) -> np.ndarray:
    """Affinity matrix W over the column expansion of the assignment.

    Index (a, c) maps to ``c * H + a``.  Diagonal entries carry the node
    affinities; entry ((a, c), (b, d)) with a != b and c != d carries the
    edge affinity between edges (a, b) and (c, d).  With ``normalize`` the
    node and edge classes are each scaled by their maximum so neither
    dominates by units alone.
    """
    node_aff = np.asarray(node_aff, dtype=float)
    h, m = node_aff.shape
    if h > m:
        raise OrientationError(
            "more reference planes than current planes; swap the inputs and"
            " transpose the assignment"
        )
    if len(graph_ref.plane_ids) != h or len(graph_cur.plane_ids) != m:
        raise InvalidInputError("graph sizes must match the affinity matrix")
    nodes = node_aff.copy()
    if normalize and nodes.max() > 0:
        nodes = nodes / nodes.max()
    n = h * m
    w = np.zeros((n, n))
    idx_a, idx_c = np.meshgrid(np.arange(h), np.arange(m), indexing="ij")
    flat = idx_c.ravel() * h + idx_a.ravel()
    w[flat, flat] = nodes[idx_a.ravel(), idx_c.ravel()]
    if h > 1 and m > 1:
        edges = np.zeros((n, n))
        for a in range(h):
            for b in range(h):
                if a == b:
                    continue
                d_ab = graph_ref.distances[a, b]
                diff = np.abs(d_ab - graph_cur.distances)  # (M, M) over (c, d)
                sim = np.exp(-diff / sigma)
                for c_i in range(m):
                    row = c_i * h + a
                    cols = np.arange(m) * h + b
                    vals = sim[c_i].copy()
                    vals[c_i] = 0.0  # c == d is infeasible
                    edges[row, cols] = vals
        if normalize and edges.max() > 0:
            edges = edges / edges.max()
        w = w + edges  # edge entries never touch the diagonal (a != b)
    return w


@dataclass(frozen=True, eq=False)
class Assignment:
    """Binary H x M matching matrix; rows sum to 1, columns to at most 1."""

    matrix: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.matrix)
        if u.ndim != 2 or not np.isin(u, (0, 1)).all():
            raise InvalidInputError("assignment must be a binary matrix")
        if not np.all(u.sum(axis=1) == 1) or np.any(u.sum(axis=0) > 1):
            raise InvalidInputError(
                "assignment must map every row to exactly one distinct column"
            )
        u = u.astype(np.uint8)
        u.flags.writeable = False
        object.__setattr__(self, "matrix", u)

    @property
    def pairs(self) -> list:
        """(row_id, col_id) pairs, 1-based to match plane ids."""
        rows, cols = np.nonzero(self.matrix)
        return [(int(r) + 1, int(c) + 1) for r, c in zip(rows, cols)]

    def transposed_pairs(self) -> list:
        return [(c, r) for r, c in self.pairs]


def matching_objective(w: np.ndarray, assignment: Assignment) -> float:
    """Quadratic objective U_c^T W U_c for a feasible assignment."""
    h, m = assignment.matrix.shape
    u_c = assignment.matrix.T.reshape(-1).astype(float)  # column expansion
    if u_c.size != w.shape[0]:
        raise InvalidInputError("assignment size does not match W")
    return float(u_c @ w @ u_c)


def _selection_indices(columns, h: int) -> np.ndarray:
    return np.array([c * h + a for a, c in enumerate(columns)])


def solve_matching(w: np.ndarray, h: int, m: int, mode: str = "exact") -> Assignment:
    """Maximize the quadratic assignment objective under the row/column
    constraints.

    ``exact`` enumerates every injection of the H reference planes into the
    M current planes (budget-limited); ``spectral`` takes the leading
    eigenvector of W and discretizes it greedily.  The spectral score never
    exceeds the exact one.

    Raises:
        BudgetExceededError: exact enumeration above the budget; callers
            fall back to spectral mode.
    """
    w = np.asarray(w, dtype=float)
    if h > m:
        raise OrientationError("solve_matching requires H <= M")
    if w.shape != (h * m, h * m):
        raise InvalidInputError("W must be (H*M) x (H*M)")
    if mode == "exact":
        count = math.perm(m, h)
        if count > EXACT_ENUMERATION_BUDGET:
            raise BudgetExceededError(
                f"{count} assignments exceed the exact enumeration budget"
            )
        best_score = -np.inf
        best = None
        for columns in itertools.permutations(range(m), h):
            sel = _selection_indices(columns, h)
            score = float(w[np.ix_(sel, sel)].sum())
            if score > best_score:
                best_score = score
                best = columns
        u = np.zeros((h, m), dtype=np.uint8)
        u[np.arange(h), list(best)] = 1
        return Assignment(u)
    if mode != "spectral":
        raise InvalidInputError(f"unknown matching mode {mode!r}")

    vals, vecs = np.linalg.eigh(w)
    lead = np.abs(vecs[:, -1])
    u = np.zeros((h, m), dtype=np.uint8)
    used_rows = set()
    used_cols = set()
    order = np.argsort(-lead)
    for flat in order:
        a = flat % h
        c = flat // h
        if a in used_rows or c in used_cols:
            continue
        u[a, c] = 1
        used_rows.add(a)
        used_cols.add(c)
        if len(used_rows) == h:
            break
    for a in range(h):  # rows starved by ties still need a column
        if a not in used_rows:
            c = next(i for i in range(m) if i not in used_cols)
            u[a, c] = 1
            used_cols.add(c)
    return Assignment(u)


def match_plane_maps(
    m_ref: PlaneSegmentMap,
    m_cur: PlaneSegmentMap,
    c: CorrespondenceSet,
    sigma: float = None,
    normalize: bool = True,
    mode: str = "exact",
) -> list:
    """Full matching pipeline between two already-eroded masks.

    Returns (ref_id, cur_id) plane pairs.  When the reference mask has more
    planes than the current one the inputs are swapped internally and the
    assignment transposed, honoring the H <= M orientation.

    ``sigma`` defaults to 10% of the reference image diagonal.
    """
    if m_ref.num_planes == 0 or m_cur.num_planes == 0:
        return []
    if sigma is None:
        sigma = 0.1 * math.hypot(m_ref.width, m_ref.height)
    if m_ref.num_planes > m_cur.num_planes:
        swapped = match_plane_maps(
            m_cur, m_ref, c.swapped(), sigma=sigma, normalize=normalize, mode=mode
        )
        return [(r, c_id) for c_id, r in swapped]
    node_aff = node_affinity_matrix(c, m_ref, m_cur)
    graph_ref = PlaneGraph.from_mask(m_ref)
    graph_cur = PlaneGraph.from_mask(m_cur)
    w = assemble_affinity(node_aff, graph_ref, graph_cur, sigma, normalize)
    h, m = node_aff.shape
    try:
        assignment = solve_matching(w, h, m, mode=mode)
    except BudgetExceededError:
        assignment = solve_matching(w, h, m, mode="spectral")
    return assignment.pairs
