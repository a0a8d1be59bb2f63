"""Metric geometry on triangulated surfaces.

Everything here is a pure function of a Triangulation plus an edge length
map (``dict`` edge id -> positive float).  Provided: corner angles with a
constant extension past triangle-inequality failure, conformal vertex
scaling of the metric, angle-deficit curvature and its weighted variants,
cotangent edge weights, the curvature Jacobian, a weighted graph
Laplacian, the Delaunay edge predicate, and intrinsic edge flips that
transport lengths.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .errors import (
    DegenerateFace,
    FlipLimitExceeded,
    LogFactorOverflow,
    NonConvexQuad,
    NonPositiveLength,
)
from .mesh import FlipInfo, Triangulation

log = logging.getLogger(__name__)

# Inclusive slack on the Delaunay angle test; cocircular edges (opposite
# angles summing to exactly pi) must not be flipped or the flip loop can
# cycle forever.
DELAUNAY_SLACK = 1e-12

# Substitute for cot(0) / -cot(pi) on degenerate faces: large enough to be
# numerically loud, small enough not to overflow products.
COT_CLAMP = 1e12

# Log conformal factors beyond this make exp() meaningless in float64.
LOG_FACTOR_BOUND = 300.0

# The curvature Jacobian equals the plain cot-weight graph Laplacian times
# this constant under the length scaling l' = exp(u_i + u_j) * l.  Pinned
# by a finite-difference test; do not tune.
CURVATURE_JACOBIAN_SCALE = 1.0

# Safety factor for the flip loop: terminates mathematically, the cap only
# guards against float pathologies.
FLIP_CAP_FACTOR = 100

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CurvatureReport:
    """Angle-deficit curvature and its weighted form at one exponent.

    ``K`` is the deficit vector, ``R_alpha[i] = K[i] * exp(-alpha*u[i])``,
    and ``R_av`` is the constant value the total deficit forces on the
    weighted average.  ``max_dev`` measures distance from constancy.
    """

    K: np.ndarray
    R_alpha: np.ndarray
    alpha: float
    sum_K: float
    R_av: float
    max_dev: float


def _check_positive(*lengths: float) -> None:
    for x in lengths:
        if not x > 0.0:
            raise NonPositiveLength(f"edge length {x!r} is not positive")


def _cos_opposite(a: float, b: float, c: float) -> float:
    """Clamped cosine of the angle opposite ``a`` in triangle (a, b, c).

    The clamp is the whole degeneracy story: when one length reaches the
    sum of the others the raw ratio leaves [-1, 1] and clamping pins the
    angles at exactly (pi, 0, 0), which is the continuous extension.
    Lengths are normalized first so their squares cannot overflow.
    """
    m = max(a, b, c)
    a, b, c = a / m, b / m, c / m
    raw = (b * b + c * c - a * a) / (2.0 * b * c)
    return min(1.0, max(-1.0, raw))


def triangle_angles(l_i: float, l_j: float, l_k: float) -> tuple[float, float, float]:
    """Angles of the triangle with side lengths (l_i, l_j, l_k).

    Angle ``theta_i`` faces side ``l_i``.  For length triples violating a
    triangle inequality the angles are extended constantly: the longest
    side faces pi, the other two face 0.  The three values always sum to
    pi (exactly so in the extended case).
    """
    _check_positive(l_i, l_j, l_k)
    return (math.acos(_cos_opposite(l_i, l_j, l_k)),
            math.acos(_cos_opposite(l_j, l_k, l_i)),
            math.acos(_cos_opposite(l_k, l_i, l_j)))


def face_lengths(tri: Triangulation, lengths: dict[int, float], f: int) -> tuple[float, float, float]:
    """Lengths of face ``f``'s edges by slot."""
    e0, e1, e2 = tri.face_edges[f]
    return lengths[e0], lengths[e1], lengths[e2]


def face_is_degenerate(tri: Triangulation, lengths: dict[int, float], f: int) -> bool:
    """True when face ``f`` fails a strict triangle inequality."""
    a, b, c = face_lengths(tri, lengths, f)
    _check_positive(a, b, c)
    m = max(a, b, c)
    return m >= (a + b + c) - m


def degenerate_faces(tri: Triangulation, lengths: dict[int, float]) -> list[int]:
    """Face ids that fail a strict triangle inequality."""
    return [f for f in tri.face_ids() if face_is_degenerate(tri, lengths, f)]


def corner_angles(tri: Triangulation, lengths: dict[int, float]) -> dict[int, tuple[float, float, float]]:
    """Map face id -> angles at its three corners (extended past degeneracy).

    The corner at slot ``c`` faces the edge in slot ``(c + 1) % 3``.
    """
    out = {}
    for f in tri.face_ids():
        l0, l1, l2 = face_lengths(tri, lengths, f)
        # angle at corner c is opposite the slot-(c+1) edge
        out[f] = triangle_angles(l1, l2, l0)
    return out


def scale_metric(tri: Triangulation, base: dict[int, float], u: np.ndarray) -> dict[int, float]:
    """Scale every edge {i, j} by exp(u_i + u_j).

    A self-edge at vertex i (possible in principle, never produced by the
    mesh builder) picks up exp(2 u_i), the consistent specialization.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (tri.vertex_count,):
        raise ValueError(f"expected {tri.vertex_count} log factors, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise LogFactorOverflow("non-finite log conformal factor")
    if np.max(np.abs(u)) > LOG_FACTOR_BOUND:
        raise LogFactorOverflow(
            f"|u| exceeds {LOG_FACTOR_BOUND}; metric would overflow")
    out = {}
    for e, length in base.items():
        a, b = tri.edge_vertices(e)
        out[e] = math.exp(u[a] + u[b]) * length
    return out


def curvature(tri: Triangulation, lengths: dict[int, float]) -> np.ndarray:
    """Angle deficit 2*pi minus the incident corner angles, per vertex.

    Degenerate faces contribute their extended angles, so the result is
    total and the deficit sum stays pinned at 2*pi*chi.
    """
    K = np.full(tri.vertex_count, TWO_PI)
    angles = corner_angles(tri, lengths)
    for f in tri.face_ids():
        va, vb, vc = tri.faces[f]
        ta, tb, tc = angles[f]
        K[va] -= ta
        K[vb] -= tb
        K[vc] -= tc
    return K


def alpha_curvature(K: np.ndarray, u: np.ndarray, alpha: float,
                    chi: int | None = None) -> CurvatureReport:
    """Weighted curvature report: divide each deficit by exp(alpha * u_i).

    ``chi`` fixes the average; when omitted it is recovered by rounding
    the deficit sum to the nearest multiple of 2*pi, which is exact for
    any metric on a closed surface.
    """
    K = np.asarray(K, dtype=float)
    u = np.asarray(u, dtype=float)
    if K.shape != u.shape:
        raise ValueError(f"size mismatch: {K.shape} vs {u.shape}")
    sum_K = float(np.sum(K))
    if chi is None:
        chi = round(sum_K / TWO_PI)
    weights = np.exp(alpha * u)
    R = K / weights
    R_av = TWO_PI * chi / float(np.sum(weights))
    max_dev = float(np.max(np.abs(R - R_av)))
    return CurvatureReport(K=K, R_alpha=R, alpha=float(alpha),
                           sum_K=sum_K, R_av=R_av, max_dev=max_dev)


def _cot_from_cos(c: float) -> float:
    s = math.sqrt(max(0.0, 1.0 - c * c))
    if s == 0.0:
        return COT_CLAMP if c > 0.0 else -COT_CLAMP
    return c / s


def _cot_opposite(tri: Triangulation, lengths: dict[int, float],
                  face: int, slot: int) -> float:
    fe = tri.face_edges[face]
    a = lengths[fe[slot]]
    b = lengths[fe[(slot + 1) % 3]]
    c = lengths[fe[(slot + 2) % 3]]
    _check_positive(a, b, c)
    return _cot_from_cos(_cos_opposite(a, b, c))


def cot_weight(tri: Triangulation, lengths: dict[int, float], e: int) -> float:
    """Sum of the cotangents of the two angles facing edge ``e``.

    Degenerate faces contribute +/-COT_CLAMP through the extended angles
    (cot 0 and cot pi respectively).
    """
    (f1, s1), (f2, s2) = tri.edge_sides[e]
    return (_cot_opposite(tri, lengths, f1, s1)
            + _cot_opposite(tri, lengths, f2, s2))


def curvature_jacobian(tri: Triangulation, lengths: dict[int, float]) -> scipy.sparse.csr_matrix:
    """Derivative of the deficit vector in the log conformal factors.

    Returns a sparse symmetric matrix with zero row sums: off-diagonal
    (i, j) entries are minus the cot weights of the edges joining i and j
    (times CURVATURE_JACOBIAN_SCALE), the diagonal makes rows sum to
    zero.  Self-edges contribute nothing.  On a Delaunay metric the
    matrix is positive semi-definite with kernel spanned by the constant
    vector.
    """
    bad = degenerate_faces(tri, lengths)
    if bad:
        raise DegenerateFace(f"faces {bad} are degenerate")
    n = tri.vertex_count
    rows, cols, vals = [], [], []
    for e in tri.edge_ids():
        i, j = tri.edge_vertices(e)
        if i == j:
            continue
        w = cot_weight(tri, lengths, e) * CURVATURE_JACOBIAN_SCALE
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n))
    return mat.tocsr()


def alpha_laplacian_apply(tri: Triangulation, lengths: dict[int, float],
                          u: np.ndarray, alpha: float, f: np.ndarray) -> np.ndarray:
    """Weighted cotangent Laplacian applied to a vertex function.

    Entry i is exp(-alpha*u_i) times the cot-weighted sum of differences
    (f_j - f_i) over edges at i; self-edges drop out since their
    difference vanishes.  ``lengths`` must already be the scaled metric.
    Degenerate faces are allowed (clamped cotangents).
    """
    u = np.asarray(u, dtype=float)
    f = np.asarray(f, dtype=float)
    out = np.zeros(tri.vertex_count)
    for e in tri.edge_ids():
        i, j = tri.edge_vertices(e)
        if i == j:
            continue
        w = cot_weight(tri, lengths, e)
        out[i] += w * (f[j] - f[i])
        out[j] += w * (f[i] - f[j])
    return np.exp(-alpha * u) * out


def _opposite_angles(tri: Triangulation, lengths: dict[int, float], e: int) -> tuple[float, float]:
    (f1, s1), (f2, s2) = tri.edge_sides[e]

    def angle(face: int, slot: int) -> float:
        fe = tri.face_edges[face]
        a = lengths[fe[slot]]
        b = lengths[fe[(slot + 1) % 3]]
        c = lengths[fe[(slot + 2) % 3]]
        _check_positive(a, b, c)
        return math.acos(_cos_opposite(a, b, c))

    return angle(f1, s1), angle(f2, s2)


def is_delaunay(tri: Triangulation, lengths: dict[int, float], e: int) -> bool:
    """True when the angles facing edge ``e`` sum to at most pi.

    The test is inclusive with DELAUNAY_SLACK so cocircular edges count
    as Delaunay and are never flipped.
    """
    t1, t2 = _opposite_angles(tri, lengths, e)
    return t1 + t2 <= math.pi + DELAUNAY_SLACK


def is_delaunay_all(tri: Triangulation, lengths: dict[int, float]) -> list[int]:
    """Edge ids violating the Delaunay condition, in edge id order."""
    return [e for e in tri.edge_ids() if not is_delaunay(tri, lengths, e)]


def delaunay_margin(tri: Triangulation, lengths: dict[int, float]) -> float:
    """Smallest pi - (sum of opposite angles) over all edges.

    Positive means strictly Delaunay everywhere, zero a cocircular edge,
    negative a violation.  Used by the solver to stop steps just short of
    a flip so surgery happens at (numerically) cocircular configurations.
    """
    worst = math.inf
    for e in tri.edge_ids():
        t1, t2 = _opposite_angles(tri, lengths, e)
        worst = min(worst, math.pi - t1 - t2)
    return worst


def flip_length(tri: Triangulation, lengths: dict[int, float], e: int) -> float:
    """Length of the opposite diagonal of edge ``e``'s two-face quad.

    Lays the two faces out flat on either side of ``e`` and measures the
    distance between the far corners; the law-of-cosines form below is
    that distance.  Requires both faces nondegenerate and the quad convex
    at the shared diagonal.  A non-Delaunay edge always has a strictly
    convex quad, so the flip needed to restore Delaunay never fails here.
    """
    (f1, s1), (f2, s2) = tri.edge_sides[e]
    for f in (f1, f2):
        if face_is_degenerate(tri, lengths, f):
            raise DegenerateFace(f"face {f} at edge {e} is degenerate")
    fe1, fe2 = tri.face_edges[f1], tri.face_edges[f2]
    # f1 = (i, j, k) with e in slot s1; f2 = (j, i, l) with e in slot s2
    l_ij = lengths[e]
    l_jk = lengths[fe1[(s1 + 1) % 3]]
    l_ki = lengths[fe1[(s1 + 2) % 3]]
    l_il = lengths[fe2[(s2 + 1) % 3]]
    l_lj = lengths[fe2[(s2 + 2) % 3]]

    at_i = (math.acos(_cos_opposite(l_jk, l_ki, l_ij))
            + math.acos(_cos_opposite(l_lj, l_ij, l_il)))
    at_j = (math.acos(_cos_opposite(l_ki, l_ij, l_jk))
            + math.acos(_cos_opposite(l_il, l_lj, l_ij)))
    if at_i >= math.pi or at_j >= math.pi:
        assert is_delaunay(tri, lengths, e), \
            "a non-Delaunay edge cannot have a reflex quad corner"
        raise NonConvexQuad(
            f"quad of edge {e} is reflex (corner sums {at_i:.6f}, {at_j:.6f})")
    return math.sqrt(max(0.0, l_ki * l_ki + l_il * l_il
                         - 2.0 * l_ki * l_il * math.cos(at_i)))


def flip_with_length(tri: Triangulation, lengths: dict[int, float],
                     e: int) -> tuple[Triangulation, dict[int, float], FlipInfo]:
    """Flip edge ``e`` and transport the metric across the flip."""
    new_len = flip_length(tri, lengths, e)
    tri2, info = tri.flip(e)
    lengths2 = dict(lengths)
    del lengths2[e]
    lengths2[info.new_edge] = new_len
    return tri2, lengths2, info


def make_delaunay(tri: Triangulation, lengths: dict[int, float]
                  ) -> tuple[Triangulation, dict[int, float], list[FlipInfo]]:
    """Flip edges until every edge passes the Delaunay test.

    FIFO queue seeded with all edges; each flip re-enqueues the four rim
    edges of its quad.  The output metric is isometric to the input (same
    deficit at every vertex).  All input faces must be nondegenerate.
    """
    cap = FLIP_CAP_FACTOR * tri.edge_count ** 2
    queue = deque(tri.edge_ids())
    flips: list[FlipInfo] = []
    while queue:
        e = queue.popleft()
        if e not in tri.edge_sides:
            continue
        if is_delaunay(tri, lengths, e):
            continue
        if len(flips) >= cap:
            raise FlipLimitExceeded(
                f"{len(flips)} flips without reaching a Delaunay state")
        tri, lengths, info = flip_with_length(tri, lengths, e)
        flips.append(info)
        queue.extend(info.rim)
    if flips:
        log.debug("make_delaunay performed %d flips", len(flips))
    return tri, lengths, flips


def delaunay_surgery(tri: Triangulation, base: dict[int, float], u: np.ndarray
                     ) -> tuple[Triangulation, dict[int, float], list[FlipInfo]]:
    """make_delaunay in the metric scaled by ``u``, transporting base lengths.

    The conformal factors stay attached to vertices, so a flipped-in edge
    {k, l} gets the base length flip_length / exp(u_k + u_l); surviving
    edges keep their base length bit for bit.
    """
    u = np.asarray(u, dtype=float)
    scaled = scale_metric(tri, base, u)
    tri2, scaled2, flips = make_delaunay(tri, scaled)
    if not flips:
        return tri, base, flips
    base2 = {}
    for e in tri2.edge_ids():
        if e in base:
            base2[e] = base[e]
        else:
            a, b = tri2.edge_vertices(e)
            base2[e] = scaled2[e] * math.exp(-(u[a] + u[b]))
    return tri2, base2, flips
