"""Shared mesh fixtures: small closed surfaces used across the test suite."""

import math

import numpy as np
import pytest

from plcurv.mesh import build_triangulation

# Oriented tetrahedron boundary.
TETRA_FACES = [(0, 1, 2), (0, 2, 3), (0, 3, 1), (1, 3, 2)]

# Two-triangle sphere: the doubled triangle.
SPHERE2_FACES = [(0, 1, 2), (0, 2, 1)]


def torus9_faces():
    """Flat 3x3 grid torus on the triangular lattice, 18 faces.

    Cell (r, c) has corners P=(r,c) Q=(r,c+1) R=(r+1,c+1) S=(r+1,c) and is
    split along Q-S, which keeps all 27 edges unit length on the lattice
    spanned by (1,0) and (1/2, sqrt(3)/2).
    """
    def v(r, c):
        return 3 * (r % 3) + (c % 3)

    faces = []
    for r in range(3):
        for c in range(3):
            p, q = v(r, c), v(r, c + 1)
            rr, s = v(r + 1, c + 1), v(r + 1, c)
            faces.append((p, q, s))
            faces.append((q, rr, s))
    return faces


CUBE_QUADS = [
    (0, 2, 3, 1),  # z = 0
    (4, 5, 7, 6),  # z = 1
    (0, 1, 5, 4),  # y = 0
    (2, 6, 7, 3),  # y = 1
    (1, 3, 7, 5),  # x = 1
    (0, 4, 6, 2),  # x = 0
]

CUBE_COORDS = [(x, y, z) for z in (0, 1) for y in (0, 1) for x in (0, 1)]


def cube12_faces():
    faces = []
    for a, b, c, d in CUBE_QUADS:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return faces


def cube_off_text():
    lines = ["OFF", "8 12 18"]
    for x, y, z in CUBE_COORDS:
        lines.append(f"{x} {y} {z}")
    for f in cube12_faces():
        lines.append("3 " + " ".join(str(v) for v in f))
    return "\n".join(lines) + "\n"


# Genus-2 surface, 7 vertices / 27 edges / 18 faces, chi = -2.  It is the
# quotient of a 16-gon: an octagon with boundary word a b c d a- b- c- d-
# (all eight corners land on vertex 0) and a midpoint vertex on each
# identified side pair (1..4), triangulated by two interior vertices 5, 6.
# Doubled edges make the half-edge pairing of a raw face list ambiguous,
# so the order below is arranged to make the first-come pairing reproduce
# the intended gluing; do not reshuffle it.
GENUS2_FACES = [
    (5, 0, 1), (6, 0, 1), (5, 0, 2), (6, 0, 2),
    (5, 0, 3), (6, 0, 3), (5, 0, 4), (6, 0, 4),
    (5, 6, 0), (6, 5, 0),
    (6, 1, 0), (5, 1, 0), (6, 2, 0), (5, 2, 0),
    (6, 3, 0), (5, 3, 0), (6, 4, 0), (5, 4, 0),
]


def unit_lengths(tri):
    return {e: 1.0 for e in tri.edge_ids()}


@pytest.fixture
def tetra():
    return build_triangulation(TETRA_FACES)


@pytest.fixture
def torus9():
    return build_triangulation(torus9_faces())


@pytest.fixture
def lattice_torus_lengths(torus9):
    return unit_lengths(torus9)


@pytest.fixture
def cube12():
    """Cube triangulation together with its coordinate edge lengths."""
    tri = build_triangulation(cube12_faces())
    lens = {}
    for e in tri.edge_ids():
        a, b = tri.edge_vertices(e)
        lens[e] = math.dist(CUBE_COORDS[a], CUBE_COORDS[b])
    return tri, lens


@pytest.fixture
def genus2():
    return build_triangulation(GENUS2_FACES)


def random_lengths(tri, rng, spread=0.4):
    """Independent log-uniform lengths; faces may legitimately degenerate."""
    return {e: math.exp(rng.uniform(-spread, spread)) for e in tri.edge_ids()}


def all_fixture_meshes():
    """The four standing meshes with their natural base lengths."""
    out = []
    for name, faces in [("tetra", TETRA_FACES), ("torus9", torus9_faces()),
                        ("cube12", cube12_faces()), ("genus2", GENUS2_FACES)]:
        tri = build_triangulation(faces)
        if name == "cube12":
            lens = {}
            for e in tri.edge_ids():
                a, b = tri.edge_vertices(e)
                pa, pb = CUBE_COORDS[a], CUBE_COORDS[b]
                lens[e] = math.dist(pa, pb)
        else:
            lens = unit_lengths(tri)
        out.append((name, tri, lens))
    return out
