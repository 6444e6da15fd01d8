"""Continuous piecewise-affine velocity fields on the unit square.

The square is tessellated into nx*ny rectangular cells, each subdivided into
four triangles meeting at the cell center. (Affine-per-rectangle fields that
are continuous and vanish on the boundary are identically zero, so the
triangular refinement is what gives the space its dimension.) Each triangle
carries an affine velocity map; stacking all per-triangle coefficients and
imposing continuity across shared edges plus zero velocity on the domain
boundary yields a linear constraint system whose orthonormal null-space basis
spans the velocity space. The basis dimension equals twice the number of
interior tessellation vertices.

Transformations are obtained by integrating the stationary velocity field
over unit time with classic RK4. Integration runs in float64 numpy; nothing
here needs autograd (warp gradients flow through the sampler, not the flow).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import null_space

_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class Tessellation:
    """Triangulated nx*ny grid over [0,1]^2 with its velocity basis."""

    nx: int
    ny: int
    vertices: np.ndarray      # [n_vertices, 2]
    triangles: np.ndarray     # [n_triangles, 3] vertex indices
    basis: np.ndarray         # [6 * n_triangles, d] orthonormal columns

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def coefficients(self, params: np.ndarray) -> np.ndarray:
        """Per-triangle affine coefficients [n_triangles, 6] for a parameter vector.

        Layout per triangle: v_x = a*px + b*py + c, v_y = d*px + e*py + f.
        """
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got shape {params.shape}")
        return (self.basis @ params).reshape(self.n_triangles, 6)


def _build_geometry(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    corners = np.array([[x, y] for y in ys for x in xs])  # row-major in y
    centers = np.array(
        [[(xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2] for j in range(ny) for i in range(nx)]
    )
    vertices = np.vstack([corners, centers])

    def corner(i, j):
        return j * (nx + 1) + i

    n_corners = (nx + 1) * (ny + 1)
    triangles = []
    for j in range(ny):
        for i in range(nx):
            m = n_corners + j * nx + i
            c00, c10 = corner(i, j), corner(i + 1, j)
            c01, c11 = corner(i, j + 1), corner(i + 1, j + 1)
            # order: bottom, right, top, left (matches _locate_triangles)
            triangles.append((c00, c10, m))
            triangles.append((c10, c11, m))
            triangles.append((c11, c01, m))
            triangles.append((c01, c00, m))
    return vertices, np.array(triangles, dtype=np.int64)


def _on_boundary(p: np.ndarray) -> bool:
    return bool(
        min(p[0], p[1]) < _BOUNDARY_TOL or max(p[0], p[1]) > 1.0 - _BOUNDARY_TOL
    )


def _point_rows(tri: int, point: np.ndarray, n_triangles: int, sign: float) -> np.ndarray:
    """Two constraint rows (v_x, v_y) for the affine map of one triangle at a point."""
    rows = np.zeros((2, 6 * n_triangles))
    px, py = point
    base = 6 * tri
    rows[0, base:base + 3] = sign * np.array([px, py, 1.0])
    rows[1, base + 3:base + 6] = sign * np.array([px, py, 1.0])
    return rows


def _build_basis(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    n_tris = triangles.shape[0]
    edges: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges.setdefault(key, []).append(t)

    rows = []
    for (a, b), tris in edges.items():
        pa, pb = vertices[a], vertices[b]
        if len(tris) == 2:
            # affine maps agreeing at both endpoints agree along the edge
            for p in (pa, pb):
                r = _point_rows(tris[0], p, n_tris, 1.0) + _point_rows(tris[1], p, n_tris, -1.0)
                rows.append(r)
        elif len(tris) == 1:
            if not (_on_boundary(pa) and _on_boundary(pb)):
                raise AssertionError("unshared interior edge in tessellation")
            for p in (pa, pb):
                rows.append(_point_rows(tris[0], p, n_tris, 1.0))
        else:
            raise AssertionError("edge shared by more than two triangles")

    constraint = np.vstack(rows)
    basis = null_space(constraint)

    interior = sum(1 for p in vertices if not _on_boundary(p))
    if basis.shape[1] != 2 * interior:
        raise AssertionError(
            f"basis dimension {basis.shape[1]} != 2 * {interior} interior vertices"
        )
    return basis


@lru_cache(maxsize=None)
def get_tessellation(nx: int, ny: int) -> Tessellation:
    """Build (and cache) the tessellation and velocity basis for an nx*ny grid."""
    if nx < 1 or ny < 1:
        raise ValueError("tessellation needs at least one cell per axis")
    vertices, triangles = _build_geometry(nx, ny)
    basis = _build_basis(vertices, triangles)
    return Tessellation(nx=nx, ny=ny, vertices=vertices, triangles=triangles, basis=basis)


def _locate_triangles(tess: Tessellation, points: np.ndarray) -> np.ndarray:
    """Index of the triangle containing each point (ties on diagonals are benign)."""
    x = np.clip(points[:, 0], 0.0, 1.0)
    y = np.clip(points[:, 1], 0.0, 1.0)
    ix = np.minimum((x * tess.nx).astype(np.int64), tess.nx - 1)
    iy = np.minimum((y * tess.ny).astype(np.int64), tess.ny - 1)
    u = x * tess.nx - ix
    v = y * tess.ny - iy
    local = np.select(
        [v <= np.minimum(u, 1 - u), u >= np.maximum(v, 1 - v), v >= np.maximum(u, 1 - u)],
        [0, 1, 2],
        default=3,
    )
    return (iy * tess.nx + ix) * 4 + local


def velocity_at(tess: Tessellation, params: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the velocity field at points in the closed unit square.

    Raises if any point lies outside the domain. Linear in params; zero on
    the boundary by construction of the basis.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"expected [N, 2] points, got shape {points.shape}")
    if (points < -_BOUNDARY_TOL).any() or (points > 1.0 + _BOUNDARY_TOL).any():
        raise ValueError("points outside the unit square")
    return _velocity_unchecked(tess, tess.coefficients(params), points)


def _velocity_unchecked(tess: Tessellation, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    tri = _locate_triangles(tess, points)
    th = coeffs[tri]
    x = points[:, 0]
    y = points[:, 1]
    vx = th[:, 0] * x + th[:, 1] * y + th[:, 2]
    vy = th[:, 3] * x + th[:, 4] * y + th[:, 5]
    return np.stack([vx, vy], axis=1)


def integrate_flow(
    tess: Tessellation, params: np.ndarray, points: np.ndarray, steps: int
) -> np.ndarray:
    """Displacement phi(1) - phi(0) of the stationary flow, via RK4.

    Points are clamped into the domain before each velocity evaluation
    (zero boundary velocity keeps trajectories inside analytically; the
    clamp guards finite-step overshoot). The end point is clamped too, so
    results stay inside the unit square.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64)).copy()
    coeffs = tess.coefficients(params)

    def vel(p):
        return _velocity_unchecked(tess, coeffs, np.clip(p, 0.0, 1.0))

    h = 1.0 / steps
    phi = pts.copy()
    for _ in range(steps):
        k1 = vel(phi)
        k2 = vel(phi + 0.5 * h * k1)
        k3 = vel(phi + 0.5 * h * k2)
        k4 = vel(phi + h * k3)
        phi = phi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    phi = np.clip(phi, 0.0, 1.0)
    return phi - pts


def edge_continuity_error(tess: Tessellation, params: np.ndarray) -> float:
    """Largest velocity discrepancy across shared edges, sampled at midpoints."""
    coeffs = tess.coefficients(params)
    edges: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(tess.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges.setdefault(key, []).append(t)
    worst = 0.0
    for (a, b), tris in edges.items():
        if len(tris) != 2:
            continue
        mid = 0.5 * (tess.vertices[a] + tess.vertices[b])
        vals = []
        for t in tris:
            th = coeffs[t]
            vals.append(
                np.array(
                    [th[0] * mid[0] + th[1] * mid[1] + th[2],
                     th[3] * mid[0] + th[4] * mid[1] + th[5]]
                )
            )
        worst = max(worst, float(np.abs(vals[0] - vals[1]).max()))
    return worst


def boundary_velocity_error(tess: Tessellation, params: np.ndarray, n: int = 64) -> float:
    """Largest velocity magnitude sampled along the domain boundary."""
    s = np.linspace(0.0, 1.0, n)
    pts = np.concatenate(
        [
            np.stack([s, np.zeros(n)], axis=1),
            np.stack([s, np.ones(n)], axis=1),
            np.stack([np.zeros(n), s], axis=1),
            np.stack([np.ones(n), s], axis=1),
        ]
    )
    v = velocity_at(tess, params, pts)
    return float(np.abs(v).max())
