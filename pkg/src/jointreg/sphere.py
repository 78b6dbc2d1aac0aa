"""Spherical surface data: meshes, sphere maps, angular grids.

A cortical surface is a genus-0 triangle mesh with per-vertex descriptor
scalars.  Its sphere map assigns every vertex a unit vector, preserving
connectivity, so surface quantities can be rasterized onto an
equirectangular grid:

* row r covers colatitude theta_r = (r + 0.5) * pi / H, strictly inside
  (0, pi) so the poles fall between rows,
* column c covers azimuth phi_c = c * 2*pi / W,
* grid coordinates are (rho_r, rho_c) = (theta/dtheta - 0.5, phi/dphi).

Rows carry quadrature weights sin(theta_r); summing value * weight *
dtheta * dphi approximates the integral over the sphere.  Sampling across
a pole reflects the row index with a half-turn column shift, which is the
continuation an observer walking over the pole actually sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import interp
from .errors import InputError, MeshError

TWO_PI = 2.0 * np.pi


def validate_mesh_topology(n_verts, tris):
    """Check faces index a closed, manifold, genus-0 surface.

    Raises MeshError naming the first violated rule.  Returns the edge count.
    """
    tris = np.asarray(tris)
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError(f"faces must be (M,3), got {tris.shape}")
    if tris.shape[0] == 0:
        raise MeshError("mesh has no faces")
    if tris.min() < 0 or tris.max() >= n_verts:
        raise MeshError(
            f"face index out of range [0, {n_verts}): found {tris.min()}..{tris.max()}"
        )
    same = (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (
        tris[:, 0] == tris[:, 2]
    )
    if same.any():
        raise MeshError(f"degenerate face {int(np.flatnonzero(same)[0])} repeats a vertex")
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if not np.all(counts == 2):
        bad = uniq[counts != 2][0]
        raise MeshError(
            f"edge ({bad[0]}, {bad[1]}) lies on {counts[counts != 2][0]} faces, "
            f"expected 2 (mesh not closed-manifold)"
        )
    n_edges = uniq.shape[0]
    euler = n_verts - n_edges + tris.shape[0]
    if euler != 2:
        raise MeshError(f"Euler characteristic {euler} != 2 (surface not genus-0)")
    return n_edges


@dataclass
class CorticalMesh:
    """Triangulated surface in voxel coordinates with per-vertex descriptors."""

    verts: np.ndarray
    tris: np.ndarray
    descriptors: np.ndarray = field(default=None)

    def __post_init__(self):
        self.verts = np.ascontiguousarray(self.verts, dtype=np.float64)
        self.tris = np.ascontiguousarray(self.tris, dtype=np.int32)
        if self.verts.ndim != 2 or self.verts.shape[1] != 3:
            raise InputError(f"verts must be (N,3), got {self.verts.shape}")
        if not np.all(np.isfinite(self.verts)):
            raise InputError("mesh vertices contain non-finite values")
        validate_mesh_topology(self.verts.shape[0], self.tris)
        if self.descriptors is None:
            self.descriptors = np.zeros((self.verts.shape[0], 2))
        self.descriptors = np.ascontiguousarray(self.descriptors, dtype=np.float64)
        if (
            self.descriptors.ndim != 2
            or self.descriptors.shape[0] != self.verts.shape[0]
        ):
            raise InputError(
                f"descriptors must be (N,d) with N={self.verts.shape[0]}, "
                f"got {self.descriptors.shape}"
            )
        if not np.all(np.isfinite(self.descriptors)):
            raise InputError("descriptors contain non-finite values")

    @property
    def n_verts(self):
        return self.verts.shape[0]


@dataclass
class SphereMap:
    """Unit-sphere embedding of a mesh, same vertex order and faces."""

    sverts: np.ndarray
    tris: np.ndarray

    def __post_init__(self):
        self.sverts = np.ascontiguousarray(self.sverts, dtype=np.float64)
        self.tris = np.ascontiguousarray(self.tris, dtype=np.int32)
        if self.sverts.ndim != 2 or self.sverts.shape[1] != 3:
            raise InputError(f"sverts must be (N,3), got {self.sverts.shape}")
        norms = np.sqrt((self.sverts**2).sum(axis=1))
        off = np.abs(norms - 1.0) > 1e-6
        if off.any():
            i = int(np.flatnonzero(off)[0])
            raise MeshError(f"sphere vertex {i} has norm {norms[i]:.8f}, expected 1")
        validate_mesh_topology(self.sverts.shape[0], self.tris)
        dets = np.linalg.det(self.sverts[self.tris])
        if np.any(np.abs(dets) < 1e-12):
            i = int(np.argmin(np.abs(dets)))
            raise MeshError(f"spherical triangle {i} is degenerate (near-zero solid angle)")
        if not (np.all(dets > 0) or np.all(dets < 0)):
            i = int(np.flatnonzero((dets > 0) != (dets[0] > 0))[0])
            raise MeshError(f"spherical triangle {i} is flipped relative to the rest")

    @property
    def n_verts(self):
        return self.sverts.shape[0]


def sin_weights(h):
    """Row quadrature weights sin(theta_r) for an H-row grid."""
    if h < 2:
        raise InputError(f"grid needs at least 2 rows, got {h}")
    theta = (np.arange(h) + 0.5) * (np.pi / h)
    return np.sin(theta)


@dataclass
class PlanarGrid2:
    """Channelled scalar samples on the equirectangular grid."""

    grid: np.ndarray  # (C, H, W)

    def __post_init__(self):
        self.grid = np.ascontiguousarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 3:
            raise InputError(f"grid must be (C,H,W), got {self.grid.shape}")
        c, h, w = self.grid.shape
        if c < 1 or h < 2 or w < 4 or w % 2 != 0:
            raise InputError(
                f"grid needs C>=1, H>=2 and even W>=4, got {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.grid)):
            raise InputError("grid contains non-finite values")

    @property
    def shape_hw(self):
        return self.grid.shape[1:]

    @property
    def theta_axis(self):
        h = self.grid.shape[1]
        return (np.arange(h) + 0.5) * (np.pi / h)

    @property
    def phi_axis(self):
        w = self.grid.shape[2]
        return np.arange(w) * (TWO_PI / w)

    @property
    def weights(self):
        return sin_weights(self.grid.shape[1])


def project_to_grid(svecs, h, w):
    """Unit vectors -> fractional grid coordinates (rho_r, rho_c)."""
    s = np.asarray(svecs, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 3:
        raise InputError(f"expected unit vectors (N,3), got {s.shape}")
    theta = np.arccos(np.clip(s[:, 2], -1.0, 1.0))
    phi = np.arctan2(s[:, 1], s[:, 0]) % TWO_PI
    rho_r = theta / (np.pi / h) - 0.5
    rho_c = phi / (TWO_PI / w)
    return np.ascontiguousarray(np.stack([rho_r, rho_c], axis=1))


def unproject_from_grid(rc, h, w):
    """Fractional grid coordinates -> unit vectors.

    Works for coordinates outside the nominal ranges: the trigonometric
    continuation is exactly the pole-reflection / azimuth-wrap rule.
    """
    rc = np.asarray(rc, dtype=np.float64)
    if rc.ndim != 2 or rc.shape[1] != 2:
        raise InputError(f"expected grid coords (N,2), got {rc.shape}")
    theta = (rc[:, 0] + 0.5) * (np.pi / h)
    phi = rc[:, 1] * (TWO_PI / w)
    st = np.sin(theta)
    return np.ascontiguousarray(
        np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)
    )


def unproject_jacobian(rc, h, w):
    """d(unit vector)/d(grid coords) for :func:`unproject_from_grid`, (N,3,2)."""
    rc = np.asarray(rc, dtype=np.float64)
    theta = (rc[:, 0] + 0.5) * (np.pi / h)
    phi = rc[:, 1] * (TWO_PI / w)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    dth = np.pi / h
    dph = TWO_PI / w
    jac = np.empty((rc.shape[0], 3, 2))
    jac[:, 0, 0] = ct * cp * dth
    jac[:, 1, 0] = ct * sp * dth
    jac[:, 2, 0] = -st * dth
    jac[:, 0, 1] = -st * sp * dph
    jac[:, 1, 1] = st * cp * dph
    jac[:, 2, 1] = 0.0
    return jac


def pad_grid(pg, pad):
    """Return grid values padded by ``pad`` on every side, (C, H+2p, W+2p).

    Columns continue circularly; rows continue across the poles with a
    half-turn column shift, so padded row -1 equals row 0 rotated 180 deg.
    """
    grid = pg.grid if isinstance(pg, PlanarGrid2) else np.asarray(pg, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[None]
    c, h, w = grid.shape
    pad = int(pad)
    if pad < 0 or pad > h:
        raise InputError(f"pad must be in [0, {h}], got {pad}")
    if w % 2 != 0:
        raise InputError("pole padding requires an even column count")
    rows = np.empty((c, h + 2 * pad, w))
    rows[:, pad : pad + h] = grid
    half = w // 2
    for k in range(1, pad + 1):
        rows[:, pad - k] = np.roll(grid[:, k - 1], half, axis=-1)
        rows[:, pad + h - 1 + k] = np.roll(grid[:, h - k], half, axis=-1)
    if pad == 0:
        return rows
    return np.concatenate(
        [rows[:, :, -pad:], rows, rows[:, :, :pad]], axis=2
    )


def integrate_on_grid(values, row_weights=None):
    """sin-weighted quadrature of (H,W) samples over the sphere."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 2:
        raise InputError(f"expected (H,W) samples, got {vals.shape}")
    h, w = vals.shape
    wr = sin_weights(h) if row_weights is None else np.asarray(row_weights)
    cell = (np.pi / h) * (TWO_PI / w)
    return float((vals * wr[:, None]).sum() * cell)


class TriangleLocator:
    """Point location on a spherical triangulation.

    For a query direction s, the containing triangle is the one whose
    vertex cone holds s: solving [A B C] lam = s gives all-nonnegative
    coefficients exactly when s lies inside.  Candidate triangles come from
    a coarse angular bucket grid; queries that straddle shared edges accept
    the lowest triangle index so results never depend on bucket order.
    """

    def __init__(self, smap, bucket_rows=None):
        sverts = smap.sverts if isinstance(smap, SphereMap) else np.asarray(smap[0])
        tris = smap.tris if isinstance(smap, SphereMap) else np.asarray(smap[1])
        self.sverts = np.ascontiguousarray(sverts, dtype=np.float64)
        self.tris = np.ascontiguousarray(tris, dtype=np.int32)
        corners = self.sverts[self.tris]  # (M, 3 corners, 3 xyz)
        m = corners.transpose(0, 2, 1)  # columns are A, B, C
        dets = np.linalg.det(m)
        if np.any(np.abs(dets) < 1e-12):
            raise MeshError(
                f"triangle {int(np.argmin(np.abs(dets)))} is coplanar with the origin"
            )
        self.minv = np.ascontiguousarray(np.linalg.inv(m))
        n_tris = self.tris.shape[0]
        if bucket_rows is None:
            bucket_rows = int(np.clip(np.sqrt(n_tris / 4.0), 4, 64))
        bh, bw = int(bucket_rows), 2 * int(bucket_rows)
        centers = corners.mean(axis=1)
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        cap_cos = np.einsum("mx,mkx->mk", centers, corners).min(axis=1)
        cap_ang = np.arccos(np.clip(cap_cos, -1.0, 1.0)) + 1e-7
        bt = (np.arange(bh) + 0.5) * (np.pi / bh)
        bp = (np.arange(bw) + 0.5) * (TWO_PI / bw)
        bth, bph = np.meshgrid(bt, bp, indexing="ij")
        bdirs = np.stack(
            [np.sin(bth) * np.cos(bph), np.sin(bth) * np.sin(bph), np.cos(bth)],
            axis=-1,
        ).reshape(-1, 3)
        lo = bth.reshape(-1) - 0.5 * np.pi / bh
        hi = bth.reshape(-1) + 0.5 * np.pi / bh
        spans_eq = (lo <= np.pi / 2) & (hi >= np.pi / 2)
        smax = np.where(spans_eq, 1.0, np.maximum(np.abs(np.sin(lo)), np.abs(np.sin(hi))))
        brad = 0.5 * np.pi / bh + 0.5 * (TWO_PI / bw) * smax + 1e-9
        ang = np.arccos(np.clip(bdirs @ centers.T, -1.0, 1.0))  # (B, M)
        hit = ang <= (cap_ang[None, :] + brad[:, None])
        counts = hit.sum(axis=1)
        cmax = max(1, int(counts.max()))
        cand = np.full((bh * bw, cmax), -1, dtype=np.int64)
        for b in range(bh * bw):
            ids = np.flatnonzero(hit[b])
            cand[b, : ids.size] = ids  # flatnonzero is ascending: ties resolve low
        self._bh, self._bw = bh, bw
        self._cand = cand
        self._chunk = 16384

    def _bucket_of(self, dirs):
        theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
        phi = np.arctan2(dirs[:, 1], dirs[:, 0]) % TWO_PI
        bi = np.clip((theta / (np.pi / self._bh)).astype(np.int64), 0, self._bh - 1)
        bj = np.clip((phi / (TWO_PI / self._bw)).astype(np.int64), 0, self._bw - 1)
        return bi * self._bw + bj

    def locate(self, dirs, tol=1e-10):
        """Containing triangle index and barycentric weights for each query.

        Returns (tri_idx (Q,), bary (Q,3)).  Raises MeshError naming the
        first query that no triangle accepts.
        """
        dirs = np.asarray(dirs, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[1] != 3:
            raise InputError(f"expected directions (Q,3), got {dirs.shape}")
        nrm = np.linalg.norm(dirs, axis=1, keepdims=True)
        if np.any(nrm < 1e-12):
            raise InputError("zero-length query direction")
        q = dirs / nrm
        n = q.shape[0]
        idx = np.empty(n, dtype=np.int64)
        lam_out = np.empty((n, 3))
        for s in range(0, n, self._chunk):
            sl = slice(s, min(s + self._chunk, n))
            self._locate_chunk(q[sl], idx, lam_out, sl, tol)
        ssum = lam_out.sum(axis=1, keepdims=True)
        return idx, lam_out / ssum

    def _locate_chunk(self, qc, idx, lam_out, sl, tol):
        cand = self._cand[self._bucket_of(qc)]  # (q, cmax)
        valid = cand >= 0
        safe = np.where(valid, cand, 0)
        lam = np.einsum("qcij,qj->qci", self.minv[safe], qc)
        lmin = lam.min(axis=2)
        lmin[~valid] = -np.inf
        ok = lmin >= -tol
        any_ok = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        rows = np.arange(qc.shape[0])
        chosen = safe[rows, first]
        lam_sel = lam[rows, first]
        if not np.all(any_ok):
            misses = np.flatnonzero(~any_ok)
            lam_all = np.einsum("mij,qj->qmi", self.minv, qc[misses])
            lmin_all = lam_all.min(axis=2)
            best = np.argmax(lmin_all, axis=1)
            bb = lmin_all[np.arange(misses.size), best]
            if np.any(bb < -1e-6):
                bad = int(misses[np.argmin(bb)])
                raise MeshError(
                    f"query {sl.start + bad} is outside every spherical triangle "
                    f"(best margin {bb.min():.2e}); sphere map does not cover S2"
                )
            chosen[misses] = best
            lam_sel[misses] = lam_all[np.arange(misses.size), best]
        idx[sl] = chosen
        lam_out[sl] = lam_sel

    def interpolate(self, dirs, values, tol=1e-10):
        """Barycentric interpolation of per-vertex values at query directions."""
        tri, bary = self.locate(dirs, tol)
        vals = np.asarray(values, dtype=np.float64)
        squeeze = vals.ndim == 1
        if squeeze:
            vals = vals[:, None]
        out = np.einsum("qk,qkc->qc", bary, vals[self.tris[tri]])
        return out[:, 0] if squeeze else out

    def interpolate_with_jacobian(self, dirs, values, tol=1e-10):
        """Interpolated values plus their derivative w.r.t. the query direction.

        b = lam / sum(lam) with lam = Minv s, so
        db/ds = (Minv - b outer colsum(Minv)) / sum(lam).
        """
        dirs = np.asarray(dirs, dtype=np.float64)
        tri, bary = self.locate(dirs, tol)
        minv = self.minv[tri]  # (Q,3,3)
        lam = np.einsum("qij,qj->qi", minv, dirs)
        sig = lam.sum(axis=1)
        colsum = minv.sum(axis=1)  # (Q,3): 1^T Minv
        dbary = (minv - bary[:, :, None] * colsum[:, None, :]) / sig[:, None, None]
        vals = np.asarray(values, dtype=np.float64)
        corner_vals = vals[self.tris[tri]]  # (Q, 3 corners, C)
        out = np.einsum("qk,qkc->qc", bary, corner_vals)
        jac = np.einsum("qkc,qks->qcs", corner_vals, dbary)
        return out, jac


def rasterize_descriptors(smap, values, h, w):
    """Resample per-vertex scalars onto the (h, w) grid -> PlanarGrid2.

    Each pixel center direction is located on the sphere map and the
    surrounding triangle's vertex values are blended barycentrically.
    """
    if not isinstance(smap, SphereMap):
        raise InputError("rasterize_descriptors needs a SphereMap")
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != smap.n_verts:
        raise InputError(
            f"values rows {vals.shape[0]} != vertex count {smap.n_verts}"
        )
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rc = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    dirs = unproject_from_grid(rc, h, w)
    loc = TriangleLocator(smap)
    try:
        out = loc.interpolate(dirs, vals)
    except MeshError as e:
        raise MeshError(f"rasterization failed: {e}") from e
    return PlanarGrid2(np.ascontiguousarray(out.T.reshape(vals.shape[1], h, w)))


def sample_grid_at_vertices(grid, smap):
    """Bilinear grid lookup at sphere-map vertices, (N,) or (N,C)."""
    g = grid.grid if isinstance(grid, PlanarGrid2) else np.asarray(grid, dtype=np.float64)
    squeeze = g.ndim == 2
    if squeeze:
        g = g[None]
    sverts = smap.sverts if isinstance(smap, SphereMap) else np.asarray(smap)
    c, h, w = g.shape
    rc = project_to_grid(sverts, h, w)
    out = interp.gather2_sph(np.ascontiguousarray(np.moveaxis(g, 0, -1)), rc)
    return out[:, 0] if squeeze else out


def apply_spherical_map(smap, psi):
    """Deform a sphere map by a 2-D displacement field.

    Each vertex is projected to grid coordinates, displaced by the field
    sampled there, and mapped back to the sphere; connectivity is kept.
    """
    from .fields import DeformationField2

    u = psi.u if isinstance(psi, DeformationField2) else np.asarray(psi, dtype=np.float64)
    if u.ndim != 3 or u.shape[2] != 2:
        raise InputError(f"2-D field must be (H,W,2), got {u.shape}")
    h, w = u.shape[:2]
    rc = project_to_grid(smap.sverts, h, w)
    disp = interp.gather2_sph(np.ascontiguousarray(u), rc)
    moved = unproject_from_grid(rc + disp, h, w)
    return SphereMap(moved, smap.tris)
