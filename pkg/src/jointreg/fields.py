"""Stationary velocity fields, their exponentials and deformation utilities.

A 3-D field is an array ``(D, H, W, 3)`` of displacements in voxel units,
component order (x, y, z).  A 2-D field lives on an angular grid as
``(H, W, 2)`` with components (row, col); rows clamp and columns wrap when
a field samples itself during integration.

``integrate_velocity`` exponentiates a velocity by scaling and squaring:
the field is divided by ``2**steps`` and repeatedly composed with itself.
``integrate_velocity_vjp`` runs the exact reverse-mode sweep through that
recursion, which is what makes the registration objective differentiable
end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import interp
from .errors import InputError

_grid_cache = {}


@dataclass
class DeformationField3:
    """Displacement field u; the mapping itself is x -> x + u(x)."""

    u: np.ndarray

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        if self.u.ndim != 4 or self.u.shape[3] != 3:
            raise InputError(f"3-D field must be (D,H,W,3), got {self.u.shape}")

    @property
    def shape(self):
        return self.u.shape[:3]


@dataclass
class DeformationField2:
    """Displacement field on an angular grid, mapping rc -> rc + u(rc)."""

    u: np.ndarray

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        if self.u.ndim != 3 or self.u.shape[2] != 2:
            raise InputError(f"2-D field must be (H,W,2), got {self.u.shape}")

    @property
    def shape(self):
        return self.u.shape[:2]


def _u(field):
    if isinstance(field, (DeformationField3, DeformationField2)):
        return field.u
    return np.ascontiguousarray(field, dtype=np.float64)


def identity_points(spatial_shape):
    """Flattened grid coordinates (N, ndim) in C order, cached per shape."""
    key = tuple(int(s) for s in spatial_shape)
    if key not in _grid_cache:
        axes = [np.arange(s, dtype=np.float64) for s in key]
        mesh = np.meshgrid(*axes, indexing="ij")
        _grid_cache[key] = np.ascontiguousarray(
            np.stack([m.ravel() for m in mesh], axis=1)
        )
    return _grid_cache[key]


def _self_sample(u, points):
    """Sample a field at points using its own boundary convention."""
    if u.ndim == 4:
        return interp.gather3(u, points)
    return interp.gather2_cw(u, points)


def _self_posgrad(u, points):
    if u.ndim == 4:
        return interp.gather3_posgrad(u, points)
    return interp.gather2_cw_posgrad(u, points)


def _self_scatter(g, points, spatial):
    if len(spatial) == 3:
        return interp.scatter3(g, points, spatial)
    return interp.scatter2_cw(g, points, spatial)


def _check_velocity(v):
    v = _u(v)
    if v.ndim == 4 and v.shape[3] == 3:
        return v
    if v.ndim == 3 and v.shape[2] == 2:
        return v
    raise InputError(f"velocity must be (D,H,W,3) or (H,W,2), got {v.shape}")


def integrate_velocity(v, steps=7, want_tape=False):
    """Exponentiate a stationary velocity field by scaling and squaring.

    Returns the displacement array of the same shape as ``v``; with
    ``want_tape=True`` also returns the list of intermediate displacements
    needed by :func:`integrate_velocity_vjp`.
    """
    v = _check_velocity(v)
    if not (0 <= int(steps) <= 16):
        raise InputError(f"steps must be in [0, 16], got {steps}")
    if not np.all(np.isfinite(v)):
        raise InputError("velocity field contains non-finite values")
    steps = int(steps)
    spatial = v.shape[:-1]
    pts = identity_points(spatial)
    u = v / (2.0**steps)
    tape = [u]
    n = pts.shape[0]
    c = v.shape[-1]
    for _ in range(steps):
        sampled = _self_sample(u, pts + u.reshape(n, c))
        u = u + sampled.reshape(u.shape)
        tape.append(u)
    if want_tape:
        return u, tape
    return u


def integrate_velocity_vjp(tape, grad_out, steps=7):
    """Reverse-mode sweep of :func:`integrate_velocity`.

    ``tape`` is the snapshot list from the forward pass and ``grad_out`` the
    gradient w.r.t. the integrated displacement; returns the gradient w.r.t.
    the velocity.
    """
    steps = int(steps)
    if len(tape) != steps + 1:
        raise InputError(f"tape length {len(tape)} does not match steps {steps}")
    u_out = tape[-1]
    spatial = u_out.shape[:-1]
    c = u_out.shape[-1]
    pts = identity_points(spatial)
    n = pts.shape[0]
    ghat = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(n, c)
    for k in range(steps - 1, -1, -1):
        u_k = tape[k]
        p = pts + u_k.reshape(n, c)
        scattered = _self_scatter(ghat, p, spatial).reshape(n, c)
        jac = _self_posgrad(u_k, p)
        ghat = ghat + scattered + np.einsum("nc,nca->na", ghat, jac)
    return (ghat / (2.0**steps)).reshape(u_out.shape)


def compose_fields(outer, inner):
    """Displacement of the composed map x -> outer(inner(x)).

    Both arguments are displacement arrays of matching kind; the result w
    satisfies x + w(x) = (x + inner(x)) + outer evaluated there.
    """
    uo = _check_velocity(outer)
    ui = _check_velocity(inner)
    if uo.shape != ui.shape:
        raise InputError(f"field shapes differ: {uo.shape} vs {ui.shape}")
    spatial = uo.shape[:-1]
    pts = identity_points(spatial)
    n = pts.shape[0]
    c = uo.shape[-1]
    sampled = _self_sample(uo, pts + ui.reshape(n, c))
    return ui + sampled.reshape(ui.shape)


def warp_volume(data, field):
    """Pull a volume back through a deformation: out(x) = data(x + u(x)).

    ``data`` may be (D,H,W) or a channel stack (C,D,H,W); shape is preserved.
    """
    u = _u(field)
    arr = np.asarray(data, dtype=np.float64)
    stacked = arr.ndim == 4
    vol = np.ascontiguousarray(np.moveaxis(arr, 0, -1) if stacked else arr[..., None])
    if vol.shape[:3] != u.shape[:3]:
        raise InputError(f"volume {vol.shape[:3]} and field {u.shape[:3]} grids differ")
    spatial = u.shape[:3]
    pts = identity_points(spatial)
    out = interp.gather3(vol, pts + u.reshape(-1, 3))
    out = out.reshape(*spatial, vol.shape[3])
    return np.ascontiguousarray(np.moveaxis(out, -1, 0)) if stacked else out[..., 0]


def warp_labels(labels, field):
    """Nearest-neighbour label warp, returns int32 (D,H,W)."""
    from .volume import sample_nearest_label

    u = _u(field)
    spatial = u.shape[:3]
    pts = identity_points(spatial)
    lab = sample_nearest_label(labels, pts + u.reshape(-1, 3))
    return lab.reshape(spatial)


def warp_vertices(verts, field):
    """Push vertex coordinates through the deformation: v + u(v)."""
    u = _u(field)
    pts = np.ascontiguousarray(verts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"vertices must be (N,3), got {pts.shape}")
    return pts + interp.gather3(u, pts)


@dataclass
class JacobianStats:
    """Fold and log-determinant statistics of a deformation."""

    pct_folds: float
    sd_log_detj: float
    n_clamped: int
    det_min: float
    det_max: float
    n_interior: int


def _det3(g):
    """Determinant of I + g for g (..., 3, 3) laid out [component, axis]."""
    a = g.copy()
    a[..., 0, 0] += 1.0
    a[..., 1, 1] += 1.0
    a[..., 2, 2] += 1.0
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def jacobian_determinant(field):
    """det(I + grad u) by central differences on the interior voxels.

    3-D fields return (D-2, H-2, W-2); 2-D fields differentiate rows on the
    interior and columns periodically, returning (H-2, W).
    """
    u = _check_velocity(field)
    if u.ndim == 4:
        core = (slice(1, -1),) * 3
        g = np.empty((*u[core].shape[:3], 3, 3))
        for comp in range(3):
            for ax in range(3):
                hi = [slice(1, -1)] * 3
                lo = [slice(1, -1)] * 3
                hi[ax] = slice(2, None)
                lo[ax] = slice(None, -2)
                g[..., comp, ax] = (
                    u[tuple(hi) + (comp,)] - u[tuple(lo) + (comp,)]
                ) / 2.0
        return _det3(g)
    dr = (u[2:, :, :] - u[:-2, :, :]) / 2.0
    dc = (np.roll(u, -1, axis=1)[1:-1] - np.roll(u, 1, axis=1)[1:-1]) / 2.0
    a = 1.0 + dr[..., 0]
    b = dc[..., 0]
    cc = dr[..., 1]
    d = 1.0 + dc[..., 1]
    return a * d - b * cc


def jacobian_stats(field, log_floor=1e-9):
    """Summary statistics of the deformation Jacobian.

    ``pct_folds`` counts determinants <= 0; the log-determinant spread is
    taken over voxels with ``|det| > log_floor`` and ``n_clamped`` reports
    how many voxels were excluded by that floor.
    """
    det = jacobian_determinant(field)
    n = det.size
    if n == 0:
        raise InputError("field too small for interior Jacobian statistics")
    folds = int(np.count_nonzero(det <= 0.0))
    keep = np.abs(det) > log_floor
    n_clamped = int(n - np.count_nonzero(keep))
    sd = float(np.std(np.log(np.abs(det[keep])))) if keep.any() else float("nan")
    return JacobianStats(
        pct_folds=100.0 * folds / n,
        sd_log_detj=sd,
        n_clamped=n_clamped,
        det_min=float(det.min()),
        det_max=float(det.max()),
        n_interior=int(n),
    )


def downsample_volume(data):
    """2x box average; odd trailing slices are dropped."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 3:
        raise InputError(f"expected a 3-D array, got {a.shape}")
    d, h, w = (s // 2 for s in a.shape)
    if min(d, h, w) < 1:
        raise InputError(f"volume {a.shape} too small to downsample")
    a = a[: 2 * d, : 2 * h, : 2 * w]
    return a.reshape(d, 2, h, 2, w, 2).mean(axis=(1, 3, 5))


def downsample_labels(data):
    """2x nearest subsample (even indices), keeps labels crisp."""
    a = np.asarray(data)
    return np.ascontiguousarray(a[::2, ::2, ::2])


def upsample_field(u_coarse, fine_shape):
    """Resample a displacement field onto a finer grid, doubling magnitudes.

    Fine position f corresponds to coarse coordinate (f - 0.5) / 2 under 2x
    box downsampling, and displacements measured in coarse voxels double when
    re-expressed in fine voxels.  Spherical-grid columns carry no half-cell
    offset (phi = c * dphi), so there the column mapping is f / 2.
    """
    u = _check_velocity(u_coarse)
    fine_shape = tuple(int(s) for s in fine_shape)
    if len(fine_shape) != u.ndim - 1:
        raise InputError(f"fine_shape {fine_shape} rank does not match field")
    pts = identity_points(fine_shape)
    coarse_pts = (pts - 0.5) / 2.0
    if u.ndim - 1 == 2:
        coarse_pts[:, 1] = pts[:, 1] / 2.0
    sampled = _self_sample(u, np.ascontiguousarray(coarse_pts))
    return 2.0 * sampled.reshape(*fine_shape, u.shape[-1])
