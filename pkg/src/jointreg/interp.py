"""Interpolation primitives shared by the volume, field and sphere modules.

All functions take float64 channel-last arrays and an ``(N, ndim)`` array of
query positions in voxel / pixel units.  The three boundary conventions
(clamped box, clamped-row / wrapped-column, pole-reflected spherical) are
documented in :mod:`jointreg._kernels`; this module adds validation and
allocation around the compiled loops.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as _k
from .errors import InputError


def _check_points(points, ndim):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != ndim:
        raise InputError(f"expected points of shape (N, {ndim}), got {points.shape}")
    return pts


def _check_field(field, ndim, name):
    arr = np.ascontiguousarray(field, dtype=np.float64)
    if arr.ndim != ndim + 1:
        raise InputError(f"{name} must have shape (*spatial, C), got {arr.shape}")
    if any(s < 2 for s in arr.shape[:ndim]):
        raise InputError(f"{name} spatial dims must all be >= 2, got {arr.shape}")
    return arr


def gather3(field, points):
    """Sample a (D,H,W,C) array with clamped trilinear interpolation."""
    field = _check_field(field, 3, "field")
    pts = _check_points(points, 3)
    out = np.empty((pts.shape[0], field.shape[3]))
    return _k.tri_gather(field, pts, out)


def gather3_posgrad(field, points):
    """Per-point derivative of :func:`gather3` w.r.t. position, (N,C,3)."""
    field = _check_field(field, 3, "field")
    pts = _check_points(points, 3)
    out = np.empty((pts.shape[0], field.shape[3], 3))
    return _k.tri_gather_posgrad(field, pts, out)


def scatter3(grad, points, spatial_shape):
    """Adjoint of :func:`gather3` in the field values.

    Accumulates ``grad`` (N,C) into a zero array of shape
    ``(*spatial_shape, C)`` using the same corner weights gather3 reads with.
    """
    pts = _check_points(points, 3)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.ndim != 2 or grad.shape[0] != pts.shape[0]:
        raise InputError(f"grad must be (N, C) matching points, got {grad.shape}")
    out = np.zeros((*spatial_shape, grad.shape[1]))
    return _k.tri_scatter(grad, pts, out)


def gather2_cw(field, points):
    """Sample (H,W,C) with rows clamped and columns wrapped."""
    field = _check_field(field, 2, "field")
    pts = _check_points(points, 2)
    out = np.empty((pts.shape[0], field.shape[2]))
    return _k.bi_gather_cw(field, pts, out)


def gather2_cw_posgrad(field, points):
    field = _check_field(field, 2, "field")
    pts = _check_points(points, 2)
    out = np.empty((pts.shape[0], field.shape[2], 2))
    return _k.bi_gather_cw_posgrad(field, pts, out)


def scatter2_cw(grad, points, spatial_shape):
    pts = _check_points(points, 2)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.ndim != 2 or grad.shape[0] != pts.shape[0]:
        raise InputError(f"grad must be (N, C) matching points, got {grad.shape}")
    out = np.zeros((*spatial_shape, grad.shape[1]))
    return _k.bi_scatter_cw(grad, pts, out)


def _check_sph(field):
    field = _check_field(field, 2, "grid")
    if field.shape[1] % 2 != 0:
        raise InputError(
            f"spherical grids need an even column count for the half-turn "
            f"pole shift, got {field.shape[1]}"
        )
    return field


def gather2_sph(field, points):
    """Sample (H,W,C) with pole-reflected rows and wrapped columns."""
    field = _check_sph(field)
    pts = _check_points(points, 2)
    out = np.empty((pts.shape[0], field.shape[2]))
    return _k.bi_gather_sph(field, pts, out)


def gather2_sph_posgrad(field, points):
    field = _check_sph(field)
    pts = _check_points(points, 2)
    out = np.empty((pts.shape[0], field.shape[2], 2))
    return _k.bi_gather_sph_posgrad(field, pts, out)


def scatter2_sph(grad, points, spatial_shape):
    pts = _check_points(points, 2)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.ndim != 2 or grad.shape[0] != pts.shape[0]:
        raise InputError(f"grad must be (N, C) matching points, got {grad.shape}")
    if spatial_shape[1] % 2 != 0:
        raise InputError("spherical grids need an even column count")
    out = np.zeros((*spatial_shape, grad.shape[1]))
    return _k.bi_scatter_sph(grad, pts, out)
