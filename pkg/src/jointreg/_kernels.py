"""Compiled interpolation kernels.

Everything here operates on C-contiguous float64 arrays with an explicit
channel axis last and writes into caller-allocated outputs.  The public
wrappers live in :mod:`jointreg.interp`; this module holds only the tight
loops.

Boundary conventions, shared with the pure-numpy oracles used in tests:

* 3-D volumes clamp all three axes.  A query is first clipped to
  ``[0, n-1]``, the base corner is ``min(floor(q), n-2)`` and the fraction
  is measured from that corner, so queries outside the box reproduce the
  nearest face value.
* 2-D "cw" kernels clamp rows and wrap columns (used for velocity fields
  stored on an angular grid, where the row axis is clamped during
  integration).
* 2-D "sph" kernels treat rows as reflected across both poles with a
  half-turn column shift, and wrap columns.  Row coordinate ``r`` is
  canonicalised with period ``2H``: ``s = (r + 0.5) mod 2H`` and
  ``s > H`` folds back to ``2H - s`` while shifting columns by ``W / 2``.

Derivatives with respect to query position are one-sided inside the cell
that contains the query; a clamped axis contributes a zero derivative.
"""

import math

import numba
import numpy as np

_SIG_CACHE = {"cache": True, "fastmath": False}


@numba.njit(**_SIG_CACHE)
def tri_gather(field, pos, out):
    """Trilinear gather.  field (D,H,W,C), pos (N,3), out (N,C)."""
    D, H, W, C = field.shape
    n = pos.shape[0]
    for i in range(n):
        qx = min(max(pos[i, 0], 0.0), D - 1.0)
        qy = min(max(pos[i, 1], 0.0), H - 1.0)
        qz = min(max(pos[i, 2], 0.0), W - 1.0)
        ix = min(int(math.floor(qx)), D - 2)
        iy = min(int(math.floor(qy)), H - 2)
        iz = min(int(math.floor(qz)), W - 2)
        tx = qx - ix
        ty = qy - iy
        tz = qz - iz
        for c in range(C):
            acc = 0.0
            for dx in range(2):
                wx = tx if dx == 1 else 1.0 - tx
                for dy in range(2):
                    wy = ty if dy == 1 else 1.0 - ty
                    for dz in range(2):
                        wz = tz if dz == 1 else 1.0 - tz
                        acc += field[ix + dx, iy + dy, iz + dz, c] * (wx * wy * wz)
            out[i, c] = acc
    return out


@numba.njit(**_SIG_CACHE)
def tri_gather_posgrad(field, pos, out):
    """Derivative of tri_gather w.r.t. pos.  out (N,C,3)."""
    D, H, W, C = field.shape
    n = pos.shape[0]
    for i in range(n):
        px = pos[i, 0]
        py = pos[i, 1]
        pz = pos[i, 2]
        qx = min(max(px, 0.0), D - 1.0)
        qy = min(max(py, 0.0), H - 1.0)
        qz = min(max(pz, 0.0), W - 1.0)
        ix = min(int(math.floor(qx)), D - 2)
        iy = min(int(math.floor(qy)), H - 2)
        iz = min(int(math.floor(qz)), W - 2)
        tx = qx - ix
        ty = qy - iy
        tz = qz - iz
        mx = 0.0 if (px < 0.0 or px > D - 1.0) else 1.0
        my = 0.0 if (py < 0.0 or py > H - 1.0) else 1.0
        mz = 0.0 if (pz < 0.0 or pz > W - 1.0) else 1.0
        for c in range(C):
            gx = 0.0
            gy = 0.0
            gz = 0.0
            for da in range(2):
                for db in range(2):
                    # x-derivative: difference along x, weights over (y, z)
                    wy = ty if da == 1 else 1.0 - ty
                    wz = tz if db == 1 else 1.0 - tz
                    gx += (
                        field[ix + 1, iy + da, iz + db, c]
                        - field[ix, iy + da, iz + db, c]
                    ) * (wy * wz)
                    # y-derivative: difference along y, weights over (x, z)
                    wx = tx if da == 1 else 1.0 - tx
                    gy += (
                        field[ix + da, iy + 1, iz + db, c]
                        - field[ix + da, iy, iz + db, c]
                    ) * (wx * wz)
                    # z-derivative: difference along z, weights over (x, y)
                    wyb = ty if db == 1 else 1.0 - ty
                    gz += (
                        field[ix + da, iy + db, iz + 1, c]
                        - field[ix + da, iy + db, iz, c]
                    ) * (wx * wyb)
            out[i, c, 0] = gx * mx
            out[i, c, 1] = gy * my
            out[i, c, 2] = gz * mz
    return out


@numba.njit(**_SIG_CACHE)
def tri_scatter(g, pos, out):
    """Adjoint of tri_gather in the field values.  g (N,C), out (D,H,W,C)."""
    D, H, W, C = out.shape
    n = pos.shape[0]
    for i in range(n):
        qx = min(max(pos[i, 0], 0.0), D - 1.0)
        qy = min(max(pos[i, 1], 0.0), H - 1.0)
        qz = min(max(pos[i, 2], 0.0), W - 1.0)
        ix = min(int(math.floor(qx)), D - 2)
        iy = min(int(math.floor(qy)), H - 2)
        iz = min(int(math.floor(qz)), W - 2)
        tx = qx - ix
        ty = qy - iy
        tz = qz - iz
        for dx in range(2):
            wx = tx if dx == 1 else 1.0 - tx
            for dy in range(2):
                wy = ty if dy == 1 else 1.0 - ty
                for dz in range(2):
                    wz = tz if dz == 1 else 1.0 - tz
                    w = wx * wy * wz
                    for c in range(C):
                        out[ix + dx, iy + dy, iz + dz, c] += g[i, c] * w
    return out


@numba.njit(**_SIG_CACHE)
def bi_gather_cw(field, pos, out):
    """Bilinear gather, rows clamped, columns wrapped.  field (H,W,C)."""
    H, W, C = field.shape
    n = pos.shape[0]
    for i in range(n):
        qr = min(max(pos[i, 0], 0.0), H - 1.0)
        ir = min(int(math.floor(qr)), H - 2)
        tr = qr - ir
        qc = pos[i, 1] % W
        ic0 = int(math.floor(qc))
        if ic0 >= W:
            ic0 = W - 1
        tc = qc - ic0
        ic1 = ic0 + 1
        if ic1 == W:
            ic1 = 0
        for c in range(C):
            v0 = field[ir, ic0, c] * (1.0 - tc) + field[ir, ic1, c] * tc
            v1 = field[ir + 1, ic0, c] * (1.0 - tc) + field[ir + 1, ic1, c] * tc
            out[i, c] = v0 * (1.0 - tr) + v1 * tr
    return out


@numba.njit(**_SIG_CACHE)
def bi_gather_cw_posgrad(field, pos, out):
    """Derivative of bi_gather_cw w.r.t. pos.  out (N,C,2)."""
    H, W, C = field.shape
    n = pos.shape[0]
    for i in range(n):
        pr = pos[i, 0]
        qr = min(max(pr, 0.0), H - 1.0)
        ir = min(int(math.floor(qr)), H - 2)
        tr = qr - ir
        mr = 0.0 if (pr < 0.0 or pr > H - 1.0) else 1.0
        qc = pos[i, 1] % W
        ic0 = int(math.floor(qc))
        if ic0 >= W:
            ic0 = W - 1
        tc = qc - ic0
        ic1 = ic0 + 1
        if ic1 == W:
            ic1 = 0
        for c in range(C):
            v0 = field[ir, ic0, c] * (1.0 - tc) + field[ir, ic1, c] * tc
            v1 = field[ir + 1, ic0, c] * (1.0 - tc) + field[ir + 1, ic1, c] * tc
            d0 = field[ir, ic1, c] - field[ir, ic0, c]
            d1 = field[ir + 1, ic1, c] - field[ir + 1, ic0, c]
            out[i, c, 0] = (v1 - v0) * mr
            out[i, c, 1] = d0 * (1.0 - tr) + d1 * tr
    return out


@numba.njit(**_SIG_CACHE)
def bi_scatter_cw(g, pos, out):
    """Adjoint of bi_gather_cw in the field values.  out (H,W,C)."""
    H, W, C = out.shape
    n = pos.shape[0]
    for i in range(n):
        qr = min(max(pos[i, 0], 0.0), H - 1.0)
        ir = min(int(math.floor(qr)), H - 2)
        tr = qr - ir
        qc = pos[i, 1] % W
        ic0 = int(math.floor(qc))
        if ic0 >= W:
            ic0 = W - 1
        tc = qc - ic0
        ic1 = ic0 + 1
        if ic1 == W:
            ic1 = 0
        for c in range(C):
            gi = g[i, c]
            out[ir, ic0, c] += gi * ((1.0 - tr) * (1.0 - tc))
            out[ir, ic1, c] += gi * ((1.0 - tr) * tc)
            out[ir + 1, ic0, c] += gi * (tr * (1.0 - tc))
            out[ir + 1, ic1, c] += gi * (tr * tc)
    return out


@numba.njit(inline="always")
def _sph_fold(r, H):
    """Canonical row coordinate and slope under pole reflection."""
    s = (r + 0.5) % (2.0 * H)
    if s > H:
        return (2.0 * H - s) - 0.5, -1.0
    return s - 0.5, 1.0


@numba.njit(inline="always")
def _sph_row(j, H):
    """Map a virtual row index to a stored row and a column half-shift."""
    if j < 0:
        return 0, 1
    if j > H - 1:
        return H - 1, 1
    return j, 0


@numba.njit(**_SIG_CACHE)
def bi_gather_sph(field, pos, out):
    """Bilinear gather on a spherical grid.  field (H,W,C), W even."""
    H, W, C = field.shape
    half = W // 2
    n = pos.shape[0]
    for i in range(n):
        rc, _ = _sph_fold(pos[i, 0], H)
        jr = int(math.floor(rc))
        tr = rc - jr
        r0, s0 = _sph_row(jr, H)
        r1, s1 = _sph_row(jr + 1, H)
        qc = pos[i, 1] % W
        ic = int(math.floor(qc))
        if ic >= W:
            ic = W - 1
        tc = qc - ic
        a0 = (ic + s0 * half) % W
        b0 = (a0 + 1) % W
        a1 = (ic + s1 * half) % W
        b1 = (a1 + 1) % W
        for c in range(C):
            v0 = field[r0, a0, c] * (1.0 - tc) + field[r0, b0, c] * tc
            v1 = field[r1, a1, c] * (1.0 - tc) + field[r1, b1, c] * tc
            out[i, c] = v0 * (1.0 - tr) + v1 * tr
    return out


@numba.njit(**_SIG_CACHE)
def bi_gather_sph_posgrad(field, pos, out):
    """Derivative of bi_gather_sph w.r.t. pos.  out (N,C,2)."""
    H, W, C = field.shape
    half = W // 2
    n = pos.shape[0]
    for i in range(n):
        rc, slope = _sph_fold(pos[i, 0], H)
        jr = int(math.floor(rc))
        tr = rc - jr
        r0, s0 = _sph_row(jr, H)
        r1, s1 = _sph_row(jr + 1, H)
        qc = pos[i, 1] % W
        ic = int(math.floor(qc))
        if ic >= W:
            ic = W - 1
        tc = qc - ic
        a0 = (ic + s0 * half) % W
        b0 = (a0 + 1) % W
        a1 = (ic + s1 * half) % W
        b1 = (a1 + 1) % W
        for c in range(C):
            v0 = field[r0, a0, c] * (1.0 - tc) + field[r0, b0, c] * tc
            v1 = field[r1, a1, c] * (1.0 - tc) + field[r1, b1, c] * tc
            d0 = field[r0, b0, c] - field[r0, a0, c]
            d1 = field[r1, b1, c] - field[r1, a1, c]
            out[i, c, 0] = (v1 - v0) * slope
            out[i, c, 1] = d0 * (1.0 - tr) + d1 * tr
    return out


@numba.njit(**_SIG_CACHE)
def bi_scatter_sph(g, pos, out):
    """Adjoint of bi_gather_sph in the field values.  out (H,W,C)."""
    H, W, C = out.shape
    half = W // 2
    n = pos.shape[0]
    for i in range(n):
        rc, _ = _sph_fold(pos[i, 0], H)
        jr = int(math.floor(rc))
        tr = rc - jr
        r0, s0 = _sph_row(jr, H)
        r1, s1 = _sph_row(jr + 1, H)
        qc = pos[i, 1] % W
        ic = int(math.floor(qc))
        if ic >= W:
            ic = W - 1
        tc = qc - ic
        a0 = (ic + s0 * half) % W
        b0 = (a0 + 1) % W
        a1 = (ic + s1 * half) % W
        b1 = (a1 + 1) % W
        for c in range(C):
            gi = g[i, c]
            out[r0, a0, c] += gi * ((1.0 - tr) * (1.0 - tc))
            out[r0, b0, c] += gi * ((1.0 - tr) * tc)
            out[r1, a1, c] += gi * (tr * (1.0 - tc))
            out[r1, b1, c] += gi * (tr * tc)
    return out
