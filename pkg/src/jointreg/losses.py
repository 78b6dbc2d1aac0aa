"""Objective terms and their analytic gradients with respect to field values.

Every term follows the same pattern: called plainly it returns a scalar,
called with ``want_grad=True`` it also returns the gradient with respect to
the quantity the optimizer controls.  ``total_loss`` assembles the joint
objective

    total = sim_vol + sim_sph + gamma * cons + lambda * (reg_vol + reg_sph)
            + kappa * struct

over a :class:`RegistrationState`, optionally with the full gradient with
respect to both displacement fields.  All reductions run in a fixed order,
so repeated evaluations are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import interp, sphere
from .errors import InputError
from .fields import DeformationField2, DeformationField3, identity_points
from .sphere import PlanarGrid2, sin_weights
from .volume import Volume3

NCC_EPS = 1e-5
DICE_EPS = 1e-5

_ones_cache = {}


@dataclass
class LossWeights:
    """Hyperparameters of the joint objective."""

    lambda_reg: float = 1.0
    gamma_cons: float = 0.05
    kappa_struct: float = 10.0
    ncc_window: int = 9

    def __post_init__(self):
        for name in ("lambda_reg", "gamma_cons", "kappa_struct"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise InputError(f"{name} must be finite and >= 0, got {v}")
            setattr(self, name, v)
        self.ncc_window = int(self.ncc_window)
        if self.ncc_window < 3 or self.ncc_window % 2 == 0:
            raise InputError(f"ncc_window must be an odd int >= 3, got {self.ncc_window}")


@dataclass
class LossReport:
    """Unweighted objective components plus their weighted total."""

    sim_vol: float
    sim_sph: float
    cons: float
    reg_vol: float
    reg_sph: float
    struct: float
    total: float
    level: int = -1
    iteration: int = -1

    def as_dict(self):
        return {
            "sim_vol": self.sim_vol,
            "sim_sph": self.sim_sph,
            "cons": self.cons,
            "reg_vol": self.reg_vol,
            "reg_sph": self.reg_sph,
            "struct": self.struct,
            "total": self.total,
        }


def combine_terms(w, sim_vol, sim_sph, cons, reg_vol, reg_sph, struct):
    return (
        sim_vol
        + sim_sph
        + w.gamma_cons * cons
        + w.lambda_reg * (reg_vol + reg_sph)
        + w.kappa_struct * struct
    )


# ---------------------------------------------------------------------------
# windowed sums


def _box1(a, r, axis, wrap):
    n = a.shape[axis]
    if wrap:
        r = min(r, (n - 1) // 2)
    else:
        r = min(r, n - 1)
    if r == 0:
        return a.astype(np.float64, copy=True)
    if wrap:
        idx = np.arange(-r, n + r) % n
        ap = np.take(a, idx, axis=axis)
        c = np.cumsum(ap, axis=axis)
        zero = np.zeros_like(np.take(c, [0], axis=axis))
        c = np.concatenate([zero, c], axis=axis)
        hi = np.take(c, np.arange(2 * r + 1, n + 2 * r + 1), axis=axis)
        lo = np.take(c, np.arange(n), axis=axis)
        return hi - lo
    c = np.cumsum(a, axis=axis)
    zero = np.zeros_like(np.take(c, [0], axis=axis))
    c = np.concatenate([zero, c], axis=axis)
    hi = np.take(c, np.minimum(np.arange(n) + r, n - 1) + 1, axis=axis)
    lo = np.take(c, np.maximum(np.arange(n) - r, 0), axis=axis)
    return hi - lo


def box_sum(a, window, wrap=None):
    """Sum over centered windows of odd side ``window``.

    Windows clip at array edges (the sum covers only in-range samples)
    except along axes flagged in ``wrap``, which are periodic.  The operator
    is self-adjoint, which the gradient formulas below rely on.
    """
    a = np.asarray(a, dtype=np.float64)
    if window % 2 == 0 or window < 1:
        raise InputError(f"window must be odd and >= 1, got {window}")
    wrap = (False,) * a.ndim if wrap is None else tuple(wrap)
    if len(wrap) != a.ndim:
        raise InputError("wrap must have one flag per axis")
    r = window // 2
    out = a
    for ax in range(a.ndim):
        out = _box1(out, r, ax, wrap[ax])
    return out


def _window_counts(shape, window, wrap):
    key = (shape, window, wrap)
    if key not in _ones_cache:
        _ones_cache[key] = box_sum(np.ones(shape), window, wrap)
    return _ones_cache[key]


# ---------------------------------------------------------------------------
# local normalized cross-correlation


def _as_channels(x, role):
    """Normalize NCC input to (C, *spatial) plus (wrap, default weights)."""
    if isinstance(x, Volume3):
        return x.data[None], (False, False, False)
    if isinstance(x, PlanarGrid2):
        return x.grid, (False, True)
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3:  # (D,H,W) volume
        return a[None], (False, False, False)
    if a.ndim == 2:  # (H,W) spherical grid
        return a[None], (False, True)
    if a.ndim == 4:  # (C,D,H,W)
        return a, (False, False, False)
    raise InputError(f"cannot interpret {role} of shape {a.shape} for NCC")


def loss_ncc_local(fixed, warped, window=9, weights=None, want_grad=False):
    """1 - mean local squared NCC between fixed and warped.

    In every centered window (side ``window``, clipped at edges, periodic
    along azimuth for spherical grids),

        ncc2 = (sum (f - fbar)(g - gbar))^2
               / (sum (f - fbar)^2 * sum (g - gbar)^2 + eps)

    and the loss averages ``1 - ncc2`` over positions, weighted by the
    per-row ``weights`` when given (spherical distortion correction).
    Multi-channel inputs average the per-channel losses.  The gradient is
    taken with respect to ``warped``.
    """
    f, finfo = _as_channels(fixed, "fixed")
    g, ginfo = _as_channels(warped, "warped")
    if f.shape != g.shape:
        raise InputError(f"NCC operands differ in shape: {f.shape} vs {g.shape}")
    if finfo != ginfo:
        raise InputError("NCC operands are of different grid kinds")
    wrap = finfo
    spatial = f.shape[1:]
    if window % 2 == 0 or window < 3:
        raise InputError(f"window must be odd and >= 3, got {window}")
    if weights is None:
        wpos = np.full(spatial, 1.0 / np.prod(spatial))
    else:
        wr = np.asarray(weights, dtype=np.float64)
        if wr.ndim != 1 or wr.shape[0] != spatial[0]:
            raise InputError(
                f"weights must be one value per row ({spatial[0]}), got {wr.shape}"
            )
        if np.any(wr < 0) or wr.sum() <= 0:
            raise InputError("weights must be non-negative with positive sum")
        wpos = np.broadcast_to(wr.reshape(-1, *([1] * (len(spatial) - 1))), spatial)
        wpos = wpos / wpos.sum()
    n = _window_counts(spatial, window, wrap)
    nch = f.shape[0]
    loss = 0.0
    grad = np.zeros_like(g) if want_grad else None
    for c in range(nch):
        fc, gc = f[c], g[c]
        sf = box_sum(fc, window, wrap)
        sg = box_sum(gc, window, wrap)
        sff = box_sum(fc * fc, window, wrap)
        sgg = box_sum(gc * gc, window, wrap)
        sfg = box_sum(fc * gc, window, wrap)
        cross = sfg - sf * sg / n
        fv = sff - sf * sf / n
        gv = sgg - sg * sg / n
        den = fv * gv + NCC_EPS
        cc = cross * cross / den
        loss += 1.0 - float((wpos * cc).sum())
        if want_grad:
            alpha = 2.0 * wpos * cross / den
            beta = 2.0 * wpos * cross * cross * fv / (den * den)
            term = (
                fc * box_sum(alpha, window, wrap)
                - box_sum(alpha * sf / n, window, wrap)
                - gc * box_sum(beta, window, wrap)
                + box_sum(beta * sg / n, window, wrap)
            )
            grad[c] = -term / nch
    loss /= nch
    if want_grad:
        return loss, grad
    return loss


# ---------------------------------------------------------------------------
# soft Dice


def loss_soft_dice(fixed_onehot, warped_onehot, weights=None, want_grad=False):
    """1 - mean over channels of the eps-smoothed soft Dice coefficient.

    ``weights`` (one value per leading spatial row) turn the sums into
    spherical quadrature sums.  The gradient is with respect to the warped
    channels.
    """
    p = np.asarray(fixed_onehot, dtype=np.float64)
    q = np.asarray(warped_onehot, dtype=np.float64)
    if p.shape != q.shape:
        raise InputError(f"one-hot shapes differ: {p.shape} vs {q.shape}")
    if p.ndim < 2:
        raise InputError("one-hot inputs must be (K, *spatial)")
    if p.min() < -1e-9 or p.max() > 1 + 1e-9 or q.min() < -1e-9 or q.max() > 1 + 1e-9:
        raise InputError("one-hot channels must lie in [0, 1]")
    k = p.shape[0]
    spatial = p.shape[1:]
    if weights is None:
        w = np.ones(spatial)
    else:
        wr = np.asarray(weights, dtype=np.float64)
        if wr.ndim != 1 or wr.shape[0] != spatial[0]:
            raise InputError(
                f"weights must be one value per row ({spatial[0]}), got {wr.shape}"
            )
        w = np.broadcast_to(wr.reshape(-1, *([1] * (len(spatial) - 1))), spatial)
    axes = tuple(range(1, p.ndim))
    num = 2.0 * (w * p * q).sum(axis=axes) + DICE_EPS
    den = (w * p).sum(axis=axes) + (w * q).sum(axis=axes) + DICE_EPS
    loss = 1.0 - float((num / den).mean())
    if not want_grad:
        return loss
    shape = (k,) + (1,) * (p.ndim - 1)
    grad = -(w[None] / k) * (
        2.0 * p * den.reshape(shape) - num.reshape(shape)
    ) / (den * den).reshape(shape)
    return loss, grad


# ---------------------------------------------------------------------------
# smoothness


def loss_gradient_reg(f, want_grad=False):
    """Mean squared Frobenius norm of the displacement Jacobian.

    Central differences over interior rows/voxels; the azimuth axis of 2-D
    fields is periodic.  Zero for any constant displacement.
    """
    u = f.u if isinstance(f, (DeformationField3, DeformationField2)) else np.asarray(
        f, dtype=np.float64
    )
    if u.ndim == 4 and u.shape[3] == 3:
        return _reg3(u, want_grad)
    if u.ndim == 3 and u.shape[2] == 2:
        return _reg2(u, want_grad)
    raise InputError(f"field must be (D,H,W,3) or (H,W,2), got {u.shape}")


def _reg3(u, want_grad):
    d, h, w, _ = u.shape
    if min(d, h, w) < 3:
        raise InputError("field too small for interior differences")
    core = (slice(1, -1),) * 3
    n_int = (d - 2) * (h - 2) * (w - 2)
    loss = 0.0
    grad = np.zeros_like(u) if want_grad else None
    for ax in range(3):
        hi = [slice(1, -1)] * 3
        lo = [slice(1, -1)] * 3
        hi[ax] = slice(2, None)
        lo[ax] = slice(None, -2)
        du = (u[tuple(hi)] - u[tuple(lo)]) / 2.0  # (d-2,h-2,w-2,3)
        loss += float((du * du).sum())
        if want_grad:
            g = np.zeros_like(u)
            g[core] = 2.0 * du / n_int
            dst_hi = [slice(None)] * 3
            src_hi = [slice(None)] * 3
            dst_hi[ax] = slice(1, None)
            src_hi[ax] = slice(None, -1)
            grad[tuple(dst_hi)] += g[tuple(src_hi)] / 2.0
            dst_lo = [slice(None)] * 3
            src_lo = [slice(None)] * 3
            dst_lo[ax] = slice(None, -1)
            src_lo[ax] = slice(1, None)
            grad[tuple(dst_lo)] -= g[tuple(src_lo)] / 2.0
    loss /= n_int
    if want_grad:
        return loss, grad
    return loss


def _reg2(u, want_grad):
    h, w, _ = u.shape
    if h < 3:
        raise InputError("field too small for interior differences")
    n_int = (h - 2) * w
    dr = (u[2:] - u[:-2]) / 2.0  # (h-2, w, 2)
    dc = (np.roll(u, -1, axis=1)[1:-1] - np.roll(u, 1, axis=1)[1:-1]) / 2.0
    loss = float((dr * dr).sum() + (dc * dc).sum()) / n_int
    if not want_grad:
        return loss
    grad = np.zeros_like(u)
    gr = np.zeros_like(u)
    gr[1:-1] = 2.0 * dr / n_int
    grad[1:] += gr[:-1] / 2.0
    grad[:-1] -= gr[1:] / 2.0
    gc = np.zeros_like(u)
    gc[1:-1] = 2.0 * dc / n_int
    grad += np.roll(gc, 1, axis=1) / 2.0
    grad -= np.roll(gc, -1, axis=1) / 2.0
    return loss, grad


# ---------------------------------------------------------------------------
# volume-surface consistency


def loss_consistency(
    phi, psi, mesh1, sm1, mesh2, sm2, locator=None, want_grad=False
):
    """Mean squared gap between the two routes a vertex can take.

    Every vertex v of subject 1 travels (a) through the volumetric map,
    v + u3(v), and (b) through the spherical map: project its sphere
    position, displace by u2, return to the sphere, and read off where that
    point sits on subject 2's surface via barycentric interpolation.  The
    loss is the mean squared distance between the two arrivals, in voxel^2.

    With ``want_grad`` the returns include full-grid gradients with respect
    to u3 and u2.
    """
    u3 = phi.u if isinstance(phi, DeformationField3) else np.ascontiguousarray(
        phi, dtype=np.float64
    )
    u2 = psi.u if isinstance(psi, DeformationField2) else np.ascontiguousarray(
        psi, dtype=np.float64
    )
    if u3.ndim != 4 or u3.shape[3] != 3:
        raise InputError(f"phi must be (D,H,W,3), got {u3.shape}")
    if u2.ndim != 3 or u2.shape[2] != 2:
        raise InputError(f"psi must be (H,W,2), got {u2.shape}")
    verts = mesh1.verts
    n = verts.shape[0]
    if sm1.n_verts != n:
        raise InputError("mesh1 and sm1 vertex counts differ")
    if mesh2.n_verts != sm2.n_verts:
        raise InputError("mesh2 and sm2 vertex counts differ")
    h, w = u2.shape[:2]
    if locator is None:
        locator = sphere.TriangleLocator(sm2)
    a = verts + interp.gather3(u3, verts)
    rho = sphere.project_to_grid(sm1.sverts, h, w)
    disp = interp.gather2_sph(u2, rho)
    rho_moved = rho + disp
    dirs = sphere.unproject_from_grid(rho_moved, h, w)
    if want_grad:
        b, jac_bs = locator.interpolate_with_jacobian(dirs, mesh2.verts)
    else:
        b = locator.interpolate(dirs, mesh2.verts)
    diff = a - b
    loss = float((diff * diff).sum()) / n
    if not want_grad:
        return loss
    ga = (2.0 / n) * diff
    gu3 = interp.scatter3(ga, verts, u3.shape[:3])
    jac_srho = sphere.unproject_jacobian(rho_moved, h, w)  # (N,3,2)
    db_drho = np.einsum("nxs,nst->nxt", jac_bs, jac_srho)  # (N,3,2)
    grho = np.einsum("nx,nxt->nt", -ga, db_drho)
    gu2 = interp.scatter2_sph(grho, rho, u2.shape[:2])
    return loss, gu3, gu2


# ---------------------------------------------------------------------------
# full objective


@dataclass
class RegistrationState:
    """Everything the joint objective reads, at one resolution level.

    Only the two displacement fields vary during optimization; the rest is
    data.  Optional blocks switch their terms on: descriptor grids and
    meshes enable the spherical and consistency terms, one-hot stacks
    enable the structural term.
    """

    fixed_image: np.ndarray
    moving_image: np.ndarray
    u3: np.ndarray
    u2: np.ndarray = None
    fixed_desc: np.ndarray = None  # (C, Hg, Wg)
    moving_desc: np.ndarray = None
    fixed_mesh: object = None
    fixed_sphere: object = None
    moving_mesh: object = None
    moving_sphere: object = None
    fixed_onehot: np.ndarray = None  # (K, D, H, W)
    moving_onehot: np.ndarray = None
    fixed_sph_onehot: np.ndarray = None  # (K, Hg, Wg)
    moving_sph_onehot: np.ndarray = None
    locator: object = None

    def __post_init__(self):
        self.fixed_image = np.ascontiguousarray(self.fixed_image, dtype=np.float64)
        self.moving_image = np.ascontiguousarray(self.moving_image, dtype=np.float64)
        if self.fixed_image.shape != self.moving_image.shape:
            raise InputError(
                f"image shapes differ: {self.fixed_image.shape} vs "
                f"{self.moving_image.shape}"
            )
        self.u3 = np.ascontiguousarray(self.u3, dtype=np.float64)
        if self.u3.shape != (*self.fixed_image.shape, 3):
            raise InputError(
                f"u3 shape {self.u3.shape} does not match image grid "
                f"{self.fixed_image.shape}"
            )
        if self.u2 is not None:
            self.u2 = np.ascontiguousarray(self.u2, dtype=np.float64)
        if (self.fixed_desc is None) != (self.moving_desc is None):
            raise InputError("descriptor grids must be given for both subjects")
        if self.fixed_desc is not None:
            self.fixed_desc = np.ascontiguousarray(self.fixed_desc, dtype=np.float64)
            self.moving_desc = np.ascontiguousarray(self.moving_desc, dtype=np.float64)
            if self.fixed_desc.shape != self.moving_desc.shape:
                raise InputError("descriptor grid shapes differ")
            if self.u2 is None or self.u2.shape[:2] != self.fixed_desc.shape[1:]:
                raise InputError("u2 must match the descriptor grid resolution")
        if (self.fixed_onehot is None) != (self.moving_onehot is None):
            raise InputError("one-hot stacks must be given for both subjects")
        meshes = (self.fixed_mesh, self.fixed_sphere, self.moving_mesh, self.moving_sphere)
        if any(m is not None for m in meshes) and any(m is None for m in meshes):
            raise InputError("consistency needs mesh+sphere for both subjects")
        if self.fixed_mesh is not None and self.u2 is None:
            raise InputError("meshes require a spherical field u2")
        self._mov3 = None
        self._mov2 = None
        self._rho_grid = None

    @property
    def has_sphere_grids(self):
        return self.fixed_desc is not None

    @property
    def has_meshes(self):
        return self.fixed_mesh is not None

    @property
    def has_onehot(self):
        return self.fixed_onehot is not None

    @property
    def has_sph_onehot(self):
        return self.fixed_sph_onehot is not None

    def moving_stack3(self):
        """Moving image plus one-hot channels, channel-last, built once."""
        if self._mov3 is None:
            chans = [self.moving_image[..., None]]
            if self.has_onehot:
                chans.append(np.moveaxis(self.moving_onehot, 0, -1))
            self._mov3 = np.ascontiguousarray(np.concatenate(chans, axis=-1))
        return self._mov3

    def moving_stack2(self):
        """Moving descriptors plus spherical one-hots, channel-last."""
        if self._mov2 is None:
            chans = [np.moveaxis(self.moving_desc, 0, -1)]
            if self.has_sph_onehot:
                chans.append(np.moveaxis(self.moving_sph_onehot, 0, -1))
            self._mov2 = np.ascontiguousarray(np.concatenate(chans, axis=-1))
        return self._mov2

    def rho_grid(self):
        if self._rho_grid is None:
            self._rho_grid = identity_points(self.u2.shape[:2])
        return self._rho_grid


def total_loss(state, w, want_grad=False):
    """Joint objective over a :class:`RegistrationState`.

    Returns a :class:`LossReport`; with ``want_grad=True`` returns
    ``(report, grad_u3, grad_u2)`` where the gradients are of the weighted
    total with respect to the displacement fields (``grad_u2`` is None when
    no spherical data is present).
    """
    if not isinstance(w, LossWeights):
        raise InputError("w must be a LossWeights")
    window = w.ncc_window
    spatial3 = state.fixed_image.shape
    pts3 = identity_points(spatial3)
    stack3 = state.moving_stack3()
    pos3 = pts3 + state.u3.reshape(-1, 3)
    warped3 = interp.gather3(stack3, pos3)  # (N, 1+K)
    warped_img = warped3[:, 0].reshape(spatial3)
    sim_vol, g_img = (
        loss_ncc_local(state.fixed_image, warped_img, window, want_grad=True)
        if want_grad
        else (loss_ncc_local(state.fixed_image, warped_img, window), None)
    )

    struct = 0.0
    g_oh3 = None
    if state.has_onehot:
        k = state.fixed_onehot.shape[0]
        warped_oh = np.moveaxis(
            warped3[:, 1 : 1 + k].reshape(*spatial3, k), -1, 0
        )
        if want_grad:
            s_vol, g_oh3 = loss_soft_dice(state.fixed_onehot, warped_oh, want_grad=True)
        else:
            s_vol = loss_soft_dice(state.fixed_onehot, warped_oh)
        struct += s_vol

    sim_sph = 0.0
    reg_sph = 0.0
    cons = 0.0
    g_desc = None
    g_oh2 = None
    g_reg2 = None
    cons_g3 = None
    cons_g2 = None
    warped2 = None
    pos2 = None
    row_w = None
    if state.has_sphere_grids:
        hw = state.u2.shape[:2]
        row_w = sin_weights(hw[0])
        stack2 = state.moving_stack2()
        pos2 = state.rho_grid() + state.u2.reshape(-1, 2)
        warped2 = interp.gather2_sph(stack2, pos2)
        c = state.fixed_desc.shape[0]
        # wrapped in PlanarGrid2 so NCC applies the azimuth-periodic windows
        fixed_pg = PlanarGrid2(state.fixed_desc)
        warped_pg = PlanarGrid2(
            np.ascontiguousarray(np.moveaxis(warped2[:, :c].reshape(*hw, c), -1, 0))
        )
        if want_grad:
            sim_sph, g_desc = loss_ncc_local(
                fixed_pg, warped_pg, window, weights=row_w, want_grad=True
            )
            reg_sph, g_reg2 = loss_gradient_reg(state.u2, want_grad=True)
        else:
            sim_sph = loss_ncc_local(fixed_pg, warped_pg, window, weights=row_w)
            reg_sph = loss_gradient_reg(state.u2)
        if state.has_sph_onehot:
            k2 = state.fixed_sph_onehot.shape[0]
            warped_oh2 = np.moveaxis(
                warped2[:, c : c + k2].reshape(*hw, k2), -1, 0
            )
            if want_grad:
                s_sph, g_oh2 = loss_soft_dice(
                    state.fixed_sph_onehot, warped_oh2, weights=row_w, want_grad=True
                )
            else:
                s_sph = loss_soft_dice(state.fixed_sph_onehot, warped_oh2, weights=row_w)
            struct += s_sph

    if state.has_meshes:
        need_cons_grad = want_grad and w.gamma_cons != 0.0
        res = loss_consistency(
            state.u3,
            state.u2,
            state.fixed_mesh,
            state.fixed_sphere,
            state.moving_mesh,
            state.moving_sphere,
            locator=state.locator,
            want_grad=need_cons_grad,
        )
        if need_cons_grad:
            cons, cons_g3, cons_g2 = res
        else:
            cons = res

    if want_grad:
        reg_vol, g_reg3 = loss_gradient_reg(state.u3, want_grad=True)
    else:
        reg_vol = loss_gradient_reg(state.u3)

    total = combine_terms(w, sim_vol, sim_sph, cons, reg_vol, reg_sph, struct)
    report = LossReport(
        sim_vol=float(sim_vol),
        sim_sph=float(sim_sph),
        cons=float(cons),
        reg_vol=float(reg_vol),
        reg_sph=float(reg_sph),
        struct=float(struct),
        total=float(total),
    )
    if not want_grad:
        return report

    # chain rule: d total / d warped channels -> d total / d u3 via the
    # position derivative of the gather that produced the warped channels
    n3 = pos3.shape[0]
    nch3 = stack3.shape[-1]
    gw3 = np.zeros((n3, nch3))
    gw3[:, 0] = g_img.reshape(-1)
    if g_oh3 is not None:
        gw3[:, 1:] = (
            w.kappa_struct * np.moveaxis(g_oh3, 0, -1).reshape(n3, -1)
        )
    jac3 = interp.gather3_posgrad(stack3, pos3)
    gu3 = np.einsum("nc,nca->na", gw3, jac3).reshape(state.u3.shape)
    gu3 += w.lambda_reg * g_reg3
    if cons_g3 is not None:
        gu3 += w.gamma_cons * cons_g3

    gu2 = None
    if state.has_sphere_grids:
        stack2 = state.moving_stack2()
        n2 = pos2.shape[0]
        nch2 = stack2.shape[-1]
        gw2 = np.zeros((n2, nch2))
        c = state.fixed_desc.shape[0]
        gw2[:, :c] = np.moveaxis(g_desc, 0, -1).reshape(n2, c)
        if g_oh2 is not None:
            gw2[:, c:] = w.kappa_struct * np.moveaxis(g_oh2, 0, -1).reshape(n2, -1)
        jac2 = interp.gather2_sph_posgrad(stack2, pos2)
        gu2 = np.einsum("nc,nca->na", gw2, jac2).reshape(state.u2.shape)
        gu2 += w.lambda_reg * g_reg2
        if cons_g2 is not None:
            gu2 += w.gamma_cons * cons_g2

    return report, gu3, gu2
