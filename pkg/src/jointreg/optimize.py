"""Joint minimization of the objective over two stationary velocity fields.

``register_pair`` optimizes a 3-D velocity (volume alignment) and a 2-D
velocity on the spherical grid (surface alignment) together, coarse to
fine.  There is no learned predictor anywhere: each pair is solved directly
by first-order updates on the velocity grids, with gradients obtained by
reverse-mode differentiation through field integration, warping, grid
sampling and the surface-volume coupling term.  Every manifest records
this.

Level schedule: volumes are box-downsampled 2x per level, the spherical
grid is halved in both axes, descriptors are re-rasterized per level, and
velocities are upsampled (values doubled) when advancing to a finer level.
Each level keeps the best iterate seen and restores it at the end, and the
finest level always keeps the identity as a candidate, so the returned
fields can never score worse than no registration at all.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InputError
from .fields import (
    DeformationField2,
    DeformationField3,
    downsample_labels,
    downsample_volume,
    integrate_velocity,
    integrate_velocity_vjp,
    upsample_field,
)
from .losses import LossWeights, RegistrationState, total_loss
from .metrics import evaluate
from .sphere import CorticalMesh, TriangleLocator, sin_weights, unproject_from_grid
from .synth import SubjectBundle
from .version import __version__
from .volume import labelmap_to_onehot, sample_nearest_label

_REPORT_TERMS = ("sim_vol", "sim_sph", "cons", "reg_vol", "reg_sph", "struct", "total")


@dataclass
class RegistrationConfig:
    """Schedule and weights for one registration run.

    ``step_adapt`` is (first-moment decay, second-moment decay, guard) for
    the adaptive step scaling.  ``sphere_grid`` of None sizes the grid from
    the mesh density (or 64x128 when no surface data is given).
    """

    weights: LossWeights = field(default_factory=LossWeights)
    levels: int = 3
    iters_per_level: tuple = (150, 150, 100)
    step_size: float = 1e-2
    step_adapt: tuple = (0.9, 0.999, 1e-8)
    svf_steps: int = 7
    sphere_grid: tuple = None
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.weights, LossWeights):
            raise InputError("weights must be a LossWeights")
        self.levels = int(self.levels)
        if self.levels < 1:
            raise InputError(f"levels must be >= 1, got {self.levels}")
        self.iters_per_level = tuple(int(n) for n in self.iters_per_level)
        if len(self.iters_per_level) != self.levels:
            raise InputError(
                f"iters_per_level has {len(self.iters_per_level)} entries "
                f"for {self.levels} levels"
            )
        if any(n < 1 for n in self.iters_per_level):
            raise InputError("iters_per_level entries must be positive")
        self.step_size = float(self.step_size)
        if not (self.step_size > 0):
            raise InputError(f"step_size must be positive, got {self.step_size}")
        sa = tuple(float(x) for x in self.step_adapt)
        if len(sa) != 3:
            raise InputError("step_adapt must be (decay1, decay2, guard)")
        if not (0 <= sa[0] < 1 and 0 <= sa[1] < 1 and sa[2] > 0):
            raise InputError(f"step_adapt out of range: {sa}")
        self.step_adapt = sa
        self.svf_steps = int(self.svf_steps)
        if not (0 <= self.svf_steps <= 16):
            raise InputError(f"svf_steps must be in [0, 16], got {self.svf_steps}")
        if self.sphere_grid is not None:
            h, w = (int(s) for s in self.sphere_grid)
            if h < 2 or w < 4 or w % 2:
                raise InputError(
                    f"sphere_grid needs h >= 2 and even w >= 4, got {(h, w)}"
                )
            self.sphere_grid = (h, w)
        self.seed = int(self.seed)


@dataclass
class RegistrationResult:
    """Outputs of one run: fields, per-iteration trace, metrics, manifest.

    ``loss_trace`` rows carry (level, iteration); level -1 marks the two
    bookend evaluations, iteration -1 the identity baseline and iteration 0
    the returned fields.
    """

    phi: DeformationField3
    psi: DeformationField2
    loss_trace: list
    metrics: object = None
    manifest: dict = None


class _Adam:
    """First/second-moment adaptive scaling with bias correction."""

    def __init__(self, shape, adapt):
        self.b1, self.b2, self.guard = adapt
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def step(self, g, t, lr):
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**t)
        vhat = self.v / (1 - self.b2**t)
        return lr * mhat / (np.sqrt(vhat) + self.guard)


def auto_sphere_grid(n_verts):
    """Grid rows for a mesh: 4*sqrt(N) rounded up to a multiple of 16,
    clamped to [32, 256]; columns are twice that."""
    h = int(math.ceil(4.0 * math.sqrt(n_verts) / 16.0) * 16)
    h = min(max(h, 32), 256)
    return h, 2 * h


def _level_grids(h, w, levels):
    out = [(h, w)]
    for _ in range(1, levels):
        ph, pw = out[-1]
        if ph // 2 >= 4 and pw // 2 >= 8 and (pw // 2) % 2 == 0:
            out.append((ph // 2, pw // 2))
        else:
            out.append((ph, pw))
    return out


def _grid_dirs(h, w):
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rc = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    return unproject_from_grid(rc, h, w)


def _rasterize(locator, dirs, values, h, w):
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    out = locator.interpolate(dirs, vals)
    return np.ascontiguousarray(out.T.reshape(vals.shape[1], h, w))


def _rasterize_parcellation(locator, tris, dirs, vert_labels, labs, h, w):
    """Crisp one-hot (K,h,w) of the surface parcellation on the grid.

    Each pixel direction takes the label of the nearest vertex (largest
    barycentric weight) of its containing triangle.  Pixels labeled 0 get
    an all-zero row.  Crisp maps keep the structural term exactly zero for
    a subject against itself.
    """
    idx, bary = locator.locate(dirs)
    corners = tris[idx]
    pick = corners[np.arange(corners.shape[0]), np.argmax(bary, axis=1)]
    plab = vert_labels[pick]
    out = np.zeros((len(labs), h, w))
    for k, lab in enumerate(labs):
        out[k] = (plab == lab).reshape(h, w)
    return out


def _standardize_grid(g):
    """Per-channel z-score under the area weighting.

    Local correlation is invariant to affine intensity maps, so this does
    not change the ideal objective; it keeps window variances well above
    the guard eps regardless of the descriptors' native scale.  Constant
    channels standardize to zero.
    """
    w = sin_weights(g.shape[1])
    w = w / w.sum()
    wfull = np.broadcast_to(w[:, None], g.shape[1:]) / g.shape[2]
    out = np.empty_like(g)
    for c in range(g.shape[0]):
        mu = float((wfull * g[c]).sum())
        sd = math.sqrt(max(float((wfull * (g[c] - mu) ** 2).sum()), 0.0))
        out[c] = (g[c] - mu) / sd if sd > 1e-12 else 0.0
    return out


def _digest(arr):
    a = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(a.dtype).encode())
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def _check_finite(report, gu3, gu2, level, iteration):
    for name in _REPORT_TERMS:
        if not np.isfinite(getattr(report, name)):
            raise DivergenceError(name, iteration, level)
    if gu3 is not None and not np.all(np.isfinite(gu3)):
        raise DivergenceError("gradient", iteration, level)
    if gu2 is not None and not np.all(np.isfinite(gu2)):
        raise DivergenceError("gradient", iteration, level)


def _scaled_mesh(mesh, scale):
    if scale == 1:
        return mesh
    off = (scale - 1) / 2.0
    return CorticalMesh((mesh.verts - off) / scale, mesh.tris, mesh.descriptors)


def _build_states(moving, fixed, cfg, has_mesh, has_labels, grid0):
    """One RegistrationState per pyramid level, index 0 = finest."""
    f_imgs = [fixed.image.data]
    m_imgs = [moving.image.data]
    scales = [1]
    f_labs = [fixed.labels.data] if has_labels else None
    m_labs = [moving.labels.data] if has_labels else None
    for _ in range(1, cfg.levels):
        if min(f_imgs[-1].shape) >= 8:
            f_imgs.append(downsample_volume(f_imgs[-1]))
            m_imgs.append(downsample_volume(m_imgs[-1]))
            scales.append(scales[-1] * 2)
            if has_labels:
                f_labs.append(downsample_labels(f_labs[-1]))
                m_labs.append(downsample_labels(m_labs[-1]))
        else:
            f_imgs.append(f_imgs[-1])
            m_imgs.append(m_imgs[-1])
            scales.append(scales[-1])
            if has_labels:
                f_labs.append(f_labs[-1])
                m_labs.append(m_labs[-1])

    labs = None
    f_ohs = m_ohs = None
    if has_labels:
        labs = sorted(set(fixed.labels.label_set) | set(moving.labels.label_set))
        f_ohs = [labelmap_to_onehot(a, labs) for a in f_labs]
        m_ohs = [labelmap_to_onehot(a, labs) for a in m_labs]

    grids = _level_grids(*grid0, cfg.levels) if has_mesh else None
    loc_m = None
    f_descs = m_descs = f_sohs = m_sohs = None
    if has_mesh:
        loc_f = TriangleLocator(fixed.sphere)
        loc_m = TriangleLocator(moving.sphere)
        vlab_f = vlab_m = None
        if has_labels:
            vlab_f = sample_nearest_label(fixed.labels.data, fixed.mesh.verts)
            vlab_m = sample_nearest_label(moving.labels.data, moving.mesh.verts)
        f_descs, m_descs, f_sohs, m_sohs = [], [], [], []
        dirs_by_hw = {}
        for h, w in grids:
            if (h, w) not in dirs_by_hw:
                dirs_by_hw[(h, w)] = _grid_dirs(h, w)
            dirs = dirs_by_hw[(h, w)]
            f_descs.append(
                _standardize_grid(_rasterize(loc_f, dirs, fixed.mesh.descriptors, h, w))
            )
            m_descs.append(
                _standardize_grid(_rasterize(loc_m, dirs, moving.mesh.descriptors, h, w))
            )
            if has_labels:
                f_sohs.append(
                    _rasterize_parcellation(
                        loc_f, fixed.sphere.tris, dirs, vlab_f, labs, h, w
                    )
                )
                m_sohs.append(
                    _rasterize_parcellation(
                        loc_m, moving.sphere.tris, dirs, vlab_m, labs, h, w
                    )
                )

    states = []
    for li in range(cfg.levels):
        kw = dict(
            fixed_image=f_imgs[li],
            moving_image=m_imgs[li],
            u3=np.zeros((*f_imgs[li].shape, 3)),
        )
        if has_labels:
            kw.update(fixed_onehot=f_ohs[li], moving_onehot=m_ohs[li])
        if has_mesh:
            h, w = grids[li]
            kw.update(
                u2=np.zeros((h, w, 2)),
                fixed_desc=f_descs[li],
                moving_desc=m_descs[li],
                fixed_mesh=_scaled_mesh(fixed.mesh, scales[li]),
                fixed_sphere=fixed.sphere,
                moving_mesh=_scaled_mesh(moving.mesh, scales[li]),
                moving_sphere=moving.sphere,
                locator=loc_m,
            )
            if has_labels:
                kw.update(
                    fixed_sph_onehot=f_sohs[li], moving_sph_onehot=m_sohs[li]
                )
        states.append(RegistrationState(**kw))
    return states, [a.shape for a in f_imgs], grids


def register_pair(moving, fixed, cfg=None, groups=None):
    """Align ``moving`` onto ``fixed``; returns fields, trace and metrics.

    The volumetric field maps fixed-grid coordinates into the moving volume
    and the spherical field maps fixed grid angles into the moving surface
    parameterization.  Consistency and structural terms activate only when
    both bundles carry the needed meshes or label maps; gamma > 0 with
    missing surface data is an error rather than a silent deactivation.
    """
    t_start = time.perf_counter()
    if cfg is None:
        cfg = RegistrationConfig()
    if not isinstance(moving, SubjectBundle) or not isinstance(fixed, SubjectBundle):
        raise InputError("register_pair needs SubjectBundle inputs")
    if moving.image.shape != fixed.image.shape:
        raise InputError(
            f"volume dims differ: moving {moving.image.shape} vs "
            f"fixed {fixed.image.shape}; resample upstream"
        )
    w = cfg.weights
    has_mesh = moving.mesh is not None and fixed.mesh is not None
    if w.gamma_cons > 0 and not has_mesh:
        raise InputError(
            "gamma > 0 requires meshes and sphere maps on both subjects; "
            "set gamma to 0 for volume-only registration"
        )
    has_labels = moving.labels is not None and fixed.labels is not None

    if cfg.sphere_grid is not None:
        grid0 = cfg.sphere_grid
    elif has_mesh:
        grid0 = auto_sphere_grid(fixed.mesh.n_verts)
    else:
        grid0 = (64, 128)

    states, shapes, grids = _build_states(moving, fixed, cfg, has_mesh, has_labels, grid0)

    trace = []
    base = total_loss(states[0], w)
    base.level, base.iteration = -1, -1
    _check_finite(base, None, None, -1, -1)
    trace.append(base)

    nlev = cfg.levels
    v3 = np.zeros((*shapes[nlev - 1], 3))
    v2 = np.zeros((*grids[nlev - 1], 2)) if has_mesh else None
    for li in range(nlev - 1, -1, -1):
        if li != nlev - 1:
            v3 = (
                upsample_field(v3, shapes[li])
                if shapes[li] != shapes[li + 1]
                else v3.copy()
            )
            if has_mesh:
                v2 = (
                    upsample_field(v2, grids[li])
                    if grids[li] != grids[li + 1]
                    else v2.copy()
                )
        st = states[li]
        adam3 = _Adam(v3.shape, cfg.step_adapt)
        adam2 = _Adam(v2.shape, cfg.step_adapt) if has_mesh else None
        if li == 0:
            # identity stays a candidate: the run can never end worse
            # than no registration at all
            best_total = trace[0].total
            best_v3 = np.zeros_like(v3)
            best_v2 = np.zeros_like(v2) if has_mesh else None
        else:
            best_total = np.inf
            best_v3 = v3.copy()
            best_v2 = v2.copy() if has_mesh else None
        hist = []
        for it in range(cfg.iters_per_level[li]):
            u3, tape3 = integrate_velocity(v3, cfg.svf_steps, want_tape=True)
            st.u3 = u3
            tape2 = None
            if has_mesh:
                u2, tape2 = integrate_velocity(v2, cfg.svf_steps, want_tape=True)
                st.u2 = u2
            report, gu3, gu2 = total_loss(st, w, want_grad=True)
            report.level, report.iteration = li, it
            _check_finite(report, gu3, gu2, li, it)
            trace.append(report)
            if report.total < best_total:
                best_total = report.total
                best_v3 = v3.copy()
                best_v2 = v2.copy() if has_mesh else None
            hist.append(best_total)
            if len(hist) >= 11 and hist[-11] - hist[-1] < 1e-6 * abs(hist[-11]):
                break
            gv3 = integrate_velocity_vjp(tape3, gu3, cfg.svf_steps)
            v3 = v3 - adam3.step(gv3, it + 1, cfg.step_size)
            if has_mesh:
                gv2 = integrate_velocity_vjp(tape2, gu2, cfg.svf_steps)
                v2 = v2 - adam2.step(gv2, it + 1, cfg.step_size)
        v3 = best_v3
        v2 = best_v2

    u3 = integrate_velocity(v3, cfg.svf_steps)
    states[0].u3 = u3
    if has_mesh:
        u2 = integrate_velocity(v2, cfg.svf_steps)
        states[0].u2 = u2
    else:
        u2 = np.zeros((*grid0, 2))
    final = total_loss(states[0], w)
    final.level, final.iteration = -1, 0
    trace.append(final)

    phi = DeformationField3(u3)
    psi = DeformationField2(u2)
    metrics = None
    if has_labels:
        metrics = evaluate(phi, moving.labels, fixed.labels, groups=groups)

    manifest = {
        "method": "direct-joint-svf",
        "method_note": (
            "per-pair first-order optimization of two stationary velocity "
            "fields under the joint surface+volume objective; no learned "
            "predictor"
        ),
        "tool": f"jointreg {__version__}",
        "config.levels": cfg.levels,
        "config.iters_per_level": ",".join(str(n) for n in cfg.iters_per_level),
        "config.step_size": cfg.step_size,
        "config.step_adapt": ",".join(repr(x) for x in cfg.step_adapt),
        "config.svf_steps": cfg.svf_steps,
        "config.sphere_grid": f"{grid0[0]},{grid0[1]}",
        "config.seed": cfg.seed,
        "config.lambda": w.lambda_reg,
        "config.gamma": w.gamma_cons,
        "config.kappa": w.kappa_struct,
        "config.ncc_window": w.ncc_window,
        "digest.fixed_image": _digest(fixed.image.data),
        "digest.moving_image": _digest(moving.image.data),
        "n_evaluations": len(trace),
        "wall_time_s": round(time.perf_counter() - t_start, 3),
    }
    if has_labels:
        manifest["digest.fixed_labels"] = _digest(fixed.labels.data)
        manifest["digest.moving_labels"] = _digest(moving.labels.data)
    if has_mesh:
        manifest["digest.fixed_mesh"] = _digest(fixed.mesh.verts)
        manifest["digest.moving_mesh"] = _digest(moving.mesh.verts)
        manifest["digest.fixed_sphere"] = _digest(fixed.sphere.sverts)
        manifest["digest.moving_sphere"] = _digest(moving.sphere.sverts)

    return RegistrationResult(
        phi=phi, psi=psi, loss_trace=trace, metrics=metrics, manifest=manifest
    )


# ---------------------------------------------------------------------------
# verification harness


@dataclass
class GradientCheckReport:
    objective: str
    n_components: int
    fd_step: float
    max_rel_err: float
    mean_rel_err: float
    max_abs_analytic: float
    max_abs_fd: float
    worst: tuple = None  # (field, flat index, analytic, fd)


def gradient_check(
    cfg,
    bundle_small,
    n_components=200,
    objective="full",
    field_scale=1.0,
    fd_step=None,
    seed=0,
):
    """Compare the assembled velocity gradient against central differences.

    ``objective`` "full" uses the configured weights on the bundle as both
    moving and fixed subject; "reg" isolates the smoothness term by zeroing
    images and descriptors (the similarity gradients vanish identically)
    and dropping the coupling and structural inputs.  ``field_scale`` sets
    the magnitude of the random velocities; 0 probes the identity.
    """
    from .synth import smooth_velocity

    if not isinstance(cfg, RegistrationConfig):
        raise InputError("cfg must be a RegistrationConfig")
    if not isinstance(bundle_small, SubjectBundle):
        raise InputError("gradient_check needs a SubjectBundle")
    if objective not in ("full", "reg"):
        raise InputError(f"objective must be 'full' or 'reg', got {objective!r}")
    shape = bundle_small.image.shape
    if any(s > 8 for s in shape):
        raise InputError(f"gradient_check volumes must be <= 8^3, got {shape}")
    grid = cfg.sphere_grid if cfg.sphere_grid is not None else (16, 32)
    if grid[0] > 16 or grid[1] > 32:
        raise InputError(f"gradient_check grids must be <= 16x32, got {grid}")
    if fd_step is None:
        fd_step = 3e-5

    w = cfg.weights
    has_mesh = bundle_small.mesh is not None
    has_labels = bundle_small.labels is not None
    cfg1 = replace(cfg, levels=1, iters_per_level=(1,), sphere_grid=grid)
    if objective == "reg":
        w = LossWeights(
            lambda_reg=w.lambda_reg, gamma_cons=0.0, kappa_struct=0.0,
            ncc_window=w.ncc_window,
        )
    states, _, _ = _build_states(
        bundle_small, bundle_small, cfg1, has_mesh, has_labels and objective == "full",
        grid,
    )
    st = states[0]
    if objective == "reg":
        st.fixed_image = np.zeros_like(st.fixed_image)
        st.moving_image = np.zeros_like(st.moving_image)
        st.fixed_mesh = st.fixed_sphere = None
        st.moving_mesh = st.moving_sphere = None
        st.locator = None
        if st.fixed_desc is not None:
            st.fixed_desc = np.zeros_like(st.fixed_desc)
            st.moving_desc = np.zeros_like(st.moving_desc)
        st._mov3 = st._mov2 = None

    rng = np.random.default_rng(seed)
    v3 = smooth_velocity(shape, rng, field_scale)
    use_u2 = st.fixed_desc is not None
    v2 = smooth_velocity(grid, rng, field_scale) if use_u2 else None
    steps = cfg.svf_steps

    def objective_value(v3x, v2x):
        st.u3 = integrate_velocity(v3x, steps)
        if use_u2:
            st.u2 = integrate_velocity(v2x, steps)
        rep = total_loss(st, w)
        if objective == "reg":
            # the zeroed similarity terms are exactly constant; differencing
            # only the live terms keeps the FD quotient at full precision
            return w.lambda_reg * (rep.reg_vol + rep.reg_sph)
        return rep.total

    st.u3, tape3 = integrate_velocity(v3, steps, want_tape=True)
    tape2 = None
    if use_u2:
        st.u2, tape2 = integrate_velocity(v2, steps, want_tape=True)
    _, gu3, gu2 = total_loss(st, w, want_grad=True)
    gv3 = integrate_velocity_vjp(tape3, gu3, steps)
    parts = [gv3.ravel()]
    if use_u2:
        parts.append(integrate_velocity_vjp(tape2, gu2, steps).ravel())
    analytic = np.concatenate(parts)

    n3 = v3.size
    total = n3 + (v2.size if use_u2 else 0)
    n_check = min(int(n_components), total)
    picks = np.sort(rng.choice(total, size=n_check, replace=False))
    floor = max(0.01 * np.abs(analytic).max(), 1e-12)

    max_rel = 0.0
    sum_rel = 0.0
    max_fd = 0.0
    worst = None
    for idx in picks:
        p3 = v3.copy()
        p2 = v2.copy() if use_u2 else None
        if idx < n3:
            tgt, off = p3, int(idx)
        else:
            tgt, off = p2, int(idx - n3)
        orig = tgt.flat[off]
        tgt.flat[off] = orig + fd_step
        hi = objective_value(p3, p2)
        tgt.flat[off] = orig - fd_step
        lo = objective_value(p3, p2)
        fd = (hi - lo) / (2 * fd_step)
        an = analytic[idx]
        rel = abs(an - fd) / max(abs(an), abs(fd), floor)
        sum_rel += rel
        max_fd = max(max_fd, abs(fd))
        if rel > max_rel:
            max_rel = rel
            name = "u3" if idx < n3 else "u2"
            worst = (name, off, float(an), float(fd))
    return GradientCheckReport(
        objective=objective,
        n_components=n_check,
        fd_step=fd_step,
        max_rel_err=float(max_rel),
        mean_rel_err=float(sum_rel / max(n_check, 1)),
        max_abs_analytic=float(np.abs(analytic).max()),
        max_abs_fd=float(max_fd),
        worst=worst,
    )


# ---------------------------------------------------------------------------
# weight sweeps


@dataclass
class SweepRow:
    """Aggregates for one structural weight: Dice, folds, log-Jacobian."""

    kappa: float
    reports: tuple
    mean_dice: float
    mean_dice_cortical: float
    mean_pct_folds: float
    mean_sd_log_detj: float


def sweep(cfg_base, kappa_values, pairs, groups=None):
    """Re-register the same pairs for each structural weight.

    ``pairs`` is a sequence of (moving, fixed) labeled bundles.  Returns one
    :class:`SweepRow` per kappa, in the given order; each row also keeps the
    per-pair metric reports.
    """
    if not isinstance(cfg_base, RegistrationConfig):
        raise InputError("cfg_base must be a RegistrationConfig")
    kappas = [float(k) for k in kappa_values]
    if not kappas:
        raise InputError("kappa_values is empty")
    pairs = list(pairs)
    if not pairs:
        raise InputError("pairs is empty")
    for m, f in pairs:
        if m.labels is None or f.labels is None:
            raise InputError("sweep needs label maps on every bundle")
    rows = []
    for k in kappas:
        wk = replace(cfg_base.weights, kappa_struct=k)
        cfg_k = replace(cfg_base, weights=wk)
        reports = []
        for m, f in pairs:
            reports.append(register_pair(m, f, cfg_k, groups=groups).metrics)
        rows.append(
            SweepRow(
                kappa=k,
                reports=tuple(reports),
                mean_dice=float(np.mean([r.mean_dice() for r in reports])),
                mean_dice_cortical=float(
                    np.mean([r.dice_cortical_mean for r in reports])
                ),
                mean_pct_folds=float(np.mean([r.pct_folds for r in reports])),
                mean_sd_log_detj=float(
                    np.mean([r.sd_log_detj for r in reports])
                ),
            )
        )
    return rows
