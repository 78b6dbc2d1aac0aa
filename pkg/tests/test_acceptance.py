"""End-to-end acceptance checks.

Each test covers one numbered criterion, prints a single PASS/FAIL line with
the measured quantities, and enforces the stated tolerances and runtime
budgets.  The heavy registration criteria use fixed seeds throughout, so the
whole file is deterministic for a given thread count.
"""

import time

import numpy as np
import pytest

from jointreg import io
from jointreg.errors import JointRegError
from jointreg.fields import (
    DeformationField3,
    compose_fields,
    identity_points,
    integrate_velocity,
    jacobian_determinant,
    jacobian_stats,
)
from jointreg.losses import (
    LossWeights,
    loss_consistency,
    loss_gradient_reg,
    loss_ncc_local,
    loss_soft_dice,
)
from jointreg.metrics import dice_hard, evaluate
from jointreg.optimize import (
    RegistrationConfig,
    gradient_check,
    register_pair,
    sweep,
)
from jointreg.sphere import integrate_on_grid, sin_weights
from jointreg.synth import (
    deform_bundle,
    make_gradcheck_bundle,
    make_phantom,
    smooth_velocity,
)
from jointreg.volume import sample_trilinear


def _report(num, name, ok, detail):
    line = f"acceptance {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    assert ok, line


def _directional_rel_err(f, x, grad, rng, eps, n_dirs=4):
    """Max relative error of grad against central differences along random
    directions, with a floor tied to the gradient scale."""
    floor = max(1e-3 * float(np.abs(grad).max()), 1e-12)
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.normal(size=x.shape)
        fd = (f(x + eps * d) - f(x - eps * d)) / (2 * eps)
        an = float((grad * d).sum())
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), floor))
    return worst


# ------------------------------------------------------------------ 1


def test_criterion_01_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    tol = 1e-4
    errs = {}

    # image similarity, volumetric kind (8^3)
    f = rng.normal(size=(8, 8, 8))
    m = rng.normal(size=(8, 8, 8))
    _, g = loss_ncc_local(f, m, window=5, want_grad=True)
    errs["ncc3"] = _directional_rel_err(
        lambda x: loss_ncc_local(f, x, window=5), m, g, rng, 1e-6
    )

    # image similarity, spherical kind (16x32, area-weighted rows)
    w = sin_weights(16)
    fs = rng.normal(size=(16, 32))
    ms = rng.normal(size=(16, 32))
    _, g = loss_ncc_local(fs, ms, window=5, weights=w, want_grad=True)
    errs["ncc2"] = _directional_rel_err(
        lambda x: loss_ncc_local(fs, x, window=5, weights=w), ms, g, rng, 1e-6
    )

    # structural overlap (soft label stacks on 8^3)
    p = rng.uniform(0, 1, size=(3, 8, 8, 8))
    q = rng.uniform(0.05, 0.95, size=(3, 8, 8, 8))
    _, g = loss_soft_dice(p, q, want_grad=True)
    errs["dice"] = _directional_rel_err(
        lambda x: loss_soft_dice(p, x), q, g, rng, 1e-6
    )

    # smoothness, both field kinds
    v3 = rng.normal(size=(8, 8, 8, 3))
    _, g = loss_gradient_reg(v3, want_grad=True)
    errs["reg3"] = _directional_rel_err(
        lambda x: loss_gradient_reg(x), v3, g, rng, 1e-6
    )
    v2 = rng.normal(size=(16, 32, 2))
    _, g = loss_gradient_reg(v2, want_grad=True)
    errs["reg2"] = _directional_rel_err(
        lambda x: loss_gradient_reg(x), v2, g, rng, 1e-6
    )

    # surface-volume coupling on an 8^3 bundle with a 16x32 spherical field
    b = make_gradcheck_bundle(5)
    u3 = rng.normal(size=(8, 8, 8, 3)) * 0.1
    u2 = rng.normal(size=(16, 32, 2)) * 0.1
    _, g3, g2 = loss_consistency(
        u3, u2, b.mesh, b.sphere, b.mesh, b.sphere, want_grad=True
    )
    errs["cons_u3"] = _directional_rel_err(
        lambda x: loss_consistency(x, u2, b.mesh, b.sphere, b.mesh, b.sphere),
        u3, g3, rng, 1e-6,
    )
    errs["cons_u2"] = _directional_rel_err(
        lambda x: loss_consistency(u3, x, b.mesh, b.sphere, b.mesh, b.sphere),
        u2, g2, rng, 1e-6,
    )

    # full assembled objective through the optimizer's own checker
    res = gradient_check(
        RegistrationConfig(), make_gradcheck_bundle(0), n_components=200
    )
    errs["full"] = res.max_rel_err

    wall = time.perf_counter() - t0
    worst = max(errs.values())
    _report(
        1, "gradient fidelity",
        worst < tol and wall < 60.0,
        f"max_rel_err={worst:.3g} over {list(errs)}, {wall:.1f}s",
    )


# ------------------------------------------------------------------ 2


def _euler_flow(v, n_steps):
    pts = identity_points(v.shape[:3])
    p = pts.copy()
    for _ in range(n_steps):
        disp = np.stack(
            [sample_trilinear(v[..., c], p) for c in range(3)], axis=-1
        )
        p = p + disp / n_steps
    return p - pts


def test_criterion_02_diffeomorphism_preservation():
    t0 = time.perf_counter()
    worst_err = 0.0
    worst_folds = 0.0
    for seed in range(20):
        v = smooth_velocity((32, 32, 32), seed, 3.0)
        assert np.sqrt((v * v).sum(axis=-1)).max() == pytest.approx(3.0)
        u = integrate_velocity(v)
        worst_folds = max(worst_folds, jacobian_stats(u).pct_folds)
        ref = _euler_flow(v, 64)
        gap = np.sqrt(((u.reshape(-1, 3) - ref) ** 2).sum(axis=1)).max()
        worst_err = max(worst_err, gap)
    wall = time.perf_counter() - t0
    _report(
        2, "diffeomorphism preservation",
        worst_folds == 0.0 and worst_err < 0.05 and wall < 60.0,
        f"pct_folds={worst_folds}, max_flow_err={worst_err:.4f} voxels, {wall:.1f}s",
    )


# ------------------------------------------------------------------ 3


def test_criterion_03_inverse_consistency():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        v = smooth_velocity((32, 32, 32), seed, 3.0)
        fwd = integrate_velocity(v)
        bwd = integrate_velocity(-v)
        comp = compose_fields(fwd, bwd)
        worst = max(worst, np.sqrt((comp * comp).sum(axis=-1)).max())
    wall = time.perf_counter() - t0
    _report(
        3, "inverse consistency",
        worst < 0.1 and wall < 30.0,
        f"max_roundtrip={worst:.4f} voxels, {wall:.1f}s",
    )


# ------------------------------------------------------------------ 4


def _recovery_pair(i):
    b = make_phantom(1000 + i, size=48, mesh_subdiv=3)
    moved, gt = deform_bundle(b, 2000 + i, magnitude=3.0)
    return moved, b, gt


def test_criterion_04_synthetic_recovery():
    t0 = time.perf_counter()
    med_epes, init_dices, final_dices, folds = [], [], [], []
    for i in range(10):
        moving, fixed, gt = _recovery_pair(i)
        init_dices.append(dice_hard(moving.labels, fixed.labels).mean_dice())
        res = register_pair(moving, fixed, RegistrationConfig())
        epe = np.sqrt(((res.phi.u - gt.u) ** 2).sum(axis=-1))
        med_epes.append(float(np.median(epe)))
        rep = evaluate(res.phi, moving.labels, fixed.labels)
        final_dices.append(rep.mean_dice())
        folds.append(rep.pct_folds)
    wall = time.perf_counter() - t0
    ok = (
        max(med_epes) < 1.0
        and float(np.mean(init_dices)) <= 0.75
        and float(np.mean(final_dices)) >= 0.90
        and max(folds) < 0.5
        and wall < 1200.0
    )
    _report(
        4, "synthetic recovery", ok,
        f"median_epe<= {max(med_epes):.3f}, init_dice={np.mean(init_dices):.3f}, "
        f"final_dice={np.mean(final_dices):.3f}, pct_folds<= {max(folds):.3g}, "
        f"{wall:.0f}s",
    )


# ------------------------------------------------------------------ 5


def test_criterion_05_coupling_lowers_vertex_disagreement():
    t0 = time.perf_counter()
    cfg_g = RegistrationConfig()
    cfg_0 = RegistrationConfig(weights=LossWeights(gamma_cons=0.0))
    ratios = []
    for s in range(5):
        b = make_phantom(600 + s, size=48, mesh_subdiv=3)
        moving, _ = deform_bundle(b, 700 + s, magnitude=3.0)
        cons_g = register_pair(moving, b, cfg_g).loss_trace[-1].cons
        cons_0 = register_pair(moving, b, cfg_0).loss_trace[-1].cons
        assert cons_0 > 0.0
        ratios.append(cons_g / cons_0)
    wall = time.perf_counter() - t0
    _report(
        5, "coupling effect",
        max(ratios) <= 0.5 and wall < 900.0,
        "disagreement ratios "
        + ", ".join(f"{r:.3f}" for r in ratios)
        + f" (all <= 0.5), {wall:.0f}s",
    )


# ------------------------------------------------------------------ 6


def test_criterion_06_kappa_trend():
    t0 = time.perf_counter()
    pairs = []
    for s in range(5):
        kw = dict(size=48, n_labels=4, mesh_subdiv=3, harmonic_amp=0.15)
        pairs.append((make_phantom(900 + s, **kw), make_phantom(950 + s, **kw)))
    rows = sweep(RegistrationConfig(step_size=2.5e-3), (0.5, 1.0, 10.0), pairs)
    dice = [r.mean_dice for r in rows]
    pf = [r.mean_pct_folds for r in rows]
    wall = time.perf_counter() - t0
    ok = (
        dice[0] <= dice[1] <= dice[2]
        and pf[0] <= pf[1] <= pf[2]
        and wall < 1800.0
    )
    _report(
        6, "kappa trend", ok,
        "dice " + "/".join(f"{d:.4f}" for d in dice)
        + " folds " + "/".join(f"{p:.3g}" for p in pf)
        + f", {wall:.0f}s",
    )


# ------------------------------------------------------------------ 7


def _oracle_trilinear(vol, p):
    d, h, w = vol.shape
    x = min(max(p[0], 0.0), d - 1.0)
    y = min(max(p[1], 0.0), h - 1.0)
    z = min(max(p[2], 0.0), w - 1.0)
    x0, y0, z0 = int(np.floor(x)), int(np.floor(y)), int(np.floor(z))
    x0, y0, z0 = min(x0, d - 2), min(y0, h - 2), min(z0, w - 2)
    fx, fy, fz = x - x0, y - y0, z - z0
    acc = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wgt = (
                    (fx if dx else 1 - fx)
                    * (fy if dy else 1 - fy)
                    * (fz if dz else 1 - fz)
                )
                acc += wgt * vol[x0 + dx, y0 + dy, z0 + dz]
    return acc


def _oracle_dice(a, b):
    out = {}
    for lbl in sorted(set(np.unique(a)) | set(np.unique(b))):
        if lbl == 0:
            continue
        na = int((a == lbl).sum())
        nb = int((b == lbl).sum())
        if na == 0 and nb == 0:
            continue
        out[int(lbl)] = 2.0 * int(((a == lbl) & (b == lbl)).sum()) / (na + nb)
    return out


def _oracle_jacobian(u):
    d, h, w, _ = u.shape
    det = np.empty((d - 2, h - 2, w - 2))
    for i in range(1, d - 1):
        for j in range(1, h - 1):
            for k in range(1, w - 1):
                g = np.empty((3, 3))
                for comp in range(3):
                    g[comp, 0] = (u[i + 1, j, k, comp] - u[i - 1, j, k, comp]) / 2.0
                    g[comp, 1] = (u[i, j + 1, k, comp] - u[i, j - 1, k, comp]) / 2.0
                    g[comp, 2] = (u[i, j, k + 1, comp] - u[i, j, k - 1, comp]) / 2.0
                a = g.copy()
                a[0, 0] += 1.0
                a[1, 1] += 1.0
                a[2, 2] += 1.0
                det[i - 1, j - 1, k - 1] = (
                    a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
                    - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
                    + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
                )
    return det


def test_criterion_07_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)

    for _ in range(50):
        shape = tuple(rng.integers(2, 7, size=3))
        vol = rng.normal(size=shape)
        pts = rng.uniform(-1.5, max(shape) + 0.5, size=(6, 3))
        got = sample_trilinear(vol, pts)
        want = np.array([_oracle_trilinear(vol, p) for p in pts])
        assert np.array_equal(got, want)

    for _ in range(50):
        a = rng.integers(0, 5, size=(6, 6, 6)).astype(np.int32)
        b = rng.integers(0, 5, size=(6, 6, 6)).astype(np.int32)
        rep = dice_hard(a, b)
        assert rep.dice_per_label == _oracle_dice(a, b)

    for _ in range(50):
        shape = tuple(rng.integers(4, 7, size=3))
        u = rng.normal(size=(*shape, 3)) * 0.3
        det = jacobian_determinant(u)
        want = _oracle_jacobian(u)
        assert np.array_equal(det, want)
        st = jacobian_stats(u)
        folds = int((want <= 0.0).sum())
        keep = np.abs(want) > 1e-9
        assert st.pct_folds == 100.0 * folds / want.size
        if keep.any():
            assert st.sd_log_detj == float(np.std(np.log(np.abs(want[keep]))))

    wall = time.perf_counter() - t0
    _report(
        7, "metric oracles",
        wall < 60.0,
        f"50x3 instances bit-exact, {wall:.1f}s",
    )


# ------------------------------------------------------------------ 8


def test_criterion_08_spherical_quadrature():
    t0 = time.perf_counter()
    h, w = 256, 512
    area = integrate_on_grid(np.ones((h, w)))
    theta = (np.arange(h) + 0.5) * (np.pi / h)
    second = integrate_on_grid(
        np.broadcast_to(np.cos(theta)[:, None] ** 2, (h, w)).copy()
    )
    wall = time.perf_counter() - t0
    err1 = abs(area - 4 * np.pi) / (4 * np.pi)
    err2 = abs(second - 4 * np.pi / 3) / (4 * np.pi / 3)
    _report(
        8, "spherical quadrature",
        err1 < 0.01 and err2 < 0.01 and wall < 1.0,
        f"area rel err {err1:.2e}, cos^2 rel err {err2:.2e}, {wall:.2f}s",
    )


# ------------------------------------------------------------------ 9


def test_criterion_09_bitwise_reproducibility(tmp_path):
    t0 = time.perf_counter()
    moving, fixed, _ = _recovery_pair(0)
    blobs = []
    for run in range(2):
        d = tmp_path / f"run{run}"
        d.mkdir()
        res = register_pair(moving, fixed, RegistrationConfig())
        io.save_field3(d / "phi.fld3", res.phi)
        io.save_field2(d / "psi.fld2", res.psi)
        rep = evaluate(res.phi, moving.labels, fixed.labels)
        io.write_metric_report(d / "metrics.txt", rep)
        blobs.append(
            tuple((d / n).read_bytes() for n in ("phi.fld3", "psi.fld2", "metrics.txt"))
        )
    wall = time.perf_counter() - t0
    same = all(a == b for a, b in zip(blobs[0], blobs[1]))
    _report(
        9, "bitwise reproducibility", same,
        f"phi/psi/report byte-identical across runs, {wall:.0f}s",
    )


# ------------------------------------------------------------------ 10


def test_criterion_10_robust_io(tmp_path):
    t0 = time.perf_counter()
    b = make_phantom(123, size=24, mesh_subdiv=1)
    src = tmp_path / "src"
    io.save_bundle(src, b)
    io.save_field3(src / "phi.fld3", DeformationField3(np.zeros((24, 24, 24, 3))))
    rng = np.random.default_rng(0xC10)

    targets = [
        ("image.vol", io.load_volume),
        ("labels.lab", io.load_labelmap),
        ("phi.fld3", io.load_field3),
        ("mesh.ply", io.load_mesh),
        ("sphere.ply", lambda p: io.load_sphere(p, src / "mesh.ply")),
    ]
    originals = [(name, (src / name).read_bytes(), loader) for name, loader in targets]

    n_rejected = n_loaded = 0
    for trial in range(1000):
        name, blob, loader = originals[trial % len(originals)]
        data = bytearray(blob)
        op = trial % 5
        if op == 0:  # flip one byte
            i = int(rng.integers(len(data)))
            data[i] ^= int(rng.integers(1, 256))
        elif op == 1:  # truncate
            data = data[: int(rng.integers(len(data)))]
        elif op == 2:  # overwrite a short span
            i = int(rng.integers(len(data)))
            span = rng.integers(0, 256, size=int(rng.integers(1, 16)), dtype=np.uint8)
            data[i : i + len(span)] = span.tobytes()
        elif op == 3:  # append garbage
            data += rng.integers(0, 256, size=8, dtype=np.uint8).tobytes()
        else:  # scramble inside the header / preamble region
            i = int(rng.integers(0, min(200, len(data))))
            data[i] = int(rng.integers(256))
        if bytes(data) == blob:
            data[0] ^= 0xFF
        path = tmp_path / f"fuzz{trial % len(originals)}{name[name.rfind('.'):]}"
        path.write_bytes(bytes(data))
        try:
            out = loader(path)
        except JointRegError as exc:
            assert str(exc)
            n_rejected += 1
        else:
            # accepted payloads must still satisfy the format's invariants
            arr = getattr(out, "data", None)
            if arr is None:
                arr = getattr(out, "u", None)
            if arr is None:
                arr = out.verts
            assert np.all(np.isfinite(np.asarray(arr, dtype=np.float64)))
            n_loaded += 1

    wall = time.perf_counter() - t0
    _report(
        10, "robust io",
        n_rejected + n_loaded == 1000 and n_rejected > 500,
        f"{n_rejected} structured rejections, {n_loaded} benign loads, {wall:.0f}s",
    )
