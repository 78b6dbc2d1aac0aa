import numpy as np
import pytest

from jointreg.errors import InputError
from jointreg.fields import (
    DeformationField2,
    DeformationField3,
    compose_fields,
    downsample_labels,
    downsample_volume,
    identity_points,
    integrate_velocity,
    integrate_velocity_vjp,
    jacobian_determinant,
    jacobian_stats,
    upsample_field,
    warp_labels,
    warp_vertices,
    warp_volume,
)
from jointreg.synth import smooth_velocity
from jointreg.volume import sample_trilinear


def euler_flow(v, n_steps):
    """Reference exponential: many explicit Euler substeps of dx/dt = v(x)."""
    spatial = v.shape[:-1]
    pts = identity_points(spatial)
    cur = pts.copy()
    dt = 1.0 / n_steps
    for _ in range(n_steps):
        vel = np.stack(
            [sample_trilinear(v[..., c], cur) for c in range(3)], axis=1
        )
        cur = cur + dt * vel
    return (cur - pts).reshape(v.shape)


def test_identity_points_layout():
    pts = identity_points((2, 3, 4))
    assert pts.shape == (24, 3)
    assert pts[0].tolist() == [0, 0, 0]
    assert pts[1].tolist() == [0, 0, 1]  # last axis fastest (C order)
    assert pts[-1].tolist() == [1, 2, 3]


def test_integrate_zero_steps_returns_velocity():
    v = smooth_velocity((6, 6, 6), seed=0, magnitude=1.5)
    assert np.array_equal(integrate_velocity(v, steps=0), v)


def test_integrate_matches_euler_reference():
    for seed in range(3):
        v = smooth_velocity((12, 12, 12), seed=seed, magnitude=1.0)
        u = integrate_velocity(v, steps=7)
        u_ref = euler_flow(v, 256)
        err = np.max(np.abs(u - u_ref))
        assert err < 0.02, f"seed {seed}: exp(v) deviates from Euler flow by {err}"


def test_integrate_inverse_composes_to_identity():
    v = smooth_velocity((14, 14, 14), seed=3, magnitude=2.0)
    fwd = integrate_velocity(v)
    bwd = integrate_velocity(-v)
    resid = compose_fields(bwd, fwd)
    assert np.max(np.linalg.norm(resid, axis=-1)) < 0.1


def test_smooth_field_has_no_folds():
    for seed in range(5):
        v = smooth_velocity((16, 16, 16), seed=seed, magnitude=3.0)
        u = integrate_velocity(v)
        stats = jacobian_stats(u)
        assert stats.pct_folds == 0.0, f"seed {seed}: folds {stats.pct_folds}"
        assert stats.n_interior == 14**3


def test_reflection_field_is_all_folds():
    shape = (8, 8, 8)
    pts = identity_points(shape).reshape(*shape, 3)
    u = np.zeros((*shape, 3))
    u[..., 0] = (shape[0] - 1 - pts[..., 0]) - pts[..., 0]  # x -> D-1-x
    stats = jacobian_stats(u)
    assert stats.pct_folds == 100.0
    assert stats.det_max < 0


def test_jacobian_determinant_linear_3d_oracle():
    rng = np.random.default_rng(7)
    shape = (7, 8, 9)
    pts = identity_points(shape)
    for _ in range(5):
        a = rng.uniform(-0.1, 0.1, size=(3, 3))
        u = (pts @ a.T).reshape(*shape, 3)
        det = jacobian_determinant(u)
        want = np.linalg.det(np.eye(3) + a)
        assert np.allclose(det, want, atol=1e-12)


def test_jacobian_determinant_linear_2d_oracle():
    shape = (9, 12)
    rows = np.arange(shape[0], dtype=np.float64)
    u = np.zeros((*shape, 2))
    u[..., 0] = 0.07 * rows[:, None]  # row stretch, constant along columns
    u[..., 1] = -0.03 * rows[:, None]
    det = jacobian_determinant(u)
    assert det.shape == (shape[0] - 2, shape[1])
    assert np.allclose(det, 1.07, atol=1e-12)


def test_integration_vjp_matches_directional_fd():
    rng = np.random.default_rng(11)
    v = smooth_velocity((8, 8, 8), seed=5, magnitude=1.0)
    g_out = rng.normal(size=v.shape)
    u, tape = integrate_velocity(v, steps=6, want_tape=True)
    g_v = integrate_velocity_vjp(tape, g_out, steps=6)
    direction = rng.normal(size=v.shape)
    eps = 1e-6
    up = integrate_velocity(v + eps * direction, steps=6)
    um = integrate_velocity(v - eps * direction, steps=6)
    fd = float(np.sum(g_out * (up - um)) / (2 * eps))
    an = float(np.sum(g_v * direction))
    assert abs(an - fd) <= 1e-6 * max(1.0, abs(fd)), f"vjp {an} vs fd {fd}"


def test_warp_volume_identity_and_shift():
    rng = np.random.default_rng(13)
    data = rng.normal(size=(6, 7, 8))
    zero = np.zeros((*data.shape, 3))
    assert np.array_equal(warp_volume(data, zero), data)
    shift = zero.copy()
    shift[..., 0] = 1.0  # out(x) = data(x + e0)
    out = warp_volume(data, shift)
    assert np.array_equal(out[:-1], data[1:])
    assert np.array_equal(out[-1], data[-1])  # clamped at the far face


def test_warp_volume_channel_stack_and_mismatch():
    rng = np.random.default_rng(14)
    data = rng.normal(size=(2, 5, 5, 5))
    u = np.zeros((5, 5, 5, 3))
    u[..., 2] = 0.5
    out = warp_volume(data, u)
    assert out.shape == data.shape
    for c in range(2):
        assert np.allclose(out[c], warp_volume(data[c], u))
    with pytest.raises(InputError):
        warp_volume(rng.normal(size=(4, 5, 5)), u)


def test_warp_labels_nearest_shift():
    labels = np.arange(4**3, dtype=np.int32).reshape(4, 4, 4)
    u = np.zeros((4, 4, 4, 3))
    u[..., 1] = 1.0
    out = warp_labels(labels, u)
    assert np.array_equal(out[:, :-1], labels[:, 1:])
    assert out.dtype == np.int32


def test_warp_vertices_adds_sampled_displacement():
    u = np.zeros((5, 5, 5, 3))
    u[..., 0] = 2.0
    verts = np.array([[1.0, 1.0, 1.0], [3.5, 2.0, 0.25]])
    out = warp_vertices(verts, u)
    assert np.allclose(out - verts, [[2, 0, 0], [2, 0, 0]])


def test_compose_constant_fields_adds():
    shape = (5, 6, 7)
    a = np.zeros((*shape, 3))
    b = np.zeros((*shape, 3))
    a[..., 0] = 0.3
    b[..., 2] = -0.8
    out = compose_fields(a, b)
    assert np.allclose(out[..., 0], 0.3) and np.allclose(out[..., 2], -0.8)


def test_downsample_volume_box_mean():
    rng = np.random.default_rng(17)
    a = rng.normal(size=(6, 8, 4))
    d = downsample_volume(a)
    assert d.shape == (3, 4, 2)
    assert np.allclose(d[1, 2, 0], a[2:4, 4:6, 0:2].mean())
    odd = rng.normal(size=(7, 8, 4))
    assert np.allclose(downsample_volume(odd), downsample_volume(odd[:6]))


def test_downsample_labels_keeps_even_indices():
    labels = np.arange(6**3, dtype=np.int32).reshape(6, 6, 6)
    d = downsample_labels(labels)
    assert np.array_equal(d, labels[::2, ::2, ::2])


def test_upsample_field_doubles_constant():
    u = np.full((4, 4, 4, 3), 0.7)
    fine = upsample_field(u, (8, 8, 8))
    assert fine.shape == (8, 8, 8, 3)
    assert np.allclose(fine, 1.4)


def test_upsample_field_linear_interior():
    shape = (6, 6, 6)
    pts = identity_points(shape).reshape(*shape, 3)
    alpha = np.array([0.2, -0.1, 0.05])
    u = pts * alpha  # u_c(x) = alpha_c * x_c in coarse voxels
    fine = upsample_field(u, (12, 12, 12))
    fpts = identity_points((12, 12, 12)).reshape(12, 12, 12, 3)
    want = (fpts - 0.5) * alpha  # doubled magnitude at coarse coord (f-.5)/2
    core = (slice(1, -1),) * 3
    assert np.allclose(fine[core], want[core], atol=1e-12)


def test_upsample_field_2d_constant():
    u = np.full((4, 8, 2), -0.25)
    fine = upsample_field(u, (8, 16))
    assert fine.shape == (8, 16, 2)
    assert np.allclose(fine, -0.5)


def test_validation_errors():
    with pytest.raises(InputError):
        DeformationField3(np.zeros((4, 4, 4, 2)))
    with pytest.raises(InputError):
        DeformationField2(np.zeros((4, 4, 3)))
    with pytest.raises(InputError):
        integrate_velocity(np.zeros((4, 4, 4, 3)), steps=17)
    bad = np.zeros((4, 4, 4, 3))
    bad[0, 0, 0, 0] = np.inf
    with pytest.raises(InputError):
        integrate_velocity(bad)
    with pytest.raises(InputError):
        compose_fields(np.zeros((4, 4, 4, 3)), np.zeros((5, 4, 4, 3)))
    with pytest.raises(InputError):
        jacobian_stats(np.zeros((2, 2, 2, 3)))  # no interior voxels
