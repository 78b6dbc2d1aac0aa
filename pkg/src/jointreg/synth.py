"""Synthetic subjects with known geometry and known ground-truth warps.

A phantom is a star-shaped blob: an icosphere whose radius is modulated by
a random band-limited function on the sphere (a degree <= 6 polynomial in
the direction vector, which spans exactly the low spherical-harmonic
bands).  Because the shape is star-shaped, inside/outside is a radial test
and the interior splits into nested label shells at fixed radial
fractions.  The mesh is the outer surface, its sphere map is the
unmodulated icosphere, and the two descriptor channels are the radial
modulation ("depth") and its umbrella graph Laplacian ("curvature").

``deform_bundle`` produces a moving subject whose alignment back onto the
original is known in closed form, which is what every recovery test
measures against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InputError
from .fields import (
    DeformationField3,
    integrate_velocity,
    jacobian_stats,
    warp_labels,
    warp_vertices,
    warp_volume,
)
from .sphere import CorticalMesh, SphereMap
from .volume import LabelMap3, Volume3


@dataclass
class SubjectBundle:
    """One subject: image plus optional labels, surface mesh and sphere map."""

    image: Volume3
    labels: LabelMap3 = None
    mesh: CorticalMesh = None
    sphere: SphereMap = None

    def __post_init__(self):
        if not isinstance(self.image, Volume3):
            self.image = Volume3(np.asarray(self.image))
        if self.labels is not None:
            if not isinstance(self.labels, LabelMap3):
                self.labels = LabelMap3(np.asarray(self.labels))
            if self.labels.shape != self.image.shape:
                raise InputError(
                    f"labels {self.labels.shape} and image {self.image.shape} differ"
                )
        if (self.mesh is None) != (self.sphere is None):
            raise InputError("mesh and sphere map must be provided together")
        if self.mesh is not None:
            if self.mesh.n_verts != self.sphere.n_verts:
                raise InputError(
                    f"mesh has {self.mesh.n_verts} vertices but sphere map has "
                    f"{self.sphere.n_verts}"
                )
            if not np.array_equal(self.mesh.tris, self.sphere.tris):
                raise InputError("mesh and sphere map connectivity differ")

    @property
    def shape(self):
        return self.image.shape


# ---------------------------------------------------------------------------
# icosphere


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array(
    [
        (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
        (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
        (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
    ],
    dtype=np.float64,
)
_ICO_TRIS = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int32,
)


def icosphere(subdiv):
    """Unit icosphere after ``subdiv`` midpoint subdivisions.

    Returns (verts (N,3), tris (M,3)); N = 12, 42, 162, 642, ... and
    M = 20 * 4**subdiv.  Deterministic vertex order.
    """
    if not (0 <= int(subdiv) <= 7):
        raise InputError(f"subdiv must be in [0, 7], got {subdiv}")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    tris = [tuple(t) for t in _ICO_TRIS]
    for _ in range(int(subdiv)):
        cache = {}
        new_tris = []

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for (a, b, c) in tris:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_tris += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = new_tris
    return np.array(verts), np.array(tris, dtype=np.int32)


# ---------------------------------------------------------------------------
# band-limited functions on the sphere


def _monomial_exponents(max_degree):
    return [
        (i, j, k)
        for i in range(max_degree + 1)
        for j in range(max_degree + 1 - i)
        for k in range(max_degree + 1 - i - j)
    ]


_EXP6 = _monomial_exponents(6)


def _poly_on_sphere(coef, dirs):
    """Evaluate sum coef_m * x^i y^j z^k at unit directions (Q,3)."""
    px = [np.ones(dirs.shape[0])]
    py = [np.ones(dirs.shape[0])]
    pz = [np.ones(dirs.shape[0])]
    for _ in range(6):
        px.append(px[-1] * dirs[:, 0])
        py.append(py[-1] * dirs[:, 1])
        pz.append(pz[-1] * dirs[:, 2])
    out = np.zeros(dirs.shape[0])
    for c, (i, j, k) in zip(coef, _EXP6):
        out += c * px[i] * py[j] * pz[k]
    return out


def _vertex_laplacian(values, tris):
    """Umbrella operator: mean over neighbours minus the vertex value."""
    n = values.shape[0]
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    und = np.unique(np.sort(edges, axis=1), axis=0)
    sums = np.zeros(n)
    counts = np.zeros(n)
    np.add.at(sums, und[:, 0], values[und[:, 1]])
    np.add.at(sums, und[:, 1], values[und[:, 0]])
    np.add.at(counts, und[:, 0], 1.0)
    np.add.at(counts, und[:, 1], 1.0)
    return sums / counts - values


# ---------------------------------------------------------------------------
# phantom construction


def make_phantom(
    seed,
    size=48,
    n_labels=4,
    mesh_subdiv=3,
    harmonic_amp=0.12,
    noise=0.02,
    bias_amp=0.08,
):
    """Labelled star-shaped blob with surface mesh, sphere map, descriptors.

    The surface radius along direction d is R0 * (1 + m(d)) with R0 = 0.32 *
    size and m a random band-limited modulation bounded by ``harmonic_amp``.
    Interior voxels split into ``n_labels`` nested shells with seeded radial
    thicknesses.  Intensities are constant per contrast group of adjacent
    shells, times a smooth low-order bias field, plus Gaussian noise.
    """
    if size < 24:
        raise InputError(f"size must be >= 24, got {size}")
    if n_labels < 2:
        raise InputError(f"n_labels must be >= 2, got {n_labels}")
    if not (0 <= harmonic_amp <= 0.15):
        raise InputError(f"harmonic_amp must be in [0, 0.15], got {harmonic_amp}")
    rng = np.random.default_rng(seed)
    sverts, tris = icosphere(mesh_subdiv)

    coef = rng.normal(size=len(_EXP6))
    probe, _ = icosphere(4)
    raw = _poly_on_sphere(coef, probe)
    peak = np.abs(raw).max()
    scale = harmonic_amp / peak if peak > 0 else 0.0

    center = (size - 1) / 2.0
    r0 = 0.32 * size
    mod_verts = scale * _poly_on_sphere(coef, sverts)
    verts = center + (r0 * (1.0 + mod_verts))[:, None] * sverts

    ax = np.arange(size, dtype=np.float64) - center
    ox, oy, oz = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(ox * ox + oy * oy + oz * oz)
    dirs = np.stack([ox, oy, oz], axis=-1).reshape(-1, 3)
    dirs /= np.maximum(r.reshape(-1, 1), 1e-12)
    r_surf = r0 * (1.0 + scale * _poly_on_sphere(coef, dirs)).reshape(r.shape)
    frac = r / r_surf
    # seeded shell thicknesses: two subjects place interior interfaces at
    # different radial fractions, so interior correspondence is not implied
    # by outer-boundary alignment
    thick = rng.uniform(0.5, 1.5, size=n_labels)
    cuts_r = np.cumsum(thick)[:-1] / thick.sum()
    shell = np.searchsorted(cuts_r, frac, side="right") + 1
    labels = np.where(frac <= 1.0, shell, 0).astype(np.int32)

    # per-subject intensity assignment merges adjacent shells into contrast
    # groups at seeded cut points, so some label interfaces carry no intensity
    # edge and different subjects expose different interfaces; appearance
    # alone then underdetermines the parcellation, as across real subjects
    n_groups = max(2, (n_labels + 1) // 2)
    cuts = np.sort(rng.choice(np.arange(1, n_labels), size=n_groups - 1, replace=False))
    group_of = np.zeros(n_labels, dtype=np.int64)
    for c in cuts:
        group_of[c:] += 1
    group_vals = rng.permutation(np.linspace(0.35, 0.95, n_groups))
    values = np.concatenate([[0.08], group_vals[group_of]])
    img = values[labels]

    nrm = (np.stack([ox, oy, oz], axis=-1) / center).reshape(-1, 3)
    bias_coef = rng.normal(size=10)
    exps2 = [(i, j, k) for i in range(3) for j in range(3 - i) for k in range(3 - i - j)]
    braw = np.zeros(nrm.shape[0])
    for c, (i, j, k) in zip(bias_coef, exps2):
        braw += c * nrm[:, 0] ** i * nrm[:, 1] ** j * nrm[:, 2] ** k
    braw = braw.reshape(img.shape)
    img = img * (1.0 + bias_amp * braw / np.abs(braw).max())
    img = img + rng.normal(size=img.shape) * noise

    lap = _vertex_laplacian(mod_verts, tris)
    descriptors = np.stack([mod_verts, lap], axis=1)

    return SubjectBundle(
        image=Volume3(img),
        labels=LabelMap3(labels),
        mesh=CorticalMesh(verts, tris, descriptors),
        sphere=SphereMap(sverts, tris),
    )


# ---------------------------------------------------------------------------
# known warps


def smooth_velocity(shape, seed, magnitude, sigma=None):
    """Random smooth stationary velocity with max vector norm ``magnitude``.

    ``shape`` is the spatial grid; one velocity component per axis.  The 2-D
    variant smooths periodically along columns.  ``seed`` may be an int or a
    Generator.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (2, 3):
        raise InputError(f"shape must be 2-D or 3-D, got {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if sigma is None:
        sigma = 0.4 * min(shape)
    mode = ("reflect", "wrap") if len(shape) == 2 else "reflect"
    comps = [gaussian_filter(rng.normal(size=shape), sigma, mode=mode) for _ in shape]
    v = np.stack(comps, axis=-1)
    if magnitude == 0:
        return np.zeros_like(v)
    norms = np.sqrt((v * v).sum(axis=-1))
    peak = norms.max()
    if peak <= 0:
        return np.zeros_like(v)
    return v * (float(magnitude) / peak)


def deform_bundle(bundle, seed, magnitude=2.5, sigma=None, svf_steps=7):
    """Warp a bundle by a random smooth diffeomorphism with known inverse.

    Returns (deformed bundle, ground-truth field): the returned field is the
    displacement that carries the deformed subject's grid back onto the
    original, i.e. registering moving=deformed against fixed=original should
    recover it.  The sphere map is carried over by vertex index, so the
    ground-truth spherical warp is the identity.
    """
    if not isinstance(bundle, SubjectBundle):
        raise InputError("deform_bundle needs a SubjectBundle")
    shape = bundle.image.shape
    if sigma is None:
        # broad default: most of the volume moves, so label overlap drops
        # well below 1 even at modest magnitudes
        sigma = 0.75 * min(shape)
    v = smooth_velocity(shape, seed, magnitude, sigma)
    u_fwd = integrate_velocity(v, svf_steps)
    u_inv = integrate_velocity(-v, svf_steps)
    if magnitude != 0:
        for u in (u_fwd, u_inv):
            st = jacobian_stats(u)
            if st.pct_folds > 0:
                raise InputError(
                    f"deformation folds ({st.pct_folds:.3f}% voxels); "
                    f"lower the magnitude"
                )
    image = Volume3(warp_volume(bundle.image.data, u_fwd), bundle.image.spacing)
    labels = None
    if bundle.labels is not None:
        labels = LabelMap3(warp_labels(bundle.labels, u_fwd))
    mesh = None
    sph = None
    if bundle.mesh is not None:
        moved = warp_vertices(bundle.mesh.verts, u_inv)
        mesh = CorticalMesh(moved, bundle.mesh.tris, bundle.mesh.descriptors.copy())
        sph = SphereMap(bundle.sphere.sverts.copy(), bundle.sphere.tris)
    deformed = SubjectBundle(image=image, labels=labels, mesh=mesh, sphere=sph)
    return deformed, DeformationField3(u_inv)


def make_gradcheck_bundle(seed, size=8, mesh_subdiv=1):
    """Tiny random bundle for finite-difference verification.

    Random smooth image, a small icosphere mesh centered in the volume and
    smoothly varying descriptors; two blob labels.  Not a realistic subject,
    just a worst-case differentiability probe.
    """
    if size < 4 or size > 16:
        raise InputError(f"gradient-check bundles are tiny; size 4..16, got {size}")
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.normal(size=(size,) * 3), 1.0)
    img = (img - img.min()) / (img.max() - img.min() + 1e-12)
    # strong contrast keeps window variances well above the NCC guard eps
    img = 0.5 + 0.5 * np.tanh(3.0 * (img - 0.5))
    sverts, tris = icosphere(mesh_subdiv)
    center = (size - 1) / 2.0
    radius = 0.3 * size * (1.0 + 0.1 * np.tanh(sverts[:, 2]))
    verts = center + radius[:, None] * sverts
    desc = np.stack(
        [sverts[:, 2] + 0.05 * rng.normal(size=sverts.shape[0]), sverts[:, 0]], axis=1
    )
    ax = np.arange(size) - center
    ox, oy, oz = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(ox * ox + oy * oy + oz * oz)
    labels = np.zeros((size,) * 3, dtype=np.int32)
    labels[r <= 0.38 * size] = 2
    labels[r <= 0.22 * size] = 1
    return SubjectBundle(
        image=Volume3(img),
        labels=LabelMap3(labels),
        mesh=CorticalMesh(verts, tris, desc),
        sphere=SphereMap(sverts, tris),
    )
