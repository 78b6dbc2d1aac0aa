"""Bit-exact readers and writers for every artifact the tool produces.

Grid data (volumes, label maps, deformation fields) share one container:

* bytes 0..3   magic ``CRV1``
* bytes 4..11  little-endian u64: byte length of the header text
* header text  ASCII ``key=value`` lines, keys sorted, one trailing newline
* payload      little-endian raw numbers, one block per channel, first
  listed dim fastest within a block (x fastest for 3-D kinds)

Header keys are ``channels``, ``dims``, ``dtype`` (``f32`` or ``i32``),
``kind`` (``volume`` | ``labels`` | ``field3`` | ``field2``) and
``spacing`` (three positive floats).  Readers validate every field before
allocating and raise :class:`FormatError` naming the file, the violated
rule and, where it makes sense, the byte offset or line number.  Writers
are canonical: the same object always serializes to the same bytes.

Meshes use an ASCII PLY subset: float vertex properties ``x y z`` plus
optional per-vertex scalars ``sulc`` and ``curv``, and triangle faces.  A
companion PLY with identical connectivity and unit-norm vertices carries
the sphere map.

Reports (metrics, manifests) are key=value text with canonical float
formatting (shortest round-trip repr); the loss trace is a fixed-order
column table.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError, InputError, MeshError
from .fields import DeformationField2, DeformationField3
from .metrics import LabelGroups, MetricReport
from .sphere import CorticalMesh, SphereMap
from .synth import SubjectBundle
from .volume import LabelMap3, Volume3

_MAGIC = b"CRV1"
_MAX_DIM = 4096
_MAX_BYTES = 1 << 31
_MAX_HEADER = 1 << 16

_KINDS = {
    # kind -> (dtype code, channels, number of dims)
    "volume": ("f32", 1, 3),
    "labels": ("i32", 1, 3),
    "field3": ("f32", 3, 3),
    "field2": ("f32", 2, 2),
}
_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


def _fmt(x):
    """Canonical scalar formatting: shortest round-trip repr for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _fmt_seq(xs):
    return " ".join(_fmt(v) for v in xs)


# ---------------------------------------------------------------------------
# grid container


def _encode_header(kind, dims, spacing):
    dtype, channels, _ = _KINDS[kind]
    lines = {
        "channels": str(channels),
        "dims": " ".join(str(int(d)) for d in dims),
        "dtype": dtype,
        "kind": kind,
        "spacing": _fmt_seq(float(s) for s in spacing),
    }
    return "".join(f"{k}={lines[k]}\n" for k in sorted(lines)).encode("ascii")


def _write_container(path, kind, dims, spacing, blocks):
    header = _encode_header(kind, dims, spacing)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blocks:
            fh.write(b.tobytes(order="F"))


def _parse_header_text(path, text, base):
    fields = {}
    for ln, line in enumerate(text.split("\n")[:-1], start=1):
        if "=" not in line:
            raise FormatError(path, f"header line {ln} is not key=value: {line!r}", base)
        key, _, val = line.partition("=")
        if key in fields:
            raise FormatError(path, f"duplicate header key {key!r}", base)
        fields[key] = val
    expect = {"channels", "dims", "dtype", "kind", "spacing"}
    missing = expect - fields.keys()
    if missing:
        raise FormatError(path, f"missing header keys: {sorted(missing)}", base)
    unknown = fields.keys() - expect
    if unknown:
        raise FormatError(path, f"unknown header keys: {sorted(unknown)}", base)
    return fields


def _read_container(path, want_kind):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise FormatError(path, f"unreadable: {e.strerror or e}") from e
    if len(raw) < 12:
        raise FormatError(path, f"file too short for magic+length ({len(raw)} bytes)", 0)
    if raw[:4] != _MAGIC:
        raise FormatError(path, f"bad magic {raw[:4]!r}, expected {_MAGIC!r}", 0)
    (hlen,) = struct.unpack("<Q", raw[4:12])
    if hlen > _MAX_HEADER:
        raise FormatError(path, f"header length {hlen} exceeds limit {_MAX_HEADER}", 4)
    if 12 + hlen > len(raw):
        raise FormatError(path, f"truncated header: need {hlen} bytes past offset 12", 12)
    try:
        text = raw[12 : 12 + hlen].decode("ascii")
    except UnicodeDecodeError as e:
        raise FormatError(path, "header is not ASCII", 12 + e.start) from e
    if text and not text.endswith("\n"):
        raise FormatError(path, "header does not end with newline", 12 + hlen - 1)
    fields = _parse_header_text(path, text, 12)

    kind = fields["kind"]
    if kind not in _KINDS:
        raise FormatError(path, f"unknown kind {kind!r}", 12)
    if want_kind is not None and kind != want_kind:
        raise FormatError(path, f"kind is {kind!r}, expected {want_kind!r}", 12)
    dtype_code, channels, ndims = _KINDS[kind]
    if fields["dtype"] != dtype_code:
        raise FormatError(
            path, f"dtype {fields['dtype']!r} invalid for kind {kind!r}", 12
        )
    try:
        chan = int(fields["channels"])
    except ValueError as e:
        raise FormatError(path, f"channels is not an integer: {fields['channels']!r}", 12) from e
    if chan != channels:
        raise FormatError(path, f"channels={chan} invalid for kind {kind!r}", 12)
    try:
        dims = tuple(int(t) for t in fields["dims"].split())
    except ValueError as e:
        raise FormatError(path, f"dims are not integers: {fields['dims']!r}", 12) from e
    if len(dims) != ndims:
        raise FormatError(path, f"kind {kind!r} needs {ndims} dims, got {len(dims)}", 12)
    if any(d < 1 or d > _MAX_DIM for d in dims):
        raise FormatError(path, f"dims {dims} outside [1, {_MAX_DIM}]", 12)
    try:
        spacing = tuple(float(t) for t in fields["spacing"].split())
    except ValueError as e:
        raise FormatError(path, f"spacing is not numeric: {fields['spacing']!r}", 12) from e
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise FormatError(path, f"spacing must be 3 positive floats, got {spacing}", 12)

    itemsize = _DTYPES[dtype_code].itemsize
    n_elems = int(np.prod([*dims, channels], dtype=np.int64))
    n_bytes = n_elems * itemsize
    if n_bytes > _MAX_BYTES:
        raise FormatError(path, f"payload of {n_bytes} bytes exceeds limit {_MAX_BYTES}", 12)
    start = 12 + hlen
    have = len(raw) - start
    if have < n_bytes:
        raise FormatError(
            path, f"truncated payload: header declares {n_bytes} bytes, found {have}", start
        )
    if have > n_bytes:
        raise FormatError(
            path, f"trailing bytes: header declares {n_bytes} bytes, found {have}", start
        )
    flat = np.frombuffer(raw, dtype=_DTYPES[dtype_code], count=n_elems, offset=start)
    per = n_elems // channels
    chans = [
        flat[c * per : (c + 1) * per].reshape(dims, order="F") for c in range(channels)
    ]
    if dtype_code == "f32":
        for c, arr in enumerate(chans):
            bad = ~np.isfinite(arr)
            if bad.any():
                i = int(np.flatnonzero(bad.ravel(order="F"))[0])
                raise FormatError(
                    path,
                    f"non-finite payload entry (channel {c}, element {i})",
                    start + (c * per + i) * itemsize,
                )
    return kind, dims, spacing, chans


def save_volume(path, vol):
    if not isinstance(vol, Volume3):
        raise InputError("save_volume needs a Volume3")
    _write_container(
        path, "volume", vol.shape, vol.spacing, [vol.data.astype("<f4")]
    )


def load_volume(path):
    _, _, spacing, chans = _read_container(path, "volume")
    try:
        return Volume3(chans[0].astype(np.float64), spacing)
    except InputError as e:
        raise FormatError(path, str(e)) from e


def save_labelmap(path, labels):
    if not isinstance(labels, LabelMap3):
        raise InputError("save_labelmap needs a LabelMap3")
    _write_container(
        path, "labels", labels.shape, (1.0, 1.0, 1.0), [labels.data.astype("<i4")]
    )


def load_labelmap(path):
    _, _, _, chans = _read_container(path, "labels")
    try:
        return LabelMap3(chans[0].astype(np.int32))
    except InputError as e:
        raise FormatError(path, str(e)) from e


def save_field3(path, field):
    if not isinstance(field, DeformationField3):
        raise InputError("save_field3 needs a DeformationField3")
    blocks = [field.u[..., c].astype("<f4") for c in range(3)]
    _write_container(path, "field3", field.shape, (1.0, 1.0, 1.0), blocks)


def load_field3(path):
    _, _, _, chans = _read_container(path, "field3")
    u = np.stack([c.astype(np.float64) for c in chans], axis=-1)
    try:
        return DeformationField3(u)
    except InputError as e:
        raise FormatError(path, str(e)) from e


def save_field2(path, field):
    if not isinstance(field, DeformationField2):
        raise InputError("save_field2 needs a DeformationField2")
    blocks = [field.u[..., c].astype("<f4") for c in range(2)]
    _write_container(path, "field2", field.shape, (1.0, 1.0, 1.0), blocks)


def load_field2(path):
    _, _, _, chans = _read_container(path, "field2")
    u = np.stack([c.astype(np.float64) for c in chans], axis=-1)
    try:
        return DeformationField2(u)
    except InputError as e:
        raise FormatError(path, str(e)) from e


# ---------------------------------------------------------------------------
# PLY meshes

_PLY_SCALARS = ("sulc", "curv")


def _ply_header(n_verts, n_faces, scalars):
    lines = ["ply", "format ascii 1.0", f"element vertex {n_verts}"]
    lines += [f"property float {name}" for name in ("x", "y", "z") + tuple(scalars)]
    lines += [
        f"element face {n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    return "".join(s + "\n" for s in lines)


def _write_ply(path, verts, tris, scalars, columns):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_ply_header(len(verts), len(tris), scalars))
        cols = [verts[:, 0], verts[:, 1], verts[:, 2], *columns]
        f32 = [c.astype(np.float32) for c in cols]
        for i in range(len(verts)):
            fh.write(" ".join(repr(float(c[i])) for c in f32) + "\n")
        for t in tris:
            fh.write(f"3 {int(t[0])} {int(t[1])} {int(t[2])}\n")


def save_mesh(path, mesh):
    """Write a CorticalMesh; descriptor channels map to sulc then curv."""
    if not isinstance(mesh, CorticalMesh):
        raise InputError("save_mesh needs a CorticalMesh")
    n_scal = min(mesh.descriptors.shape[1], len(_PLY_SCALARS))
    scalars = _PLY_SCALARS[:n_scal]
    columns = [mesh.descriptors[:, i] for i in range(n_scal)]
    _write_ply(path, mesh.verts, mesh.tris, scalars, columns)


def save_sphere(path, smap):
    if not isinstance(smap, SphereMap):
        raise InputError("save_sphere needs a SphereMap")
    _write_ply(path, smap.sverts, smap.tris, (), [])


def _parse_ply(path):
    """Parse the supported ASCII PLY subset into (verts, scalars, tris)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise FormatError(path, f"unreadable: {e.strerror or e}") from e
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise FormatError(path, "not ASCII", e.start) from e
    lines = text.split("\n")
    if not lines or lines[0] != "ply":
        raise FormatError(path, "first line must be 'ply'", 1)
    if len(lines) < 2 or lines[1] != "format ascii 1.0":
        raise FormatError(path, "second line must be 'format ascii 1.0'", 2)

    n_verts = n_faces = None
    props = []
    face_prop = False
    ln = 2
    while True:
        if ln >= len(lines):
            raise FormatError(path, "header has no end_header line", ln)
        line = lines[ln]
        ln += 1
        if line == "end_header":
            break
        toks = line.split()
        if toks[:2] == ["element", "vertex"] and len(toks) == 3:
            if n_verts is not None or n_faces is not None:
                raise FormatError(path, "vertex element repeated or out of order", ln)
            try:
                n_verts = int(toks[2])
            except ValueError:
                raise FormatError(path, f"bad vertex count {toks[2]!r}", ln) from None
        elif toks[:2] == ["element", "face"] and len(toks) == 3:
            if n_verts is None or n_faces is not None:
                raise FormatError(path, "face element repeated or before vertices", ln)
            try:
                n_faces = int(toks[2])
            except ValueError:
                raise FormatError(path, f"bad face count {toks[2]!r}", ln) from None
        elif toks[:2] == ["property", "float"] and len(toks) == 3:
            if n_verts is None or n_faces is not None:
                raise FormatError(path, "vertex property outside vertex element", ln)
            props.append(toks[2])
        elif toks[:2] == ["property", "list"]:
            if n_faces is None or toks[2:] != ["uchar", "int", "vertex_indices"]:
                raise FormatError(
                    path, "face property must be 'list uchar int vertex_indices'", ln
                )
            face_prop = True
        else:
            raise FormatError(path, f"unsupported header line: {line!r}", ln)

    if n_verts is None or n_verts < 3:
        raise FormatError(path, f"need at least 3 vertices, got {n_verts}", ln)
    if n_faces is None or n_faces < 1 or not face_prop:
        raise FormatError(path, "face element with list property is required", ln)
    if n_verts > (1 << 22) or n_faces > (1 << 22):
        raise FormatError(path, f"element counts {n_verts}/{n_faces} exceed limits", ln)
    base = ("x", "y", "z")
    if tuple(props[:3]) != base or tuple(props[3:]) != _PLY_SCALARS[: len(props) - 3]:
        raise FormatError(
            path,
            f"vertex properties must be x y z [sulc [curv]], got {props}",
            ln,
        )

    body = lines[ln:]
    if len(body) < n_verts + n_faces:
        raise FormatError(
            path,
            f"body truncated: need {n_verts + n_faces} lines, found {len(body)}",
            ln + len(body),
        )
    vdata = np.empty((n_verts, len(props)), dtype=np.float64)
    for i in range(n_verts):
        toks = body[i].split()
        if len(toks) != len(props):
            raise FormatError(
                path, f"vertex line has {len(toks)} values, expected {len(props)}", ln + 1 + i
            )
        try:
            row = [float(t) for t in toks]
        except ValueError:
            raise FormatError(path, f"vertex line is not numeric: {body[i]!r}", ln + 1 + i) from None
        if not all(np.isfinite(row)):
            raise FormatError(path, "vertex line contains a non-finite value", ln + 1 + i)
        vdata[i] = row
    tris = np.empty((n_faces, 3), dtype=np.int32)
    for i in range(n_faces):
        lno = ln + 1 + n_verts + i
        toks = body[n_verts + i].split()
        if not toks:
            raise FormatError(path, "empty face line", lno)
        if toks[0] != "3" or len(toks) != 4:
            raise FormatError(path, f"face must be a triangle '3 i j k', got {body[n_verts + i]!r}", lno)
        try:
            tris[i] = [int(t) for t in toks[1:]]
        except ValueError:
            raise FormatError(path, f"face indices are not integers: {body[n_verts + i]!r}", lno) from None
    for extra in body[n_verts + n_faces :]:
        if extra.strip():
            raise FormatError(path, f"trailing content after faces: {extra!r}", ln + len(body))
    verts = vdata[:, :3]
    scalars = vdata[:, 3:]
    return verts, scalars, tris


def load_mesh(path):
    """Read a cortex PLY into a CorticalMesh (sulc/curv become descriptors)."""
    verts, scalars, tris = _parse_ply(path)
    try:
        return CorticalMesh(verts, tris, scalars if scalars.shape[1] else None)
    except (MeshError, InputError) as e:
        raise FormatError(path, str(e)) from e


def load_sphere(path, mesh=None):
    """Read a sphere PLY; with ``mesh`` given, enforce companion invariants."""
    verts, _, tris = _parse_ply(path)
    norms = np.sqrt((verts**2).sum(axis=1))
    off = np.abs(norms - 1.0) > 1e-4
    if off.any():
        i = int(np.flatnonzero(off)[0])
        raise FormatError(path, f"sphere vertex {i} has norm {norms[i]:.6f}, expected 1")
    if mesh is not None:
        if verts.shape[0] != mesh.n_verts:
            raise FormatError(
                path,
                f"sphere has {verts.shape[0]} vertices, companion mesh has {mesh.n_verts}",
            )
        if not np.array_equal(tris, mesh.tris):
            raise FormatError(path, "sphere connectivity differs from companion mesh")
    # exact unit norms keep downstream projections consistent regardless of
    # the f32 rounding introduced by serialization
    verts = verts / norms[:, None]
    try:
        return SphereMap(verts, tris)
    except (MeshError, InputError) as e:
        raise FormatError(path, str(e)) from e


# ---------------------------------------------------------------------------
# NIfTI-1 import shim (scalar 3-D, little-endian, uncompressed)

_NIFTI_DTYPES = {2: "<u1", 4: "<i2", 8: "<i4", 16: "<f4", 64: "<f8"}


def load_nifti_volume(path):
    """Import a scalar 3-D little-endian uncompressed NIfTI-1 file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise FormatError(path, f"unreadable: {e.strerror or e}") from e
    if raw[:2] == b"\x1f\x8b":
        raise FormatError(path, "gzip-compressed NIfTI is not supported; gunzip first", 0)
    if len(raw) < 348:
        raise FormatError(path, "file shorter than the 348-byte NIfTI-1 header", 0)
    if struct.unpack("<i", raw[0:4])[0] != 348:
        raise FormatError(path, "sizeof_hdr != 348 (not little-endian NIfTI-1)", 0)
    if raw[344:348] not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(path, f"bad NIfTI magic {raw[344:348]!r}", 344)
    dim = struct.unpack("<8h", raw[40:56])
    if dim[0] != 3:
        raise FormatError(path, f"only scalar 3-D supported, got dim[0]={dim[0]}", 40)
    dims = dim[1:4]
    if any(d < 2 or d > _MAX_DIM for d in dims):
        raise FormatError(path, f"dims {dims} outside [2, {_MAX_DIM}]", 40)
    dtype_code = struct.unpack("<h", raw[70:72])[0]
    if dtype_code not in _NIFTI_DTYPES:
        raise FormatError(path, f"unsupported NIfTI datatype {dtype_code}", 70)
    pixdim = struct.unpack("<8f", raw[76:108])
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])
    vox_offset = int(struct.unpack("<f", raw[108:112])[0])
    if vox_offset < 348:
        raise FormatError(path, f"vox_offset {vox_offset} < 348", 108)
    scl_slope, scl_inter = struct.unpack("<2f", raw[112:120])
    dt = np.dtype(_NIFTI_DTYPES[dtype_code])
    n = int(np.prod(dims, dtype=np.int64))
    if n * dt.itemsize > _MAX_BYTES:
        raise FormatError(path, f"payload exceeds {_MAX_BYTES} bytes", 108)
    if len(raw) < vox_offset + n * dt.itemsize:
        raise FormatError(
            path,
            f"truncated payload: need {n * dt.itemsize} bytes at offset {vox_offset}",
            vox_offset,
        )
    data = np.frombuffer(raw, dtype=dt, count=n, offset=vox_offset)
    data = data.reshape(dims, order="F").astype(np.float64)
    if scl_slope not in (0.0, 1.0) and np.isfinite(scl_slope):
        data = data * scl_slope + (scl_inter if np.isfinite(scl_inter) else 0.0)
    if not np.all(np.isfinite(data)):
        raise FormatError(path, "payload contains non-finite values", vox_offset)
    try:
        return Volume3(data, spacing)
    except InputError as e:
        raise FormatError(path, str(e)) from e


# ---------------------------------------------------------------------------
# reports and manifests


def _read_kv(path):
    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as e:
        raise FormatError(path, f"unreadable: {e.strerror or e}") from e
    except UnicodeDecodeError as e:
        raise FormatError(path, "not ASCII", e.start) from e
    out = {}
    for ln, line in enumerate(text.split("\n")[:-1], start=1):
        if "=" not in line:
            raise FormatError(path, f"line {ln} is not key=value: {line!r}", ln)
        key, _, val = line.partition("=")
        if key in out:
            raise FormatError(path, f"duplicate key {key!r}", ln)
        out[key] = val
    return out


def write_metric_report(path, report):
    """Fixed-order metric report; one key=value line per quantity."""
    if not isinstance(report, MetricReport):
        raise InputError("write_metric_report needs a MetricReport")
    lines = []
    for lab in sorted(report.dice_per_label):
        lines.append(f"dice.{int(lab)}={_fmt(report.dice_per_label[lab])}")
    lines.append(f"dice_cc={_fmt(report.dice_cc)}")
    lines.append(f"dice_cortical_mean={_fmt(report.dice_cortical_mean)}")
    lines.append(f"dice_subcortical_mean={_fmt(report.dice_subcortical_mean)}")
    lines.append(f"mean_dice={_fmt(report.mean_dice())}")
    lines.append(f"pct_folds={_fmt(report.pct_folds)}")
    lines.append(f"sd_log_detj={_fmt(report.sd_log_detj)}")
    lines.append("skipped_labels=" + " ".join(str(int(v)) for v in report.skipped_labels))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(s + "\n" for s in lines))


def read_metric_report(path):
    kv = _read_kv(path)
    dice = {}
    rest = {}
    for k, v in kv.items():
        if k.startswith("dice."):
            try:
                dice[int(k[5:])] = float(v)
            except ValueError as e:
                raise FormatError(path, f"bad dice entry {k}={v}") from e
        else:
            rest[k] = v
    expect = {
        "dice_cc",
        "dice_cortical_mean",
        "dice_subcortical_mean",
        "mean_dice",
        "pct_folds",
        "sd_log_detj",
        "skipped_labels",
    }
    if rest.keys() != expect:
        raise FormatError(
            path, f"report keys {sorted(rest)} do not match {sorted(expect)}"
        )
    try:
        skipped = tuple(int(t) for t in rest["skipped_labels"].split())
        return MetricReport(
            dice_per_label=dice,
            skipped_labels=skipped,
            dice_cortical_mean=float(rest["dice_cortical_mean"]),
            dice_subcortical_mean=float(rest["dice_subcortical_mean"]),
            dice_cc=float(rest["dice_cc"]),
            pct_folds=float(rest["pct_folds"]),
            sd_log_detj=float(rest["sd_log_detj"]),
        )
    except ValueError as e:
        raise FormatError(path, f"non-numeric report value: {e}") from e


_TRACE_COLS = ("level", "iteration", "sim_vol", "sim_sph", "cons",
               "reg_vol", "reg_sph", "struct", "total")


def write_loss_trace(path, trace):
    """Loss trace as a fixed-order column table, one row per evaluation."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(" ".join(_TRACE_COLS) + "\n")
        for rep in trace:
            fh.write(" ".join(_fmt(getattr(rep, c)) for c in _TRACE_COLS) + "\n")


def write_manifest(path, manifest):
    """Canonical key-sorted manifest; sequences become space-joined scalars."""
    lines = []
    for k in sorted(manifest):
        v = manifest[k]
        if isinstance(v, (tuple, list)):
            v = _fmt_seq(v)
        else:
            v = _fmt(v)
        if "\n" in str(v):
            raise InputError(f"manifest value for {k!r} contains a newline")
        lines.append(f"{k}={v}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(s + "\n" for s in lines))


def read_manifest(path):
    return _read_kv(path)


def write_label_groups(path, groups):
    if not isinstance(groups, LabelGroups):
        raise InputError("write_label_groups needs a LabelGroups")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("cortical_left=" + " ".join(map(str, groups.cortical_left)) + "\n")
        fh.write("cortical_right=" + " ".join(map(str, groups.cortical_right)) + "\n")
        fh.write("subcortical=" + " ".join(map(str, groups.subcortical)) + "\n")


def read_label_groups(path):
    kv = _read_kv(path)
    expect = {"cortical_left", "cortical_right", "subcortical"}
    if kv.keys() != expect:
        raise FormatError(path, f"group keys {sorted(kv)} do not match {sorted(expect)}")
    try:
        parts = {k: tuple(int(t) for t in kv[k].split()) for k in expect}
    except ValueError as e:
        raise FormatError(path, f"non-integer label id: {e}") from e
    try:
        return LabelGroups(**parts)
    except InputError as e:
        raise FormatError(path, str(e)) from e


# ---------------------------------------------------------------------------
# bundle directories

IMAGE_FILE = "image.vol"
LABELS_FILE = "labels.lab"
MESH_FILE = "mesh.ply"
SPHERE_FILE = "sphere.ply"


def save_bundle(dirpath, bundle):
    """Write a SubjectBundle into a directory using the standard file names."""
    if not isinstance(bundle, SubjectBundle):
        raise InputError("save_bundle needs a SubjectBundle")
    os.makedirs(dirpath, exist_ok=True)
    save_volume(os.path.join(dirpath, IMAGE_FILE), bundle.image)
    if bundle.labels is not None:
        save_labelmap(os.path.join(dirpath, LABELS_FILE), bundle.labels)
    if bundle.mesh is not None:
        save_mesh(os.path.join(dirpath, MESH_FILE), bundle.mesh)
        save_sphere(os.path.join(dirpath, SPHERE_FILE), bundle.sphere)


def load_bundle(dirpath):
    """Read a bundle directory; image.vol is required, the rest optional."""
    img_path = os.path.join(dirpath, IMAGE_FILE)
    if not os.path.isfile(img_path):
        raise FormatError(img_path, "required bundle file is missing")
    image = load_volume(img_path)
    labels = mesh = sphere = None
    lab_path = os.path.join(dirpath, LABELS_FILE)
    if os.path.isfile(lab_path):
        labels = load_labelmap(lab_path)
    mesh_path = os.path.join(dirpath, MESH_FILE)
    sph_path = os.path.join(dirpath, SPHERE_FILE)
    has_mesh, has_sph = os.path.isfile(mesh_path), os.path.isfile(sph_path)
    if has_mesh != has_sph:
        missing = sph_path if has_mesh else mesh_path
        raise FormatError(missing, "mesh and sphere files must both be present")
    if has_mesh:
        mesh = load_mesh(mesh_path)
        sphere = load_sphere(sph_path, mesh=mesh)
    try:
        return SubjectBundle(image=image, labels=labels, mesh=mesh, sphere=sphere)
    except InputError as e:
        raise FormatError(str(dirpath), str(e)) from e
