"""Volumetric images, label maps and their samplers.

Conventions used throughout the package:

* a volume is a float64 array indexed ``[x, y, z]``; axis 0 is x,
* points and displacement components are ordered ``(x, y, z)`` in voxel
  units, so a point is a fractional index into the array,
* sampling outside the array clamps to the nearest face.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import interp
from .errors import InputError


@dataclass
class Volume3:
    """A scalar 3-D image with isotropic-by-default voxel spacing."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise InputError(f"volume data must be 3-D, got shape {self.data.shape}")
        if any(s < 2 for s in self.data.shape):
            raise InputError(f"volume dims must all be >= 2, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InputError("volume data contains non-finite values")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InputError(f"spacing must be three positive floats, got {self.spacing}")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class LabelMap3:
    """Integer segmentation labels on the same grid as a Volume3.

    Label 0 is background and is excluded from ``label_set``.
    """

    data: np.ndarray
    label_set: tuple = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.integer):
            raise InputError(f"label data must be integer, got {self.data.dtype}")
        self.data = self.data.astype(np.int32)
        if self.data.ndim != 3:
            raise InputError(f"label data must be 3-D, got shape {self.data.shape}")
        if self.data.min() < 0:
            raise InputError("labels must be non-negative")
        present = tuple(int(v) for v in np.unique(self.data) if v != 0)
        if self.label_set is None:
            self.label_set = present
        else:
            self.label_set = tuple(sorted(int(v) for v in self.label_set))
            missing = set(present) - set(self.label_set)
            if missing:
                raise InputError(f"labels {sorted(missing)} not in declared label_set")

    @property
    def shape(self):
        return self.data.shape


def sample_trilinear(vol, points):
    """Trilinear sample of a volume (or (D,H,W,C) stack) at fractional points.

    Returns (N,) for a plain volume and (N,C) for a channel stack.
    """
    data = vol.data if isinstance(vol, Volume3) else np.asarray(vol, dtype=np.float64)
    if data.ndim == 3:
        return interp.gather3(data[..., None], points)[:, 0]
    return interp.gather3(data, points)


def sample_nearest_label(labels, points):
    """Nearest-neighbour label lookup with clamping, returns int32 (N,)."""
    data = labels.data if isinstance(labels, LabelMap3) else np.asarray(labels)
    if data.ndim != 3:
        raise InputError(f"label array must be 3-D, got {data.shape}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"expected points of shape (N, 3), got {pts.shape}")
    idx = np.rint(pts).astype(np.int64)
    for a in range(3):
        np.clip(idx[:, a], 0, data.shape[a] - 1, out=idx[:, a])
    return data[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.int32)


def spatial_gradient(vol):
    """Central-difference gradient, one-sided on the faces, shape (D,H,W,3)."""
    data = vol.data if isinstance(vol, Volume3) else np.asarray(vol, dtype=np.float64)
    if data.ndim != 3:
        raise InputError(f"volume must be 3-D, got {data.shape}")
    gx, gy, gz = np.gradient(data)
    return np.stack([gx, gy, gz], axis=-1)


def labelmap_to_onehot(labels, label_set=None):
    """One-hot channels (K,D,H,W) float64 for each non-background label."""
    lm = labels if isinstance(labels, LabelMap3) else LabelMap3(np.asarray(labels))
    ids = lm.label_set if label_set is None else tuple(sorted(int(v) for v in label_set))
    if not ids:
        raise InputError("label map has no non-background labels")
    out = np.zeros((len(ids), *lm.data.shape))
    for k, lab in enumerate(ids):
        out[k] = lm.data == lab
    return out
