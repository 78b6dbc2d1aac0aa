"""Evaluation battery for registration outputs.

Hard-label Dice over a caller-supplied cortical/subcortical partition,
plus deformation-quality numbers (percentage of folded voxels, spread of
the log Jacobian determinant).  Labels present in exactly one map score 0;
labels absent from both are skipped and reported, not averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .fields import DeformationField3, jacobian_stats, warp_labels
from .volume import LabelMap3


@dataclass(frozen=True)
class LabelGroups:
    """Partition of label ids into cortical (per hemisphere) and subcortical.

    Labels not mentioned anywhere default to subcortical.
    """

    cortical_left: tuple = ()
    cortical_right: tuple = ()
    subcortical: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "cortical_left", tuple(sorted(set(int(x) for x in self.cortical_left))))
        object.__setattr__(self, "cortical_right", tuple(sorted(set(int(x) for x in self.cortical_right))))
        object.__setattr__(self, "subcortical", tuple(sorted(set(int(x) for x in self.subcortical))))
        cl, cr = set(self.cortical_left), set(self.cortical_right)
        if cl & cr:
            raise InputError(f"labels {sorted(cl & cr)} assigned to both hemispheres")
        if (cl | cr) & set(self.subcortical):
            raise InputError("a label cannot be both cortical and subcortical")

    @property
    def cortical(self):
        return tuple(sorted(set(self.cortical_left) | set(self.cortical_right)))


@dataclass
class MetricReport:
    """Per-label and grouped Dice plus Jacobian statistics."""

    dice_per_label: dict
    skipped_labels: tuple
    dice_cortical_mean: float
    dice_subcortical_mean: float
    dice_cc: float
    pct_folds: float = float("nan")
    sd_log_detj: float = float("nan")

    def mean_dice(self):
        """Arithmetic mean over every scored label."""
        vals = list(self.dice_per_label.values())
        return float(np.mean(vals)) if vals else float("nan")


def _label_data(x):
    if isinstance(x, LabelMap3):
        return x.data, x.label_set
    lm = LabelMap3(np.asarray(x))
    return lm.data, lm.label_set


def _dice_counts(a, b, label):
    na = int(np.count_nonzero(a == label))
    nb = int(np.count_nonzero(b == label))
    if na == 0 and nb == 0:
        return None
    inter = int(np.count_nonzero((a == label) & (b == label)))
    return 2.0 * inter / (na + nb)


def _merged_dice(a, b, labels):
    ma = np.isin(a, labels)
    mb = np.isin(b, labels)
    na, nb = int(ma.sum()), int(mb.sum())
    if na == 0 and nb == 0:
        return None
    return 2.0 * int((ma & mb).sum()) / (na + nb)


def dice_hard(a, b, groups=None):
    """Per-label and group-mean Dice between two labelmaps.

    Returns a :class:`MetricReport` with the Jacobian fields left NaN; use
    :func:`evaluate` to fill them from a deformation.  ``dice_cc`` merges
    all cortical labels into a single class per hemisphere and averages the
    hemispheres that have any cortical voxels.
    """
    da, sa = _label_data(a)
    db, sb = _label_data(b)
    if da.shape != db.shape:
        raise InputError(f"labelmap shapes differ: {da.shape} vs {db.shape}")
    groups = groups or LabelGroups()
    universe = sorted(
        set(sa)
        | set(sb)
        | set(groups.cortical)
        | set(groups.subcortical)
    )
    dice = {}
    skipped = []
    for lab in universe:
        d = _dice_counts(da, db, lab)
        if d is None:
            skipped.append(lab)
        else:
            dice[lab] = d
    cortical = [dice[k] for k in groups.cortical if k in dice]
    sub_ids = [k for k in dice if k not in set(groups.cortical)]
    subcortical = [dice[k] for k in sub_ids]
    cc_parts = []
    for hemi in (groups.cortical_left, groups.cortical_right):
        if hemi:
            d = _merged_dice(da, db, list(hemi))
            if d is not None:
                cc_parts.append(d)
    return MetricReport(
        dice_per_label=dice,
        skipped_labels=tuple(skipped),
        dice_cortical_mean=float(np.mean(cortical)) if cortical else float("nan"),
        dice_subcortical_mean=float(np.mean(subcortical)) if subcortical else float("nan"),
        dice_cc=float(np.mean(cc_parts)) if cc_parts else float("nan"),
    )


def evaluate(result, moving_labels, fixed_labels, groups=None):
    """Warp moving labels through the recovered field and score against fixed.

    ``result`` may be a RegistrationResult, a DeformationField3 or a bare
    displacement array.  Nearest-neighbour warping keeps labels crisp;
    Jacobian statistics describe the field itself.
    """
    phi = getattr(result, "phi", result)
    u = phi.u if isinstance(phi, DeformationField3) else np.asarray(phi, dtype=np.float64)
    da, _ = _label_data(moving_labels)
    db, _ = _label_data(fixed_labels)
    if da.shape != db.shape:
        raise InputError(f"labelmap shapes differ: {da.shape} vs {db.shape}")
    if u.shape[:3] != da.shape:
        raise InputError(f"field grid {u.shape[:3]} does not match labels {da.shape}")
    warped = warp_labels(da, u)
    rep = dice_hard(LabelMap3(warped), LabelMap3(db), groups)
    js = jacobian_stats(u)
    rep.pct_folds = js.pct_folds
    rep.sd_log_detj = js.sd_log_detj
    return rep
