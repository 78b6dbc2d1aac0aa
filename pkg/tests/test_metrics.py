import numpy as np
import pytest

from jointreg.errors import InputError
from jointreg.metrics import LabelGroups, MetricReport, dice_hard, evaluate
from jointreg.volume import LabelMap3


def cube_map(shape, lo, hi, label=1):
    a = np.zeros(shape, dtype=np.int32)
    a[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = label
    return a


def test_dice_of_shifted_cube_exact_fraction():
    a = cube_map((16, 16, 16), (4, 4, 4), (12, 12, 12))
    b = cube_map((16, 16, 16), (5, 4, 4), (13, 12, 12))  # shift one voxel in x
    rep = dice_hard(a, b)
    inter = 7 * 8 * 8
    want = 2 * inter / (512 + 512)
    assert rep.dice_per_label == {1: want}
    assert rep.mean_dice() == want


def test_dice_is_symmetric_and_permutation_sensitive():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 4, size=(10, 10, 10)).astype(np.int32)
    b = rng.integers(0, 4, size=(10, 10, 10)).astype(np.int32)
    ra = dice_hard(a, b)
    rb = dice_hard(b, a)
    assert ra.dice_per_label == rb.dice_per_label
    swapped = b.copy()
    swapped[b == 1] = 2
    swapped[b == 2] = 1
    rs = dice_hard(a, swapped)
    assert rs.dice_per_label[3] == ra.dice_per_label[3]
    assert rs.dice_per_label[1] != ra.dice_per_label[1]


def test_one_sided_labels_score_zero_absent_labels_skip():
    a = cube_map((12, 12, 12), (2, 2, 2), (6, 6, 6), label=5)
    b = np.zeros((12, 12, 12), dtype=np.int32)
    b[8, 8, 8] = 7
    rep = dice_hard(a, b, groups=LabelGroups(subcortical=(5, 7, 9)))
    assert rep.dice_per_label[5] == 0.0 and rep.dice_per_label[7] == 0.0
    assert rep.skipped_labels == (9,)


def test_group_means_and_merged_cortex():
    shape = (12, 12, 12)
    a = np.zeros(shape, dtype=np.int32)
    b = np.zeros(shape, dtype=np.int32)
    a[:4] = 1  # left cortex, two parcels in a
    a[4:6] = 2
    b[:6] = 1  # merged into one parcel in b
    a[8:, :4] = 10
    b[8:, :4] = 10  # subcortical agreement
    groups = LabelGroups(cortical_left=(1, 2), subcortical=(10,))
    rep = dice_hard(a, b, groups)
    # parcel-level dice suffers from the split, merged-cortex dice does not
    full = np.isin(a, (1, 2)) & np.isin(b, (1, 2))
    want_cc = 2 * full.sum() / (np.isin(a, (1, 2)).sum() + np.isin(b, (1, 2)).sum())
    assert abs(rep.dice_cc - want_cc) < 1e-12
    assert rep.dice_cc == 1.0
    assert rep.dice_cortical_mean < rep.dice_cc
    assert rep.dice_subcortical_mean == 1.0


def test_unlisted_labels_count_as_subcortical():
    a = cube_map((12, 12, 12), (2, 2, 2), (8, 8, 8), label=3)
    rep = dice_hard(a, a, groups=LabelGroups(cortical_left=(1,)))
    assert rep.dice_subcortical_mean == 1.0
    assert rep.skipped_labels == (1,)


def test_label_groups_validation():
    with pytest.raises(InputError):
        LabelGroups(cortical_left=(1,), cortical_right=(1,))
    with pytest.raises(InputError):
        LabelGroups(cortical_left=(1,), subcortical=(1,))
    g = LabelGroups(cortical_left=(3, 1), cortical_right=(2,))
    assert g.cortical == (1, 2, 3)


def test_evaluate_identity_field_is_perfect():
    a = cube_map((12, 12, 12), (3, 3, 3), (9, 9, 9))
    rep = evaluate(np.zeros((12, 12, 12, 3)), a, a)
    assert rep.mean_dice() == 1.0
    assert rep.pct_folds == 0.0
    assert rep.sd_log_detj == 0.0


def test_evaluate_applies_field_before_scoring():
    shape = (12, 12, 12)
    fixed = cube_map(shape, (3, 3, 3), (7, 7, 7))
    moving = cube_map(shape, (5, 3, 3), (9, 7, 7))  # two voxels along x
    u = np.zeros((*shape, 3))
    u[..., 0] = 2.0  # pullback shift aligns moving onto fixed
    rep = evaluate(u, moving, fixed)
    assert rep.dice_per_label[1] == 1.0
    rep0 = evaluate(np.zeros_like(u), moving, fixed)
    assert rep0.dice_per_label[1] < 1.0


def test_evaluate_counts_folds():
    shape = (10, 10, 10)
    a = cube_map(shape, (2, 2, 2), (8, 8, 8))
    pts = np.arange(shape[0], dtype=np.float64)
    u = np.zeros((*shape, 3))
    u[..., 0] = (shape[0] - 1 - pts)[:, None, None] - pts[:, None, None]
    rep = evaluate(u, a, a)
    assert rep.pct_folds == 100.0


def test_evaluate_validates_grids():
    a = cube_map((10, 10, 10), (2, 2, 2), (8, 8, 8))
    with pytest.raises(InputError):
        evaluate(np.zeros((8, 8, 8, 3)), a, a)
    with pytest.raises(InputError):
        evaluate(np.zeros((10, 10, 10, 3)), a, a[:8])


def test_mean_dice_empty_report_is_nan():
    rep = MetricReport(
        dice_per_label={},
        skipped_labels=(),
        dice_cortical_mean=float("nan"),
        dice_subcortical_mean=float("nan"),
        dice_cc=float("nan"),
    )
    assert np.isnan(rep.mean_dice())
