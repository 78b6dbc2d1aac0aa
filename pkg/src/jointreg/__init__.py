"""Joint volumetric and cortical-surface diffeomorphic registration.

A single objective couples a 3-D stationary velocity field (volume
alignment) and a 2-D spherical one (surface alignment) through local
correlation, a vertex consistency penalty, smoothness and optional label
supervision; both fields are optimized directly per subject pair.
"""

from .errors import (
    DivergenceError,
    FormatError,
    InputError,
    JointRegError,
    MeshError,
)
from .fields import (
    DeformationField2,
    DeformationField3,
    compose_fields,
    integrate_velocity,
    jacobian_stats,
    warp_labels,
    warp_vertices,
    warp_volume,
)
from .losses import LossReport, LossWeights, RegistrationState, total_loss
from .metrics import LabelGroups, MetricReport, dice_hard, evaluate
from .optimize import (
    GradientCheckReport,
    RegistrationConfig,
    RegistrationResult,
    SweepRow,
    gradient_check,
    register_pair,
    sweep,
)
from .sphere import CorticalMesh, PlanarGrid2, SphereMap, rasterize_descriptors
from .synth import SubjectBundle, deform_bundle, make_phantom, smooth_velocity
from .version import __version__
from .volume import LabelMap3, Volume3

__all__ = [
    "CorticalMesh",
    "DeformationField2",
    "DeformationField3",
    "DivergenceError",
    "FormatError",
    "GradientCheckReport",
    "InputError",
    "JointRegError",
    "LabelGroups",
    "LabelMap3",
    "LossReport",
    "LossWeights",
    "MeshError",
    "MetricReport",
    "PlanarGrid2",
    "RegistrationConfig",
    "RegistrationResult",
    "RegistrationState",
    "SphereMap",
    "SubjectBundle",
    "SweepRow",
    "Volume3",
    "__version__",
    "compose_fields",
    "deform_bundle",
    "dice_hard",
    "evaluate",
    "gradient_check",
    "integrate_velocity",
    "jacobian_stats",
    "make_phantom",
    "rasterize_descriptors",
    "register_pair",
    "smooth_velocity",
    "sweep",
    "total_loss",
    "warp_labels",
    "warp_vertices",
    "warp_volume",
]
