"""Warped products ``S^2 x_h S^1`` built from logarithmic warp profiles.

Modules: ``sphere`` (points, pole configurations, quadrature grids),
``warp`` (warp fields), ``curvature``, ``measure`` (integrals and norms),
``metric_space`` (graph distances and ball volumes) and ``cli``.
"""

from .curvature import radial_derivatives, scalar_curvature, scalar_field, warp_laplacian
from .errors import (
    ConfigurationError,
    SeminormDivergence,
    SingularPointError,
    TruncationError,
    WarplabError,
)
from .measure import (
    convergence_table,
    divergence_scan,
    gradient_distance,
    integrate,
    lq_metric_distance,
    volume,
    w1p_seminorm,
)
from .metric_space import (
    ProductGrid,
    ball_volume,
    check_distance_bound,
    diameter_estimate,
    scalar_probe,
    shortest_distance,
)
from .sphere import (
    PoleConfiguration,
    SpherePoint,
    build_grid,
    configuration_from_dict,
    equator_configuration,
    poles_case1,
    poles_case2,
    poles_case3,
)
from .warp import BaseWarp, ConstantWarp, WarpField, eval_base

__version__ = "0.1.0"

__all__ = [
    "BaseWarp",
    "ConfigurationError",
    "ConstantWarp",
    "PoleConfiguration",
    "ProductGrid",
    "SeminormDivergence",
    "SingularPointError",
    "SpherePoint",
    "TruncationError",
    "WarpField",
    "WarplabError",
    "ball_volume",
    "build_grid",
    "check_distance_bound",
    "configuration_from_dict",
    "convergence_table",
    "diameter_estimate",
    "divergence_scan",
    "equator_configuration",
    "eval_base",
    "gradient_distance",
    "integrate",
    "lq_metric_distance",
    "poles_case1",
    "poles_case2",
    "poles_case3",
    "radial_derivatives",
    "scalar_curvature",
    "scalar_field",
    "scalar_probe",
    "shortest_distance",
    "volume",
    "w1p_seminorm",
    "warp_laplacian",
]
