"""pluridyn: numerical pluripotential dynamics on P^k and polynomial-like maps."""

__version__ = "0.1.0"

from .projective import (  # noqa: F401
    AllZero,
    AtInfinity,
    ProjPoint,
    chart_map,
    chart_unmap,
    fs_distance,
    normalize,
    random_fs_point,
)
from .endo import (  # noqa: F401
    ChartDifferential,
    Degenerate,
    HomEndo,
    compose,
    critical_degree,
    differential_chart,
    iterate_orbit,
    jac_lift_log,
    make_family,
    map_from_text,
    map_to_text,
)
