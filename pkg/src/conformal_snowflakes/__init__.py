"""Lower bounds for the integral means spectrum of random conformal snowflakes."""

__version__ = "0.1.0"

from .conformal_maps import (  # noqa: E402
    INFINITY,
    SlitParams,
    SnowflakeParams,
    critical_radius,
    inverse_map,
    log_derivative_ratio,
    mobius_to_disc,
    mobius_to_halfplane,
    singular_points,
    slit_map,
    slit_map_derivative,
)

__all__ = [
    "INFINITY",
    "SlitParams",
    "SnowflakeParams",
    "critical_radius",
    "inverse_map",
    "log_derivative_ratio",
    "mobius_to_disc",
    "mobius_to_halfplane",
    "singular_points",
    "slit_map",
    "slit_map_derivative",
]
