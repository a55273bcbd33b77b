"""conelab: numerical laboratory for positive Bergman-type operators on homogeneous cones."""

from .cones import (
    ConeError,
    UnknownConeError,
    NotPositiveDefinite,
    BoundaryElement,
    NotInCone,
    SubspaceViolation,
    SingularMinor,
    WeightVector,
    ConeSpec,
    ConeElement,
    TriangularFactor,
    builtin_cone,
    builtin_names,
    cholesky_upper,
    dual_factor,
    Q,
    Qpow,
    Qstar,
    Qstar_pow,
    dual_point,
    act,
    act_dual,
    inner,
    gamma_omega,
    gamma_factorized,
    random_element,
    random_factor,
)

__version__ = "0.1.0"
