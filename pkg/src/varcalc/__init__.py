"""Generalized-differentiation calculator for piecewise-smooth functions
and stationarity certifier for optimistic bilevel programs.

Every symbolic object computed here (subdifferentials, normal cones,
coderivatives) can be cross-checked against brute-force sampling oracles
built from the limiting definitions; the oracles are deterministic given
a seed.
"""

from varcalc.expr import (
    ExprError,
    FunctionDef,
    ParseError,
    UnknownVariableError,
    VarSpace,
    active_pattern,
    branch_gradient,
    evaluate,
    eval_batch,
    parse_function,
    to_text,
)
from varcalc.convgeom import (
    ConeSpec,
    LPProblem,
    Polytope,
    PolytopeUnion,
    convex_hull,
    hausdorff_distance,
    lp_feasible,
    minkowski_membership,
)
from varcalc.subdiff import (
    SampleParams,
    SetSpec,
    basic_subdifferential,
    coderivative,
    epigraph_consistency_check,
    extremal_principle_solve,
    lipschitz_like_check,
    normal_cone,
    regular_subdifferential,
    sampled_normal_cone_oracle,
    sampled_subdiff_oracle,
    singular_subdifferential,
    verify_difference_rule,
    verify_intersection_rule,
    verify_sum_rule,
)
from varcalc.valuefn import (
    GridSpec,
    ParametricProblem,
    evaluate_value,
    inner_semicontinuity_probe,
    lipschitz_verdict,
    value_subdiff_estimate,
)
from varcalc.bilevel import (
    BilevelProblem,
    LipschitzProgram,
    NoCertificate,
    StationarityCertificate,
    build_penalized,
    certify_T74,
    certify_T83,
    check_lipschitz_kkt,
    partial_calmness_probe,
    regularity_check,
)

__all__ = [
    "BilevelProblem",
    "ConeSpec",
    "ExprError",
    "FunctionDef",
    "GridSpec",
    "LPProblem",
    "LipschitzProgram",
    "NoCertificate",
    "ParametricProblem",
    "ParseError",
    "Polytope",
    "PolytopeUnion",
    "SampleParams",
    "SetSpec",
    "StationarityCertificate",
    "UnknownVariableError",
    "VarSpace",
    "active_pattern",
    "basic_subdifferential",
    "branch_gradient",
    "build_penalized",
    "certify_T74",
    "certify_T83",
    "check_lipschitz_kkt",
    "coderivative",
    "convex_hull",
    "epigraph_consistency_check",
    "eval_batch",
    "evaluate",
    "evaluate_value",
    "extremal_principle_solve",
    "hausdorff_distance",
    "inner_semicontinuity_probe",
    "lipschitz_like_check",
    "lipschitz_verdict",
    "lp_feasible",
    "minkowski_membership",
    "normal_cone",
    "parse_function",
    "partial_calmness_probe",
    "regular_subdifferential",
    "regularity_check",
    "sampled_normal_cone_oracle",
    "sampled_subdiff_oracle",
    "singular_subdifferential",
    "to_text",
    "value_subdiff_estimate",
    "verify_difference_rule",
    "verify_intersection_rule",
    "verify_sum_rule",
]
