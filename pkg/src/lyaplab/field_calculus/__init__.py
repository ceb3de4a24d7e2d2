"""Multilinear calculus on the d-torus: exact trig fields, sampled grid
fields, torus diffeomorphisms, flows, Lie derivatives and pairings."""

from lyaplab.field_calculus.gridfield import GridField, lattice
from lyaplab.field_calculus.multilinear import (index_sets, insert_index,
                                                replace_index, tree_sum,
                                                wedge_matrix)
from lyaplab.field_calculus.operations import (interior_product,
                                               lie_derivative, pair,
                                               pullback_form,
                                               pushforward_multivector,
                                               torus_integrate)
from lyaplab.field_calculus.torusmap import (TorusMap, calibrate_substeps,
                                             flow_integrate, flow_map,
                                             flow_with_jacobian)
from lyaplab.field_calculus.trigfield import TWO_PI, TrigField

__all__ = [
    "GridField",
    "TorusMap",
    "TrigField",
    "TWO_PI",
    "calibrate_substeps",
    "flow_integrate",
    "flow_map",
    "flow_with_jacobian",
    "index_sets",
    "insert_index",
    "interior_product",
    "lattice",
    "lie_derivative",
    "pair",
    "pullback_form",
    "pushforward_multivector",
    "replace_index",
    "torus_integrate",
    "tree_sum",
    "wedge_matrix",
]
