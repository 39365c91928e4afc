"""Frolicher-Nijenhuis tensor calculus, conservation-law chains and hydrodynamic-type flows."""

__version__ = "0.1.0"

from .calculus import (  # noqa: E402
    OneForm,
    ScalarField,
    Tensor11,
    TwoForm,
    VectorField,
    apply11,
    compose11,
    exterior_d,
    grad,
    identity,
    insert11,
    lie_bracket,
    pullback,
    wedge,
)
from .chains import (  # noqa: E402
    ChainState,
    conservation_pair,
    covariant_dN_check,
    eval_chain_at,
    export_chain,
    is_biclosed,
    lenard_chain,
    lm_chain,
    potential,
)
from .exprdsl import Expr, eval_jet2, parse  # noqa: E402
from .fntheory import (  # noqa: E402
    Bilinear12,
    bidiff_anticommute_check,
    compat_bracket,
    d_N,
    fn_bracket,
    haantjes,
    lemma_recursion_check,
    nijenhuis_torsion,
    structured_torsion_check,
    t_m1_explicit,
)
from .hydro import (  # noqa: E402
    FlowSpec,
    GridSolution,
    commutation_experiment,
    conservation_residual,
    pointwise_compatibility,
    simulate,
    step,
)
from .manifest import Manifest, emit_examples  # noqa: E402
