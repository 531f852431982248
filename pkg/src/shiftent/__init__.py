"""Entropy spectra of compact subsets of full shifts via pruned cylinder trees.

The package represents a compact subset of the one-sided full shift on
{1, ..., l} by the depth-D tree of cylinders that meet it, and computes
covering (Bowen-type), packing-type, and upper-capacity entropy estimates of
the subset, together with the measure-theoretic side of the corresponding
variational principles: weighted covers and their mass distributions, local
entropies of measures along branches, and disjoint-ball constructions.
"""

from .errors import DomainError
from .words import (
    Alphabet,
    BowenBallSpec,
    FrequencyConstraint,
    ScaleIndex,
    Word,
    ball_cylinder_length,
    dn_distance,
    word_from_string,
    word_to_string,
)
from .trees import (
    CylinderTree,
    block_schedule,
    build_tree,
    depth_counts,
    explicit,
    frequency,
    full_shift,
    level_branching,
    load_tree,
    random_pruned_tree,
    save_tree,
    sft,
    tree_from_json_obj,
    tree_to_json_obj,
    union,
)
from .engines import (
    EntropyEstimate,
    bowen_entropy,
    capacity_entropy,
    max_antichain_value,
    min_cutset_value,
    packing_entropy,
    packing_regularized,
    weighted_cover_value,
    weighted_entropy,
)
from .measures import (
    CylinderMeasure,
    antichain_in_window,
    bernoulli,
    frostman_bound_margin,
    frostman_measure,
    integral_local_entropy,
    load_measure,
    local_entropy,
    markov,
    measure_from_json_obj,
    measure_to_json_obj,
    packing_frostman,
    save_measure,
)
from .verify import (
    SuiteReport,
    VPReport,
    besicovitch_tree,
    checkpoint_oscillation,
    nontypical_tree,
    run_property_suite,
    separator_tree,
    upper_density_tree,
    verify_bowen_vp,
    verify_packing_vp,
)

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "BowenBallSpec",
    "CylinderMeasure",
    "CylinderTree",
    "DomainError",
    "EntropyEstimate",
    "FrequencyConstraint",
    "ScaleIndex",
    "SuiteReport",
    "VPReport",
    "Word",
    "antichain_in_window",
    "ball_cylinder_length",
    "bernoulli",
    "besicovitch_tree",
    "block_schedule",
    "bowen_entropy",
    "build_tree",
    "capacity_entropy",
    "checkpoint_oscillation",
    "depth_counts",
    "dn_distance",
    "explicit",
    "frequency",
    "frostman_bound_margin",
    "frostman_measure",
    "full_shift",
    "integral_local_entropy",
    "level_branching",
    "load_measure",
    "load_tree",
    "local_entropy",
    "markov",
    "max_antichain_value",
    "measure_from_json_obj",
    "measure_to_json_obj",
    "min_cutset_value",
    "nontypical_tree",
    "packing_entropy",
    "packing_frostman",
    "packing_regularized",
    "random_pruned_tree",
    "run_property_suite",
    "save_measure",
    "save_tree",
    "separator_tree",
    "sft",
    "tree_from_json_obj",
    "tree_to_json_obj",
    "union",
    "upper_density_tree",
    "verify_bowen_vp",
    "verify_packing_vp",
    "weighted_cover_value",
    "weighted_entropy",
    "word_from_string",
    "word_to_string",
    "__version__",
]
