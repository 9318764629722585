"""Batch Bayesian optimisation with epsilon-shotgun proposals.

A GP-surrogate toolkit implementing the epsilon-shotgun batch selection
family (random-space, Pareto-front and pure-exploit variants) next to
Kriging Believer, soft/hard local penalisation and Thompson sampling, with
synthetic benchmarks, rank-based statistics and an experiment harness.
"""

from .acquisition import (
    AcquisitionConfig,
    expected_improvement,
    mean_exploit_score,
    upper_confidence_bound,
)
from .bounds import Box
from .gp import (
    AllRestartsFailed,
    Dataset,
    DuplicateLocation,
    FactorisationFailure,
    GpHyperparams,
    GpModel,
    OutputScaler,
    Posterior,
    fit_gp,
    fit_hyperparameters,
    kernel,
    log_marginal_likelihood,
)
from .harness import (
    METHODS,
    ExperimentConfig,
    RunRecord,
    comparison_tables,
    emit_convergence,
    run_experiment,
    run_single,
)
from .inneropt import (
    ScalarField,
    SearchBudget,
    estimate_local_lipschitz,
    global_maximize,
    presample_then_refine,
)
from .pareto import (
    BiObjectivePoint,
    Nsga2Config,
    non_dominated_filter,
    nsga2_approximate_front,
)
from .problems import (
    PROBLEM_NAMES,
    InitialDesign,
    OutOfBounds,
    ProblemSpec,
    get_problem,
    latin_hypercube_maximin,
)
from .stats import (
    ComparisonTable,
    MethodSample,
    build_comparison_table,
    holm_bonferroni,
    median_and_mad,
    wilcoxon_one_sided,
)
from .strategies import (
    BatchProposal,
    PenaliserMode,
    SelectionMode,
    ShotgunConfig,
    eshotgun_select,
    kriging_believer_select,
    local_penalisation_select,
    penalisation_radius,
    shotgun_radius,
    thompson_select,
)

__version__ = "0.1.0"
