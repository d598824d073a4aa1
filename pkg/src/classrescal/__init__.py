"""Semi-supervised RESCAL tensor factorization for ranking nodes in multi-relational networks."""

from .class_rescal import ClassifierOutput, fit_class_rescal, knn_predict, objective_g, update_a_supervised
from .errors import (
    ClassRescalError,
    ConfigurationError,
    DivergenceError,
    EmptyInputError,
    InputError,
    NumericalError,
    ParseError,
    ShapeError,
    SingularityError,
    SizeError,
    SplitError,
    UndefinedMetricError,
)
from .evaluation import (
    PRCurve,
    SplitSpec,
    SynthSpec,
    aupr,
    evaluate,
    generate_planted,
    precision_recall,
    sweep_factors,
    sweep_relations,
)
from .fold_rank import FoldInSlices, RankingResult, fold_in, rank_entities
from .graph_data import (
    EntityIndex,
    LabelSet,
    SparseRelationTensor,
    balanced_subsample,
    load_labels,
    load_triples,
)
from .linalg import kron_normal_solve, solve_ridge, spmm, spmm_t
from .rescal import (
    FactorModel,
    FitTrace,
    HyperParams,
    fit_rescal,
    init_model,
    objective_f,
    objective_h,
    update_a_unsupervised,
    update_r,
)

__version__ = "0.1.0"
