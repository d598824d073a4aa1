"""Evaluation protocol for node ranking with RESCAL / CLASS-RESCAL.

Each run samples a class-balanced training set, factorizes the tensor
induced by the training entities, folds every held-out entity into the
trained latent space through its links to training entities, and scores
the ranking of held-out entities with the area under the precision-recall
curve (positives are the target class).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .class_rescal import fit_class_rescal
from .errors import ConfigurationError, SplitError, UndefinedMetricError
from .fold_rank import FoldInSlices, factor_scores, fold_in, order_by_score, orientation_from_labels
from .graph_data import LabelSet, SparseRelationTensor
from .rescal import FactorModel, HyperParams, fit_rescal

logger = logging.getLogger(__name__)

METHODS = ("rescal", "class_rescal")
DEFAULT_TRAIN_FRACTIONS = (0.1, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 100
    n_relations: int = 3
    p_intra: float | Sequence[float] = 0.10
    p_inter: float | Sequence[float] = 0.02
    seed: int | None = 0

    def probabilities(self):
        p_in = np.broadcast_to(np.asarray(self.p_intra, dtype=np.float64), (self.n_relations,))
        p_out = np.broadcast_to(np.asarray(self.p_inter, dtype=np.float64), (self.n_relations,))
        return p_in, p_out


def generate_planted(spec: SynthSpec):
    """Two-class planted-partition multi-relational graph.

    Entities ``0..n-1`` are positive, ``n..2n-1`` negative. In every relation
    each ordered pair (self-pairs included) is an edge independently with
    probability ``p_intra`` within a class and ``p_inter`` across classes.

    Returns
    -------
    tensor : SparseRelationTensor
    labels : LabelSet
        Every entity is labeled.
    """
    if spec.n_per_class < 1 or spec.n_relations < 1:
        raise ConfigurationError("n_per_class and n_relations must be >= 1")
    try:
        p_in, p_out = spec.probabilities()
    except ValueError:
        raise ConfigurationError("edge probabilities must be scalars or one per relation") from None
    if np.any(p_out < 0) or np.any(p_in > 1) or np.any(p_out >= p_in):
        raise ConfigurationError(f"need 0 <= p_inter < p_intra <= 1, got p_intra={p_in}, p_inter={p_out}")
    n = 2 * spec.n_per_class
    cls = np.repeat([1, -1], spec.n_per_class)
    same = cls[:, None] == cls[None, :]
    rng = np.random.default_rng(spec.seed)
    dense = np.empty((n, n, spec.n_relations))
    for k in range(spec.n_relations):
        prob = np.where(same, p_in[k], p_out[k])
        dense[:, :, k] = rng.random((n, n)) < prob
    labels = LabelSet({i: int(y) for i, y in enumerate(cls)})
    return SparseRelationTensor.from_dense(dense), labels


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.3
    n_runs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.n_runs < 1:
            raise ConfigurationError(f"n_runs must be >= 1, got {self.n_runs}")


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    aupr: float

    @property
    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def precision_recall(relevant_in_rank_order) -> PRCurve:
    """Precision and recall after each rank, plus the step-wise area.

    ``relevant_in_rank_order[i]`` tells whether the item ranked ``i + 1`` is
    a positive. The area sums precision times the recall gained at each
    rank, so only ranks holding a positive contribute.
    """
    rel = np.asarray(relevant_in_rank_order, dtype=bool)
    n_pos = int(rel.sum())
    if n_pos == 0:
        raise UndefinedMetricError("precision-recall is undefined without positives")
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, len(rel) + 1)
    recall = hits / n_pos
    gained = np.diff(recall, prepend=0.0)
    return PRCurve(recall, precision, float(np.sum(gained * precision)))


def aupr(relevant_in_rank_order) -> float:
    return precision_recall(relevant_in_rank_order).aupr


def aupr_from_scores(scores, positive, orientation: int = 1) -> float:
    order = order_by_score(scores, orientation)
    return aupr(np.asarray(positive, dtype=bool)[order])


def worst_case_aupr(n_items: int, n_pos: int) -> float:
    """AUPR when all positives are ranked last."""
    j = np.arange(1, n_pos + 1)
    return float(np.mean(j / (n_items - n_pos + j)))


@dataclass
class RunResult:
    method: str
    train_fraction: float
    run: int
    seed: int
    aupr: float
    curve: PRCurve
    train_entities: np.ndarray
    test_entities: np.ndarray
    model: FactorModel | None = None
    iterations: int = 0


@dataclass
class EvaluationResult:
    method: str
    train_fraction: float
    runs: list[RunResult] = field(default_factory=list)

    @property
    def auprs(self) -> np.ndarray:
        return np.array([r.aupr for r in sorted(self.runs, key=lambda r: r.run)])

    @property
    def mean_aupr(self) -> float:
        return float(self.auprs.mean())

    @property
    def std_aupr(self) -> float:
        return float(self.auprs.std())


def split_train_test(labels: LabelSet, n_entities: int, train_fraction: float, rng):
    """Class-balanced training sample; the remaining labeled entities are the test set.

    Unlabeled entities stay on the training side (they carry structure but
    no supervision) and are never evaluated.
    """
    pos = labels.class_members(1)
    neg = labels.class_members(-1)
    n_train = int(round(train_fraction * min(len(pos), len(neg))))
    if n_train < 1:
        raise SplitError(f"train fraction {train_fraction} leaves no training entity for some class")
    if n_train >= len(pos) or n_train >= len(neg):
        raise SplitError(f"train fraction {train_fraction} leaves a class without test entities")
    train_pos = rng.choice(pos, n_train, replace=False)
    train_neg = rng.choice(neg, n_train, replace=False)
    labeled = labels.indices()
    test = np.setdiff1d(labeled, np.concatenate([train_pos, train_neg]))
    train = np.setdiff1d(np.arange(n_entities), test)
    return train, test


def fit_method(method: str, tensor, labels: LabelSet, params: HyperParams):
    if method == "rescal":
        return fit_rescal(tensor, params)
    if method == "class_rescal":
        return fit_class_rescal(tensor, labels, params)
    raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")


def score_split(
    tensor: SparseRelationTensor,
    labels: LabelSet,
    train: np.ndarray,
    test: np.ndarray,
    params: HyperParams,
    method: str,
):
    """Fit on the training entities, fold in the test entities and rank them.

    Only the labels of ``train`` entities reach the fit; ``labels`` of the
    test entities are read solely to score the ranking.

    Returns ``(model, trace, curve)``.
    """
    train_tensor = tensor.subtensor(train)
    train_labels = labels.restrict(train)
    model, trace = fit_method(method, train_tensor, train_labels, params)
    rows = fold_in(model, FoldInSlices.from_tensor_rows(tensor, test, train), params)
    orientation = orientation_from_labels(factor_scores(model.a), train_labels)
    test_y = labels.as_vector(tensor.n_entities)[test]
    order = order_by_score(factor_scores(rows), orientation)
    return model, trace, precision_recall(test_y[order] == 1)


def evaluate_run(
    tensor: SparseRelationTensor,
    labels: LabelSet,
    train_fraction: float,
    params: HyperParams,
    method: str,
    seed: int,
    run: int = 0,
    keep_model: bool = False,
) -> RunResult:
    rng = np.random.default_rng([seed, 1])
    train, test = split_train_test(labels, tensor.n_entities, train_fraction, rng)
    model, trace, curve = score_split(tensor, labels, train, test, params.replace(seed=seed), method)
    logger.info("%s s=%.2f run %d: AUPR %.4f (%d iterations)", method, train_fraction, run, curve.aupr, trace.iterations)
    return RunResult(
        method=method,
        train_fraction=train_fraction,
        run=run,
        seed=seed,
        aupr=curve.aupr,
        curve=curve,
        train_entities=train,
        test_entities=test,
        model=model if keep_model else None,
        iterations=trace.iterations,
    )


def evaluate(
    tensor: SparseRelationTensor,
    labels: LabelSet,
    split: SplitSpec,
    params: HyperParams,
    method: str = "class_rescal",
    keep_models: bool = False,
) -> EvaluationResult:
    """Repeat :func:`evaluate_run` ``split.n_runs`` times with seeds ``seed + run``."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    result = EvaluationResult(method, split.train_fraction)
    for run in range(split.n_runs):
        result.runs.append(
            evaluate_run(
                tensor, labels, split.train_fraction, params, method, split.seed + run, run, keep_model=keep_models
            )
        )
    return result


def evaluate_fractions(tensor, labels, fractions, n_runs, seed, params, method="class_rescal"):
    return [evaluate(tensor, labels, SplitSpec(s, n_runs, seed), params, method) for s in fractions]


def sweep_factors(tensor, labels, split: SplitSpec, r_values, params: HyperParams, method="class_rescal"):
    """Mean AUPR per factor-matrix rank; returns ``[(r, EvaluationResult), ...]``."""
    return [(int(r), evaluate(tensor, labels, split, params.replace(rank=int(r)), method)) for r in r_values]


def sweep_relations(tensor, labels, split: SplitSpec, m_values, params: HyperParams, method="class_rescal"):
    """Mean AUPR using only the first ``m`` relations; returns ``[(m, EvaluationResult), ...]``."""
    out = []
    for m in m_values:
        m = int(m)
        if not 1 <= m <= tensor.n_relations:
            raise ConfigurationError(f"relation count {m} outside 1..{tensor.n_relations}")
        out.append((m, evaluate(tensor.select_relations(range(m)), labels, split, params, method)))
    return out
