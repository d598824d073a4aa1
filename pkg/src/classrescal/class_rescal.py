"""Semi-supervised RESCAL: a k-NN classification error coupled into the A update.

Each ALS iteration first classifies the labeled entities from their current
latent rows (leave-one-out k-NN majority vote among the other labeled rows),
then adds the correction ``lambda_g * (Y - y(A)) 1_r^T`` to the numerator of
the RESCAL A update. Misclassified entities are pushed along the same
direction for all latent coordinates; correctly classified and unlabeled
entities get no correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, ShapeError
from .graph_data import LabelSet, SparseRelationTensor
from .rescal import FactorModel, HyperParams, a_update_terms, right_divide, run_als

# above this many labeled rows neighbor search goes through a kd-tree
EXHAUSTIVE_LIMIT = 50_000
_BLOCK = 512


@dataclass(frozen=True)
class ClassifierOutput:
    predictions: np.ndarray  # length N, in {-1, 0, +1}; 0 for unlabeled
    residual: np.ndarray  # length N, Y - y(A) on labeled entities, else 0

    @property
    def misclassified(self) -> np.ndarray:
        return np.flatnonzero(self.residual)


def _sq_dists(query: np.ndarray, pool: np.ndarray) -> np.ndarray:
    diff = query[:, None, :] - pool[None, :, :]
    return np.sum(diff * diff, axis=2)


def _vote(neighbor_labels: np.ndarray) -> int:
    # neighbor_labels are ordered nearest first; a tied vote falls back to the nearest
    total = int(neighbor_labels.sum())
    if total > 0:
        return 1
    if total < 0:
        return -1
    return int(neighbor_labels[0])


def _neighbors_exhaustive(pts: np.ndarray, k: int) -> np.ndarray:
    """For every row, indices (into ``pts``) of its k nearest other rows.

    Order: ascending squared distance, then ascending index.
    """
    n = len(pts)
    out = np.empty((n, k), dtype=np.int64)
    order_idx = np.arange(n)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        d = _sq_dists(pts[start:stop], pts)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        for row in range(stop - start):
            # lexsort: last key is primary
            ranked = np.lexsort((order_idx, d[row]))
            out[start + row] = ranked[:k]
    return out


def _neighbors_kdtree(pts: np.ndarray, k: int) -> np.ndarray:
    """Same contract as :func:`_neighbors_exhaustive`, using a kd-tree for candidates."""
    tree = cKDTree(pts)
    _, cand = tree.query(pts, k=k + 1)
    out = np.empty((len(pts), k), dtype=np.int64)
    for i in range(len(pts)):
        # pull in every point tied with the k-th candidate so the index tie rule holds
        d = _sq_dists(pts[i : i + 1], pts[cand[i]])[0]
        radius = np.sqrt(d.max()) * (1 + 1e-9) + 1e-300
        ball = np.array(sorted(set(tree.query_ball_point(pts[i], radius)) - {i}), dtype=np.int64)
        d = _sq_dists(pts[i : i + 1], pts[ball])[0]
        out[i] = ball[np.lexsort((ball, d))[:k]]
    return out


def knn_predict(a, labels: LabelSet, k_neighbors: int) -> ClassifierOutput:
    """Leave-one-out k-NN majority vote over the labeled rows of ``a``.

    For each labeled entity the vote uses the ``k_neighbors`` other labeled
    rows closest in Euclidean distance (ties in distance go to the lower
    entity index). A zero vote sum takes the label of the nearest neighbor.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    y = labels.as_vector(n)
    idx = labels.indices()
    if len(idx) < k_neighbors + 1:
        raise ConfigurationError(
            f"k-NN with k={k_neighbors} needs at least {k_neighbors + 1} labeled entities, got {len(idx)}"
        )
    pts = a[idx]
    if len(idx) > EXHAUSTIVE_LIMIT:
        nbrs = _neighbors_kdtree(pts, k_neighbors)
    else:
        nbrs = _neighbors_exhaustive(pts, k_neighbors)
    pool_labels = y[idx]
    predictions = np.zeros(n, dtype=np.int64)
    for row, i in enumerate(idx):
        predictions[i] = _vote(pool_labels[nbrs[row]])
    residual = np.zeros(n, dtype=np.int64)
    residual[idx] = y[idx] - predictions[idx]
    return ClassifierOutput(predictions, residual)


def objective_g(output: ClassifierOutput, params: HyperParams) -> float:
    """``lambda_g * ||Y - y(A)||^2`` over labeled entities."""
    return params.lambda_g * float(np.sum(output.residual.astype(np.float64) ** 2))


def classification_correction(output: ClassifierOutput, params: HyperParams, rank: int) -> np.ndarray:
    """``lambda_g * residual 1_r^T`` (N x r)."""
    return params.lambda_g * np.outer(output.residual.astype(np.float64), np.ones(rank))


def update_a_supervised(
    tensor: SparseRelationTensor,
    model: FactorModel,
    labels: LabelSet,
    params: HyperParams,
    output: ClassifierOutput | None = None,
) -> np.ndarray:
    """RESCAL A update with the classification correction added to the numerator.

    ``output`` is the classifier result on ``model.a``; it is computed here
    when not supplied.
    """
    f, e = a_update_terms(tensor, model)
    if params.lambda_g != 0:
        if output is None:
            output = knn_predict(model.a, labels, params.k_neighbors)
        if output.residual.shape != (model.n_entities,):
            raise ShapeError("classifier output does not match model size")
        if np.any(output.residual):
            f = f + classification_correction(output, params, model.rank)
    return right_divide(f, e, params.lambda_a)


def fit_class_rescal(tensor: SparseRelationTensor, labels: LabelSet, params: HyperParams):
    """Fit CLASS-RESCAL: classify, update A, update every R_k; repeat.

    Returns
    -------
    model : FactorModel
    trace : FitTrace
        Per-iteration ``f``, ``g``, ``h`` and normalized objective.
    """
    if params.lambda_g == 0:
        # the classifier cannot influence anything; skip it entirely
        return run_als(
            tensor,
            params,
            a_step=lambda m: update_a_supervised(tensor, m, labels, params),
            g_term=lambda a: 0.0,
            method="class_rescal",
        )
    if len(labels) == 0:
        raise ConfigurationError("CLASS-RESCAL needs at least one label")
    if labels.indices().max() >= tensor.n_entities:
        raise ShapeError("label index outside tensor")

    # the objective after iteration t and the classifier step of iteration t+1
    # both need y(A) on the same A; compute it once
    cache: dict = {}

    def classify(a):
        if cache.get("a") is not a:
            cache["a"] = a
            cache["out"] = knn_predict(a, labels, params.k_neighbors)
        return cache["out"]

    return run_als(
        tensor,
        params,
        a_step=lambda m: update_a_supervised(tensor, m, labels, params, output=classify(m.a)),
        g_term=lambda a: objective_g(classify(a), params),
        method="class_rescal",
    )
