"""Projection of unseen entities into a trained model, and factor-score ranking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError
from .graph_data import LabelSet
from .rescal import FactorModel, HyperParams, right_divide


@dataclass(frozen=True)
class FoldInSlices:
    """Links between new entities and the model's existing entities.

    ``out_links[k]`` is ``n_new x N`` (new -> existing under relation k) and
    ``in_links[k]`` is ``N x n_new`` (existing -> new). Links among the new
    entities themselves are not represented.
    """

    out_links: tuple
    in_links: tuple

    def __post_init__(self):
        outs = tuple(sp.csr_matrix(m, dtype=np.float64) for m in self.out_links)
        ins = tuple(sp.csr_matrix(m, dtype=np.float64) for m in self.in_links)
        if len(outs) != len(ins):
            raise ShapeError("out_links and in_links must cover the same relations")
        if outs:
            n_new, n_old = outs[0].shape
            for o, i in zip(outs, ins):
                if o.shape != (n_new, n_old) or i.shape != (n_old, n_new):
                    raise ShapeError("inconsistent fold-in slice shapes")
        object.__setattr__(self, "out_links", outs)
        object.__setattr__(self, "in_links", ins)

    @property
    def n_new(self) -> int:
        return self.out_links[0].shape[0] if self.out_links else 0

    @property
    def n_existing(self) -> int:
        return self.out_links[0].shape[1] if self.out_links else 0

    @classmethod
    def from_tensor_rows(cls, tensor, new: Sequence[int], existing: Sequence[int]):
        """Links of entities ``new`` toward entities ``existing`` inside ``tensor``."""
        new = np.asarray(new, dtype=np.int64)
        existing = np.asarray(existing, dtype=np.int64)
        return cls(
            tuple(s[new][:, existing] for s in tensor.slices),
            tuple(s[existing][:, new] for s in tensor.slices),
        )

    @classmethod
    def from_triples(cls, triples, n_new: int, n_existing: int, n_relations: int):
        """Build from ``(new_idx, k, existing_idx, outgoing)`` tuples."""
        outs = [sp.lil_matrix((n_new, n_existing)) for _ in range(n_relations)]
        ins = [sp.lil_matrix((n_existing, n_new)) for _ in range(n_relations)]
        for new_idx, k, old_idx, outgoing in triples:
            if outgoing:
                outs[k][new_idx, old_idx] = 1.0
            else:
                ins[k][old_idx, new_idx] = 1.0
        return cls(tuple(outs), tuple(ins))


def fold_in(model: FactorModel, new: FoldInSlices, params: HyperParams) -> np.ndarray:
    """Latent rows (``n_new x r``) for new entities; the model is not modified.

    Each row is ``[sum_k t_out A R_k^T + t_in^T A R_k] [E + lambda_A I]^-1``
    with ``E`` the gram of the A update built from the trained ``A`` and ``R``.
    """
    if len(new.out_links) != model.n_relations:
        raise ShapeError(f"fold-in covers {len(new.out_links)} relations, model has {model.n_relations}")
    if new.n_existing != model.n_entities:
        raise ShapeError(f"fold-in links address {new.n_existing} entities, model has {model.n_entities}")
    a = model.a
    ata = a.T @ a
    numer = np.zeros((new.n_new, model.rank))
    gram = np.zeros((model.rank, model.rank))
    for out, inn, r in zip(new.out_links, new.in_links, model.r_slices):
        numer += np.asarray(out @ (a @ r.T)) + np.asarray(inn.T @ (a @ r))
        gram += r @ ata @ r.T + r.T @ ata @ r
    return right_divide(numer, gram, params.lambda_a)


@dataclass(frozen=True)
class RankingResult:
    scores: np.ndarray
    orientation: int
    order: np.ndarray

    def ranks(self) -> np.ndarray:
        """1-based rank of every entity."""
        out = np.empty(len(self.order), dtype=np.int64)
        out[self.order] = np.arange(1, len(self.order) + 1)
        return out


def factor_scores(a) -> np.ndarray:
    """Mean of each row of the factor matrix."""
    a = np.asarray(a, dtype=np.float64)
    return a.sum(axis=1) / a.shape[1]


def orientation_from_labels(scores, labels: LabelSet) -> int:
    """+1 if positives score at least as high as negatives on average, else -1."""
    pos = labels.class_members(1)
    neg = labels.class_members(-1)
    if len(pos) == 0 or len(neg) == 0:
        return 1
    scores = np.asarray(scores)
    return 1 if scores[pos].mean() >= scores[neg].mean() else -1


def order_by_score(scores, orientation: int = 1) -> np.ndarray:
    """Indices sorted by ``orientation * score`` descending, ties by index."""
    oriented = orientation * np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(oriented)), -oriented))


def rank_entities(a, train_labels: LabelSet | None = None, orientation: int | None = None) -> RankingResult:
    """Rank the rows of ``a`` by mean factor score.

    The score sign is arbitrary after factorization, so the direction is
    fixed against ``train_labels`` (indices into ``a``) unless
    ``orientation`` is given explicitly.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ShapeError("need a nonempty 2-D factor matrix")
    scores = factor_scores(a)
    if orientation is None:
        orientation = orientation_from_labels(scores, train_labels or LabelSet())
    if orientation not in (-1, 1):
        raise ValueError("orientation must be -1 or +1")
    return RankingResult(scores, orientation, order_by_score(scores, orientation))
