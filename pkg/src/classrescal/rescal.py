"""RESCAL factorization ``T_k ~ A R_k A^T`` fitted by alternating least squares."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError, ShapeError
from .graph_data import SparseRelationTensor
from .linalg import as_dense, kron_normal_solve, solve_ridge, spmm, spmm_t, thin_svd

logger = logging.getLogger(__name__)

# rows of the residual assembled at once when evaluating f
_ROW_BLOCK = 1024


@dataclass(frozen=True)
class HyperParams:
    rank: int = 5
    lambda_a: float = 0.5
    lambda_r: float = 0.5
    lambda_g: float = 0.1
    k_neighbors: int = 5
    epsilon: float = 1e-4
    max_iter: int = 100
    seed: Optional[int] = 0

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")
        for name in ("lambda_a", "lambda_r", "lambda_g"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be a finite value >= 0, got {v}")
        if int(self.k_neighbors) < 1:
            raise ConfigurationError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.max_iter) < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")

    def replace(self, **changes) -> "HyperParams":
        return HyperParams(**{**asdict(self), **changes})


@dataclass
class FactorModel:
    """Entity factors ``a`` (N x r) and one ``r x r`` core per relation."""

    a: np.ndarray
    r_slices: list[np.ndarray]

    def __post_init__(self):
        self.a = as_dense(self.a, "A")
        self.r_slices = [as_dense(r, f"R[{k}]") for k, r in enumerate(self.r_slices)]
        for k, r in enumerate(self.r_slices):
            if r.shape != (self.rank, self.rank):
                raise ShapeError(f"R[{k}] has shape {r.shape}, expected {(self.rank, self.rank)}")

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def n_entities(self) -> int:
        return self.a.shape[0]

    @property
    def n_relations(self) -> int:
        return len(self.r_slices)

    def copy(self) -> "FactorModel":
        return FactorModel(self.a.copy(), [r.copy() for r in self.r_slices])

    def reconstruct(self, k: int) -> np.ndarray:
        return self.a @ self.r_slices[k] @ self.a.T

    def check_conforms(self, tensor: SparseRelationTensor):
        if self.n_entities != tensor.n_entities or self.n_relations != tensor.n_relations:
            raise ShapeError(
                f"model (N={self.n_entities}, M={self.n_relations}) does not match "
                f"tensor (N={tensor.n_entities}, M={tensor.n_relations})"
            )


@dataclass(frozen=True)
class IterationRecord:
    f: float
    g: float
    h: float
    objective: float
    wall_time: float


@dataclass
class FitTrace:
    method: str = "rescal"
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([rec.objective for rec in self.records])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "records": [asdict(rec) for rec in self.records],
        }


def init_model(tensor: SparseRelationTensor, params: HyperParams) -> FactorModel:
    """Seeded uniform ``[0, 1)`` entity factors; cores solved against them."""
    if params.rank > tensor.n_entities:
        raise ConfigurationError(f"rank {params.rank} exceeds number of entities {tensor.n_entities}")
    rng = np.random.default_rng(params.seed)
    a = rng.random((tensor.n_entities, params.rank))
    return FactorModel(a, update_r(tensor, FactorModel(a, []), params))


def objective_f(tensor: SparseRelationTensor, model: FactorModel) -> float:
    """``sum_k ||T_k - A R_k A^T||_F^2``, assembled in row blocks per slice."""
    model.check_conforms(tensor)
    a = model.a
    n = tensor.n_entities
    total = 0.0
    for t, r in zip(tensor.slices, model.r_slices):
        ar = a @ r
        for start in range(0, n, _ROW_BLOCK):
            stop = min(start + _ROW_BLOCK, n)
            resid = ar[start:stop] @ a.T - t[start:stop].toarray()
            total += float(np.einsum("ij,ij->", resid, resid))
    return total


def objective_h(model: FactorModel, params: HyperParams) -> float:
    """``lambda_A ||A||^2 + lambda_R sum_k ||R_k||^2``."""
    return params.lambda_a * float(np.sum(model.a**2)) + params.lambda_r * sum(
        float(np.sum(r**2)) for r in model.r_slices
    )


def a_update_terms(tensor: SparseRelationTensor, model: FactorModel):
    """Numerator ``F = sum_k T_k A R_k^T + T_k^T A R_k`` and gram ``E`` of the A update.

    ``E = sum_k R_k A^T A R_k^T + R_k^T A^T A R_k`` (r x r, symmetric).
    """
    model.check_conforms(tensor)
    a = model.a
    ata = a.T @ a
    f = np.zeros_like(a)
    e = np.zeros((model.rank, model.rank))
    for t, r in zip(tensor.slices, model.r_slices):
        f += spmm(t, a @ r.T) + spmm_t(t, a @ r)
        e += r @ ata @ r.T + r.T @ ata @ r
    return f, e


def right_divide(numerator: np.ndarray, gram: np.ndarray, lam: float) -> np.ndarray:
    """``numerator @ inv(gram + lam I)`` for symmetric ``gram``."""
    return solve_ridge(gram, numerator.T, lam).T


def update_a_unsupervised(tensor, model: FactorModel, params: HyperParams) -> np.ndarray:
    f, e = a_update_terms(tensor, model)
    return right_divide(f, e, params.lambda_a)


def update_r(tensor, model: FactorModel, params: HyperParams) -> list[np.ndarray]:
    """Solve every relation core against the current ``A`` (one SVD shared by all slices)."""
    svd = thin_svd(model.a)
    return [kron_normal_solve(model.a, t, params.lambda_r, svd=svd) for t in tensor.slices]


def _normalizer(tensor) -> float:
    norm = tensor.norm_sq()
    return norm if norm > 0 else 1.0


def run_als(
    tensor: SparseRelationTensor,
    params: HyperParams,
    a_step: Callable[[FactorModel], np.ndarray],
    g_term: Callable[[np.ndarray], float],
    method: str,
):
    """Generic ALS driver: ``A`` step, then all ``R_k``, until the relative
    change of ``(f + g + h) / ||T||^2`` falls below ``epsilon``."""
    model = init_model(tensor, params)
    norm = _normalizer(tensor)
    trace = FitTrace(method=method)
    prev = (objective_f(tensor, model) + g_term(model.a) + objective_h(model, params)) / norm
    start = time.perf_counter()
    for it in range(1, params.max_iter + 1):
        a_new = a_step(model)
        model = FactorModel(a_new, model.r_slices)
        model.r_slices = update_r(tensor, model, params)
        f = objective_f(tensor, model)
        g = g_term(model.a)
        h = objective_h(model, params)
        obj = (f + g + h) / norm
        if not np.isfinite(obj):
            raise DivergenceError(f"objective became non-finite at iteration {it}", iteration=it)
        trace.records.append(IterationRecord(f, g, h, obj, time.perf_counter() - start))
        delta = abs(obj - prev) / max(prev, 1e-12)
        logger.debug("%s iter %d: f=%.6g g=%.6g h=%.6g obj=%.6g delta=%.3g", method, it, f, g, h, obj, delta)
        prev = obj
        if delta < params.epsilon:
            trace.converged = True
            break
    return model, trace


def fit_rescal(tensor: SparseRelationTensor, params: HyperParams):
    """Unsupervised RESCAL-ALS.

    Returns
    -------
    model : FactorModel
    trace : FitTrace
    """
    return run_als(
        tensor,
        params,
        a_step=lambda m: update_a_unsupervised(tensor, m, params),
        g_term=lambda a: 0.0,
        method="rescal",
    )


def save_model(path, model: FactorModel, params: HyperParams | None = None, **meta):
    """Write a model as JSON (``A`` and each ``R_k`` row-major)."""
    payload = {
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "rank": model.rank,
        "a": model.a.tolist(),
        "r": [r.tolist() for r in model.r_slices],
    }
    if params is not None:
        payload["params"] = asdict(params)
    payload.update(meta)
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, payload)``."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    a = np.array(payload["a"], dtype=np.float64).reshape(payload["n_entities"], payload["rank"])
    rs = [np.array(r, dtype=np.float64).reshape(payload["rank"], payload["rank"]) for r in payload["r"]]
    model = FactorModel(a, rs)
    if model.n_relations != payload["n_relations"]:
        raise ShapeError("model file relation count does not match stored cores")
    return model, payload
