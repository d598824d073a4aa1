"""Multi-relational graph ingestion.

Triples ``(object, relation, subject)`` are stored as a binary adjacency
tensor of shape ``N x N x M``: one sparse CSR slice per relation, where
``T[i, j, k] = 1`` iff entity ``i`` relates to entity ``j`` under relation
``k``. Entity and relation ids are assigned dense indices in order of first
appearance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyInputError, ParseError, ShapeError, SizeError

logger = logging.getLogger(__name__)

POSITIVE_TOKENS = frozenset({"+1", "1"})
NEGATIVE_TOKENS = frozenset({"-1"})


class EntityIndex:
    """Bijection between external string ids and dense indices ``0..n-1``."""

    def __init__(self, ids: Iterable[str] = ()):
        self._ids: list[str] = []
        self._lookup: dict[str, int] = {}
        for ext in ids:
            if ext in self._lookup:
                raise ValueError(f"duplicate id {ext!r}")
            self.add(ext)

    def add(self, ext: str) -> int:
        """Return the index of ``ext``, assigning the next free one if new."""
        idx = self._lookup.get(ext)
        if idx is None:
            idx = len(self._ids)
            self._lookup[ext] = idx
            self._ids.append(ext)
        return idx

    def __len__(self):
        return len(self._ids)

    def __contains__(self, ext):
        return ext in self._lookup

    def __getitem__(self, ext: str) -> int:
        return self._lookup[ext]

    def get(self, ext, default=None):
        return self._lookup.get(ext, default)

    def id_of(self, idx: int) -> str:
        return self._ids[idx]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def subset(self, indices: Sequence[int]) -> "EntityIndex":
        return EntityIndex(self._ids[i] for i in indices)

    def __eq__(self, other):
        if not isinstance(other, EntityIndex):
            return NotImplemented
        return self._ids == other._ids

    def __repr__(self):
        return f"EntityIndex(n={len(self)})"


class SparseRelationTensor:
    """Binary adjacency tensor stored as ``M`` sparse ``N x N`` CSR slices.

    Parameters
    ----------
    slices : sequence of sparse matrices
        One square matrix per relation.
    binary : bool, default True
        Enforce that every stored entry equals one. Only real-valued test
        fixtures should ever pass ``False``.
    """

    def __init__(self, slices: Sequence[sp.spmatrix], binary: bool = True):
        if len(slices) == 0:
            raise ShapeError("tensor needs at least one relation slice")
        n = slices[0].shape[0]
        clean = []
        for k, s in enumerate(slices):
            if s.shape != (n, n):
                raise ShapeError(f"slice {k} has shape {s.shape}, expected {(n, n)}")
            s = sp.csr_matrix(s, dtype=np.float64)
            s.sum_duplicates()
            s.eliminate_zeros()
            s.sort_indices()
            if binary and s.nnz and not np.all(s.data == 1.0):
                raise ValueError(f"slice {k} has non-binary entries")
            if not np.all(np.isfinite(s.data)):
                raise ValueError(f"slice {k} has non-finite entries")
            clean.append(s)
        self.slices: tuple[sp.csr_matrix, ...] = tuple(clean)
        self.binary = binary

    @classmethod
    def from_index_triples(cls, triples, n_entities: int, n_relations: int):
        """Build from ``(i, k, j)`` integer triples; duplicates collapse to one."""
        if n_relations < 1:
            raise ShapeError("n_relations must be >= 1")
        arr = np.asarray(list(triples), dtype=np.int64).reshape(-1, 3)
        if arr.size:
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= n_entities:
                raise ShapeError("entity index out of range")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= n_relations:
                raise ShapeError("relation index out of range")
        slices = []
        for k in range(n_relations):
            sel = arr[arr[:, 1] == k]
            m = sp.coo_matrix(
                (np.ones(len(sel)), (sel[:, 0], sel[:, 2])),
                shape=(n_entities, n_entities),
            ).tocsr()
            # binary: (i, k, j) stored once regardless of repeats
            m.sum_duplicates()
            m.data[:] = 1.0
            slices.append(m)
        return cls(slices)

    @classmethod
    def from_dense(cls, array, binary: bool = True):
        """Build from a dense ``N x N x M`` array."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3 or array.shape[0] != array.shape[1]:
            raise ShapeError(f"expected N x N x M array, got {array.shape}")
        return cls([sp.csr_matrix(array[:, :, k]) for k in range(array.shape[2])], binary=binary)

    @property
    def n_entities(self) -> int:
        return self.slices[0].shape[0]

    @property
    def n_relations(self) -> int:
        return len(self.slices)

    @property
    def shape(self):
        return (self.n_entities, self.n_entities, self.n_relations)

    @property
    def nnz(self) -> int:
        return sum(s.nnz for s in self.slices)

    def norm_sq(self) -> float:
        """Squared Frobenius norm (equals ``nnz`` for binary tensors)."""
        return float(sum(np.dot(s.data, s.data) for s in self.slices))

    def degrees(self) -> np.ndarray:
        """In-degree plus out-degree of every entity, summed over relations."""
        deg = np.zeros(self.n_entities, dtype=np.int64)
        for s in self.slices:
            deg += np.diff(s.indptr)
            deg += np.bincount(s.indices, minlength=self.n_entities)
        return deg

    def triples(self) -> np.ndarray:
        """All stored entries as an ``(nnz, 3)`` array of ``(i, k, j)``."""
        rows = []
        for k, s in enumerate(self.slices):
            c = s.tocoo()
            rows.append(np.column_stack([c.row, np.full(c.nnz, k), c.col]))
        return np.vstack(rows).astype(np.int64) if rows else np.zeros((0, 3), np.int64)

    def subtensor(self, entities: Sequence[int]) -> "SparseRelationTensor":
        """Induced subtensor on ``entities`` (in the given order)."""
        idx = np.asarray(entities, dtype=np.int64)
        return SparseRelationTensor([s[idx][:, idx] for s in self.slices], binary=self.binary)

    def select_relations(self, relations: Sequence[int]) -> "SparseRelationTensor":
        return SparseRelationTensor([self.slices[k] for k in relations], binary=self.binary)

    def to_dense(self) -> np.ndarray:
        return np.stack([s.toarray() for s in self.slices], axis=2)

    def __eq__(self, other):
        if not isinstance(other, SparseRelationTensor):
            return NotImplemented
        if self.shape != other.shape:
            return False
        return all((a != b).nnz == 0 for a, b in zip(self.slices, other.slices))

    def __repr__(self):
        n, _, m = self.shape
        return f"SparseRelationTensor(N={n}, M={m}, nnz={self.nnz})"


@dataclass(frozen=True)
class LabelSet:
    """Partial labels in ``{-1, +1}`` keyed by dense entity index."""

    entries: Mapping[int, int] = field(default_factory=dict)
    skipped_ids: tuple[str, ...] = ()

    def __post_init__(self):
        entries = {int(i): int(y) for i, y in self.entries.items()}
        for i, y in entries.items():
            if y not in (-1, 1):
                raise ValueError(f"label for entity {i} must be -1 or +1, got {y}")
            if i < 0:
                raise ValueError(f"negative entity index {i}")
        object.__setattr__(self, "entries", dict(sorted(entries.items())))

    @property
    def positive_count(self) -> int:
        return sum(1 for y in self.entries.values() if y == 1)

    @property
    def negative_count(self) -> int:
        return sum(1 for y in self.entries.values() if y == -1)

    def __len__(self):
        return len(self.entries)

    def indices(self) -> np.ndarray:
        return np.fromiter(self.entries.keys(), dtype=np.int64, count=len(self.entries))

    def values(self) -> np.ndarray:
        return np.fromiter(self.entries.values(), dtype=np.int64, count=len(self.entries))

    def class_members(self, label: int) -> np.ndarray:
        return np.array([i for i, y in self.entries.items() if y == label], dtype=np.int64)

    def as_vector(self, n_entities: int) -> np.ndarray:
        """Dense length-N vector with 0 at unlabeled entities."""
        y = np.zeros(n_entities, dtype=np.int64)
        if self.entries:
            idx = self.indices()
            if idx.max() >= n_entities:
                raise ShapeError(f"labeled index {idx.max()} >= n_entities={n_entities}")
            y[idx] = self.values()
        return y

    def restrict(self, indices: Sequence[int]) -> "LabelSet":
        """Relabel onto the positions of ``indices`` (dropping the rest)."""
        out = {}
        for new, old in enumerate(indices):
            y = self.entries.get(int(old))
            if y is not None:
                out[new] = y
        return LabelSet(out)


def _split(line: str, delimiter):
    return line.split(delimiter) if delimiter is not None else line.split()


def load_triples(path, delimiter: str | None = "\t", comment: str = "#"):
    """Read a triple file into a tensor.

    Each non-blank line holds ``src, rel, dst`` separated by ``delimiter``
    (``None`` splits on any whitespace). Lines starting with ``comment``
    are ignored.

    Returns
    -------
    tensor : SparseRelationTensor
    entities : EntityIndex
    relations : EntityIndex
    """
    path = Path(path)
    entities, relations = EntityIndex(), EntityIndex()
    triples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith(comment):
                continue
            parts = [p.strip() for p in _split(line, delimiter)]
            if len(parts) != 3 or not all(parts):
                raise ParseError(
                    f"expected 3 fields (src, rel, dst), got {len(parts)}: {line!r}",
                    path=path,
                    line_number=lineno,
                )
            src, rel, dst = parts
            i = entities.add(src)
            k = relations.add(rel)
            j = entities.add(dst)
            triples.append((i, k, j))
    if not triples:
        raise EmptyInputError(f"{path}: no triples found")
    tensor = SparseRelationTensor.from_index_triples(triples, len(entities), len(relations))
    logger.info("loaded %s from %s", tensor, path)
    return tensor, entities, relations


def write_triples(path, tensor: SparseRelationTensor, entities: EntityIndex, relations: EntityIndex):
    """Write ``tensor`` as a tab-separated triple file (slice-major, row-major order)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for i, k, j in tensor.triples():
            fh.write(f"{entities.id_of(i)}\t{relations.id_of(k)}\t{entities.id_of(j)}\n")


def parse_label(token: str) -> int:
    if token in POSITIVE_TOKENS:
        return 1
    if token in NEGATIVE_TOKENS:
        return -1
    raise ValueError(f"label must be +1 or -1, got {token!r}")


def load_labels(path, index: EntityIndex, delimiter: str | None = None, comment: str = "#") -> LabelSet:
    """Read ``id label`` lines; ids missing from ``index`` land in ``skipped_ids``."""
    path = Path(path)
    entries: dict[int, int] = {}
    skipped: list[str] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith(comment):
                continue
            parts = [p.strip() for p in _split(line, delimiter)]
            if len(parts) != 2:
                raise ParseError(f"expected 2 fields (id, label): {line!r}", path=path, line_number=lineno)
            ext, token = parts
            try:
                y = parse_label(token)
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line_number=lineno) from None
            idx = index.get(ext)
            if idx is None:
                skipped.append(ext)
                continue
            entries[idx] = y
    if skipped:
        logger.warning("%s: %d labeled ids not present in the graph", path, len(skipped))
    return LabelSet(entries, skipped_ids=tuple(skipped))


def write_labels(path, labels: LabelSet, entities: EntityIndex):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for i, y in labels.entries.items():
            fh.write(f"{entities.id_of(i)}\t{'+1' if y > 0 else '-1'}\n")


def save_index(path, entities: EntityIndex, relations: EntityIndex):
    """Persist the entity and relation orderings as a JSON sidecar."""
    payload = {"entities": list(entities.ids), "relations": list(relations.ids)}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_index(path) -> tuple[EntityIndex, EntityIndex]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return EntityIndex(payload["entities"]), EntityIndex(payload["relations"])


def balanced_subsample(
    tensor: SparseRelationTensor,
    labels: LabelSet,
    n_per_class: int,
    seed=None,
    entities: EntityIndex | None = None,
):
    """Sample ``n_per_class`` entities of each label and keep interactions among them.

    Sampled entities left without any in- or out-edge in the induced
    tensor are discarded.

    Returns
    -------
    tensor : SparseRelationTensor
    entities : EntityIndex
        Ids of the surviving entities; numeric strings of the original
        indices when no ``entities`` index was supplied.
    labels : LabelSet
    """
    pos = labels.class_members(1)
    neg = labels.class_members(-1)
    if len(pos) < n_per_class or len(neg) < n_per_class:
        raise SizeError(
            f"need {n_per_class} entities per class, have {len(pos)} positive and {len(neg)} negative"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(
        np.concatenate(
            [rng.choice(pos, n_per_class, replace=False), rng.choice(neg, n_per_class, replace=False)]
        )
    )
    sub = tensor.subtensor(chosen)
    keep = chosen[sub.degrees() > 0]
    if len(keep) == 0:
        raise SizeError("every sampled entity is isolated in the induced tensor")
    out_tensor = tensor.subtensor(keep)
    if entities is None:
        out_index = EntityIndex(str(i) for i in keep)
    else:
        out_index = entities.subset(keep)
    return out_tensor, out_index, labels.restrict(keep)
