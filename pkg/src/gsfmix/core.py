"""Value types: mixing measures, datasets and regularization-path records."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidObservation, NegativeWeight, WeightSumError

WEIGHT_SUM_TOL = 1e-10


def _as_atom_matrix(atoms) -> np.ndarray:
    if isinstance(atoms, np.ndarray):
        arr = np.array(atoms, dtype=float)
    else:
        rows = [np.atleast_1d(np.asarray(a, dtype=float)) for a in atoms]
        if len({r.shape for r in rows}) > 1:
            raise DimensionMismatch("atoms have differing dimensions")
        arr = np.array(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"atoms must form a K x d array, got shape {arr.shape}")
    return arr


def validate_measure(m: "MixingMeasure") -> None:
    """Raise a :class:`MeasureError` subclass unless ``m`` is a valid mixing measure."""
    atoms = _as_atom_matrix(m.atoms)
    weights = np.asarray(m.weights, dtype=float).ravel()
    if atoms.shape[0] < 1:
        raise DimensionMismatch("a mixing measure needs at least one atom")
    if atoms.shape[1] < 1:
        raise DimensionMismatch("atoms must have dimension >= 1")
    if weights.shape[0] != atoms.shape[0]:
        raise DimensionMismatch(f"{weights.shape[0]} weights for {atoms.shape[0]} atoms")
    if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(weights)):
        raise DimensionMismatch("atoms and weights must be finite")
    if np.any(weights < 0):
        raise NegativeWeight(f"negative weight {weights.min():g}")
    total = weights.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumError(f"weights sum to {total!r}")


@dataclass(frozen=True, eq=False)
class MixingMeasure:
    """Finite discrete measure ``sum_j weights[j] * delta(atoms[j])``.

    ``atoms`` is stored as a ``(K, d)`` float array and ``weights`` as ``(K,)``.
    Both arrays are made read-only so instances can be shared freely.
    """

    atoms: np.ndarray
    weights: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        atoms = _as_atom_matrix(self.atoms)
        weights = np.array(self.weights, dtype=float).ravel()
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        if self.check:
            validate_measure(self)

    @property
    def K(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MixingMeasure):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(self.weights, other.weights)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "atoms": self.atoms.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "MixingMeasure":
        return cls(data["atoms"], data["weights"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MixingMeasure":
        return cls.from_dict(json.loads(text))

    def merged(self, fuse_tol: float = 0.0) -> "MixingMeasure":
        """Collapse atoms in the same ``fuse_tol`` class, pooling their weights."""
        labels = fuse_labels(self.atoms, fuse_tol)
        keep = self.weights > 0
        out_atoms, out_w = [], []
        for lab in np.unique(labels[keep]):
            idx = np.flatnonzero((labels == lab) & keep)
            out_atoms.append(self.atoms[idx[0]])
            out_w.append(self.weights[idx].sum())
        w = np.asarray(out_w)
        return MixingMeasure(np.asarray(out_atoms), w / w.sum())


def fuse_labels(atoms: np.ndarray, fuse_tol: float) -> np.ndarray:
    """Single-linkage component labels at threshold ``fuse_tol`` (union-find)."""
    atoms = np.asarray(atoms, dtype=float)
    K = atoms.shape[0]
    parent = list(range(K))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    dist = np.linalg.norm(atoms[:, None, :] - atoms[None, :, :], axis=-1)
    ii, jj = np.nonzero(np.triu(dist <= fuse_tol, k=1))
    for i, j in zip(ii, jj):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(K)])


def effective_order(m: MixingMeasure, fuse_tol: float = 0.0) -> int:
    """Number of distinct atoms carrying positive weight.

    Atoms are identified when connected by a chain of pairwise distances
    ``<= fuse_tol``, so the count does not depend on atom labelling.
    """
    if fuse_tol < 0:
        raise ValueError("fuse_tol must be nonnegative")
    keep = np.asarray(m.weights) > 0
    labels = fuse_labels(np.asarray(m.atoms)[keep], fuse_tol)
    return int(len(np.unique(labels)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n x N`` observation matrix plus kernel-specific constants.

    ``trials`` is the multinomial trial count ``M``; it is ``None`` for
    continuous kernels. An empty dataset (``n == 0``) is allowed as the
    output of sampling zero draws.
    """

    observations: np.ndarray
    trials: int | None = None

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2:
            raise InvalidObservation(f"observations must be 2-D, got shape {obs.shape}")
        if obs.size and not np.all(np.isfinite(obs)):
            raise InvalidObservation("observations contain non-finite values")
        if self.trials is not None:
            M = int(self.trials)
            if M < 1 or M != self.trials:
                raise InvalidObservation(f"trial count must be a positive integer, got {self.trials}")
            if obs.size:
                if np.any(obs < 0) or np.any(obs != np.round(obs)):
                    raise InvalidObservation("multinomial counts must be nonnegative integers")
                sums = obs.sum(axis=1)
                bad = np.flatnonzero(sums != M)
                if bad.size:
                    raise InvalidObservation(f"row {bad[0]} sums to {sums[bad[0]]:g}, expected {M}")
            object.__setattr__(self, "trials", M)
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.trials == other.trials and np.array_equal(self.observations, other.observations)


@dataclass(frozen=True)
class PathRecord:
    lam: float
    measure: MixingMeasure
    order: int
    loglik: float
    bic: float
    converged: bool
    iterations: int
    penalized_loglik: float = float("nan")
    covariance: np.ndarray | None = field(default=None, compare=False)
    error: str | None = None


@dataclass(frozen=True)
class RegularizationPath:
    records: tuple
    kernel_id: str
    n: int
    K_bound: int

    def __post_init__(self):
        recs = tuple(self.records)
        lams = [r.lam for r in recs]
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("path lambdas must be strictly increasing")
        if any(r.measure.K > self.K_bound for r in recs):
            raise ValueError("record has more atoms than K_bound")
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def orders(self) -> list[int]:
        return [r.order for r in self.records]

    def to_csv(self, fh=None) -> str:
        """Write the path in wide format, one row per lambda.

        Columns are ``lambda,order,loglik,bic,converged,iterations`` followed by
        ``theta{j}_{l}`` for every component ``j < K_bound`` and coordinate ``l``.
        Fused components are written out verbatim.
        """
        d = self.records[0].measure.dim if self.records else 0
        header = ["lambda", "order", "loglik", "bic", "converged", "iterations"]
        header += [f"theta{j}_{l}" for j in range(self.K_bound) for l in range(d)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in self.records:
            coords = [repr(float(x)) for x in r.measure.atoms.ravel()]
            coords += [""] * (self.K_bound * d - len(coords))
            w.writerow([repr(float(r.lam)), r.order, repr(float(r.loglik)), repr(float(r.bic)),
                        int(r.converged), r.iterations, *coords])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def read_path_csv(text: str) -> list[dict]:
    """Parse a path CSV produced by :meth:`RegularizationPath.to_csv`."""
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        atoms = {}
        for key, val in row.items():
            if key.startswith("theta") and val != "":
                j, l = key[5:].split("_")
                atoms.setdefault(int(j), {})[int(l)] = float(val)
        out.append({
            "lambda": float(row["lambda"]),
            "order": int(row["order"]),
            "loglik": float(row["loglik"]),
            "bic": float(row["bic"]),
            "converged": bool(int(row["converged"])),
            "iterations": int(row["iterations"]),
            "atoms": [[atoms[j][l] for l in sorted(atoms[j])] for j in sorted(atoms)],
        })
    return out


def as_measure(atoms: Iterable[Sequence[float]], weights: Iterable[float]) -> MixingMeasure:
    return MixingMeasure(np.asarray(list(atoms), dtype=float), np.asarray(list(weights), dtype=float))
