"""Cluster orderings of atoms in R^d.

An ordering is a permutation visiting the atoms so that every tight group of
atoms (a cluster partition block) is traversed consecutively. The greedy
nearest-neighbour chain has this property; its starting point is chosen among
the two endpoints of the diameter pair, keeping whichever chain is shorter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._fast import nn_chain
from .errors import InvalidPartition

MAX_ATOMS = 64
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class ClusterOrdering:
    perm: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=int)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise ValueError("ordering must be a permutation of 0..K-1")
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)

    def __len__(self):
        return self.perm.size

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv


def pairwise_distances(atoms: np.ndarray) -> np.ndarray:
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    diff = atoms[:, None, :] - atoms[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def nn_chain_ordering(atoms) -> ClusterOrdering:
    """Greedy nearest-neighbour chain from the better diameter endpoint.

    Ties in the nearest-neighbour step go to the smallest index. When both
    chains have equal length (always the case on the real line) the chain
    starting from the lexicographically smallest endpoint is used, which is
    label-invariant and gives ascending order in one dimension.
    """
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    K = atoms.shape[0]
    if K > MAX_ATOMS:
        raise ValueError(f"at most {MAX_ATOMS} atoms are supported, got {K}")
    return ClusterOrdering(nn_chain(np.ascontiguousarray(atoms), TIE_RTOL))


def consecutive_differences(atoms, ordering: ClusterOrdering) -> np.ndarray:
    """``(K-1, d)`` array of ``atoms[perm[j+1]] - atoms[perm[j]]``."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    ordered = atoms[ordering.perm]
    return np.diff(ordered, axis=0)


def is_cluster_partition(atoms, partition: Sequence[Sequence[int]]) -> bool:
    """Whether every block is tighter internally than its distance to the rest."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    K = atoms.shape[0]
    blocks = [sorted(set(int(i) for i in b)) for b in partition]
    flat = [i for b in blocks for i in b]
    if any(not b for b in blocks) or sorted(flat) != list(range(K)):
        raise InvalidPartition("partition must cover 0..K-1 with disjoint nonempty blocks")
    dist = pairwise_distances(atoms)
    for b in blocks:
        inside = np.zeros(K, dtype=bool)
        inside[b] = True
        if inside.all():
            continue
        intra = dist[np.ix_(inside, inside)].max()
        inter = dist[np.ix_(inside, ~inside)].min()
        if not intra < inter:
            return False
    return True
