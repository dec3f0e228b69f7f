"""Abstract transition graph and Laplacian eigenbasis.

Nodes are the distinct quantized relative representations observed in a
dataset (or raw joint position tuples in the ablation mode); an undirected,
unweighted edge joins every observed transition between distinct nodes. The
combinatorial Laplacian L = D - A of the largest connected component is
densely eigendecomposed (numpy's symmetric solver), eigenvalues ascending,
each eigenvector's largest-magnitude entry normalized positive. Residual and
orthonormality bounds are checked at build time, so a returned basis is
always certified.

Lookups map a representation to its node's eigenvector entries; unseen
representations fall back to the nearest node in L1, ties to the lowest node
index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TransitionDataset
from .errors import GraphError, SpectralError
from .fermat import FermatEncoder, rep_values
from .grid import factorize
from .metric import LearnedDistance

RESIDUAL_TOL = 1e-6


@dataclass
class AbstractGraph:
    node_index: dict[tuple, int]
    adjacency: np.ndarray           # (n, n) 0/1 symmetric, zero diagonal
    counts: np.ndarray              # observed transition counts per edge
    mode: str                       # "relative" | "raw" | "relative-scalar"

    @property
    def n_nodes(self) -> int:
        return len(self.node_index)

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def laplacian(self, weighted: bool = False) -> np.ndarray:
        a = self.counts if weighted else self.adjacency
        a = np.asarray(a, dtype=np.float64)
        return np.diag(a.sum(axis=1)) - a


def _state_reps(dataset: TransitionDataset, phi: FermatEncoder, dist: LearnedDistance,
                q: float, scalar_mode: bool):
    """Quantized rep key per transition endpoint: (keys_cur, keys_next)."""
    spec = dataset.spec
    uniq: dict[tuple, int] = {}
    rows = []
    for tr in dataset.transitions:
        for st in (tr.state, tr.next_state):
            k = st.agent_cells
            if k not in uniq:
                uniq[k] = len(rows)
                rows.append(factorize(st, spec))
    arr = np.asarray(rows, dtype=np.float64)
    values = rep_values(arr, phi, dist)          # (U, F)
    if scalar_mode:
        values = values.sum(axis=1, keepdims=True)
    quant = np.rint(values / q).astype(int)
    table = {cells: tuple(int(v) for v in quant[i]) for cells, i in uniq.items()}
    cur = [table[tr.state.agent_cells] for tr in dataset.transitions]
    nxt = [table[tr.next_state.agent_cells] for tr in dataset.transitions]
    return cur, nxt


def build_graph(dataset: TransitionDataset, phi: FermatEncoder | None,
                dist: LearnedDistance | None, q: float = 1.0,
                mode: str = "relative", symmetrize: bool = False) -> AbstractGraph:
    """Graph over abstract nodes; `mode` is "relative", "relative-scalar" or "raw".

    With `symmetrize`, every relative-mode transition is mirrored through the
    channel swap (z_0, z_1) -> (z_1, z_0). Only valid when the environment is
    exactly exchange-symmetric in the two features (square empty grid,
    homogeneous agents): the mirror of an observed transition is then itself a
    realizable transition, and the symmetry removes sampling skew from the
    low eigenvectors.
    """
    if len(dataset) == 0:
        raise GraphError("empty dataset")
    if mode == "raw":
        cur = [tr.state.agent_cells for tr in dataset.transitions]
        nxt = [tr.next_state.agent_cells for tr in dataset.transitions]
    elif mode in ("relative", "relative-scalar"):
        if phi is None or dist is None:
            raise GraphError("relative modes need trained abstraction artifacts")
        cur, nxt = _state_reps(dataset, phi, dist, q, mode == "relative-scalar")
        if symmetrize:
            if mode != "relative":
                raise GraphError("symmetrize applies to the relative mode only")
            cur = cur + [k[::-1] for k in cur]
            nxt = nxt + [k[::-1] for k in nxt]
    else:
        raise GraphError(f"unknown graph mode {mode!r}")

    node_index: dict[tuple, int] = {}
    for k in cur + nxt:
        if k not in node_index:
            node_index[k] = len(node_index)
    n = len(node_index)
    adjacency = np.zeros((n, n), dtype=np.int64)
    counts = np.zeros((n, n), dtype=np.int64)
    for a, b in zip(cur, nxt):
        ia, ib = node_index[a], node_index[b]
        if ia == ib:
            continue  # self-transitions dropped
        adjacency[ia, ib] = adjacency[ib, ia] = 1
        counts[ia, ib] += 1
        counts[ib, ia] += 1
    return AbstractGraph(node_index=node_index, adjacency=adjacency, counts=counts, mode=mode)


def _components(adjacency: np.ndarray) -> list[list[int]]:
    n = len(adjacency)
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for v in np.nonzero(adjacency[u])[0]:
                    if not seen[v]:
                        seen[v] = True
                        comp.append(int(v))
                        nxt.append(int(v))
            frontier = nxt
        comps.append(comp)
    return comps


@dataclass
class SpectralBasis:
    eigenvalues: np.ndarray         # (k_max + 1,) ascending, includes trivial
    eigenvectors: np.ndarray        # (n_nodes, k_max + 1) column-orthonormal
    node_index: dict[tuple, int]    # node key -> row (component nodes only)
    mode: str
    component_fraction: float       # |largest component| / |graph|

    @property
    def n_nontrivial(self) -> int:
        return self.eigenvectors.shape[1] - 1

    def node_matrix(self) -> np.ndarray:
        keys = sorted(self.node_index, key=self.node_index.get)
        return np.asarray(keys, dtype=np.float64)

    def lookup(self, rep_key: tuple) -> np.ndarray:
        """Eigenvector entries for a representation; nearest node in L1 if unseen."""
        idx = self.node_index.get(tuple(rep_key))
        if idx is None:
            nodes = self.node_matrix()
            d = np.abs(nodes - np.asarray(rep_key, dtype=np.float64)).sum(axis=1)
            idx = int(np.argmin(d))  # first minimum = lowest node index on ties
        return self.eigenvectors[idx]


def eigendecompose(graph: AbstractGraph, k_max: int, weighted: bool = False) -> SpectralBasis:
    """First k_max+1 eigenpairs of the component Laplacian, ascending."""
    comps = _components(graph.adjacency)
    comps.sort(key=len, reverse=True)
    comp = sorted(comps[0])
    frac = len(comp) / graph.n_nodes
    if k_max + 1 > len(comp):
        raise SpectralError(f"k_max={k_max} needs more nodes than component size {len(comp)}")
    keys_by_idx = {i: k for k, i in graph.node_index.items()}
    sub_keys = [keys_by_idx[i] for i in comp]
    a = graph.counts if weighted else graph.adjacency
    sub = np.asarray(a, dtype=np.float64)[np.ix_(comp, comp)]
    lap = np.diag(sub.sum(axis=1)) - sub
    vals, vecs = np.linalg.eigh(lap)
    vals = vals[: k_max + 1].copy()
    vecs = vecs[:, : k_max + 1].copy()
    vals[np.abs(vals) < 1e-12] = 0.0
    # sign convention: largest-magnitude entry positive
    for k in range(vecs.shape[1]):
        j = int(np.argmax(np.abs(vecs[:, k])))
        if vecs[j, k] < 0:
            vecs[:, k] = -vecs[:, k]
    basis = SpectralBasis(
        eigenvalues=vals,
        eigenvectors=vecs,
        node_index={k: i for i, k in enumerate(sub_keys)},
        mode=graph.mode,
        component_fraction=frac,
    )
    _certify(lap, basis)
    return basis


def _certify(lap: np.ndarray, basis: SpectralBasis) -> None:
    v, e = basis.eigenvalues, basis.eigenvectors
    residual = np.abs(lap @ e - e * v[None, :]).max()
    gram = e.T @ e
    ortho = np.abs(gram - np.eye(len(v))).max()
    if residual > RESIDUAL_TOL or ortho > RESIDUAL_TOL:
        raise SpectralError(f"basis certification failed: residual={residual:.2e} ortho={ortho:.2e}")
    if not np.all(np.diff(v) >= -1e-12):
        raise SpectralError("eigenvalues not ascending")
    if abs(v[0]) > 1e-9 or e[:, 0].std() > 1e-9:
        raise SpectralError("missing trivial eigenpair")


def eigenvalue_lookup(basis: SpectralBasis, rep_key: tuple) -> np.ndarray:
    return basis.lookup(rep_key)


def responsiveness_probe(field_a: np.ndarray, field_b: np.ndarray) -> float:
    """Normalized L2 distance between two unit-normalized eigenvector fields."""
    a = field_a.reshape(-1).astype(np.float64)
    b = field_b.reshape(-1).astype(np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.linalg.norm(a / na - b / nb))
