"""Bundle of trained abstraction artifacts with caching.

Everything downstream of discovery (option training, execution, plotting)
reads joint states through this object: quantized representation keys,
eigenvector entries, and the rounded Fermat point. All three are cached per
joint position tuple, which matters in training loops where states repeat.
"""

from __future__ import annotations

import numpy as np

from .fermat import FermatEncoder, rep_values
from .grid import GridSpec, JointState, factorize
from .metric import LearnedDistance
from .spectral import SpectralBasis


class Abstraction:
    def __init__(self, phi: FermatEncoder, dist: LearnedDistance, q: float = 1.0,
                 scalar_mode: bool = False, basis: SpectralBasis | None = None):
        self.phi = phi
        self.dist = dist
        self.q = q
        self.scalar_mode = scalar_mode
        self.basis = basis
        self._rep_cache: dict[tuple, tuple] = {}
        self._fermat_cache: dict[tuple, tuple] = {}
        self._evec_cache: dict[tuple, np.ndarray] = {}

    def rep_and_fermat(self, state: JointState, spec: GridSpec) -> tuple[tuple, tuple]:
        cells = state.agent_cells
        hit = self._rep_cache.get(cells)
        if hit is not None:
            return hit, self._fermat_cache[cells]
        arr = np.asarray([factorize(state, spec)], dtype=np.float64)
        goal = self.phi.encode(arr)[0]
        values = rep_values(arr, self.phi, self.dist)[0]
        if self.scalar_mode:
            values = np.array([values.sum()])
        key = tuple(int(v) for v in np.rint(values / self.q))
        fermat = tuple(float(g) for g in goal)
        self._rep_cache[cells] = key
        self._fermat_cache[cells] = fermat
        return key, fermat

    def rep_key(self, state: JointState, spec: GridSpec) -> tuple:
        return self.rep_and_fermat(state, spec)[0]

    def fermat_point(self, state: JointState, spec: GridSpec) -> tuple:
        return self.rep_and_fermat(state, spec)[1]

    def eigen_values_at(self, state: JointState, spec: GridSpec) -> np.ndarray:
        """Eigenvector entries (all columns) at the state's representation node."""
        if self.basis is None:
            raise ValueError("no spectral basis attached")
        key = self.rep_key(state, spec)
        hit = self._evec_cache.get(key)
        if hit is None:
            hit = self.basis.lookup(key)
            self._evec_cache[key] = hit
        return hit
