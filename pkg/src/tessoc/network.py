"""Thermal resistance network and the state-dependent system matrices.

The control-volume lattice is treated as a weighted undirected graph:
vertices are cells, edges carry the series thermal resistance between
adjacent cells. Fluid cells exchange heat with the plate by convection
and with each other only by advection, so there are no fluid-fluid
edges. From the graph we assemble the Laplacian L(x) [W/K], the diagonal
capacitance matrix M(x) [J/K], the drift matrix A(x) = -M^-1 L [1/s] and
the advection input column B(x), plus the binary sensor map C.

Matrices are dense; the estimation grid has ~21 cells and clarity beats
sparse machinery at that size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .discretize import matrix_exponential
from .errors import InvalidConfigError, InvalidInputError, NumericalError
from .materials import (
    CellRole,
    FluidParams,
    GridSpec,
    PcmThermalParams,
    effective_specific_heat,
)

KappaFn = Callable[[np.ndarray], np.ndarray]
"""Optional map from CPCM cell temperatures [K] to conductivities [W/(m*K)]."""


@dataclass(frozen=True)
class ThermalGraph:
    """Weighted undirected graph of control volumes.

    Each edge (i, j) is stored once with i < j and carries the two series
    half-resistances: ``r_i`` attributed to endpoint i and ``r_j`` to
    endpoint j, both in K/W. The edge weight used in the Laplacian is
    ``1 / (r_i + r_j)``.
    """

    n: int
    edge_i: np.ndarray
    edge_j: np.ndarray
    r_i: np.ndarray
    r_j: np.ndarray

    def __post_init__(self):
        for name in ("edge_i", "edge_j", "r_i", "r_j"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (len(self.edge_i) == len(self.edge_j) == len(self.r_i) == len(self.r_j)):
            raise InvalidInputError("edge arrays must have equal length")
        if np.any(self.edge_i >= self.edge_j):
            raise InvalidInputError("edges must be stored with i < j")
        resist = np.concatenate([self.r_i, self.r_j]) if len(self.r_i) else np.empty(0)
        if resist.size and not (np.all(np.isfinite(resist)) and np.all(resist > 0.0)):
            raise InvalidInputError("edge resistances must be finite and positive")

    @property
    def n_edges(self) -> int:
        return len(self.edge_i)

    @property
    def weights(self) -> np.ndarray:
        """Edge conductances 1/(r_i + r_j) [W/K]."""
        return 1.0 / (self.r_i + self.r_j)

    def adjacency(self, j: int) -> list[int]:
        out = [int(b) for a, b in zip(self.edge_i, self.edge_j) if a == j]
        out += [int(a) for a, b in zip(self.edge_i, self.edge_j) if b == j]
        return sorted(out)

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        neighbors: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in zip(self.edge_i, self.edge_j):
            neighbors[a].append(int(b))
            neighbors[b].append(int(a))
        seen = np.zeros(self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in neighbors[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        return bool(seen.all())


def _boundary_geometry(i: int, j: int, grid: GridSpec) -> tuple[float, float]:
    """Boundary area [m^2] and center distance [m] for lattice-adjacent cells."""
    ix_i, iy_i = grid.cell_coords(i)
    ix_j, iy_j = grid.cell_coords(j)
    if iy_i == iy_j and abs(ix_i - ix_j) == 1:
        return grid.dy[iy_i] * grid.dz, grid.dx
    if ix_i == ix_j and abs(iy_i - iy_j) == 1:
        return grid.dx * grid.dz, 0.5 * (grid.dy[iy_i] + grid.dy[iy_j])
    raise InvalidInputError(f"cells {i} and {j} are not adjacent in the lattice")


def _half_resistance(i: int, j: int, grid: GridSpec, fluid: FluidParams, kappa_j: float) -> float:
    """Series half-resistance attributed to cell j for the boundary with cell i."""
    area, dist = _boundary_geometry(i, j, grid)
    role_i, role_j = CellRole(grid.role[i]), CellRole(grid.role[j])
    if role_j == CellRole.FLUID:
        if role_i != CellRole.PLATE:
            raise InvalidInputError(
                f"no heat-transfer edge between cells {i} ({role_i.name}) and {j} (FLUID)"
            )
        return 1.0 / (fluid.u_conv * area)
    return dist / (2.0 * kappa_j * area)


def edge_resistance(i: int, j: int, grid: GridSpec, fluid: FluidParams) -> float:
    """Half-resistance [K/W] attributed to cell j for the boundary with adjacent cell i.

    Convective ``1/(U*a)`` when j is a fluid cell facing the plate,
    conductive ``d/(2*kappa_j*a)`` when j is a plate or CPCM cell. The
    full edge weight is the series sum of the two calls with swapped
    arguments.
    """
    return _half_resistance(i, j, grid, fluid, float(grid.kappa[j]))


def lattice_edges(grid: GridSpec) -> list[tuple[int, int]]:
    """All lattice adjacencies that carry heat transfer (no fluid-fluid pairs)."""
    edges = []
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            j = grid.cell_index(ix, iy)
            if ix + 1 < grid.nx and iy > 0:  # horizontal; fluid layer has none
                edges.append((j, grid.cell_index(ix + 1, iy)))
            if iy + 1 < grid.ny:
                edges.append((j, grid.cell_index(ix, iy + 1)))
    return edges


def build_graph(
    grid: GridSpec,
    fluid: FluidParams,
    x: np.ndarray,
    p: PcmThermalParams,
    kappa_fn: Optional[KappaFn] = None,
) -> ThermalGraph:
    """Assemble the resistance network at the given state.

    With the default constant conductivities the result does not depend
    on ``x``; a ``kappa_fn`` hook makes CPCM conductivities (and hence
    edge weights) temperature-dependent.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n,):
        raise InvalidInputError(f"state vector must have shape ({grid.n},), got {x.shape}")
    kappa = np.array(grid.kappa, dtype=float)
    if kappa_fn is not None:
        cpcm = grid.mask(CellRole.CPCM)
        kappa[cpcm] = kappa_fn(x[cpcm])
        if not (np.all(np.isfinite(kappa)) and np.all(kappa > 0.0)):
            raise InvalidConfigError("kappa_fn returned non-positive or non-finite conductivity")
    pairs = lattice_edges(grid)
    edge_i = np.fromiter((a for a, _ in pairs), dtype=np.intp, count=len(pairs))
    edge_j = np.fromiter((b for _, b in pairs), dtype=np.intp, count=len(pairs))
    r_i = np.array([_half_resistance(int(b), int(a), grid, fluid, kappa[a]) for a, b in pairs])
    r_j = np.array([_half_resistance(int(a), int(b), grid, fluid, kappa[b]) for a, b in pairs])
    return ThermalGraph(n=grid.n, edge_i=edge_i, edge_j=edge_j, r_i=r_i, r_j=r_j)


def laplacian(g: ThermalGraph) -> np.ndarray:
    """Weighted graph Laplacian [W/K]: symmetric, PSD, rows summing to zero.

    Off-diagonals are set first; each diagonal entry is the negated sum
    of its own row, so L @ 1 == 0 holds exactly in floating point.
    """
    L = np.zeros((g.n, g.n))
    w = g.weights
    L[g.edge_i, g.edge_j] = -w
    L[g.edge_j, g.edge_i] = -w
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def capacitance_vector(grid: GridSpec, x: np.ndarray, p: PcmThermalParams) -> np.ndarray:
    """Diagonal of the capacitance matrix: m_j * c_p,j [J/K]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n,):
        raise InvalidInputError(f"state vector must have shape ({grid.n},), got {x.shape}")
    cp = np.array(grid.cp_const, dtype=float)
    cpcm = grid.mask(CellRole.CPCM)
    if np.any(cpcm):
        cp[cpcm] = effective_specific_heat(x[cpcm], p)
    return grid.mass * cp


def capacitance_matrix(grid: GridSpec, x: np.ndarray, p: PcmThermalParams) -> np.ndarray:
    """Diagonal thermal capacitance matrix M(x) [J/K]."""
    return np.diag(capacitance_vector(grid, x, p))


def input_matrix(
    grid: GridSpec,
    x: np.ndarray,
    t_in: float,
    fluid: FluidParams,
    M: np.ndarray,
) -> np.ndarray:
    """Advection input column B(x) [K/kg]: nonzero only on fluid cells.

    ``M`` may be the full diagonal matrix or just its diagonal vector.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n,):
        raise InvalidInputError(f"state vector must have shape ({grid.n},), got {x.shape}")
    m_diag = np.asarray(M, dtype=float)
    if m_diag.ndim == 2:
        m_diag = np.diag(m_diag)
    if m_diag.shape != (grid.n,):
        raise InvalidInputError(f"capacitance must have {grid.n} diagonal entries")
    b = np.zeros(grid.n)
    upstream = np.concatenate(([float(t_in)], x[: grid.nx - 1]))
    b[: grid.nx] = fluid.cp_f * (upstream - x[: grid.nx]) / m_diag[: grid.nx]
    return b


def assemble(
    grid: GridSpec,
    fluid: FluidParams,
    p: PcmThermalParams,
    x: np.ndarray,
    t_in: float,
    kappa_fn: Optional[KappaFn] = None,
    L: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """State-dependent drift matrix A(x) = -M^-1 L [1/s] and input column B(x).

    A precomputed Laplacian can be passed to skip the graph rebuild when
    conductivities are constant.
    """
    if L is None:
        L = laplacian(build_graph(grid, fluid, x, p, kappa_fn))
    m_diag = capacitance_vector(grid, x, p)
    if not np.all(m_diag > 0.0):
        raise NumericalError("capacitance matrix lost positivity; cannot invert")
    A = -L / m_diag[:, None]
    B = input_matrix(grid, x, t_in, fluid, m_diag)
    return A, B


@dataclass(frozen=True)
class Sensor:
    """One temperature output: a named thermocouple mapped to a single cell.

    ``column`` and ``layer`` are 1-based grid coordinates (column 1 at
    the inlet, layer 1 the fluid channel). ``averaged`` marks outputs
    formed by averaging a laterally adjacent thermocouple pair, which
    halves the measurement noise variance.
    """

    name: str
    column: int
    layer: int
    averaged: bool = False

    def cell_index(self, grid: GridSpec) -> int:
        if not (1 <= self.column <= grid.nx and 1 <= self.layer <= grid.ny):
            raise InvalidConfigError(
                f"sensor {self.name!r} at column {self.column}, layer {self.layer} "
                f"is outside the {grid.nx}x{grid.ny} grid"
            )
        return grid.cell_index(self.column - 1, self.layer - 1)


def sensor_map(sensors: Sequence[Sensor], grid: GridSpec) -> np.ndarray:
    """Binary output matrix C: one row per sensor, one 1 per row.

    Row order follows the given sensor order. Duplicate rows are legal
    (two sensors on one cell) but warn.
    """
    if len(sensors) == 0:
        raise InvalidConfigError("sensor set is empty; at least one measurement is required")
    C = np.zeros((len(sensors), grid.n))
    cells = [s.cell_index(grid) for s in sensors]
    if len(set(cells)) != len(cells):
        warnings.warn("multiple sensors map to the same control volume", stacklevel=2)
    for row, cell in enumerate(cells):
        C[row, cell] = 1.0
    return C


@dataclass
class LpvSystem:
    """State-dependent system matrices plus the static sensor map.

    Bundles the grid, material parameters and C so that the filter and
    analysis code can evaluate L(x), M(x), A(x), B(x) at any state. With
    constant conductivities (no ``kappa_fn``) the Laplacian is static
    and cached at construction.
    """

    grid: GridSpec
    fluid: FluidParams
    pcm: PcmThermalParams
    C: np.ndarray
    kappa_fn: Optional[KappaFn] = None

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim != 2 or self.C.shape[1] != self.grid.n:
            raise InvalidConfigError(f"C must be p x {self.grid.n}, got {self.C.shape}")
        self._static_L: Optional[np.ndarray] = None
        if self.kappa_fn is None:
            x_ref = np.full(self.grid.n, self.pcm.t_pc)
            self._static_L = laplacian(build_graph(self.grid, self.fluid, x_ref, self.pcm))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def graph_at(self, x: np.ndarray) -> ThermalGraph:
        return build_graph(self.grid, self.fluid, x, self.pcm, self.kappa_fn)

    def laplacian_at(self, x: np.ndarray) -> np.ndarray:
        if self._static_L is not None:
            return self._static_L
        return laplacian(self.graph_at(x))

    def capacitance_at(self, x: np.ndarray) -> np.ndarray:
        return capacitance_vector(self.grid, x, self.pcm)

    def a_matrix(self, x: np.ndarray) -> np.ndarray:
        A, _ = self.assemble(x, t_in=0.0)
        return A

    def assemble(self, x: np.ndarray, t_in: float) -> tuple[np.ndarray, np.ndarray]:
        return assemble(
            self.grid, self.fluid, self.pcm, x, t_in, kappa_fn=self.kappa_fn, L=self.laplacian_at(x)
        )


@dataclass(frozen=True)
class DetectabilityReport:
    """Numerical detectability certificate for one sensor configuration.

    The verdict follows the analytical route (connected graph plus a
    sensor matrix with at least one nonzero row sum); the gramian figures
    are finite-horizon numerical evidence, not the proof itself.

    gramian_min_offspan   smallest quadratic form zeta' W zeta over unit
                          vectors orthogonal to span{1}
    consensus_excitation  quadratic form along 1/sqrt(n), the direction
                          only the sensor rows can excite
    null_direction        unit vector attaining the overall minimum
    """

    connected: bool
    c_rowsum_ok: bool
    gramian_min_offspan: float
    consensus_excitation: float
    detectable: bool
    null_direction: np.ndarray

    @property
    def verdict(self) -> str:
        return "detectable" if self.detectable else "not detectable"


def gramian_certificate(
    a_matrices: Sequence[np.ndarray], C: np.ndarray, dt: float, q: int
) -> tuple[float, float, np.ndarray]:
    """Finite-horizon observability-gramian evidence over sampled drift matrices.

    For each A, forms Phi = exp(A*dt) and accumulates the gramian
    W = sum_{i=0..q} (Phi^i)' C'C (Phi^i) as a stacked observation map,
    so quadratic forms are nonnegative by construction. Returns the
    minimum quadratic form over the orthogonal complement of span{1},
    the quadratic form along 1/sqrt(n), and the unit vector attaining
    the overall minimum.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = C.shape[1]
    if q < 0:
        raise InvalidInputError("horizon q must be nonnegative")
    if len(a_matrices) == 0:
        raise InvalidInputError("need at least one sampled drift matrix")
    ones = np.full(n, 1.0 / np.sqrt(n))
    # orthonormal basis of the complement of span{1}
    basis = scipy.linalg.null_space(ones[None, :]) if n > 1 else np.zeros((1, 0))

    min_offspan = None
    offspan_vec = ones
    min_consensus = np.inf
    for A in a_matrices:
        A = np.asarray(A, dtype=float)
        if A.shape != (n, n):
            raise InvalidInputError(f"drift matrix must be {n}x{n}, got {A.shape}")
        phi = matrix_exponential(A, dt)
        blocks = []
        X = np.eye(n)
        for _ in range(q + 1):
            blocks.append(C @ X)
            X = X @ phi
        G = np.vstack(blocks)
        min_consensus = min(min_consensus, float(np.sum((G @ ones) ** 2)))
        if basis.shape[1]:
            _, sing, vt = np.linalg.svd(G @ basis)
            offspan = float(sing[-1] ** 2)
            if min_offspan is None or offspan < min_offspan:
                min_offspan = offspan
                offspan_vec = basis @ vt[-1]
    if min_offspan is None:  # n == 1: no directions orthogonal to span{1} exist
        min_offspan = min_consensus
    worst = ones if min_consensus <= min_offspan else offspan_vec
    return min_offspan, min_consensus, worst


def check_detectability(
    sys: LpvSystem, x_samples: Sequence[np.ndarray], dt: float, q: int
) -> DetectabilityReport:
    """Detectability check of (exp(A(x) dt), C) over representative states.

    The analytical guarantee needs a connected graph and a sensor matrix
    with at least one nonzero row sum; both are checked directly. The
    gramian certificate is accumulated over the sampled states as
    regression evidence (q >= n recommended).
    """
    if len(x_samples) == 0:
        raise InvalidInputError("x_samples must be nonempty")
    connected = all(sys.graph_at(x).is_connected() for x in x_samples)
    row_sums = np.asarray(sys.C).sum(axis=1)
    c_rowsum_ok = bool(np.any(np.abs(row_sums) > 0.0))
    a_matrices = [sys.a_matrix(np.asarray(x, dtype=float)) for x in x_samples]
    min_offspan, consensus, worst = gramian_certificate(a_matrices, sys.C, dt, q)
    return DetectabilityReport(
        connected=connected,
        c_rowsum_ok=c_rowsum_ok,
        gramian_min_offspan=min_offspan,
        consensus_excitation=consensus,
        detectable=connected and c_rowsum_ok,
        null_direction=worst,
    )
