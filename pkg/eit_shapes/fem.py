"""
P1 finite elements for the pure Neumann conductivity problem -∇·(σ∇u) = 0, σ∂u/∂ν = g on ∂Ω.

The singular system is solved by pinning node 0 and then shifting by the constant that sets
∫_{∂Ω} u ds to the requested target. One factorization per (mesh, σ) serves every right hand
side, states and adjoints alike.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from .exceptions import ConductivityError, IncompatibleFluxError, SolverError
from .geometry import Diagnostic, Partition, VALID
from .logs import solver_logger as logger
from .meshing import BOUNDARY_LENGTH, BoundaryGrid, TriMesh, electrode_index

__all__ = (
    'LAMBDA', 'SIGMA_MAX', 'Conductivity', 'BoundaryFlux', 'BoundaryGrid', 'NodalField', 'Assembly', 'assemble',
    'NeumannSolver', 'solve_neumann', 'solve_adjoint', 'misfit', 'ForwardProblem', 'Solution', 'energy',
)

LAMBDA = 1e-3
SIGMA_MAX = 1e3
FLUX_TOL = 1e-10
ADJOINT_FLUX_TOL = 1e-8
CG_RTOL = 1e-12


@dataclass(frozen=True)
class Conductivity:
    """σ = background on Ω minus the inclusions, ``values[i]`` on inclusion ``i + 1``."""
    partition: Partition
    values: Tuple[float, ...]
    background: float = 1.0

    def __post_init__(self) -> None:
        if len(self.values) != len(self.partition.inclusions):
            raise ConductivityError('{} values given for {} inclusions'.format(
                len(self.values), len(self.partition.inclusions)))
        v = self.region_values
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ConductivityError('conductivity values must be finite and positive, got {}'.format(v.tolist()))

    @property
    def region_values(self) -> npt.NDArray[np.float64]:
        """Values indexed by region id, background first."""
        return np.array((self.background,) + tuple(self.values), dtype=float)

    def with_region_values(self, region_values: npt.ArrayLike) -> 'Conductivity':
        v = [float(x) for x in np.asarray(region_values, dtype=float)]
        return Conductivity(self.partition, tuple(v[1:]), v[0])

    def with_partition(self, partition: Partition) -> 'Conductivity':
        return Conductivity(partition, self.values, self.background)

    def validate(self, lower: float = LAMBDA, distinct: bool = True) -> Diagnostic:
        v = self.region_values
        if v.min() < lower:
            return Diagnostic(False, 'value {:g} below the lower bound {:g}'.format(v.min(), lower))
        if distinct:
            for i, value in enumerate(self.values, start=1):
                if value == self.background:
                    return Diagnostic(False, 'inclusion {} has the background value {:g}'.format(i, value))
        return VALID

    def to_json(self) -> Dict[str, Any]:
        return {**self.partition.to_json(), 'values': list(self.values), 'background': self.background}

    @classmethod
    def from_json(cls, obj: Dict[str, Any]) -> 'Conductivity':
        try:
            values = tuple(float(v) for v in obj['values'])
            background = float(obj.get('background', 1.0))
        except (KeyError, TypeError, ValueError) as e:
            raise ConductivityError('conductivity JSON needs "values" and optionally "background"') from e
        return cls(Partition.from_json(obj), values, background)


@dataclass(frozen=True)
class BoundaryFlux:
    """
    Piecewise constant current density: ``density[e]`` on electrode ``e`` of an electrode level.
    Electrode endpoints are nodes of every mesh, so each boundary edge lies on one electrode.
    """
    level: int
    density: Tuple[float, ...]
    pair: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        if len(self.density) != self.level:
            raise SolverError('flux needs one density per electrode ({}), got {}'.format(self.level, len(self.density)))

    def integral(self) -> float:
        return float(np.sum(self.density)) * BOUNDARY_LENGTH / self.level

    def edge_density(self, grid: BoundaryGrid) -> npt.NDArray[np.float64]:
        return np.asarray(self.density, dtype=float)[electrode_index(grid.edge_midpoints, self.level)]

    def load(self, mesh: TriMesh) -> npt.NDArray[np.float64]:
        """load_a = ∫ g φ_a ds, exact for piecewise constant g."""
        grid = mesh.boundary
        half = 0.5 * self.edge_density(grid) * grid.lengths
        out = np.zeros(mesh.n_nodes)
        np.add.at(out, grid.nodes, half + np.roll(half, 1))
        return out


@dataclass
class NodalField:
    values: npt.NDArray[np.float64]
    mesh: TriMesh

    def __post_init__(self) -> None:
        if self.values.shape[0] != self.mesh.n_nodes:
            raise SolverError('nodal field has {} values for {} nodes'.format(self.values.shape[0], self.mesh.n_nodes))

    @property
    def trace(self) -> npt.NDArray[np.float64]:
        return self.values[self.mesh.boundary.nodes]


@dataclass
class Assembly:
    mesh: TriMesh
    K: sp.csr_matrix
    sigma_t: npt.NDArray[np.float64]

    @property
    def grads(self) -> npt.NDArray[np.float64]:
        return self.mesh.grads


def assemble(m: TriMesh, sigma: Conductivity) -> Assembly:
    """K_ab = Σ_T σ(T) |T| ∇φ_a·∇φ_b."""
    values = sigma.region_values
    if m.region.max(initial=0) >= len(values) or m.region.min(initial=0) < 0:
        raise SolverError('mesh has region ids up to {} but the conductivity has {} regions'.format(
            int(m.region.max()), len(values)))
    sigma_t = values[m.region]
    g = m.grads
    local = (sigma_t * m.areas)[:, None, None] * np.einsum('tid,tjd->tij', g, g)
    rows = np.broadcast_to(m.triangles[:, :, None], local.shape)
    cols = np.broadcast_to(m.triangles[:, None, :], local.shape)
    K = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(m.n_nodes, m.n_nodes)).tocsr()
    return Assembly(m, K, sigma_t)


def _check_compatible(load: npt.NDArray[np.float64], tol: float) -> None:
    total = np.abs(load.sum(axis=0))
    scale = np.maximum(np.abs(load).sum(axis=0), 1.0)
    if np.any(total > tol * scale):
        raise IncompatibleFluxError('boundary flux has nonzero total {:.3e}'.format(float(np.max(total))))


class NeumannSolver:
    """
    Factorizes the stiffness matrix with node 0 pinned and solves for any number of right hand
    sides. ``method='lu'`` uses SuperLU and falls back to Jacobi preconditioned CG if the
    factorization fails.
    """

    def __init__(self, K: sp.spmatrix, mesh: TriMesh, *, method: str = 'lu', threads: int = 1):
        if method not in ('lu', 'cg'):
            raise SolverError('unknown solver method "{}"'.format(method))
        self.mesh = mesh
        self.K = K.tocsr()
        self.threads = max(int(threads), 1)
        self._reduced = self.K[1:, 1:].tocsc()
        self._lu = None
        self.method = method
        if method == 'lu':
            try:
                self._lu = splu(self._reduced)
            except RuntimeError as e:
                logger.warning('sparse factorization failed (%s), falling back to conjugate gradient', e)
                self.method = 'cg'
        if self.method == 'cg':
            d = self._reduced.diagonal()
            self._precond = LinearOperator(self._reduced.shape, matvec=lambda x: x / d)

    def _solve_cg(self, rhs: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        out = np.zeros_like(rhs)
        for j in range(rhs.shape[1]):
            x, info = cg(self._reduced, rhs[:, j], rtol=CG_RTOL, atol=0.0, maxiter=10 * len(rhs),
                         M=self._precond)
            if info != 0:
                raise SolverError('conjugate gradient did not converge (info={})'.format(info))
            out[:, j] = x
        return out

    def _solve_reduced(self, rhs: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        if self._lu is not None:
            return self._lu.solve(np.ascontiguousarray(rhs))
        return self._solve_cg(rhs)

    def solve_many(self, loads: npt.ArrayLike, targets: npt.ArrayLike, *,
                   flux_tol: float = FLUX_TOL) -> npt.NDArray[np.float64]:
        """
        Solve K u_j = load_j with ∫_{∂Ω} u_j ds = targets[j], columns split over ``threads`` workers.
        """
        loads = np.asarray(loads, dtype=float).reshape(self.mesh.n_nodes, -1)
        targets = np.broadcast_to(np.asarray(targets, dtype=float), (loads.shape[1],))
        _check_compatible(loads, flux_tol)
        rhs = loads[1:]
        if self.threads > 1 and rhs.shape[1] > 1:
            chunks = np.array_split(np.arange(rhs.shape[1]), min(self.threads, rhs.shape[1]))
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                parts = list(pool.map(lambda c: self._solve_reduced(rhs[:, c]), chunks))
            reduced = np.concatenate(parts, axis=1)
        else:
            reduced = self._solve_reduced(rhs)
        u = np.concatenate([np.zeros((1, rhs.shape[1])), reduced.reshape(rhs.shape)])
        grid = self.mesh.boundary
        u += (targets - grid.integrate(u[grid.nodes])) / BOUNDARY_LENGTH
        return u

    def solve(self, load: npt.ArrayLike, target: float = 0.0, *, flux_tol: float = FLUX_TOL) -> npt.NDArray[np.float64]:
        return self.solve_many(np.asarray(load, dtype=float)[:, None], [target], flux_tol=flux_tol)[:, 0]


def _solver_for(K: sp.spmatrix, m: TriMesh, solver: Optional[NeumannSolver]) -> NeumannSolver:
    if solver is not None and solver.mesh is m:
        return solver
    return NeumannSolver(K, m)


def solve_neumann(K: sp.spmatrix, m: TriMesh, g: BoundaryFlux, boundary_mean_target: float = 0.0, *,
                  solver: Optional[NeumannSolver] = None) -> NodalField:
    """
    State solve for the current density ``g`` with ∫_{∂Ω} u ds = boundary_mean_target.
    """
    if abs(g.integral()) > FLUX_TOL:
        raise IncompatibleFluxError('current pattern has nonzero total flux {:.3e}'.format(g.integral()))
    u = _solver_for(K, m, solver).solve(g.load(m), boundary_mean_target)
    return NodalField(u, m)


def adjoint_loads(m: TriMesh, traces: npt.NDArray[np.float64],
                  data: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Nodal loads ∫ (f - u) φ_a ds for trace columns, piecewise linear data integrated exactly."""
    grid = m.boundary
    residual = np.asarray(data, dtype=float) - np.asarray(traces, dtype=float)
    out = np.zeros((m.n_nodes,) + residual.shape[1:])
    out[grid.nodes] = grid.mass @ residual
    return out


def solve_adjoint(K: sp.spmatrix, m: TriMesh, u: NodalField, f: npt.ArrayLike, mean_target: float, *,
                  solver: Optional[NeumannSolver] = None) -> NodalField:
    """
    Adjoint solve with Neumann datum f - u on ∂Ω, normalized so that ∫ z ds = mean_target.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != u.trace.shape:
        raise SolverError('data has {} boundary samples, the mesh has {}'.format(f.shape[0], u.trace.shape[0]))
    load = adjoint_loads(m, u.trace, f)
    z = _solver_for(K, m, solver).solve(load, mean_target, flux_tol=ADJOINT_FLUX_TOL)
    return NodalField(z, m)


def misfit(traces: npt.ArrayLike, data: npt.ArrayLike, grid: BoundaryGrid) -> float:
    """J = ½ Σ_j ∫_{∂Ω} (u_j - f_j)² ds with exact quadrature for piecewise linear traces."""
    traces = np.asarray(traces, dtype=float)
    data = np.asarray(data, dtype=float)
    if traces.shape != data.shape or traces.shape[0] != len(grid):
        raise SolverError('traces {} and data {} are not sampled on the same {} boundary nodes'.format(
            traces.shape, data.shape, len(grid)))
    r = traces - data
    return 0.5 * float(np.sum(r * (grid.mass @ r)))


def energy(assembly: Assembly, u: npt.ArrayLike) -> float:
    """∫ σ|∇u|² dx."""
    u = np.asarray(u, dtype=float)
    return float(u @ (assembly.K @ u))


@dataclass
class Solution:
    mesh: TriMesh
    sigma: Conductivity
    states: npt.NDArray[np.float64]
    traces: npt.NDArray[np.float64]
    adjoints: Optional[npt.NDArray[np.float64]] = None
    J: Optional[float] = None
    assembly: Optional[Assembly] = field(default=None, repr=False)


class ForwardProblem:
    """
    States, adjoints and the misfit for every current pattern on one mesh and conductivity.
    ``data`` are the measured traces sampled on ``mesh.boundary``, one column per pattern.
    """

    def __init__(self, mesh: TriMesh, sigma: Conductivity, patterns: Sequence[BoundaryFlux],
                 data: Optional[npt.ArrayLike] = None, *, method: str = 'lu', threads: int = 1):
        self.mesh = mesh
        self.sigma = sigma
        self.patterns = list(patterns)
        self.data = None if data is None else np.asarray(data, dtype=float).reshape(len(mesh.boundary), -1)
        if self.data is not None and self.data.shape[1] != len(self.patterns):
            raise SolverError('{} data traces for {} patterns'.format(self.data.shape[1], len(self.patterns)))
        self.assembly = assemble(mesh, sigma)
        self.solver = NeumannSolver(self.assembly.K, mesh, method=method, threads=threads)

    def loads(self) -> npt.NDArray[np.float64]:
        for j, g in enumerate(self.patterns):
            if abs(g.integral()) > FLUX_TOL:
                raise IncompatibleFluxError('pattern {} has nonzero total flux {:.3e}'.format(j, g.integral()))
        return np.column_stack([g.load(self.mesh) for g in self.patterns])

    def targets(self) -> npt.NDArray[np.float64]:
        if self.data is None:
            return np.zeros(len(self.patterns))
        return np.asarray(self.mesh.boundary.integrate(self.data), dtype=float)

    def solve(self, adjoint: bool = True) -> Solution:
        targets = self.targets()
        states = self.solver.solve_many(self.loads(), targets)
        traces = states[self.mesh.boundary.nodes]
        sol = Solution(self.mesh, self.sigma, states, traces, assembly=self.assembly)
        if self.data is not None:
            sol.J = misfit(traces, self.data, self.mesh.boundary)
            if adjoint:
                loads = adjoint_loads(self.mesh, traces, self.data)
                sol.adjoints = self.solver.solve_many(loads, targets, flux_tol=ADJOINT_FLUX_TOL)
        logger.debug('solved %d patterns on %r%s', len(self.patterns), self.mesh,
                     '' if sol.J is None else ', J={:.6e}'.format(sol.J))
        return sol


def reciprocity_gap(patterns: Sequence[BoundaryFlux], traces: npt.ArrayLike, grid: BoundaryGrid) -> float:
    """max_{a,b} |∫ g_a f_b ds - ∫ g_b f_a ds| for traces sampled on ``grid``."""
    traces = np.asarray(traces, dtype=float)
    # ∫ g f ds for piecewise constant g and piecewise linear f: per edge g_k L_k (f_k + f_{k+1}) / 2
    edge_means = 0.5 * (traces + np.roll(traces, -1, axis=0)) * grid.lengths[:, None]
    G = np.column_stack([g.edge_density(grid) for g in patterns])
    pairing = G.T @ edge_means
    return float(np.max(np.abs(pairing - pairing.T))) if len(patterns) else 0.0


def boundary_means(traces: npt.ArrayLike, grid: BoundaryGrid) -> List[float]:
    return [float(v) / BOUNDARY_LENGTH for v in np.atleast_1d(grid.integrate(traces))]
