"""
Shape and coefficient sensitivities of the boundary misfit J.

Deformation fields are P1 on the coarse mesh and are read on the nested refined mesh through
parent links, so DU is constant on every refined triangle and the distributed derivative

    dJ(U) = Σ_j ∫_Ω σ 𝒜 ∇u_j · ∇z_j dx,    𝒜 = div(U) I - (DU + DUᵀ)

is evaluated exactly, triangle by triangle.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .exceptions import GeometryError, SolverError
from .fem import BoundaryFlux, Conductivity, ForwardProblem
from .logs import solver_logger as logger
from .meshing import TriMesh, check_nested, interior_edges, prolong

__all__ = (
    'DeformationField', 'ShapeGradient', 'CoeffGradient', 'FdCheck', 'calA', 'shape_directional', 'vertex_descent',
    'coeff_gradient', 'boundary_shape_directional', 'fd_check', 'coeff_fd_check', 'random_deformation',
)

# ‖DU‖₂ bound of random test fields
MAX_LIPSCHITZ = 0.5


@dataclass
class DeformationField:
    """Nodal displacements U on ``coarse``, zero on every boundary node."""
    coarse: TriMesh
    values: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(self.coarse.n_nodes, 2)
        if np.any(self.values[self.coarse.boundary_mask] != 0):
            raise GeometryError('deformation fields must vanish on ∂Ω')

    @classmethod
    def zero(cls, coarse: TriMesh) -> 'DeformationField':
        return cls(coarse, np.zeros((coarse.n_nodes, 2)))

    @classmethod
    def hat(cls, coarse: TriMesh, vertex: int, component: int) -> 'DeformationField':
        """Unit vector ``e_component`` at partition vertex ``vertex``, zero at all other coarse nodes."""
        values = np.zeros((coarse.n_nodes, 2))
        values[coarse.coarse_vertex_map[vertex], component] = 1.0
        return cls(coarse, values)

    def jacobian(self) -> npt.NDArray[np.float64]:
        """DU per coarse triangle, DU[t, i, j] = ∂U_i/∂x_j."""
        return np.einsum('tki,tkj->tij', self.values[self.coarse.triangles], self.coarse.grads)

    def on(self, refined: TriMesh) -> npt.NDArray[np.float64]:
        out = prolong(self.coarse, refined, self.values)
        # barycentric round-off must not move boundary nodes off ∂Ω
        out[refined.boundary_mask] = 0.0
        return out

    def lipschitz(self) -> float:
        return float(np.max(np.linalg.norm(self.jacobian(), ord=2, axis=(1, 2)), initial=0.0))


@dataclass
class ShapeGradient:
    """Descent directions θ_l, one 2-vector per partition vertex."""
    theta: npt.NDArray[np.float64]

    @property
    def norms(self) -> npt.NDArray[np.float64]:
        return np.linalg.norm(self.theta, axis=1)

    @property
    def max_norm(self) -> float:
        return float(self.norms.max(initial=0.0))


@dataclass
class CoeffGradient:
    """dJ/dσ_j indexed by region id, background first."""
    values: npt.NDArray[np.float64]


@dataclass
class FdCheck:
    analytic: float
    central_fd: float
    rel_err: float


def _field_grads(refined: TriMesh, fields: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Constant gradients of P1 fields per triangle, shape (n_triangles, n_fields, 2)."""
    return np.einsum('tkd,tkm->tmd', refined.grads, fields[refined.triangles])


def _check_fields(refined: TriMesh, states: npt.NDArray[np.float64], adjoints: npt.NDArray[np.float64]) -> None:
    if states.shape != adjoints.shape:
        raise SolverError('{} states but {} adjoints'.format(states.shape, adjoints.shape))
    if states.shape[0] != refined.n_nodes:
        raise SolverError('fields have {} nodal values for {} nodes'.format(states.shape[0], refined.n_nodes))


def _sensitivity(sigma: Conductivity, refined: TriMesh, states: npt.ArrayLike,
                 adjoints: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """S_T = σ|T| Σ_j ∇u_j ∇z_jᵀ per refined triangle."""
    states = np.asarray(states, dtype=float).reshape(refined.n_nodes, -1)
    adjoints = np.asarray(adjoints, dtype=float).reshape(refined.n_nodes, -1)
    _check_fields(refined, states, adjoints)
    weight = sigma.region_values[refined.region] * refined.areas
    return np.einsum('t,tmp,tmq->tpq', weight, _field_grads(refined, states), _field_grads(refined, adjoints))


def calA(U: DeformationField, refined: TriMesh) -> npt.NDArray[np.float64]:
    parent = check_nested(U.coarse, refined)
    du = U.jacobian()[parent]
    trace = np.trace(du, axis1=1, axis2=2)
    return trace[:, None, None] * np.eye(2) - (du + np.swapaxes(du, 1, 2))


def shape_directional(sigma: Conductivity, refined: TriMesh, states: npt.ArrayLike, adjoints: npt.ArrayLike,
                      U: DeformationField) -> float:
    S = _sensitivity(sigma, refined, states, adjoints)
    return float(np.einsum('tpq,tpq->', calA(U, refined), S))


def vertex_descent(sigma: Conductivity, coarse: TriMesh, refined: TriMesh, states: npt.ArrayLike,
                   adjoints: npt.ArrayLike) -> ShapeGradient:
    """
    θ_l = -(dJ(φ_l e_1), dJ(φ_l e_2)) for every partition vertex, in one sweep.

    For U = φ_k e_i, 𝒜 : S reduces to ((tr S) I - S - Sᵀ) ∇λ_k on each coarse triangle, with S
    summed over the triangle's refined children.
    """
    parent = check_nested(coarse, refined)
    n_vertices = sigma.partition.vertex_count
    if len(coarse.coarse_vertex_map) != n_vertices:
        raise GeometryError('partition has {} vertices but the coarse mesh maps {}'.format(
            n_vertices, len(coarse.coarse_vertex_map)))
    S = np.zeros((coarse.n_triangles, 2, 2))
    np.add.at(S, parent, _sensitivity(sigma, refined, states, adjoints))
    M = np.trace(S, axis1=1, axis2=2)[:, None, None] * np.eye(2) - (S + np.swapaxes(S, 1, 2))
    d = np.zeros((coarse.n_nodes, 2))
    for k in range(3):
        np.add.at(d, coarse.triangles[:, k], np.einsum('tpq,tq->tp', M, coarse.grads[:, k]))
    return ShapeGradient(-d[coarse.coarse_vertex_map])


def coeff_gradient(refined: TriMesh, states: npt.ArrayLike, adjoints: npt.ArrayLike,
                   n_regions: Optional[int] = None) -> CoeffGradient:
    """dJ/dσ_j = Σ_k ∫_{P_j} ∇u_k·∇z_k dx."""
    states = np.asarray(states, dtype=float).reshape(refined.n_nodes, -1)
    adjoints = np.asarray(adjoints, dtype=float).reshape(refined.n_nodes, -1)
    _check_fields(refined, states, adjoints)
    per_t = refined.areas * np.einsum('tmd,tmd->t', _field_grads(refined, states), _field_grads(refined, adjoints))
    n = int(refined.region.max(initial=0)) + 1 if n_regions is None else n_regions
    return CoeffGradient(np.bincount(refined.region, weights=per_t, minlength=n))


def boundary_shape_directional(sigma: Conductivity, refined: TriMesh, states: npt.ArrayLike,
                               adjoints: npt.ArrayLike, U: DeformationField) -> float:
    """
    Line integral form for a single inclusion with σ⁻ inside and σ⁺ outside:

        (σ⁻ - σ⁺) Σ_j ∫_{∂P} ((σ⁺/σ⁻) ∂_ν u⁺ ∂_ν z⁺ + ∂_τ u ∂_τ z) U·ν ds

    with ν pointing out of P. The normal flux q = σ∂_ν u is continuous across ∂P, so the
    first term is q_u q_z / (σ⁺σ⁻) with q averaged over the two triangles sharing each
    interface edge; tangential derivatives are averaged the same way. For σ⁺ = 1, σ⁻ = k this
    is the usual (k - 1)(1/k ∂_ν u⁺ ∂_ν z⁺ + ∂_τ u ∂_τ z) form. Midpoint quadrature on every
    refined edge of ∂P.
    """
    if len(sigma.partition.inclusions) != 1:
        raise GeometryError('the boundary form needs exactly one inclusion, got {}'.format(
            len(sigma.partition.inclusions)))
    check_nested(U.coarse, refined)
    states = np.asarray(states, dtype=float).reshape(refined.n_nodes, -1)
    adjoints = np.asarray(adjoints, dtype=float).reshape(refined.n_nodes, -1)
    _check_fields(refined, states, adjoints)
    outer, inner = sigma.background, sigma.values[0]

    edges = interior_edges(refined)
    iface = refined.region[edges.first] != refined.region[edges.second]
    nodes = edges.nodes[iface]
    first_out = refined.region[edges.first[iface]] == 0
    t_out = np.where(first_out, edges.first[iface], edges.second[iface])
    t_in = np.where(first_out, edges.second[iface], edges.first[iface])

    xa, xb = refined.nodes[nodes[:, 0]], refined.nodes[nodes[:, 1]]
    length = np.linalg.norm(xb - xa, axis=1)
    tau = (xb - xa) / length[:, None]
    nu = np.column_stack([tau[:, 1], -tau[:, 0]])
    flip = np.einsum('ed,ed->e', nu, refined.centroids[t_out] - 0.5 * (xa + xb)) < 0
    nu[flip] *= -1

    def traces(fields: npt.NDArray[np.float64]) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        g = _field_grads(refined, fields)
        g_out, g_in = g[t_out], g[t_in]
        flux = 0.5 * (outer * np.einsum('emd,ed->em', g_out, nu) + inner * np.einsum('emd,ed->em', g_in, nu))
        tangential = 0.5 * np.einsum('emd,ed->em', g_out + g_in, tau)
        return flux, tangential

    qu, tu = traces(states)
    qz, tz = traces(adjoints)
    integrand = (qu * qz / (outer * inner) + tu * tz).sum(axis=1)

    u_ref = U.on(refined)
    u_nu = np.einsum('ed,ed->e', 0.5 * (u_ref[nodes[:, 0]] + u_ref[nodes[:, 1]]), nu)
    return float((inner - outer) * np.sum(integrand * u_nu * length))


def random_deformation(coarse: TriMesh, rng: np.random.Generator, scale: float = 0.05,
                       max_lipschitz: float = MAX_LIPSCHITZ) -> DeformationField:
    """
    Uniform random interior node displacements in [-scale, scale]², zero on ∂Ω, rescaled so
    that ‖DU‖₂ <= ``max_lipschitz`` on every coarse triangle.
    """
    values = rng.uniform(-scale, scale, size=(coarse.n_nodes, 2))
    values[coarse.boundary_mask] = 0.0
    U = DeformationField(coarse, values)
    lip = U.lipschitz()
    if lip > max_lipschitz:
        U = DeformationField(coarse, values * (max_lipschitz / lip))
    return U


def _misfit(refined: TriMesh, sigma: Conductivity, patterns: Sequence[BoundaryFlux],
            data: npt.ArrayLike, threads: int = 1) -> float:
    return float(ForwardProblem(refined, sigma, patterns, data, threads=threads).solve(adjoint=False).J or 0.0)


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def fd_check(sigma: Conductivity, refined: TriMesh, U: DeformationField, t: float,
             patterns: Sequence[BoundaryFlux], data: npt.ArrayLike, *, threads: int = 1) -> FdCheck:
    """
    Central difference of G(t) = J on ``refined`` with its nodes moved by ±tU, against the
    distributed shape derivative. Labels and the boundary grid are unchanged by the transport.
    ``data`` are traces sampled on ``refined.boundary``.
    """
    sol = ForwardProblem(refined, sigma, patterns, data, threads=threads).solve()
    analytic = shape_directional(sigma, refined, sol.states, sol.adjoints, U)
    displacement = U.on(refined)
    g_plus = _misfit(refined.moved(t * displacement), sigma, patterns, data, threads)
    g_minus = _misfit(refined.moved(-t * displacement), sigma, patterns, data, threads)
    fd = (g_plus - g_minus) / (2 * t)
    check = FdCheck(analytic, fd, _rel_err(analytic, fd))
    logger.debug('shape fd check t=%g: analytic=%.10e fd=%.10e rel_err=%.3e', t, analytic, fd, check.rel_err)
    return check


def coeff_fd_check(sigma: Conductivity, refined: TriMesh, patterns: Sequence[BoundaryFlux], data: npt.ArrayLike,
                   region: int, h: Optional[float] = None, *, threads: int = 1) -> FdCheck:
    """Central difference of J in σ_region (default step 1e-6·σ_region) against coeff_gradient."""
    values = sigma.region_values
    if not 0 <= region < len(values):
        raise SolverError('region {} out of range for {} regions'.format(region, len(values)))
    h = 1e-6 * values[region] if h is None else h
    sol = ForwardProblem(refined, sigma, patterns, data, threads=threads).solve()
    analytic = float(coeff_gradient(refined, sol.states, sol.adjoints, len(values)).values[region])
    plus, minus = values.copy(), values.copy()
    plus[region] += h
    minus[region] -= h
    fd = (_misfit(refined, sigma.with_region_values(plus), patterns, data, threads)
          - _misfit(refined, sigma.with_region_values(minus), patterns, data, threads)) / (2 * h)
    check = FdCheck(analytic, fd, _rel_err(analytic, fd))
    logger.debug('coefficient fd check region %d: analytic=%.10e fd=%.10e rel_err=%.3e',
                 region, analytic, fd, check.rel_err)
    return check
