from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import (EitShapesError, GeometryError, MeshingError, ReconstructionError, SolverError,
                          StepCollapseError)
from ..fem import Conductivity, ForwardProblem
from ..geometry import Partition, RegularizationParams, move_vertices, partition_validate, regular_polygon, regularize
from ..gradients import coeff_gradient, vertex_descent
from ..logs import recon_logger as logger
from ..measurements import DATA_REFINE_LEVELS, MeasurementSet, add_noise, calibrate_gamma, phantom, synthesize
from ..meshing import coarse_mesh, refine
from .config import InitialGuess, NGon, ReconConfig
from .log_handlers import IterationLogger, VariantLogger, fmt_values
from .trace import (STATUS_CONVERGED, STATUS_FAILED, STATUS_MAX_ITER, STATUS_STEP_COLLAPSE, IterationRecord,
                    ReconTrace)


class ReconResult(NamedTuple):
    sigma: Conductivity
    trace: ReconTrace


def initial_guess(guess: Union[InitialGuess, Sequence[NGon]], background: Optional[float] = None) -> Conductivity:
    """
    Regular n-gons, first vertex at angle 0 from each center. Raises GeometryError when the
    polygons overlap or reach the boundary.
    """
    if isinstance(guess, InitialGuess):
        ngons, bg = guess.ngons, guess.background
    else:
        ngons, bg = tuple(NGon(*g) for g in guess), 1.0
    if background is not None:
        bg = background
    part = Partition(tuple(regular_polygon(g.center, g.radius, g.sides) for g in ngons))
    diag = partition_validate(part)
    if not diag:
        raise GeometryError('initial guess is not a valid partition: {}'.format(diag.reason))
    return Conductivity(part, tuple(float(g.value) for g in ngons), float(bg))


def reconstruct(data: MeasurementSet, guess: InitialGuess, cfg: Optional[ReconConfig] = None, *,
                iteration_logger: Optional[IterationLogger] = None) -> ReconResult:
    """
    Fixed step gradient descent on the partition vertices and, unless ``values_known``, the
    region values. Each iteration regularizes the polygons, meshes the current partition,
    solves states and adjoints for every pattern, then steps along the descent directions.
    Stops when max_l |θ_l| <= tol, after ``max_iter`` updates, or when no feasible vertex
    step exists (the result is then flagged).
    """
    cfg = cfg or ReconConfig()
    it_logger = iteration_logger or IterationLogger(snapshot_every=cfg.snapshot_every, beta=cfg.beta)
    sigma = initial_guess(guess)
    delta = guess.side_length
    params = RegularizationParams(cfg.delta1_factor * delta, cfg.delta2_factor * delta)
    n_regions = sigma.partition.n_regions
    alpha = cfg.alpha_for(n_regions)
    flux = list(data.patterns)
    level = data.layout.level
    logger.info('reconstructing from %d patterns, %d inclusions, δ=%0.4f, values %s',
                len(flux), n_regions - 1, delta, 'known' if cfg.values_known else 'unknown')

    trace = ReconTrace()
    k = 0
    while True:
        try:
            if cfg.regularize:
                sigma = sigma.with_partition(regularize(sigma.partition, params))
            coarse = coarse_mesh(sigma.partition, level)
            refined = refine(coarse, cfg.refine_levels)
            problem = ForwardProblem(refined, sigma, flux, data.resample(refined.boundary),
                                     method=cfg.solver, threads=cfg.threads)
            sol = problem.solve()
            theta = vertex_descent(sigma, coarse, refined, sol.states, sol.adjoints)
            grad = None if cfg.values_known else coeff_gradient(refined, sol.states, sol.adjoints, n_regions)
        except (GeometryError, MeshingError, SolverError) as e:
            trace.status, trace.message = STATUS_FAILED, str(e)
            trace.final_partition = sigma.partition.to_json()
            raise ReconstructionError('iteration {} failed: {}'.format(k, e), trace) from e

        record = IterationRecord(
            iteration=k,
            J=float(sol.J or 0.0),
            values=sigma.region_values.tolist(),
            vertex_counts=[len(p) for p in sigma.partition.inclusions],
            max_theta=theta.max_norm,
            coeff_gradient=None if grad is None else grad.values.tolist(),
            partition=sigma.partition.to_json() if k % cfg.snapshot_every == 0 else None,
        )
        trace.records.append(record)

        if theta.max_norm <= cfg.tol:
            trace.status = STATUS_CONVERGED
            trace.message = 'max|θ| {:.3e} <= tol {:g}'.format(theta.max_norm, cfg.tol)
            it_logger.log(record)
            break
        if k >= cfg.max_iter:
            trace.status = STATUS_MAX_ITER
            trace.message = 'stopped after {} iterations'.format(cfg.max_iter)
            it_logger.log(record)
            break

        try:
            part, beta = move_vertices(sigma.partition, theta.theta, cfg.beta, max_halvings=cfg.max_halvings,
                                       clearance=cfg.min_clearance)
        except StepCollapseError as e:
            trace.status, trace.message = STATUS_STEP_COLLAPSE, str(e)
            it_logger.log(record)
            logger.warning('iteration %d: %s, returning the current iterate', k, e)
            break
        record.beta = beta
        it_logger.log(record)

        sigma = sigma.with_partition(part)
        if grad is not None:
            step = alpha * grad.values
            if cfg.background_known:
                step[0] = 0.0
            sigma = sigma.with_region_values(np.clip(sigma.region_values - step, cfg.sigma_min, cfg.sigma_max))
        k += 1

    trace.final_partition = sigma.partition.to_json()
    logger.info('%s after %d iterations: J=%0.6e σ=[%s]', trace.status, k, trace.records[-1].J,
                fmt_values(sigma.region_values))
    return ReconResult(sigma, trace)


class Variant(NamedTuple):
    noise: float = 0.0
    level: int = 4
    values_known: bool = True
    tol: Optional[float] = None
    initial_values: Optional[Tuple[float, ...]] = None
    label: str = ''


@dataclass
class VariantBase:
    truth: Conductivity
    guess: InitialGuess
    config: ReconConfig
    seed: int = 0
    data_refine_levels: int = DATA_REFINE_LEVELS
    noise_seeds: int = 100
    noise_norm: str = 'pattern'


@dataclass
class VariantResult:
    variant: Variant
    label: str
    seed: int
    sigma: Optional[Conductivity] = None
    trace: Optional[ReconTrace] = None
    noise_level: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_variants(base: VariantBase, variants: Sequence[Variant]) -> List[VariantResult]:
    """
    Run every variant against data synthesized once per electrode level. Variant ``i`` draws its
    noise with seed ``base.seed + i``; a failing variant is recorded and the others proceed.
    """
    clean: Dict[int, MeasurementSet] = {}
    results = []
    for i, v in enumerate(variants):
        seed = base.seed + i
        label = v.label or 'variant-{}'.format(i)
        result = VariantResult(v, label, seed)
        try:
            if v.level not in clean:
                clean[v.level] = synthesize(base.truth, v.level, base.data_refine_levels,
                                            threads=base.config.threads)
            data = clean[v.level]
            if v.noise > 0:
                gamma = calibrate_gamma(data, v.noise, base.noise_seeds, base.noise_norm)
                data = add_noise(data, gamma, seed, base.noise_norm)
                result.noise_level = data.noise_meta.level if data.noise_meta else 0.0
            changes: Dict[str, object] = {'values_known': v.values_known}
            if v.tol is not None:
                changes['tol'] = v.tol
            guess = base.guess.with_values(v.initial_values) if v.initial_values else base.guess
            result.sigma, result.trace = reconstruct(data, guess, base.config.replace(**changes))
        except EitShapesError as e:
            logger.warning('%s failed: %s', label, e)
            result.error = str(e)
            result.trace = getattr(e, 'trace', None)
        else:
            VariantLogger(label, result.trace.status).log(result.trace.records[-1])
        results.append(result)
    return results


def _ngon(cx: float, cy: float, r: float, n: int, value: float) -> NGon:
    return NGon((cx, cy), r, n, value)


def _heart_lung_guess(values: Tuple[float, float, float] = (0.5, 0.5, 2.0)) -> InitialGuess:
    return InitialGuess((
        _ngon(0.3, 0.6, 0.1, 16, values[0]),
        _ngon(0.7, 0.6, 0.1, 16, values[1]),
        _ngon(0.5, 0.3, 0.1, 16, values[2]),
    ))


def _pentagon() -> Tuple[VariantBase, List[Variant]]:
    base = VariantBase(phantom('pentagon'), InitialGuess((_ngon(0.5, 0.5, 0.25, 14, 10.0),)),
                       ReconConfig(delta1_factor=0.7, delta2_factor=1.8, values_known=True, tol=1e-5, beta=0.2,
                                   max_iter=500))
    return base, [Variant(level=4, label='pentagon-6'), Variant(noise=0.03, level=4, tol=0.004, label='pentagon-6-3%')]


def _nonconvex() -> Tuple[VariantBase, List[Variant]]:
    base = VariantBase(phantom('nonconvex'), InitialGuess((_ngon(0.5, 0.5, 0.25, 24, 10.0),)),
                       ReconConfig(delta1_factor=0.85, delta2_factor=1.8, values_known=True))
    return base, [Variant(level=8, label='nonconvex-28')]


def _heart_lung() -> Tuple[VariantBase, List[Variant]]:
    base = VariantBase(phantom('heart_lung'), _heart_lung_guess(),
                       ReconConfig(delta1_factor=0.9, delta2_factor=1.8, values_known=True))
    return base, [Variant(level=lv, label='heart_lung-{}'.format(lv * (lv - 1) // 2)) for lv in (4, 8, 16)]


def _square() -> Tuple[VariantBase, List[Variant]]:
    base = VariantBase(phantom('square'), InitialGuess((_ngon(0.35, 0.35, 0.12, 8, 10.0),)),
                       ReconConfig(delta1_factor=0.8, delta2_factor=1.7, values_known=True))
    return base, [Variant(level=8, label='square-misplaced')]


def _heart_lung_values() -> Tuple[VariantBase, List[Variant]]:
    base = VariantBase(phantom('heart_lung'), _heart_lung_guess((0.55, 0.55, 2.05)),
                       ReconConfig(delta1_factor=0.9, delta2_factor=1.8))
    return base, [
        Variant(level=8, values_known=False, label='heart_lung-values'),
        Variant(noise=0.05, level=8, values_known=False, label='heart_lung-values-5%'),
    ]


def _heart_lung_blind() -> Tuple[VariantBase, List[Variant]]:
    base = VariantBase(phantom('heart_lung'), _heart_lung_guess((1.0, 1.0, 1.0)),
                       ReconConfig(delta1_factor=0.9, delta2_factor=1.8))
    return base, [
        Variant(noise=0.01, level=8, values_known=False, label='heart_lung-blind'),
        Variant(noise=0.01, level=8, values_known=False, initial_values=(0.7, 0.7, 1.5),
                label='heart_lung-0.7-1.5'),
    ]


def _noise_sweep() -> Tuple[VariantBase, List[Variant]]:
    base, _ = _pentagon()
    return base, [
        Variant(noise=0.005, tol=0.004, label='pentagon-0.5%'),
        Variant(noise=0.05, tol=0.004, label='pentagon-5%'),
        Variant(noise=0.2, tol=0.02, label='pentagon-20%'),
    ]


EXPERIMENTS: Dict[str, Callable[[], Tuple[VariantBase, List[Variant]]]] = {
    'pentagon': _pentagon,
    'nonconvex': _nonconvex,
    'heart_lung': _heart_lung,
    'square': _square,
    'heart_lung_values': _heart_lung_values,
    'heart_lung_blind': _heart_lung_blind,
    'noise_sweep': _noise_sweep,
}


def experiment(name: str) -> Tuple[VariantBase, List[Variant]]:
    try:
        return EXPERIMENTS[name]()
    except KeyError:
        raise EitShapesError('unknown experiment "{}", choose from: {}'.format(name, ', '.join(EXPERIMENTS)))
