"""
Validation harness for the forward solver and the gradient formulas.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from .exceptions import EitConfigError, GeometryError
from .fem import BoundaryFlux, Conductivity, ForwardProblem, reciprocity_gap
from .gradients import (DeformationField, boundary_shape_directional, coeff_fd_check, fd_check, random_deformation,
                        shape_directional)
from .logs import main_logger as logger
from .measurements import patterns, phantom
from .meshing import coarse_mesh, refine

CHECKS = ('fem', 'reciprocity', 'fd', 'coeff', 'boundary')
FEM_TOL = 1e-10
RECIPROCITY_TOL = 1e-8
FD_TOL = 1e-4
FD_T = 1e-5
FD_FIELDS = 20
FD_MIN_ORDER = 1.5
FD_ORDER_STEPS = (1e-3, 1e-4)
COEFF_TOL = 1e-6
BOUNDARY_TOL = 0.05
# inclusion values are scaled by this to keep the checked iterate away from the minimum J = 0
PERTURBATION = 0.8


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ''


class _Setup:
    def __init__(self, truth: Conductivity, level: int, refine_levels: int, threads: int = 1):
        self.truth = truth
        self.threads = threads
        self.flux = patterns(level)
        self.coarse = coarse_mesh(truth.partition, level)
        self.refined = refine(self.coarse, refine_levels)
        self.data = ForwardProblem(self.refined, truth, self.flux, threads=threads).solve(adjoint=False).traces
        values = truth.region_values
        values[1:] *= PERTURBATION
        self.sigma = truth.with_region_values(values)


def check_fem(truth: Conductivity, refine_levels: int, threads: int = 1) -> CheckResult:
    """σ ≡ 1 with unit current in on the left side and out on the right: u = 1/2 - x exactly."""
    mesh = refine(coarse_mesh(truth.partition, 4), refine_levels)
    ones = truth.with_region_values(np.ones(truth.partition.n_regions))
    flux = BoundaryFlux(4, (0.0, -1.0, 0.0, 1.0))
    u = ForwardProblem(mesh, ones, [flux], threads=threads).solve(adjoint=False).states[:, 0]
    err = float(np.max(np.abs(u - (0.5 - mesh.nodes[:, 0]))))
    return CheckResult('fem', err, FEM_TOL, err <= FEM_TOL, 'max nodal error on {!r}'.format(mesh))


def check_reciprocity(setup: _Setup) -> CheckResult:
    gap = reciprocity_gap(setup.flux, setup.data, setup.refined.boundary)
    return CheckResult('reciprocity', gap, RECIPROCITY_TOL, gap <= RECIPROCITY_TOL,
                       '{} patterns'.format(len(setup.flux)))


def check_fd(setup: _Setup, seed: int) -> List[CheckResult]:
    """
    Transported-mesh central differences against the distributed derivative for random
    admissible fields, plus the observed order of the difference quotient.
    """
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(FD_FIELDS):
        U = random_deformation(setup.coarse, rng)
        errors.append(fd_check(setup.sigma, setup.refined, U, FD_T, setup.flux, setup.data,
                               threads=setup.threads).rel_err)
    worst = max(errors)
    results = [CheckResult('fd', worst, FD_TOL, worst <= FD_TOL,
                           '{} fields at t={:g}, median rel_err {:.3e}'.format(
                               FD_FIELDS, FD_T, float(np.median(errors))))]

    U = random_deformation(setup.coarse, rng)
    sol = ForwardProblem(setup.refined, setup.sigma, setup.flux, setup.data, threads=setup.threads).solve()
    exact = shape_directional(setup.sigma, setup.refined, sol.states, sol.adjoints, U)
    steps = FD_ORDER_STEPS
    checks = [fd_check(setup.sigma, setup.refined, U, t, setup.flux, setup.data, threads=setup.threads) for t in steps]
    errs = [abs(c.central_fd - exact) for c in checks]
    order = math.log(errs[0] / errs[1]) / math.log(steps[0] / steps[1]) if errs[1] > 0 and errs[0] > 0 else math.inf
    results.append(CheckResult('fd_order', order, FD_MIN_ORDER, order >= FD_MIN_ORDER,
                               'errors {:.3e} at t={:g}, {:.3e} at t={:g}'.format(
                                   errs[0], steps[0], errs[1], steps[1])))
    return results


def check_coeff(setup: _Setup) -> CheckResult:
    errors = [
        coeff_fd_check(setup.sigma, setup.refined, setup.flux, setup.data, region, threads=setup.threads).rel_err
        for region in range(setup.sigma.partition.n_regions)
    ]
    worst = max(errors)
    return CheckResult('coeff', worst, COEFF_TOL, worst <= COEFF_TOL,
                       'rel_err per region: {}'.format(', '.join('{:.2e}'.format(e) for e in errors)))


def check_boundary(truth: Conductivity, level: int, refine_levels: int, seed: int, threads: int = 1) -> CheckResult:
    """
    Distributed against boundary form for one random field over refinement levels 1 to
    ``refine_levels + 1``. Passes when the gap at ``refine_levels`` and at every finer level is
    within tolerance. The gap is not monotone in the level, so the coarser levels are only reported.
    """
    if len(truth.partition.inclusions) != 1:
        raise GeometryError('the boundary check needs exactly one inclusion, got {}'.format(
            len(truth.partition.inclusions)))
    coarse = coarse_mesh(truth.partition, level)
    U = random_deformation(coarse, np.random.default_rng(seed))
    gaps: List[float] = []
    for lv in range(1, refine_levels + 2):
        setup = _Setup(truth, level, lv, threads)
        sol = ForwardProblem(setup.refined, setup.sigma, setup.flux, setup.data, threads=threads).solve()
        # same coarse topology, so the field transfers between setups
        field = DeformationField(setup.coarse, U.values)
        distributed = shape_directional(setup.sigma, setup.refined, sol.states, sol.adjoints, field)
        boundary = boundary_shape_directional(setup.sigma, setup.refined, sol.states, sol.adjoints, field)
        gaps.append(abs(distributed - boundary) / abs(distributed) if distributed else math.inf)
        logger.debug('boundary check level %d: distributed=%.6e boundary=%.6e', lv, distributed, boundary)
    measured = gaps[refine_levels - 1]
    finer = max(gaps[refine_levels - 1:])
    return CheckResult('boundary', measured, BOUNDARY_TOL, finer <= BOUNDARY_TOL,
                       'relative gap per level: {}'.format(', '.join('{:.3e}'.format(g) for g in gaps)))


def run_checks(phantom_name: Union[str, Conductivity], checks: Sequence[str] = CHECKS, level: int = 4,
               refine_levels: int = 3, seed: int = 0, threads: int = 1) -> List[CheckResult]:
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise EitConfigError('unknown checks {}, choose from: {}'.format(', '.join(unknown), ', '.join(CHECKS)))
    truth = phantom(phantom_name) if isinstance(phantom_name, str) else phantom_name

    setup_cache: Dict[Tuple[int, int], _Setup] = {}

    def setup() -> _Setup:
        key = level, refine_levels
        if key not in setup_cache:
            setup_cache[key] = _Setup(truth, level, refine_levels, threads)
        return setup_cache[key]

    runners: Dict[str, Callable[[], List[CheckResult]]] = {
        'fem': lambda: [check_fem(truth, refine_levels, threads)],
        'reciprocity': lambda: [check_reciprocity(setup())],
        'fd': lambda: check_fd(setup(), seed),
        'coeff': lambda: [check_coeff(setup())],
        'boundary': lambda: [check_boundary(truth, level, refine_levels, seed, threads)],
    }
    results: List[CheckResult] = []
    for name in checks:
        for r in runners[name]():
            logger.info('%-12s %s measured=%.3e tolerance=%.1e %s', r.name, 'pass' if r.passed else 'FAIL',
                        r.measured, r.tolerance, r.detail)
            results.append(r)
    return results


def write_report(results: Sequence[CheckResult], out_dir: Union[str, Path]) -> None:
    out = Path(out_dir)
    (out / 'report.json').write_text(json.dumps([asdict(r) for r in results], indent=2))
    with (out / 'report.csv').open('w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['check', 'measured', 'tolerance', 'passed', 'detail'])
        for r in results:
            writer.writerow([r.name, '{:.6e}'.format(r.measured), '{:.1e}'.format(r.tolerance), r.passed, r.detail])
