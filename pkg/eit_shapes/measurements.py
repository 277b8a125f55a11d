"""
Electrode current patterns, synthetic boundary data and the uniform noise model.
"""
import csv
import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from .exceptions import MeasurementError, UnknownPhantomError
from .fem import BoundaryFlux, Conductivity, ForwardProblem
from .geometry import partition_validate
from .logs import solver_logger as logger
from .meshing import BOUNDARY_LENGTH, ELECTRODE_LEVELS, SIDES, BoundaryGrid, boundary_point, coarse_mesh, refine

PHANTOM_FILE = Path(__file__).parent / 'phantoms.json'
NOISE_NORMS = ('pattern', 'global')
DATA_REFINE_LEVELS = 4
StrPath = Union[str, Path]


class Electrode(NamedTuple):
    index: int
    side: str
    start: float  # arclength
    end: float


@dataclass(frozen=True)
class ElectrodeLayout:
    level: int

    def __post_init__(self) -> None:
        if self.level not in ELECTRODE_LEVELS:
            raise MeasurementError('electrode level must be one of {}, got {}'.format(ELECTRODE_LEVELS, self.level))

    @property
    def electrode_length(self) -> float:
        return BOUNDARY_LENGTH / self.level

    @property
    def electrodes(self) -> List[Electrode]:
        h = self.electrode_length
        return [Electrode(e, SIDES[int(e * h)], e * h, (e + 1) * h) for e in range(self.level)]


def patterns(level: int) -> List[BoundaryFlux]:
    """One pattern per unordered electrode pair (a, b): +1 on a, -1 on b, 0 elsewhere."""
    ElectrodeLayout(level)
    out = []
    for a, b in itertools.combinations(range(level), 2):
        density = [0.0] * level
        density[a], density[b] = 1.0, -1.0
        out.append(BoundaryFlux(level, tuple(density), (a, b)))
    return out


class NoiseMeta(NamedTuple):
    gamma: float
    seed: int
    level: float
    norm: str = 'pattern'


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """
    Traces f_j sampled at boundary nodes of the generating mesh, ``s`` holding their arclengths
    counterclockwise from (0, 0); ``traces`` has one column per pattern.
    """
    layout: ElectrodeLayout
    patterns: Tuple[BoundaryFlux, ...]
    s: npt.NDArray[np.float64]
    traces: npt.NDArray[np.float64]
    noise_meta: Optional[NoiseMeta] = None

    def __post_init__(self) -> None:
        if self.traces.shape != (len(self.s), len(self.patterns)):
            raise MeasurementError('traces of shape {} do not match {} boundary nodes and {} patterns'.format(
                self.traces.shape, len(self.s), len(self.patterns)))
        n = len(self.patterns)
        expected = self.layout.level * (self.layout.level - 1) // 2
        if n != expected:
            raise MeasurementError('{} patterns for {} electrodes, expected {}'.format(n, self.layout.level, expected))

    @property
    def grid(self) -> BoundaryGrid:
        return BoundaryGrid(np.arange(len(self.s)), self.s)

    @property
    def positions(self) -> npt.NDArray[np.float64]:
        return boundary_point(self.s)

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    def resample(self, grid: BoundaryGrid) -> npt.NDArray[np.float64]:
        """Traces on another boundary grid, periodic piecewise linear in arclength."""
        return self.grid.interpolate(grid.s, self.traces).reshape(len(grid), self.n_patterns)

    def with_traces(self, traces: npt.NDArray[np.float64], noise_meta: Optional[NoiseMeta] = None) -> 'MeasurementSet':
        return replace(self, traces=traces, noise_meta=noise_meta)

    def to_json(self) -> Dict[str, Any]:
        return {
            'layout': {'level': self.layout.level},
            'patterns': [{'pair': list(g.pair) if g.pair else None, 'density': list(g.density)} for g in self.patterns],
            'boundary_nodes': [{'s': s, 'x': x, 'y': y} for s, (x, y) in zip(self.s.tolist(), self.positions.tolist())],
            'traces': self.traces.T.tolist(),
            'noise_meta': self.noise_meta._asdict() if self.noise_meta else None,
        }

    @classmethod
    def from_json(cls, obj: Dict[str, Any]) -> 'MeasurementSet':
        try:
            layout = ElectrodeLayout(int(obj['layout']['level']))
            flux = tuple(
                BoundaryFlux(layout.level, tuple(float(v) for v in p['density']),
                             tuple(p['pair']) if p['pair'] else None)
                for p in obj['patterns']
            )
            s = np.array([n['s'] for n in obj['boundary_nodes']], dtype=float)
            traces = np.array(obj['traces'], dtype=float).reshape(len(flux), len(s)).T
            meta = obj.get('noise_meta')
        except (KeyError, TypeError, ValueError) as e:
            raise MeasurementError('invalid measurement file: {}'.format(e)) from e
        return cls(layout, flux, s, traces, NoiseMeta(**meta) if meta else None)

    def dump(self, path: StrPath) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: StrPath) -> 'MeasurementSet':
        p = Path(path)
        try:
            obj = json.loads(p.read_text())
        except (OSError, ValueError) as e:
            raise MeasurementError('unable to read measurements from "{}": {}'.format(p, e)) from e
        return cls.from_json(obj)

    def to_csv(self, path: StrPath) -> None:
        """One row per boundary node: s, x, y, then one column per pattern."""
        with Path(path).open('w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['s', 'x', 'y'] + ['f_{}_{}'.format(*g.pair) if g.pair else 'f' for g in self.patterns])
            for s, (x, y), row in zip(self.s, self.positions, self.traces):
                writer.writerow(['{:.6f}'.format(s), '{:.6f}'.format(x), '{:.6f}'.format(y)]
                                + ['{:.12e}'.format(v) for v in row])


def synthesize(true_sigma: Conductivity, level: int = 4, refine_levels: int = DATA_REFINE_LEVELS, *,
               threads: int = 1) -> MeasurementSet:
    """
    Boundary data on a mesh fitted to the true partition (coarse mesh refined ``refine_levels``
    times), never reused for reconstruction. Every trace has zero boundary mean.
    """
    layout = ElectrodeLayout(level)
    flux = patterns(level)
    mesh = refine(coarse_mesh(true_sigma.partition, level), refine_levels)
    sol = ForwardProblem(mesh, true_sigma, flux, threads=threads).solve(adjoint=False)
    logger.debug('synthesized %d traces on %r', len(flux), mesh)
    return MeasurementSet(layout, tuple(flux), mesh.boundary.s.copy(), sol.traces)


def _norms(ms: MeasurementSet, traces: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    M = ms.grid.mass
    return np.sqrt(np.maximum(np.sum(traces * (M @ traces), axis=0), 0.0))


def _noise_scale(ms: MeasurementSet, norm: str) -> npt.NDArray[np.float64]:
    if norm not in NOISE_NORMS:
        raise MeasurementError('noise norm must be one of {}, got "{}"'.format(NOISE_NORMS, norm))
    per_pattern = _norms(ms, ms.traces)
    if norm == 'global':
        return np.full_like(per_pattern, np.sqrt(np.sum(per_pattern ** 2)))
    return per_pattern


def add_noise(ms: MeasurementSet, gamma: float, seed: int, norm: str = 'pattern') -> MeasurementSet:
    """
    f̃_j(x) = f_j(x) + ε ‖f_j‖_{L²(∂Ω)}, ε ~ U(-γ, γ) drawn independently per node and pattern.
    With ``norm='global'`` the scale is sqrt(Σ_j ‖f_j‖²) instead.
    """
    if gamma < 0:
        raise MeasurementError('gamma must be non-negative, got {}'.format(gamma))
    if ms.noise_meta is not None:
        raise MeasurementError('measurements already carry noise')
    scale = _noise_scale(ms, norm)
    if gamma == 0:
        return ms
    eps = gamma * np.random.default_rng(seed).uniform(-1.0, 1.0, size=ms.traces.shape)
    noisy = ms.with_traces(ms.traces + eps * scale)
    achieved = noise_level(ms, noisy)
    logger.debug('noise gamma=%g seed=%d: relative level %.4f', gamma, seed, achieved)
    return ms.with_traces(noisy.traces, NoiseMeta(float(gamma), int(seed), achieved, norm))


def noise_level(clean: MeasurementSet, noisy: MeasurementSet) -> float:
    """sqrt(Σ_j ‖f̃_j - f_j‖²) / sqrt(Σ_j ‖f_j‖²) on the boundary."""
    if clean.traces.shape != noisy.traces.shape or not np.array_equal(clean.s, noisy.s):
        raise MeasurementError('measurement sets are not sampled identically')
    denominator = np.sqrt(np.sum(_norms(clean, clean.traces) ** 2))
    if denominator == 0:
        raise MeasurementError('clean measurements are identically zero')
    return float(np.sqrt(np.sum(_norms(clean, noisy.traces - clean.traces) ** 2)) / denominator)


def calibrate_gamma(ms: MeasurementSet, target: float, seeds: int = 100, norm: str = 'pattern', *,
                    tol: float = 1e-6) -> float:
    """
    γ whose Monte Carlo mean noise level over ``seeds`` seeds (0, 1, ...) matches ``target``,
    found by bisection. Unit-γ perturbations are drawn once and scaled.
    """
    if target < 0:
        raise MeasurementError('target noise level must be non-negative, got {}'.format(target))
    if target == 0:
        return 0.0
    scale = _noise_scale(ms, norm)
    denominator = np.sqrt(np.sum(_norms(ms, ms.traces) ** 2))
    unit = np.array([
        np.sqrt(np.sum(_norms(ms, np.random.default_rng(seed).uniform(-1.0, 1.0, size=ms.traces.shape) * scale) ** 2))
        for seed in range(seeds)
    ]) / denominator

    def mean_level(gamma: float) -> float:
        return float(np.mean(gamma * unit))

    lo, hi = 0.0, 1.0
    while mean_level(hi) < target:
        hi *= 2
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mean_level(mid) < target:
            lo = mid
        else:
            hi = mid
    gamma = 0.5 * (lo + hi)
    logger.debug('calibrated gamma=%.6g for target level %g over %d seeds', gamma, target, seeds)
    return gamma


def _phantom_asset() -> Dict[str, Any]:
    return json.loads(PHANTOM_FILE.read_text())


def _validated(sigma: Conductivity, what: str) -> Conductivity:
    for diag in (partition_validate(sigma.partition), sigma.validate()):
        if not diag:
            raise MeasurementError('{} is invalid: {}'.format(what, diag.reason))
    return sigma


def phantom_names() -> List[str]:
    return sorted(_phantom_asset()['phantoms'])


def phantom(name: str) -> Conductivity:
    phantoms = _phantom_asset()['phantoms']
    try:
        entry = phantoms[name]
    except KeyError:
        raise UnknownPhantomError('unknown phantom "{}", choose from: {}'.format(name, ', '.join(sorted(phantoms))))
    return _validated(Conductivity.from_json(entry), 'phantom "{}"'.format(name))


def load_truth(source: str) -> Conductivity:
    """A phantom name or the path of a conductivity JSON file."""
    path = Path(source)
    if path.suffix == '.json' or path.exists():
        try:
            obj = json.loads(path.read_text())
        except (OSError, ValueError) as e:
            raise MeasurementError('unable to read conductivity from "{}": {}'.format(path, e)) from e
        return _validated(Conductivity.from_json(obj), 'conductivity in "{}"'.format(path))
    return phantom(source)


def electrode_segments(layout: ElectrodeLayout) -> List[npt.NDArray[np.float64]]:
    """Start and end points of every electrode, one (2, 2) array each."""
    return [boundary_point([e.start, e.end]) for e in layout.electrodes]
