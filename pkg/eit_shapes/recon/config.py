import hashlib
import json
import math
import re
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from ..exceptions import EitConfigError
from ..fem import LAMBDA, SIGMA_MAX
from ..logs import recon_logger as logger

SOLVER_METHODS = ('lu', 'cg')
CONFIG_FIELDS = (
    'alpha', 'beta', 'delta1_factor', 'delta2_factor', 'tol', 'max_iter', 'refine_levels', 'values_known',
    'background_known', 'sigma_min', 'sigma_max', 'snapshot_every', 'regularize', 'min_clearance', 'max_halvings',
    'solver', 'threads',
)


class ReconConfig:
    def __init__(self, *,
                 alpha: Union[float, Sequence[float]] = 0.5,
                 beta: float = 0.05,
                 delta1_factor: float = 0.9,
                 delta2_factor: float = 1.8,
                 tol: float = 0.004,
                 max_iter: int = 1000,
                 refine_levels: int = 3,
                 values_known: bool = False,
                 background_known: bool = True,
                 sigma_min: float = LAMBDA,
                 sigma_max: float = SIGMA_MAX,
                 snapshot_every: int = 10,
                 regularize: bool = True,
                 min_clearance: float = 0.01,
                 max_halvings: int = 10,
                 solver: str = 'lu',
                 threads: int = 1):
        if isinstance(alpha, (int, float)):
            self.alpha: Union[float, Tuple[float, ...]] = float(alpha)
            alphas = [self.alpha]
        else:
            self.alpha = tuple(float(a) for a in alpha)
            alphas = list(self.alpha)
        if not alphas or min(alphas) <= 0:
            raise EitConfigError('coefficient steps must be positive, got {!r}'.format(alpha))
        if beta <= 0:
            raise EitConfigError('vertex step beta must be positive, got {}'.format(beta))
        if not 0 < delta1_factor < delta2_factor:
            raise EitConfigError('regularization factors must satisfy 0 < delta1_factor < delta2_factor, '
                                 'got {} and {}'.format(delta1_factor, delta2_factor))
        if tol <= 0:
            raise EitConfigError('tol must be positive, got {}'.format(tol))
        if max_iter < 0 or refine_levels < 1 or snapshot_every < 1 or max_halvings < 0:
            raise EitConfigError('max_iter and max_halvings must be non-negative, refine_levels and '
                                 'snapshot_every at least 1')
        if not 0 < sigma_min < sigma_max:
            raise EitConfigError('conductivity clamp must satisfy 0 < sigma_min < sigma_max, got [{}, {}]'.format(
                sigma_min, sigma_max))
        if min_clearance < 0:
            raise EitConfigError('min_clearance must be non-negative, got {}'.format(min_clearance))
        if solver not in SOLVER_METHODS:
            raise EitConfigError('solver must be one of {}, got "{}"'.format(SOLVER_METHODS, solver))
        if threads < 1:
            raise EitConfigError('threads must be at least 1, got {}'.format(threads))

        self.beta = float(beta)
        self.delta1_factor = float(delta1_factor)
        self.delta2_factor = float(delta2_factor)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.refine_levels = int(refine_levels)
        self.values_known = bool(values_known)
        self.background_known = bool(background_known)
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.snapshot_every = int(snapshot_every)
        self.regularize = bool(regularize)
        self.min_clearance = float(min_clearance)
        self.max_halvings = int(max_halvings)
        self.solver = solver
        self.threads = int(threads)
        logger.debug('config loaded:\n%s', self)

    @classmethod
    def from_file(cls, path: Optional[Union[str, Path]] = None, **overrides: Any) -> 'ReconConfig':
        """
        Load a JSON config file, then apply ``overrides``; ``None`` overrides are ignored so
        unset command line options fall through to the file or the defaults.
        """
        kwargs: Dict[str, Any] = {}
        if path is not None:
            p = Path(path)
            try:
                kwargs = json.loads(p.read_text())
            except (OSError, ValueError) as e:
                raise EitConfigError('unable to read config file "{}": {}'.format(p, e)) from e
            if not isinstance(kwargs, dict):
                raise EitConfigError('config file "{}" must contain a JSON object'.format(p))
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(kwargs) - set(CONFIG_FIELDS)
        if unknown:
            raise EitConfigError('unknown config fields: {}'.format(', '.join(sorted(unknown))))
        return cls(**kwargs)

    def replace(self, **changes: Any) -> 'ReconConfig':
        return ReconConfig(**{**self.as_dict(), **changes})

    def as_dict(self) -> Dict[str, Any]:
        d = {f: getattr(self, f) for f in CONFIG_FIELDS}
        if isinstance(self.alpha, tuple):
            d['alpha'] = list(self.alpha)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()

    def alpha_for(self, n_regions: int) -> npt.NDArray[np.float64]:
        """Coefficient steps per region id, background first."""
        if isinstance(self.alpha, float):
            return np.full(n_regions, self.alpha)
        if len(self.alpha) != n_regions:
            raise EitConfigError('{} coefficient steps given for {} regions'.format(len(self.alpha), n_regions))
        return np.array(self.alpha)

    def __str__(self) -> str:
        return 'ReconConfig:\n' + '\n'.join('  {0}: {1!r}'.format(f, getattr(self, f)) for f in CONFIG_FIELDS)


class NGon(NamedTuple):
    center: Tuple[float, float]
    radius: float
    sides: int
    value: float

    @property
    def side_length(self) -> float:
        return 2 * self.radius * math.sin(math.pi / self.sides)


class InitialGuess(NamedTuple):
    ngons: Tuple[NGon, ...]
    background: float = 1.0

    @property
    def side_length(self) -> float:
        """δ, the side length of the first polygon."""
        if not self.ngons:
            raise EitConfigError('initial guess has no polygons')
        return self.ngons[0].side_length

    def with_values(self, values: Sequence[float]) -> 'InitialGuess':
        if len(values) != len(self.ngons):
            raise EitConfigError('{} values given for {} polygons'.format(len(values), len(self.ngons)))
        return self._replace(ngons=tuple(g._replace(value=float(v)) for g, v in zip(self.ngons, values)))

    def to_json(self) -> Dict[str, Any]:
        return {
            'background': self.background,
            'ngons': [{'center': list(g.center), 'radius': g.radius, 'sides': g.sides, 'value': g.value}
                      for g in self.ngons],
        }


_number = r'[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?'
_ngon_re = re.compile(r'(?:ngon:)?\s*({n})\s*,\s*({n})\s*,\s*({n})\s*,\s*(\d+)\s*,\s*({n})'.format(n=_number))
_bg_re = re.compile(r'(?:bg|background):\s*({n})'.format(n=_number))


def parse_guess(text: str) -> InitialGuess:
    """
    Parse ``ngon:cx,cy,r,n,value[;cx,cy,r,n,value...][;bg:value]``.
    """
    ngons: List[NGon] = []
    background = 1.0
    for item in filter(None, (i.strip() for i in text.strip().split(';'))):
        m = _ngon_re.fullmatch(item)
        if m:
            cx, cy, r, n, value = m.groups()
            ngons.append(NGon((float(cx), float(cy)), float(r), int(n), float(value)))
            continue
        m = _bg_re.fullmatch(item)
        if m:
            background = float(m.group(1))
            continue
        raise EitConfigError('unable to parse guess item "{}", expected "ngon:cx,cy,r,n,value"'.format(item))
    if not ngons:
        raise EitConfigError('guess "{}" defines no polygons'.format(text))
    for g in ngons:
        if g.sides < 3 or g.radius <= 0:
            raise EitConfigError('guess polygons need at least 3 sides and a positive radius')
    return InitialGuess(tuple(ngons), background)


def guess_from_json(obj: Dict[str, Any]) -> InitialGuess:
    try:
        ngons = tuple(
            NGon((float(g['center'][0]), float(g['center'][1])), float(g['radius']), int(g['sides']), float(g['value']))
            for g in obj['ngons']
        )
        return InitialGuess(ngons, float(obj.get('background', 1.0)))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise EitConfigError('invalid guess JSON: {}'.format(e)) from e


def load_guess(source: str) -> InitialGuess:
    """An inline guess or the path of a guess JSON file."""
    path = Path(source)
    if source.endswith('.json') or path.is_file():
        try:
            obj = json.loads(path.read_text())
        except (OSError, ValueError) as e:
            raise EitConfigError('unable to read guess file "{}": {}'.format(path, e)) from e
        return guess_from_json(obj)
    return parse_guess(source)
