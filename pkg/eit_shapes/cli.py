import hashlib
import json
import sys
import traceback
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import click

from . import __version__
from .exceptions import EitConfigError, EitShapesError, ReconstructionError
from .fem import Conductivity
from .figures import convergence_svg, partition_svg
from .geometry import partition_symmetric_difference_area
from .logs import main_logger, setup_logging
from .measurements import (NOISE_NORMS, ElectrodeLayout, MeasurementSet, add_noise, calibrate_gamma, load_truth,
                           phantom, phantom_names, synthesize as _synthesize)
from .meshing import ELECTRODE_LEVELS
from .recon import EXPERIMENTS, ReconConfig, ReconTrace, experiment, initial_guess, load_guess
from .recon import reconstruct as _reconstruct
from .recon import run_variants
from .recon.config import SOLVER_METHODS
from .verify import CHECKS, run_checks, write_report

_dir_may_exist = click.Path(dir_okay=True, file_okay=False, writable=True, resolve_path=True)
_file_existing = click.Path(exists=True, dir_okay=False, file_okay=True)
_levels = click.Choice([str(lv) for lv in ELECTRODE_LEVELS])


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: List[int]
    inputs: Dict[str, str]
    outputs: List[str]
    version: str = __version__
    metrics: Dict[str, Any] = field(default_factory=dict)

    def write(self, out_dir: Path) -> None:
        (out_dir / 'manifest.json').write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + '\n')


def _hash(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _out_dir(out: Optional[str]) -> Path:
    p = Path(out or '.')
    p.mkdir(parents=True, exist_ok=True)
    return p


@contextmanager
def _errors(verbose: bool) -> Iterator[None]:
    try:
        yield
    except EitShapesError as e:
        if verbose:
            tb = click.style(traceback.format_exc().strip('\n'), fg='white', dim=True)
            main_logger.warning('%s traceback:\n%s', type(e).__name__, tb)
        main_logger.error('Error: %s', e)
        sys.exit(2)


@click.group()
@click.version_option(__version__, '-V', '--version', prog_name='eit-shapes')
def cli() -> None:
    pass


verbose_help = 'Enable verbose output.'
threads_help = 'Threads used to solve the current patterns of one mesh, default 1. env variable: EIT_SHAPES_THREADS'
out_help = 'Output directory, created if missing, default the current directory.'
level_help = 'Number of equal electrodes on ∂Ω, default 4; every electrode pair is one current pattern.'
truth_help = 'Phantom name (see "phantoms") or the path of a conductivity JSON file.'
guess_help = ('Initial guess, either "ngon:cx,cy,r,n,value[;cx,cy,r,n,value...][;bg:value]" or the path of a '
              'guess JSON file.')


# defaults are None throughout so default settings live in one place: the owning module
@cli.command()
@click.argument('truth')
@click.option('-l', '--level', type=_levels, help=level_help)
@click.option('-n', '--noise', type=click.FLOAT, help='Target relative noise level, e.g. 0.05, default 0.')
@click.option('--noise-norm', type=click.Choice(NOISE_NORMS), help='Noise scaling, per pattern (default) or global.')
@click.option('-s', '--seed', type=click.INT, help='Noise seed, default 0.')
@click.option('--refine-levels', type=click.INT, help='Refinements of the data mesh, default 4.')
@click.option('-o', '--out', type=_dir_may_exist, help=out_help)
@click.option('--threads', envvar='EIT_SHAPES_THREADS', type=click.INT, help=threads_help)
@click.option('-v', '--verbose', is_flag=True, help=verbose_help)
def synthesize(truth: str, level: Optional[str], noise: Optional[float], noise_norm: Optional[str],
               seed: Optional[int], refine_levels: Optional[int], out: Optional[str], threads: Optional[int],
               verbose: bool) -> None:
    """
    Generate boundary data for a phantom or conductivity file on a mesh fitted to it.
    """
    setup_logging(verbose)
    with _errors(verbose):
        sigma = load_truth(truth)
        lv = int(level or 4)
        seed = seed or 0
        norm = noise_norm or 'pattern'
        kwargs = {} if refine_levels is None else {'refine_levels': refine_levels}
        ms = _synthesize(sigma, lv, threads=threads or 1, **kwargs)
        if noise:
            gamma = calibrate_gamma(ms, noise, norm=norm)
            ms = add_noise(ms, gamma, seed, norm)
            main_logger.info('noise gamma=%0.6g, achieved relative level %0.4f (target %g)',
                             gamma, ms.noise_meta.level if ms.noise_meta else 0.0, noise)
        main_logger.info('%d patterns on %d boundary nodes', ms.n_patterns, len(ms.s))

        out_dir = _out_dir(out)
        ms.dump(out_dir / 'measurements.json')
        ms.to_csv(out_dir / 'traces.csv')
        (out_dir / 'truth.json').write_text(json.dumps(sigma.to_json()))
        (out_dir / 'truth.svg').write_text(partition_svg(sigma, None, ms.layout))
        RunManifest(
            command='synthesize',
            config_hash=_hash({'truth': sigma.to_json(), 'level': lv, 'noise': noise or 0.0, 'norm': norm,
                               'refine_levels': refine_levels}),
            seeds=[seed],
            inputs={'truth': truth},
            outputs=['measurements.json', 'traces.csv', 'truth.json', 'truth.svg'],
            metrics={'noise_level': ms.noise_meta.level if ms.noise_meta else 0.0},
        ).write(out_dir)


def _write_run(out_dir: Path, sigma: Conductivity, trace: ReconTrace, layout: ElectrodeLayout,
               truth: Optional[Conductivity]) -> Dict[str, Any]:
    (out_dir / 'conductivity.json').write_text(json.dumps(sigma.to_json()))
    trace.to_jsonl(out_dir / 'trace.jsonl')
    trace.to_csv(out_dir / 'convergence.csv')
    (out_dir / 'convergence.svg').write_text(convergence_svg(trace))
    (out_dir / 'overlay.svg').write_text(partition_svg(truth, sigma, layout))
    metrics: Dict[str, Any] = {
        'status': trace.status,
        'iterations': trace.iterations,
        'J': trace.records[-1].J if trace.records else None,
        'values': sigma.region_values.tolist(),
    }
    if truth is not None:
        true_area = sum(p.signed_area for p in truth.partition.inclusions)
        metrics['relative_symmetric_difference'] = (
            partition_symmetric_difference_area(truth.partition, sigma.partition) / true_area
        )
    return metrics


@cli.command()
@click.option('-d', '--data', 'data_path', required=True, help='Measurement JSON written by "synthesize".')
@click.option('-g', '--guess', required=True, help=guess_help)
@click.option('--values-known/--values-unknown', default=None, help='Keep the region values fixed, default unknown.')
@click.option('-c', '--config', 'config_path', type=_file_existing, help='Reconstruction config JSON file.')
@click.option('-t', '--truth', help='True conductivity, drawn under the reconstruction. ' + truth_help)
@click.option('--max-iter', type=click.INT, help='Iteration limit, default 1000.')
@click.option('--tol', type=click.FLOAT, help='Stop when max|θ| falls to this, default 0.004.')
@click.option('--alpha', type=click.FLOAT, help='Coefficient step, default 0.5.')
@click.option('--beta', type=click.FLOAT, help='Vertex step, default 0.05.')
@click.option('--solver', type=click.Choice(SOLVER_METHODS), help='Linear solver, default lu.')
@click.option('-o', '--out', type=_dir_may_exist, help=out_help)
@click.option('--threads', envvar='EIT_SHAPES_THREADS', type=click.INT, help=threads_help)
@click.option('-v', '--verbose', is_flag=True, help=verbose_help)
def reconstruct(data_path: str, guess: str, config_path: Optional[str], truth: Optional[str],
                out: Optional[str], verbose: bool, **overrides: Any) -> None:
    """
    Reconstruct a piecewise constant conductivity from boundary data, starting from regular polygons.
    """
    setup_logging(verbose)
    with _errors(verbose):
        data = MeasurementSet.load(data_path)
        initial = load_guess(guess)
        diag = initial_guess(initial).validate()
        if not diag:
            raise EitConfigError('initial guess "{}" is invalid: {}'.format(guess, diag.reason))
        cfg = ReconConfig.from_file(config_path, **overrides)
        true_sigma = load_truth(truth) if truth else None
        out_dir = _out_dir(out)
        manifest = RunManifest(
            command='reconstruct',
            config_hash=cfg.config_hash(),
            seeds=[data.noise_meta.seed] if data.noise_meta else [],
            inputs={'data': data_path, 'guess': guess, **({'truth': truth} if truth else {}),
                    **({'config': config_path} if config_path else {})},
            outputs=[],
        )
        try:
            sigma, trace = _reconstruct(data, initial, cfg)
        except ReconstructionError as e:
            if e.trace is not None:
                e.trace.to_jsonl(out_dir / 'trace.jsonl')
                manifest.outputs = ['trace.jsonl']
            manifest.metrics = {
                'status': 'failed',
                'iterations': e.trace.iterations if e.trace is not None else 0,
                'error': str(e),
            }
            manifest.write(out_dir)
            raise
        metrics = _write_run(out_dir, sigma, trace, data.layout, true_sigma)
        main_logger.info('%s after %d iterations, σ=[%s]', trace.status, trace.iterations,
                         ', '.join('{:0.4g}'.format(v) for v in sigma.region_values))
        if 'relative_symmetric_difference' in metrics:
            main_logger.info('symmetric difference %0.2f%% of the true inclusion area',
                             100 * metrics['relative_symmetric_difference'])
        manifest.outputs = ['conductivity.json', 'trace.jsonl', 'convergence.csv', 'convergence.svg', 'overlay.svg']
        manifest.metrics = metrics
        manifest.write(out_dir)


@cli.command()
@click.option('-p', '--phantom', 'phantom_name', help='Phantom to check on, default pentagon.')
@click.option('-c', '--checks', multiple=True, type=click.Choice(CHECKS), help='Checks to run, default all.')
@click.option('-l', '--level', type=_levels, help=level_help)
@click.option('--refine-levels', type=click.INT, help='Refinements of the checked mesh, default 3.')
@click.option('-s', '--seed', type=click.INT, help='Seed of the random deformation fields, default 0.')
@click.option('-o', '--out', type=_dir_may_exist, help=out_help)
@click.option('--threads', envvar='EIT_SHAPES_THREADS', type=click.INT, help=threads_help)
@click.option('-v', '--verbose', is_flag=True, help=verbose_help)
def verify(phantom_name: Optional[str], checks: List[str], level: Optional[str], refine_levels: Optional[int],
           seed: Optional[int], out: Optional[str], threads: Optional[int], verbose: bool) -> None:
    """
    Check the forward solver and the shape and coefficient gradients against finite differences
    and exact solutions. Exits 1 if any check is out of tolerance.
    """
    setup_logging(verbose)
    with _errors(verbose):
        name = phantom_name or 'pentagon'
        checks = list(checks) or list(CHECKS)
        lv, rl, seed = int(level or 4), refine_levels or 3, seed or 0
        results = run_checks(name, checks, lv, rl, seed, threads or 1)
        out_dir = _out_dir(out)
        write_report(results, out_dir)
        RunManifest(
            command='verify',
            config_hash=_hash({'phantom': name, 'checks': checks, 'level': lv, 'refine_levels': rl}),
            seeds=[seed],
            inputs={'phantom': name},
            outputs=['report.json', 'report.csv'],
            metrics={r.name: r.measured for r in results},
        ).write(out_dir)
    failed = [r.name for r in results if not r.passed]
    if failed:
        main_logger.error('checks failed: %s', ', '.join(failed))
        sys.exit(1)
    main_logger.info('all %d checks passed', len(results))


@cli.command()
@click.option('-v', '--verbose', is_flag=True, help=verbose_help)
def phantoms(verbose: bool) -> None:
    """
    List the bundled phantoms.
    """
    setup_logging(verbose)
    with _errors(verbose):
        for name in phantom_names():
            sigma = phantom(name)
            main_logger.info('%-12s inclusions=%d vertices=%s σ=[%s]', name, len(sigma.partition.inclusions),
                             '/'.join(str(len(p)) for p in sigma.partition.inclusions),
                             ', '.join('{:g}'.format(v) for v in sigma.region_values))


@cli.command()
@click.argument('name', type=click.Choice(list(EXPERIMENTS)))
@click.option('-s', '--seed', type=click.INT, help='Base noise seed, variant i uses seed + i, default 0.')
@click.option('--max-iter', type=click.INT, help='Iteration limit per variant, default that of the preset.')
@click.option('-o', '--out', type=_dir_may_exist, help=out_help)
@click.option('--threads', envvar='EIT_SHAPES_THREADS', type=click.INT, help=threads_help)
@click.option('-v', '--verbose', is_flag=True, help=verbose_help)
def experiments(name: str, seed: Optional[int], max_iter: Optional[int], out: Optional[str],
                threads: Optional[int], verbose: bool) -> None:
    """
    Run a preset batch of reconstructions, one output directory per variant.
    """
    setup_logging(verbose)
    with _errors(verbose):
        base, variants = experiment(name)
        base.seed = seed or 0
        changes = {k: v for k, v in {'max_iter': max_iter, 'threads': threads}.items() if v is not None}
        if changes:
            base.config = base.config.replace(**changes)
        results = run_variants(base, variants)

        out_dir = _out_dir(out)
        summary: Dict[str, Any] = {}
        for r in results:
            run_dir = _out_dir(str(out_dir / r.label))
            if r.ok and r.sigma is not None and r.trace is not None:
                layout = ElectrodeLayout(r.variant.level)
                summary[r.label] = {**_write_run(run_dir, r.sigma, r.trace, layout, base.truth),
                                    'noise_level': r.noise_level, 'seed': r.seed}
            else:
                if r.trace is not None:
                    r.trace.to_jsonl(run_dir / 'trace.jsonl')
                summary[r.label] = {'error': r.error, 'seed': r.seed}
        RunManifest(
            command='experiments {}'.format(name),
            config_hash=base.config.config_hash(),
            seeds=[r.seed for r in results],
            inputs={'experiment': name},
            outputs=sorted(r.label for r in results),
            metrics=summary,
        ).write(out_dir)
    failed = [r.label for r in results if not r.ok or (r.trace is not None and r.trace.flagged)]
    if failed:
        main_logger.error('variants failed or flagged: %s', ', '.join(failed))
        sys.exit(1)
