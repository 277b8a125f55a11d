from .config import InitialGuess, NGon, ReconConfig, load_guess, parse_guess
from .main import EXPERIMENTS, Variant, VariantBase, experiment, initial_guess, reconstruct, run_variants
from .trace import ReconTrace

__all__ = (
    'EXPERIMENTS', 'InitialGuess', 'NGon', 'ReconConfig', 'ReconTrace', 'Variant', 'VariantBase', 'experiment',
    'initial_guess', 'load_guess', 'parse_guess', 'reconstruct', 'run_variants',
)
