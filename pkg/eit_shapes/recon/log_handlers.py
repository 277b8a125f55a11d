import json
import logging
from typing import Dict, Optional, Sequence

from ..logs import iter_logger
from .trace import STATUS_FAILED, STATUS_STEP_COLLAPSE, IterationRecord

FLAG_HALVED = 'halved'
FLAG_FLAGGED = 'flagged'


class _ReconLogger:
    prefix: str

    def __init__(self, logger: logging.Logger = iter_logger):
        self.logger = logger

    def get_msg(self, record: IterationRecord) -> Optional[str]:
        raise NotImplementedError()

    def extra(self, record: IterationRecord) -> Optional[Dict[str, object]]:
        pass

    def dim(self, record: IterationRecord) -> bool:
        return False

    def flag(self, record: IterationRecord) -> Optional[str]:
        pass

    def log(self, record: IterationRecord) -> None:
        msg = self.get_msg(record)
        if not msg:
            return
        # messages are encoded to JSON, so they can be coloured or not by the formatter which knows whether
        # the stream "isatty"
        msg = json.dumps({
            'iter': record.iteration,
            'prefix': self.prefix,
            'msg': msg,
            'dim': self.dim(record),
            'flag': self.flag(record),
        })
        self.logger.info(msg, extra=self.extra(record))


class IterationLogger(_ReconLogger):
    prefix = '●'

    def __init__(self, logger: logging.Logger = iter_logger, *, snapshot_every: int = 10, beta: Optional[float] = None):
        super().__init__(logger)
        self.snapshot_every = snapshot_every
        self.beta = beta

    def get_msg(self, record: IterationRecord) -> str:
        return 'J={J:.6e} max|θ|={theta:.3e} σ=[{values}] vertices={vertices}{beta}'.format(
            J=record.J,
            theta=record.max_theta,
            values=fmt_values(record.values),
            vertices='/'.join(str(n) for n in record.vertex_counts),
            beta=fmt_beta(record.beta),
        )

    def dim(self, record: IterationRecord) -> bool:
        return record.iteration % self.snapshot_every != 0

    def flag(self, record: IterationRecord) -> Optional[str]:
        # the vertex step had to be halved to stay feasible
        if self.beta is not None and record.beta is not None and record.beta < self.beta:
            return FLAG_HALVED
        return None

    def extra(self, record: IterationRecord) -> Optional[Dict[str, object]]:
        if record.coeff_gradient is None or self.logger.getEffectiveLevel() > logging.DEBUG:
            return None
        return {'details': {'coeff_gradient': [round(g, 8) for g in record.coeff_gradient]}}


class VariantLogger(_ReconLogger):
    """Final line of each run of a variant batch, ``iter`` holding the iteration count."""
    prefix = '◆'

    def __init__(self, label: str, status: str, logger: logging.Logger = iter_logger):
        super().__init__(logger)
        self.label = label
        self.status = status

    def get_msg(self, record: IterationRecord) -> str:
        return '{} {}: J={:.6e} σ=[{}]'.format(self.label, self.status, record.J, fmt_values(record.values))

    def flag(self, record: IterationRecord) -> Optional[str]:
        return FLAG_FLAGGED if self.status in (STATUS_STEP_COLLAPSE, STATUS_FAILED) else None


def fmt_values(values: Sequence[float]) -> str:
    return ', '.join('{:0.4g}'.format(v) for v in values)


def fmt_beta(beta: Optional[float]) -> str:
    if beta is None:
        return ''
    return ' β={:0.3g}'.format(beta)
