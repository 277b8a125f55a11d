import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

STATUS_CONVERGED = 'converged'
STATUS_MAX_ITER = 'max_iter'
STATUS_STEP_COLLAPSE = 'step_collapse'
STATUS_FAILED = 'failed'


@dataclass
class IterationRecord:
    iteration: int
    J: float
    values: List[float]  # region values, background first
    vertex_counts: List[int]
    max_theta: float
    beta: Optional[float] = None  # effective vertex step, None when no step was taken
    coeff_gradient: Optional[List[float]] = None
    partition: Optional[Dict[str, Any]] = None  # snapshot


@dataclass
class ReconTrace:
    records: List[IterationRecord] = field(default_factory=list)
    status: str = ''
    message: str = ''
    final_partition: Optional[Dict[str, Any]] = None

    @property
    def flagged(self) -> bool:
        """The run stopped before its stopping criterion was met."""
        return self.status in (STATUS_STEP_COLLAPSE, STATUS_FAILED)

    @property
    def J(self) -> List[float]:
        return [r.J for r in self.records]

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_jsonl(self, path: Union[str, Path]) -> None:
        """One JSON object per iteration followed by a summary line."""
        with Path(path).open('w') as f:
            for r in self.records:
                f.write(json.dumps(asdict(r)) + '\n')
            f.write(json.dumps({
                'status': self.status,
                'message': self.message,
                'iterations': self.iterations,
                'final_partition': self.final_partition,
            }) + '\n')

    @classmethod
    def from_jsonl(cls, path: Union[str, Path]) -> 'ReconTrace':
        lines = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        summary = lines.pop() if lines and 'status' in lines[-1] else {}
        return cls(
            [IterationRecord(**r) for r in lines],
            summary.get('status', ''),
            summary.get('message', ''),
            summary.get('final_partition'),
        )

    def to_csv(self, path: Union[str, Path]) -> None:
        """Convergence table: iteration, J, max|θ|, beta and region values."""
        n_values = max((len(r.values) for r in self.records), default=0)
        with Path(path).open('w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['iter', 'J', 'max_theta', 'beta'] + ['sigma_{}'.format(i) for i in range(n_values)])
            for r in self.records:
                writer.writerow(
                    [r.iteration, '{:.12e}'.format(r.J), '{:.12e}'.format(r.max_theta),
                     '' if r.beta is None else '{:.6g}'.format(r.beta)]
                    + ['{:.8g}'.format(v) for v in r.values]
                )
