from typing import Any, Optional


class EitShapesError(Exception):
    pass


class EitConfigError(EitShapesError):
    pass


class GeometryError(EitShapesError):
    pass


class DegeneratePolygonError(GeometryError):
    pass


class StepCollapseError(GeometryError):
    """No feasible vertex step was found after the allowed number of halvings."""

    def __init__(self, msg: str, beta: float):
        super().__init__(msg)
        self.beta = beta


class MeshingError(EitShapesError):
    pass


class SolverError(EitShapesError):
    pass


class IncompatibleFluxError(SolverError):
    pass


class TransportError(EitShapesError):
    pass


class MeasurementError(EitShapesError):
    pass


class UnknownPhantomError(MeasurementError):
    pass


class ReconstructionError(EitShapesError):
    def __init__(self, msg: str, trace: Optional[Any] = None):
        super().__init__(msg)
        self.trace = trace


class ConductivityError(EitShapesError):
    pass
