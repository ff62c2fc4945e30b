"""Sequential, anytime-valid tests of stochastic dominance via e-processes."""

from .core import EProcess, EmpiricalState, ObservationPair, SignificanceLevel, eprocess_step, ingest, ville_reject
from .engine import BatchTest, DominanceTest, SubExpTest, make_test
from .orders import OrderSpec

__all__ = [
    "BatchTest", "DominanceTest", "EProcess", "EmpiricalState", "ObservationPair", "OrderSpec",
    "SignificanceLevel", "SubExpTest", "eprocess_step", "ingest", "make_test", "ville_reject",
]
__version__ = "0.1.0"
