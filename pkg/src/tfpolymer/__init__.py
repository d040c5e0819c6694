"""Time-fractional polymeric flow: Hermite closure, kernel compression and a coupled grid solver."""

from .hermite import ClosureOperator, build_closure
from .kernel import KernelApproximation, compress_kernel, mittag_leffler

__all__ = ["ClosureOperator", "build_closure", "KernelApproximation", "compress_kernel", "mittag_leffler"]
__version__ = "0.1.0"
