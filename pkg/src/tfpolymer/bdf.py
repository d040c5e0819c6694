"""BDF(g) derivative weights paired with the matching extrapolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BDFScheme", "extrapolate"]

_COEFFICIENTS = {
    1: ((1.0,), (1.0, -1.0)),
    2: ((2.0, -1.0), (1.5, -2.0, 0.5)),
}


@dataclass(frozen=True)
class BDFScheme:
    """``d/dt f ~ sum_{j=0}^g b[j] f^{n+1-j} / dt`` and ``f^{n+1} ~ sum_{j=1}^g a[j-1] f^{n+1-j}``."""

    g: int
    a: tuple[float, ...]
    b: tuple[float, ...]

    @classmethod
    def of_order(cls, g: int) -> "BDFScheme":
        if g not in _COEFFICIENTS:
            raise ValueError(f"BDF order must be 1 or 2, got {g}")
        a, b = _COEFFICIENTS[g]
        return cls(g, a, b)

    @property
    def b0(self) -> float:
        return self.b[0]

    def history_sum(self, history):
        """sum_{j>=1} b_j f^{n+1-j}; ``history[0]`` is the newest value."""
        return sum(bj * h for bj, h in zip(self.b[1:], history))


def extrapolate(history, scheme: BDFScheme):
    """E^{n+1}(f) from the last g values, newest first."""
    if len(history) < scheme.g:
        raise ValueError(f"extrapolation of order {scheme.g} needs {scheme.g} values, got {len(history)}")
    out = scheme.a[0] * np.asarray(history[0], dtype=float)
    for aj, h in zip(scheme.a[1:], history[1:]):
        out = out + aj * np.asarray(h, dtype=float)
    return out
