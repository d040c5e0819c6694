"""Barycentric rational approximation by the AAA algorithm.

Greedy support-point selection at the sample of largest residual, with
barycentric weights from the smallest right singular vector of the Loewner
matrix.  Residuals are measured relative to |f|, which suits targets such as
s^(1-alpha) spanning many decades.

Over many decades the smallest singular vector is only accurate to
machine epsilon times the largest weight, which corrupts poles near the
small end of the range.  :func:`refine_weights` recomputes the final
weights, and through them poles and residues, in mpmath arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy.linalg

__all__ = ["BarycentricRational", "AAAFitError", "aaa_fit", "refine_weights"]


class AAAFitError(RuntimeError):
    """Raised when the Loewner system carries no information to fit."""


@dataclass(frozen=True)
class BarycentricRational:
    """r(s) = sum(w f / (s - z)) / sum(w / (s - z)) with interpolation r(z_j) = f_j.

    The arrays may hold mpmath numbers (object dtype), in which case poles
    and residues are computed in mpmath arithmetic as well.
    """

    support_points: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    errors: tuple = field(default=(), compare=False, repr=False)
    converged: bool = field(default=True, compare=False)

    def __post_init__(self):
        z = np.asarray(self.support_points, dtype=float)
        if not (len(z) == len(self.values) == len(self.weights)):
            raise ValueError("support_points, values and weights must have the same length")
        if len(np.unique(z)) != len(z):
            raise ValueError("support points must be pairwise distinct")
        if not np.any(np.asarray(self.weights) != 0):
            raise ValueError("barycentric weights must not all vanish")

    @property
    def degree(self) -> int:
        return len(self.support_points) - 1

    @property
    def fit_error(self) -> float:
        return self.errors[-1] if self.errors else 0.0

    def __call__(self, s):
        z, f, w = (np.asarray(v) for v in (self.support_points, self.values, self.weights))
        s = np.asarray(s)
        sv = np.atleast_1d(s).ravel()
        with np.errstate(divide="ignore", invalid="ignore"):
            C = 1.0 / (sv[:, None] - z[None, :])
            r = (C @ (w * f)) / (C @ w)
        # exact values at support points
        hit_row, hit_col = np.nonzero(sv[:, None] == z[None, :])
        r[hit_row] = f[hit_col]
        return r.reshape(s.shape) if s.ndim else r[0]

    @property
    def extended(self) -> bool:
        return np.asarray(self.weights).dtype == object

    def poles(self) -> np.ndarray:
        """Finite poles from the generalized eigenproblem of the barycentric form."""
        z, w = np.asarray(self.support_points), np.asarray(self.weights)
        if self.extended:
            return _mp_poles(z, w)
        n = len(z)
        E = np.zeros((n + 1, n + 1), dtype=np.result_type(w, float))
        E[0, 1:] = w
        E[1:, 0] = 1.0
        E[1:, 1:] = np.diag(z)
        B = np.eye(n + 1)
        B[0, 0] = 0.0
        ev = scipy.linalg.eigvals(E, B)
        return ev[np.isfinite(ev)]

    def residues(self, poles) -> np.ndarray:
        """Residues N(p) / D'(p) at the given simple poles."""
        z, f, w = (np.asarray(v) for v in (self.support_points, self.values, self.weights))
        p = np.asarray(poles)[:, None]
        if self.extended:
            p = np.vectorize(mpmath.mpmathify, otypes=[object])(p)
        numer = np.sum(w * f / (p - z), axis=1)
        ddenom = -np.sum(w / (p - z) ** 2, axis=1)
        return numer / ddenom


def aaa_fit(s, f, tol: float = 1e-13, max_degree: int = 100) -> BarycentricRational:
    """Fit a barycentric rational to samples (s, f(s)) by AAA.

    Stops once the maximal relative error over the samples is <= ``tol`` or
    the degree reaches ``max_degree``; ``converged`` tells which happened.
    """
    s = np.asarray(s, dtype=float).ravel()
    f = np.asarray(f, dtype=float).ravel()
    if s.shape != f.shape:
        raise ValueError("sample abscissae and values must have equal length")
    if len(s) < 2:
        raise ValueError("AAA needs at least two samples")
    if len(np.unique(s)) != len(s):
        raise ValueError("sample abscissae must be distinct")
    if np.any(s <= 0):
        raise ValueError("sample abscissae must be positive")
    scale = np.abs(f)
    scale[scale == 0] = 1.0

    unused = np.ones(len(s), dtype=bool)
    approx = np.full_like(f, np.mean(f))
    support: list[int] = []
    errors: list[float] = []
    weights = np.ones(1)
    converged = False
    for _ in range(min(max_degree + 1, len(s))):
        j = int(np.argmax(np.where(unused, np.abs(f - approx) / scale, -np.inf)))
        support.append(j)
        unused[j] = False
        zs, fs = s[support], f[support]
        rest = np.flatnonzero(unused)
        if rest.size == 0:
            weights = np.ones(len(support)) if len(support) == 1 else weights
            errors.append(0.0)
            converged = True
            break
        C = 1.0 / (s[rest, None] - zs[None, :])
        loewner = (f[rest, None] - fs[None, :]) * C / scale[rest, None]
        if len(support) == 1:
            weights = np.ones(1)
        else:
            colnorm = np.linalg.norm(loewner, axis=0)
            if not np.any(colnorm > 0):
                raise AAAFitError(f"degenerate Loewner matrix at degree {len(support) - 1}: all singular values vanish")
            colnorm[colnorm == 0] = 1.0
            # equilibrated columns keep small weights accurate relative to their size
            _, sv, vh = np.linalg.svd(loewner / colnorm, full_matrices=len(rest) < len(support))
            weights = vh[-1].conj() / colnorm
        approx = f.copy()
        approx[rest] = (C @ (weights * fs)) / (C @ weights)
        err = float(np.max(np.abs(f - approx) / scale))
        errors.append(err)
        if err <= tol:
            converged = True
            break
    return BarycentricRational(s[support], f[support], weights, tuple(errors), converged)


def _mp_poles(z, w) -> np.ndarray:
    # roots of sum w_j / (x - z_j) are the nonzero eigenvalues of diag(z) - (w / sum w) z^T
    m = len(z)
    if m < 2:
        return np.array([], dtype=object)
    a = w / sum(w)
    M = mpmath.matrix(m, m)
    for i in range(m):
        for j in range(m):
            M[i, j] = (z[i] if i == j else 0) - a[i] * z[j]
    ev = sorted(mpmath.eig(M, left=False, right=False), key=abs)
    return np.array(ev[1:], dtype=object)


def refine_weights(r: BarycentricRational, s, func, digits: int = 40) -> BarycentricRational:
    """Recompute the barycentric weights of ``r`` in ``digits``-digit arithmetic.

    ``func`` evaluates the target on mpmath numbers; the support points and
    samples ``s`` are those used for the original fit.
    """
    with mpmath.workdps(digits):
        z = [mpmath.mpf(float(v)) for v in r.support_points]
        fz = [func(v) for v in z]
        chosen = set(float(v) for v in r.support_points)
        rest = [mpmath.mpf(float(v)) for v in np.asarray(s, dtype=float).ravel() if float(v) not in chosen]
        m = len(z)
        if m == 1:
            weights = [mpmath.mpf(1)]
        else:
            if len(rest) < m - 1:
                raise AAAFitError("too few samples beyond the support points to refine the weights")
            L = mpmath.matrix(len(rest), m)
            for i, si in enumerate(rest):
                fi = func(si)
                scale = abs(fi) if fi != 0 else 1
                for j in range(m):
                    L[i, j] = (fi - fz[j]) / (si - z[j]) / scale
            _, sv, V = mpmath.svd_r(L)
            if max(abs(x) for x in sv) == 0:
                raise AAAFitError(f"degenerate Loewner matrix at degree {m - 1}: all singular values vanish")
            # svd_r returns square V when rows >= columns; the last row spans the null direction
            weights = [V[V.rows - 1, j] for j in range(m)]
        obj = lambda v: np.array(v, dtype=object)
        return BarycentricRational(obj(z), obj(fz), obj(weights), r.errors, r.converged)
