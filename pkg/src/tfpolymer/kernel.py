"""Exponential-sum compression of the Riemann-Liouville kernel.

The kernel t^(alpha-1)/Gamma(alpha) has Laplace transform s^(alpha-1).
A rational fit r(s) ~ s^(1-alpha) divided by s gives a partial-fraction
sum whose inverse transform is sum_k w_k exp(-lambda_k t).  The pole of
r(s)/s at s = 0 is kept as a lambda = 0 term.

Fractional modes f_k(t) = int_0^t w_k exp(-lambda_k (t - s)) f(s) ds turn
the convolution into local ODEs f_k' = -lambda_k f_k + w_k f, which are
advanced by BDF alongside the driven quantity.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np
import scipy.integrate

from .aaa import aaa_fit, refine_weights
from .bdf import BDFScheme

__all__ = [
    "KernelApproximation",
    "KernelFitError",
    "compress_kernel",
    "kernel_eval",
    "exact_kernel",
    "mittag_leffler",
    "FractionalModeState",
    "mode_push_forward",
    "approx_fractional_derivative",
    "fractional_coefficients",
    "trapezoid_coefficients",
    "solve_scalar_relaxation",
    "weighted_bochner_norm",
    "write_kernel_csv",
    "read_kernel_csv",
]

_REAL_TOL = 1e-10
_N_SAMPLES = 400
_DIGITS = 40


class KernelFitError(ValueError):
    """The fitted surrogate is not completely monotone."""


@dataclass(frozen=True)
class KernelApproximation:
    """Surrogate sum_k w_k exp(-lambda_k t) of t^(alpha-1)/Gamma(alpha)."""

    alpha: float
    weights: np.ndarray
    poles: np.ndarray
    fit_range: tuple[float, float] = (0.0, math.inf)
    fit_error: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        lam = np.asarray(self.poles, dtype=float).ravel()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "poles", lam)
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if w.shape != lam.shape or w.size == 0:
            raise ValueError("weights and poles must be nonempty and of equal length")
        if np.any(w < 0) or np.any(lam < 0):
            raise KernelFitError("non-monotone kernel surrogate; refine samples or lower degree")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("poles must be strictly increasing")

    @property
    def m(self) -> int:
        return len(self.weights)


def exact_kernel(alpha: float, t):
    """t^(alpha-1) / Gamma(alpha)."""
    return np.asarray(t, dtype=float) ** (alpha - 1.0) / math.gamma(alpha)


def compress_kernel(alpha: float, s_min: float, s_max: float, tol: float,
                    n_samples: int = _N_SAMPLES, max_degree: int = 60,
                    digits: int = _DIGITS) -> KernelApproximation:
    """Fit s^(1-alpha) on log-spaced samples in [s_min, s_max] and compress the kernel.

    The greedy AAA selection runs in double precision; the final weights,
    poles and residues are recomputed with ``digits`` decimal digits.  At
    ``alpha = 1`` the exact single term (w, lambda) = (1, 0) is returned.

    Raises
    ------
    KernelFitError
        If a pole is complex or lies in the right half plane, or a residue
        is negative, beyond the relative tolerance 1e-10.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0 < s_min < s_max:
        raise ValueError(f"need 0 < s_min < s_max, got {s_min}, {s_max}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    return _compress_cached(float(alpha), float(s_min), float(s_max), float(tol),
                            int(n_samples), int(max_degree), int(digits))


@functools.lru_cache(maxsize=64)
def _compress_cached(alpha, s_min, s_max, tol, n_samples, max_degree, digits):
    if alpha == 1.0:
        return KernelApproximation(1.0, np.ones(1), np.zeros(1), (s_min, s_max), 0.0)
    s = np.logspace(np.log10(s_min), np.log10(s_max), n_samples)
    r = aaa_fit(s, s ** (1.0 - alpha), tol=tol, max_degree=max_degree)
    with mpmath.workdps(digits):
        expo = 1 - mpmath.mpf(alpha)
        r = refine_weights(r, s, lambda x: mpmath.power(x, expo), digits)
        poles = r.poles()
        residues = r.residues(poles) if len(poles) else np.array([], dtype=object)
        z, f, w = r.support_points, r.values, r.weights
        # r(s)/s: residue r(0) at the origin, r(p)/p = res_r(p)/p elsewhere
        r0 = sum(w * f / (-z)) / sum(w / (-z))
        lam, wk = [0.0], [float(r0)]
        for p, res in zip(poles, residues):
            p, c = mpmath.mpc(p), mpmath.mpc(res) / mpmath.mpc(p)
            scale = max(abs(p), mpmath.mpf(1e-300))
            if abs(p.imag) > _REAL_TOL * scale or p.real > _REAL_TOL * scale:
                raise KernelFitError(
                    f"non-monotone kernel surrogate; refine samples or lower degree (pole {complex(p):.3e})")
            lam.append(max(-float(p.real), 0.0))
            wk.append(float(c.real))
    lam, wk = np.array(lam), np.array(wk)
    if np.any(wk < -_REAL_TOL * np.max(np.abs(wk))):
        raise KernelFitError(
            f"non-monotone kernel surrogate; refine samples or lower degree (weight {wk.min():.3e})")
    order = np.argsort(lam)
    lam, wk = lam[order], np.clip(wk[order], 0.0, None)
    # merge coincident poles
    keep = np.concatenate([[True], np.diff(lam) > 0])
    wk = np.add.reduceat(wk, np.flatnonzero(keep))
    return KernelApproximation(alpha, wk, lam[keep], (s_min, s_max), r.fit_error)


def kernel_eval(K: KernelApproximation, t):
    """sum_k w_k exp(-lambda_k t), vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("kernel is evaluated at t >= 0")
    out = np.exp(-np.multiply.outer(t, K.poles)) @ K.weights
    return float(out) if out.ndim == 0 else out


def _ml_series(alpha, x, cap=200):
    # returns None when the series has not converged within the cap
    peak = math.lgamma(1.0)
    for j in range(1, cap):
        peak = max(peak, j * math.log(max(x, 1e-300)) - math.lgamma(1 + alpha * j))
    digits = 20 + max(0, int(peak / math.log(10)))
    with mpmath.workdps(digits):
        xm, total = -mpmath.mpf(x), mpmath.mpf(0)
        for j in range(cap):
            term = xm ** j * mpmath.rgamma(1 + alpha * j)
            total += term
            if j > 0 and abs(term) < mpmath.mpf(10) ** -20 * max(abs(total), mpmath.mpf(10) ** -300):
                return float(total)
    return None


def _ml_asymptotic(alpha, x):
    best, total, prev = None, 0.0, math.inf
    for j in range(1, 200):
        g = 1.0 - alpha * j
        if g <= 0 and g == math.floor(g):
            continue
        term = (-1) ** (j + 1) * x ** (-j) * float(mpmath.rgamma(g))
        if abs(term) > prev:
            break
        total += term
        prev = abs(term)
        best = total
    if best is None or prev > 1e-15 * abs(best):
        return None
    return best


def _ml_integral(alpha, x):
    # E_a(-t^a) = sin(a pi)/(a pi) int_0^inf exp(-u^(1/a) t) / (u^2 + 2u cos(a pi) + 1) du
    t = x ** (1.0 / alpha)
    c = math.cos(alpha * math.pi)
    val, _ = scipy.integrate.quad(lambda u: math.exp(-u ** (1.0 / alpha) * t) / (u * u + 2 * u * c + 1),
                                  0.0, math.inf, epsabs=1e-15, epsrel=1e-13, limit=400)
    return math.sin(alpha * math.pi) / (alpha * math.pi) * val


def mittag_leffler(alpha: float, x):
    """E_alpha(-x) for 0 < alpha <= 1 and x >= 0, vectorized over ``x``.

    Power series for x <= 5, optimally truncated asymptotic series beyond;
    either falls back to the integral representation when it cannot reach
    double precision.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0):
        raise ValueError("mittag_leffler evaluates E_alpha(-x) for x >= 0")

    def one(v):
        if alpha == 1.0:
            return math.exp(-v)
        if v == 0.0:
            return 1.0
        val = _ml_series(alpha, v) if v <= 5.0 else _ml_asymptotic(alpha, v)
        if val is None:
            val = _ml_integral(alpha, v)
        return min(max(val, 0.0), 1.0)

    out = np.vectorize(one, otypes=[float])(xs)
    return float(out) if out.ndim == 0 else out


@dataclass
class FractionalModeState:
    """Current fractional modes f_k and their BDF history (newest first).

    ``values`` has shape (m, ...) matching the driven quantity; modes start at 0.
    """

    values: np.ndarray
    history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, m: int, shape=(), g: int = 2) -> "FractionalModeState":
        z = np.zeros((m, *shape))
        return cls(z, [z.copy() for _ in range(g)])

    def push(self, new_values) -> None:
        self.values = np.asarray(new_values, dtype=float)
        self.history = [self.values.copy()] + self.history[:-1]


def mode_push_forward(K: KernelApproximation, scheme: BDFScheme, dt: float, f_next, histories):
    """f_k^{n+1} = (-sum_j b_j f_k^{n+1-j} + w_k dt f^{n+1}) / (b0 + lambda_k dt).

    ``histories`` is a sequence of g arrays of shape (m, ...), newest first.
    """
    f_next = np.asarray(f_next, dtype=float)
    shape = (-1,) + (1,) * f_next.ndim
    w, lam = K.weights.reshape(shape), K.poles.reshape(shape)
    rhs = -scheme.history_sum([np.asarray(h, dtype=float) for h in histories]) + w * dt * f_next
    return rhs / (scheme.b0 + lam * dt)


def approx_fractional_derivative(K: KernelApproximation, f, mode_values):
    """sum_k (-lambda_k f_k + w_k f)."""
    f = np.asarray(f, dtype=float)
    modes = np.asarray(mode_values, dtype=float)
    lam = K.poles.reshape((-1,) + (1,) * f.ndim)
    return -np.sum(lam * modes, axis=0) + K.weights.sum() * f


def fractional_coefficients(K: KernelApproximation, scheme: BDFScheme, dt: float):
    """eta = sum_k b0 w_k dt / (b0 + lambda_k dt) and eta_k = lambda_k dt / (b0 + lambda_k dt)."""
    denom = scheme.b0 + K.poles * dt
    return float(np.sum(scheme.b0 * K.weights * dt / denom)), K.poles * dt / denom


def trapezoid_coefficients(K: KernelApproximation, dt: float):
    """Coefficients of the implicit trapezoid start.

    Returns ``(eta_T, q, p)`` with eta_T = sum_k w_k (dt/2) / (1 + lambda_k dt/2),
    q_k = (1 - lambda_k dt/2) / (1 + lambda_k dt/2) and
    p_k = w_k (dt/2) / (1 + lambda_k dt/2), so that
    f_k^1 = q_k f_k^0 + p_k (f^0 + f^1).
    """
    h = 0.5 * dt
    denom = 1.0 + K.poles * h
    p = K.weights * h / denom
    return float(p.sum()), (1.0 - K.poles * h) / denom, p


def solve_scalar_relaxation(c: float, K: KernelApproximation, scheme: BDFScheme, dt: float, T: float,
                            y0: float = 1.0, first_step: str = "trapezoid"):
    """Integrate y' = -c d/dt (kappa * y), whose exact solution is y0 E_alpha(-c t^alpha).

    With the modes, y + c sum_k y_k is conserved, and one BDF step reads
    (b0 + c eta) y^{n+1} = -sum_j b_j (y^{n+1-j} + c sum_k eta_k y_k^{n+1-j}).
    For g = 2 the first step is an implicit trapezoid step.

    Returns
    -------
    t, y : ndarray
        Time levels 0, dt, ..., T and the solution at each.
    """
    if first_step != "trapezoid":
        raise ValueError(f"unsupported first step {first_step!r}")
    n_steps = int(round(T / dt))
    if n_steps < 1 or not math.isclose(n_steps * dt, T, rel_tol=1e-9):
        raise ValueError("T must be a positive integer multiple of dt")
    y = np.empty(n_steps + 1)
    y[0] = y0
    modes = np.zeros(K.m)
    hist_y, hist_k = [float(y0)], [modes]
    start = 0
    if scheme.g == 2:
        eta_t, q, p = trapezoid_coefficients(K, dt)
        d0 = float(approx_fractional_derivative(K, y0, modes))
        pk = q * modes + p * y0
        y1 = (y0 - 0.5 * c * dt * d0 + 0.5 * c * dt * np.sum(K.poles * pk)) / (1.0 + c * eta_t)
        modes = pk + p * y1
        y[1] = y1
        hist_y, hist_k = [y1, float(y0)], [modes, hist_k[0]]
        start = 1
    eta, eta_k = fractional_coefficients(K, scheme, dt)
    lam_w_dt = K.weights * dt
    for n in range(start, n_steps):
        rhs = -sum(bj * (yj + c * np.dot(eta_k, kj)) for bj, yj, kj in zip(scheme.b[1:], hist_y, hist_k))
        y_next = rhs / (scheme.b0 + c * eta)
        new_modes = (-scheme.history_sum(hist_k) + lam_w_dt * y_next) / (scheme.b0 + K.poles * dt)
        y[n + 1] = y_next
        hist_y = [y_next] + hist_y[: scheme.g - 1]
        hist_k = [new_modes] + hist_k[: scheme.g - 1]
    return np.linspace(0.0, n_steps * dt, n_steps + 1), y


def weighted_bochner_norm(t, norms, alpha: float) -> float:
    """(int ||u||^2 t^(2(1-alpha)) dt)^(1/2) by the trapezoid rule."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(norms, dtype=float)
    if t.shape != u.shape:
        raise ValueError("times and norms must have equal length")
    return float(np.sqrt(np.trapezoid(u ** 2 * t ** (2.0 * (1.0 - alpha)), t)))


def write_kernel_csv(K: KernelApproximation, path) -> None:
    """Rows (k, w_k, lambda_k) after a commented header with alpha, m, fit_error and range."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# alpha={K.alpha!r} m={K.m} fit_error={K.fit_error!r} "
                 f"s_min={K.fit_range[0]!r} s_max={K.fit_range[1]!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["k", "w", "lambda"])
        for k, (w, lam) in enumerate(zip(K.weights, K.poles)):
            writer.writerow([k, repr(float(w)), repr(float(lam))])


def read_kernel_csv(path) -> KernelApproximation:
    """Inverse of :func:`write_kernel_csv`."""
    with Path(path).open() as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("kernel CSV must start with a '# alpha=... m=...' header")
        meta = dict(item.split("=", 1) for item in header[1:].split())
        rows = list(csv.DictReader(fh))
    if len(rows) != int(meta["m"]):
        raise ValueError(f"header announces m={meta['m']} but file has {len(rows)} rows")
    return KernelApproximation(
        float(meta["alpha"]),
        np.array([float(r["w"]) for r in rows]),
        np.array([float(r["lambda"]) for r in rows]),
        (float(meta.get("s_min", 0.0)), float(meta.get("s_max", "inf"))),
        float(meta.get("fit_error", 0.0)),
    )
