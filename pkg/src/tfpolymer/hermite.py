"""Hermite functions, the Hookean stress closure and its Gaussian oracles.

The configuration-space density of a Hookean dumbbell is expanded in tensor
products of scaled Hermite functions.  For a linear spring force the modes of
degree 0 and 2 form a closed system, and the extra stress depends on those
modes only.  This module generates that closed system, evaluates the stress,
and provides quadrature-based oracles that check both against direct
integration in configuration space.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite as npherm

__all__ = [
    "HermiteBasis",
    "ClosureOperator",
    "GaussianConfiguration",
    "closure_modes",
    "all_modes",
    "hermite_polynomial",
    "hermite_function",
    "orthonormality_defect",
    "chi_coefficients",
    "build_closure",
    "configuration_operator_quadrature",
    "extra_stress_from_modes",
    "gaussian_steady_exponent",
    "stress_of_gaussian",
    "stress_of_gaussian_moments",
    "hermite_modes_of_gaussian",
    "truncated_stress",
]

SQRT_HALF = 1.0 / math.sqrt(2.0)

_CLOSURE_MODES = {
    2: ((0, 0), (1, 1), (0, 2), (2, 0)),
    3: ((0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0), (0, 0, 2), (0, 2, 0), (2, 0, 0)),
}


def closure_modes(d: int) -> tuple[tuple[int, ...], ...]:
    """Mode ordering of the macroscopic system: degree 0, mixed, diagonal."""
    if d not in _CLOSURE_MODES:
        raise ValueError(f"closure is defined for d in (2, 3), got d={d}")
    return _CLOSURE_MODES[d]


def all_modes(d: int, max_degree: int) -> list[tuple[int, ...]]:
    """All multi-indices of total degree <= max_degree.

    The closure modes come first (when d is 2 or 3 and max_degree >= 2) so
    that the leading block of any matrix over these modes is the closure block.
    """
    everything = [
        z for z in itertools.product(range(max_degree + 1), repeat=d) if sum(z) <= max_degree
    ]
    head = [z for z in _CLOSURE_MODES.get(d, ()) if sum(z) <= max_degree]
    rest = sorted((z for z in everything if z not in head), key=lambda z: (sum(z), z[::-1]))
    return head + rest


# ----------------------------------------------------------------------------
# One-dimensional Hermite polynomials and functions
# ----------------------------------------------------------------------------


def hermite_polynomial(m: int, r):
    """Physicists' Hermite polynomial H_m(r) by three-term recurrence.

    Valid for m <= 50; larger degrees overflow for moderate |r|.
    """
    if m < 0:
        raise ValueError("degree must be nonnegative")
    r = np.asarray(r, dtype=float)
    h_prev = np.ones_like(r)
    if m == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * r
    for k in range(1, m):
        h_prev, h = h, 2.0 * r * h - 2.0 * k * h_prev
    return h if h.ndim else float(h)


def _normalized_hermite_table(max_degree: int, x: np.ndarray) -> np.ndarray:
    """Rows k = H_k(x) / sqrt(2^k k!) for k = 0..max_degree.

    The normalized recurrence never forms 2^k k! explicitly, so it stays
    finite where the raw polynomial and factorial would overflow.
    """
    x = np.asarray(x, dtype=float)
    table = np.empty((max_degree + 1,) + x.shape)
    table[0] = 1.0
    if max_degree >= 1:
        table[1] = math.sqrt(2.0) * x
    for k in range(1, max_degree):
        table[k + 1] = math.sqrt(2.0 / (k + 1)) * x * table[k] - math.sqrt(k / (k + 1)) * table[k - 1]
    return table


def _function_prefactor(a: float) -> float:
    return math.sqrt(a) / math.pi**0.25


def hermite_function(m: int, a: float, r):
    """Scaled Hermite function with the orthonormalizing prefactor sqrt(a)/pi^(1/4).

    ``H~_m(r) = sqrt(a)/pi^(1/4) * exp(-a^2 r^2) * H_m(a r) / sqrt(2^m m!)``
    """
    if a <= 0:
        raise ValueError("scaling parameter a must be positive")
    if m < 0:
        raise ValueError("degree must be nonnegative")
    r = np.asarray(r, dtype=float)
    x = a * r
    values = _function_prefactor(a) * np.exp(-x * x) * _normalized_hermite_table(m, x)[m]
    return values if values.ndim else float(values)


@dataclass(frozen=True)
class HermiteBasis:
    """Scaled Hermite functions up to ``max_degree`` with scaling ``a``."""

    a: float
    max_degree: int

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("scaling parameter a must be positive")
        if self.max_degree < 0:
            raise ValueError("max_degree must be nonnegative")

    def __call__(self, r) -> np.ndarray:
        """Table of H~_0..H~_N at the points ``r`` (leading axis = degree)."""
        x = self.a * np.asarray(r, dtype=float)
        return _function_prefactor(self.a) * np.exp(-x * x) * _normalized_hermite_table(self.max_degree, x)

    def weight(self, r):
        return np.exp(-((self.a * np.asarray(r, dtype=float)) ** 2))


def _gauss_nodes(n: int, a: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating g(r) exp(-a^2 r^2) dr exactly for deg g < 2n."""
    x, w = npherm.hermgauss(n)
    return x / a, w / a


def orthonormality_defect(a: float, N: int, nodes: int | None = None) -> np.ndarray:
    """Gram matrix of H~_0..H~_N in L^2 with weight 1/w(a r), minus identity."""
    if N > 20:
        raise ValueError("orthonormality_defect supports N <= 20")
    n = max(2 * N + 2, nodes or 0)
    r, wq = _gauss_nodes(n, a)
    # H~_n H~_m / w(a r) = (a / sqrt(pi)) h_n h_m exp(-a^2 r^2)
    h = _normalized_hermite_table(N, a * r)
    gram = (a / math.sqrt(math.pi)) * (h * wq) @ h.T
    return gram - np.eye(N + 1)


def chi_coefficients(a: float, d: int) -> tuple[float, float, float]:
    """Stress integrals (chi_0, chi_1, chi_2) of the degree-0 and degree-2 functions.

    chi_0 = int (q1^2 - 1) H~_0..0, chi_1 = int q1 q2 H~_{1,1,0..}, chi_2 = int q1^2 H~_{2,0..}.
    """
    if a <= 0:
        raise ValueError("scaling parameter a must be positive")
    if d == 3:
        base = math.pi**0.75 / a**3.5
    elif d == 2:
        base = math.sqrt(math.pi) / a**3
    else:
        raise ValueError(f"d must be 2 or 3, got {d}")
    return (1.0 - 2.0 * a * a) * base / 2.0, base / 2.0, base / math.sqrt(2.0)


# ----------------------------------------------------------------------------
# The closure operator
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosureOperator:
    """Mode coupling A(kappa) of the degree-{0,2} Hermite system.

    ``A(kappa) = offset + sum_{ml} kappa[m, l] * slopes[m, l]``; ``kappa[m, l]``
    is the velocity gradient du_m/dx_l.
    """

    d: int
    a: float
    De: float
    modes: tuple[tuple[int, ...], ...]
    chi: tuple[float, float, float]
    offset: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def assemble(self, kappa) -> np.ndarray:
        """Coupling matrix for one gradient (d, d) or a batch (..., d, d)."""
        kappa = np.asarray(kappa, dtype=float)
        if kappa.shape[-2:] != (self.d, self.d):
            raise ValueError(f"kappa must end in shape ({self.d}, {self.d}), got {kappa.shape}")
        return self.offset + np.einsum("...ml,mlij->...ij", kappa, self.slopes)

    __call__ = assemble

    def K(self, kappa) -> np.ndarray:
        """Column feeding the degree-2 modes from the degree-0 mode."""
        return self.assemble(kappa)[..., 1:, 0]

    def A2(self, kappa) -> np.ndarray:
        """Degree-2 block with the kappa-independent relaxation diagonal removed."""
        return self.assemble(kappa)[..., 1:, 1:] - self.offset[1:, 1:]

    @property
    def relaxation(self) -> np.ndarray:
        """Diagonal of A(0) on the degree-2 block (equals -1/De for every a)."""
        return np.diag(self.offset)[1:].copy()


def _recursion_rows(modes, d: int, a: float, De: float):
    """Offset and per-kappa slope matrices of the tested configuration operator."""
    index = {z: i for i, z in enumerate(modes)}
    n = len(modes)
    offset = np.zeros((n, n))
    slopes = np.zeros((d, d, n, n))

    def shifted(z, delta):
        target = tuple(zi + di for zi, di in zip(z, delta))
        return index.get(target) if min(target) >= 0 else None

    for row, z in enumerate(modes):
        for l in range(d):
            # self term: (kappa_ll - 1/(2 De)) z_l
            offset[row, row] -= z[l] / (2.0 * De)
            slopes[l, l, row, row] += z[l]
            # down-coupling to z - 2 e_l
            if z[l] >= 2:
                col = shifted(z, [-2 if k == l else 0 for k in range(d)])
                if col is not None:
                    c = math.sqrt((z[l] - 1) * z[l])
                    offset[row, col] += c * (2.0 * a * a - 1.0) / (2.0 * De)
                    slopes[l, l, row, col] += c
        for l in range(d):
            for m in range(d):
                if l == m:
                    continue
                # z_l + 1, z_m - 1 with kappa_ml
                if z[m] >= 1:
                    delta = [0] * d
                    delta[l] += 1
                    delta[m] -= 1
                    col = shifted(z, delta)
                    if col is not None:
                        slopes[m, l, row, col] += math.sqrt((z[l] + 1) * z[m])
                # z_l - 1, z_m - 1 with kappa_ml
                if z[l] >= 1 and z[m] >= 1:
                    delta = [0] * d
                    delta[l] -= 1
                    delta[m] -= 1
                    col = shifted(z, delta)
                    if col is not None:
                        slopes[m, l, row, col] += math.sqrt(z[l] * z[m])
    return offset, slopes


def build_closure(d: int, De: float, a: float = SQRT_HALF) -> ClosureOperator:
    """Generate the degree-{0,2} coupling operator from the Hermite recursion."""
    if d not in (2, 3):
        raise ValueError(f"closure is defined for d in (2, 3), got d={d}")
    if De <= 0 or a <= 0:
        raise ValueError("De and a must be positive")
    modes = closure_modes(d)
    offset, slopes = _recursion_rows(modes, d, a, De)
    offset.setflags(write=False)
    slopes.setflags(write=False)
    return ClosureOperator(d, a, De, modes, chi_coefficients(a, d), offset, slopes)


def _hermite_function_parts(max_degree: int, a: float, r: np.ndarray):
    """g, g', g'' of H~_m divided by exp(-a^2 r^2), via numpy's Hermite series.

    Independent of the Hermite-function recurrences: derivatives are taken on
    the polynomial H_m(a r) and combined with the Gaussian by the product rule.
    """
    x = a * r
    g = np.empty((max_degree + 1, r.size))
    g1 = np.empty_like(g)
    g2 = np.empty_like(g)
    for m in range(max_degree + 1):
        coef = np.zeros(m + 1)
        coef[m] = 1.0
        h = npherm.hermval(x, coef)
        dh = npherm.hermval(x, npherm.hermder(coef, 1)) if m >= 1 else np.zeros_like(x)
        d2h = npherm.hermval(x, npherm.hermder(coef, 2)) if m >= 2 else np.zeros_like(x)
        c = _function_prefactor(a) / math.sqrt(2.0**m * math.factorial(m))
        g[m] = c * h
        g1[m] = c * (a * dh - 2.0 * a * a * r * h)
        g2[m] = c * (a * a * d2h - 4.0 * a**3 * r * dh + (4.0 * a**4 * r * r - 2.0 * a * a) * h)
    return g, g1, g2


def configuration_operator_quadrature(
    d: int, N: int, a: float, kappa, De: float, nodes: int = 40
) -> np.ndarray:
    """Tested configuration operator by tensor Gauss-Hermite quadrature.

    Entry [i, j] is the integral of Q(kappa)[H~_{y_j}] * H~_{z_i} / prod w(a q)
    over configuration space, where ``Q(kappa) psi = -div(kappa q psi) +
    div(q psi + grad psi) / (2 De)``.  Rows and columns follow
    ``all_modes(d, N)``, so the leading (3d-2)-block is the closure block.
    """
    if not 1 <= d <= 3 or N > 4:
        raise ValueError("oracle supports d <= 3 and N <= 4")
    if nodes < N + 2:
        raise ValueError(f"{nodes} quadrature nodes cannot integrate degree {N} modes exactly; need >= {N + 2}")
    kappa = np.asarray(kappa, dtype=float).reshape(d, d)
    modes = all_modes(d, N)
    r, wq = _gauss_nodes(nodes, a)
    g, g1, g2 = _hermite_function_parts(N + 1, a, r)

    grids = np.meshgrid(*([r] * d), indexing="ij")
    q = [gq.ravel() for gq in grids]
    weight = np.ones(nodes**d)
    for wk in np.meshgrid(*([wq] * d), indexing="ij"):
        weight = weight * wk.ravel()
    flat = np.arange(nodes**d)
    idx = np.unravel_index(flat, (nodes,) * d)

    def factor(table, m, k):
        return table[m][idx[k]]

    # test functions H~_z / prod w(a q) are polynomials: g_z(q) without Gaussian
    tests = np.array([np.prod([factor(g, z[k], k) for k in range(d)], axis=0) for z in modes])

    images = np.empty_like(tests)
    for j, y in enumerate(modes):
        value = np.prod([factor(g, y[k], k) for k in range(d)], axis=0)
        grad = []
        lap = np.zeros_like(value)
        for m in range(d):
            parts_1 = [factor(g1 if k == m else g, y[k], k) for k in range(d)]
            parts_2 = [factor(g2 if k == m else g, y[k], k) for k in range(d)]
            grad.append(np.prod(parts_1, axis=0))
            lap += np.prod(parts_2, axis=0)
        image = -np.trace(kappa) * value
        for m in range(d):
            for l in range(d):
                image -= kappa[m, l] * q[l] * grad[m]
        image += (d * value + sum(q[m] * grad[m] for m in range(d)) + lap) / (2.0 * De)
        images[j] = image
    return (tests * weight) @ images.T


# ----------------------------------------------------------------------------
# Stress evaluation
# ----------------------------------------------------------------------------


def extra_stress_from_modes(modes, gamma: float, a: float = SQRT_HALF, d: int | None = None) -> np.ndarray:
    """Extra stress from closure modes; ``modes`` has shape (3d-2, ...).

    Returns shape (d, d, ...), symmetric by construction.
    """
    modes = np.asarray(modes, dtype=float)
    if d is None:
        d = {4: 2, 7: 3}.get(modes.shape[0])
        if d is None:
            raise ValueError(f"expected 4 or 7 closure modes, got {modes.shape[0]}")
    if modes.shape[0] != 3 * d - 2:
        raise ValueError(f"expected {3 * d - 2} modes for d={d}, got {modes.shape[0]}")
    chi0, chi1, chi2 = chi_coefficients(a, d)
    index = {z: i for i, z in enumerate(closure_modes(d))}
    tau = np.zeros((d, d) + modes.shape[1:])
    zero = (0,) * d
    for i in range(d):
        z = tuple(2 if k == i else 0 for k in range(d))
        tau[i, i] = chi2 * modes[index[z]] - chi0 * modes[index[zero]]
        for j in range(i + 1, d):
            z = tuple(1 if k in (i, j) else 0 for k in range(d))
            tau[i, j] = tau[j, i] = chi1 * modes[index[z]]
    return gamma * tau


@dataclass(frozen=True)
class GaussianConfiguration:
    """Exponent matrix C of a Gaussian density exp(-q^T C q)."""

    C: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("C must be a square matrix")
        if np.max(np.abs(C - C.T)) > 1e-14 * max(1.0, np.max(np.abs(C))):
            raise ValueError("C must be symmetric")
        C = 0.5 * (C + C.T)
        if np.linalg.eigvalsh(C)[0] <= 0:
            raise ValueError("C must be positive definite")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def d(self) -> int:
        return self.C.shape[0]


def gaussian_steady_exponent(D, De: float) -> GaussianConfiguration:
    """Exponent C = I/2 - De D of the Gaussian steady state under a symmetric gradient D."""
    D = np.asarray(D, dtype=float)
    norm = np.max(np.abs(D)) if D.size else 0.0
    if np.max(np.abs(D - D.T)) > 1e-14 * max(norm, 1.0):
        raise ValueError("D must be symmetric")
    if abs(np.trace(D)) > 1e-12 * max(norm, 1e-300):
        raise ValueError("D must be trace-free")
    C = 0.5 * np.eye(D.shape[0]) - De * D
    if np.linalg.eigvalsh(C)[0] <= 0:
        raise ValueError("no Gaussian steady state for these (D, De): I/2 - De*D is not positive definite")
    return GaussianConfiguration(C)


def _as_configuration(C) -> GaussianConfiguration:
    return C if isinstance(C, GaussianConfiguration) else GaussianConfiguration(C)


def stress_of_gaussian_moments(C) -> np.ndarray:
    """int (q q^T - I) exp(-q^T C q) dq via the Gaussian moment identity."""
    C = _as_configuration(C).C
    d = C.shape[0]
    mass = math.sqrt(math.pi**d / np.linalg.det(C))
    return (0.5 * np.linalg.inv(C) - np.eye(d)) * mass


def _stress_entries_2d(C: np.ndarray) -> tuple[float, float]:
    A, D, B = C[0, 0], C[0, 1], C[1, 1]
    sigma = B - D * D / A
    t11 = math.pi / A**2.5 * ((A / 2 - A * A) / sigma**0.5 + D * D / (2 * sigma**1.5))
    t12 = -math.pi / (2 * A**1.5) * D / sigma**1.5
    return t11, t12


def _stress_entries_3d(C: np.ndarray) -> tuple[float, float]:
    A, D, E = C[0]
    B, F = C[1, 1], C[1, 2]
    Cz = C[2, 2]
    sigma = B - D * D / A
    zeta = F - D * E / A
    theta = Cz - E * E / A - zeta * zeta / sigma
    t11 = math.pi**1.5 / A**2.5 * (
        (1 / theta**0.5) * ((A / 2 - A * A) / sigma**0.5 + D * D / (2 * sigma**1.5))
        + (1 / (2 * theta**1.5)) * (E * E / sigma**0.5 - 2 * D * E * zeta / sigma**1.5 + D * D * zeta * zeta / sigma**2.5)
    )
    t12 = -math.pi**1.5 / (2 * A**1.5) * (
        D / (theta**0.5 * sigma**1.5) + (1 / theta**1.5) * (D * zeta * zeta / sigma**2.5 - E * zeta / sigma**1.5)
    )
    return t11, t12


def stress_of_gaussian(C) -> np.ndarray:
    """int (q q^T - I) exp(-q^T C q) dq by successive one-dimensional Gaussian integration.

    Each entry is reduced to the (1,1) or (1,2) entry of a permuted exponent
    matrix; the Schur complements along the way are the leading minors of C.
    """
    C = _as_configuration(C).C
    d = C.shape[0]
    if d == 2:
        entries = _stress_entries_2d
    elif d == 3:
        entries = _stress_entries_3d
    else:
        raise ValueError(f"closed forms exist for d in (2, 3), got d={d}")
    tau = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            order = [i] + ([j] if j != i else []) + [k for k in range(d) if k not in (i, j)]
            P = C[np.ix_(order, order)]
            t11, t12 = entries(P)
            tau[i, j] = tau[j, i] = t11 if i == j else t12
    return tau


def hermite_modes_of_gaussian(C, a: float = SQRT_HALF, N: int = 2, nodes: int = 40) -> np.ndarray:
    """Hermite modes of exp(-q^T C q) for all multi-indices in ``all_modes(d, N)``.

    phi_z = int exp(-q^T C q) H~_z(q) prod w(a q_k)^{-1} dq.  The weight
    cancels the Gaussian inside H~_z, so the integrand is exp(-q^T C q) times
    a polynomial; it is integrated exactly after the substitution q = L^{-T} y
    with C = L L^T.  The expansion itself converges only for densities in
    L^2 with weight 1/w, i.e. when 2C - a^2 I is positive definite.
    """
    C = _as_configuration(C).C
    d = C.shape[0]
    if N > 6:
        raise ValueError("hermite_modes_of_gaussian supports N <= 6")
    if np.linalg.eigvalsh(2.0 * C - a * a * np.eye(d))[0] <= 0:
        raise ValueError("projection integrand non-integrable for this (C, a): 2C - a^2 I is not positive definite")
    L = np.linalg.cholesky(C)
    y, wy = npherm.hermgauss(nodes)
    grids = np.meshgrid(*([y] * d), indexing="ij")
    Y = np.stack([gq.ravel() for gq in grids])
    weight = np.ones(Y.shape[1])
    for wk in np.meshgrid(*([wy] * d), indexing="ij"):
        weight = weight * wk.ravel()
    Q = np.linalg.solve(L.T, Y)
    weight = weight / np.prod(np.diag(L))
    tables = [_normalized_hermite_table(N, a * Q[k]) for k in range(d)]
    pref = _function_prefactor(a)
    modes = all_modes(d, N)
    out = np.empty(len(modes))
    for i, z in enumerate(modes):
        poly = np.prod([tables[k][z[k]] for k in range(d)], axis=0)
        out[i] = pref**d * np.dot(weight, poly)
    return out


def truncated_stress(C, a: float = SQRT_HALF) -> np.ndarray:
    """Stress (without gamma) of the degree-<=2 Hermite truncation of exp(-q^T C q)."""
    C = _as_configuration(C)
    d = C.d
    phi = hermite_modes_of_gaussian(C, a, 2)
    return extra_stress_from_modes(phi[: 3 * d - 2], 1.0, a, d)
