"""Symplectic linearization at the ground states +/-Q~.

Conventions: ``J = [[0, I], [-I, 0]]`` and ``omega_form(u, v) = u^T J^T v``.
With this form the hyperbolic pair is normalised by ``Omega(xi+, xi-) = 1``
and the centre pair by ``Omega(eta1, eta2) = 1``.  The centre pair is
oriented so that ``Omega(gamma, A gamma) = omega (a^2 + b^2) > 0``, which
means ``A eta1 = omega eta2`` and ``A eta2 = -omega eta1``.  Under these
normalisations the matrix ``P = (xi+ eta1 xi- eta2)`` satisfies
``P^T J P = -J``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .model import (
    DomainError,
    ModelParams,
    eigenrates,
    energy_symp,
    scaling_w,
    vector_field_symp,
)

J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


class CalibrationError(RuntimeError):
    pass


def symplectic_form(u, v):
    """Omega(u, v) = (J u) . v, broadcasting over leading axes."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ju = np.concatenate([u[..., 2:], -u[..., :2]], axis=-1)
    out = np.sum(ju * v, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def hessian_at_ground(p: ModelParams) -> np.ndarray:
    a = p.alpha
    return np.array([
        [1.0 - (a + 2.0) ** 2, 0.0, 0.0, -1.0],
        [0.0, 1.0 + (a + 2.0), 1.0, 0.0],
        [0.0, 1.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
    ])


def eigenrate_pair(p: ModelParams) -> tuple[float, float]:
    return eigenrates(p.alpha)


def _null_vector(M: np.ndarray) -> np.ndarray:
    _, _, vh = np.linalg.svd(M)
    return vh[-1]


@dataclass(frozen=True)
class SymplecticBasis:
    alpha: float
    k: float
    omega: float
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    hessian: np.ndarray
    a_matrix: np.ndarray
    ground: np.ndarray = field(repr=False)

    @property
    def p_matrix(self) -> np.ndarray:
        return np.column_stack([self.xi_plus, self.eta1, self.xi_minus, self.eta2])


def build_basis(p: ModelParams) -> SymplecticBasis:
    S = hessian_at_ground(p)
    A = J @ S
    k, om = eigenrates(p.alpha)

    up = _null_vector(A - k * np.eye(4))
    um = _null_vector(A + k * np.eye(4))
    # complex eigenvector for -i omega; its real/imaginary parts give the
    # orientation with A eta1 = omega eta2
    w, V = np.linalg.eig(A)
    c = int(np.argmin(np.abs(w + 1j * om)))
    eta = V[:, c]
    e1, e2 = eta.real.copy(), eta.imag.copy()

    s12 = symplectic_form(e1, e2)
    if s12 <= 0:
        raise CalibrationError("centre pair has non-positive symplectic pairing")
    e1 /= math.sqrt(s12)
    e2 /= math.sqrt(s12)

    wpm = symplectic_form(up, um)
    a = math.sqrt(np.linalg.norm(um) / (np.linalg.norm(up) * abs(wpm)))
    xp = a * up
    xm = um / (a * wpm)
    q0 = p.q0
    Q0 = np.array([-q0, 0.0, 0.0, q0])
    if symplectic_form(Q0, xp) < 0:
        xp, xm = -xp, -xm

    basis = SymplecticBasis(
        alpha=p.alpha, k=k, omega=om, xi_plus=xp, xi_minus=xm, eta1=e1, eta2=e2,
        hessian=S, a_matrix=A, ground=np.array([q0, 0.0, 0.0, q0]),
    )
    res = max(
        np.max(np.abs(A @ xp - k * xp)),
        np.max(np.abs(A @ xm + k * xm)),
        np.max(np.abs(A @ e1 - om * e2)),
        np.max(np.abs(A @ e2 + om * e1)),
    )
    if res > 1e-9:
        raise CalibrationError(f"eigenvector residual {res:.3e} exceeds 1e-9")
    return basis


# --- decomposition ---

@dataclass
class Decomposition:
    sigma: np.ndarray
    X: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    x_norm_E: np.ndarray
    c_rem: np.ndarray
    ambiguous: np.ndarray

    @property
    def lambda1(self):
        return 0.5 * (self.lambda_plus + self.lambda_minus)

    @property
    def lambda2(self):
        return 0.5 * (self.lambda_plus - self.lambda_minus)


def _project(basis: SymplecticBasis, X: np.ndarray):
    lp = symplectic_form(X, basis.xi_minus)
    lm = -symplectic_form(X, basis.xi_plus)
    gam = X - np.multiply.outer(lp, basis.xi_plus) - np.multiply.outer(lm, basis.xi_minus)
    a = symplectic_form(gam, basis.eta2)
    b = -symplectic_form(gam, basis.eta1)
    return lp, lm, gam, a, b


def linearized_energy_norm_sq(basis: SymplecticBasis, lp, lm, a, b):
    return 0.5 * basis.k * (np.square(lp) + np.square(lm)) + 0.5 * basis.omega * (np.square(a) + np.square(b))


def energy_excess(p: ModelParams, X) -> np.ndarray:
    """E(Q~ + X) - E*, evaluated from X without cancellation against E*."""
    X = np.asarray(X, dtype=float)
    a = p.alpha
    q0 = p.q0
    x0, x1, x2, x3 = X[..., 0], X[..., 1], X[..., 2], X[..., 3]
    # velocities at Q~ + X are (X2 + X1, X3 - X0) exactly
    kin = 0.5 * (np.square(x2 + x1) + np.square(x3 - x0))
    dr2 = x0 * (2.0 * q0 + x0) + x1 * x1  # r^2 - q0^2
    if np.any(dr2 <= -q0 * q0):
        raise DomainError("Q~ + X sits at the origin")
    inv = q0 ** (-a) * np.expm1(-0.5 * a * np.log1p(dr2 / (q0 * q0)))  # r^-a - q0^-a
    out = kin - 0.5 * (a + 2.0) * x0 * (2.0 * q0 + x0) - (a + 2.0) * inv
    return float(out) if np.ndim(out) == 0 else out


def _remainder(p: ModelParams, basis: SymplecticBasis, X, lp, lm, xe2):
    # E(sigma (Q~ + X)) = E(Q~ + X) by point symmetry
    return energy_excess(p, X) + 0.5 * basis.k * np.square(lp + lm) - xe2


def decompose_about(basis: SymplecticBasis, p: ModelParams, psi, sigma) -> Decomposition:
    """Decomposition of psi about sigma Q~ for a prescribed sigma (scalar or array)."""
    psi = np.asarray(psi, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), psi.shape[:-1])
    X = sigma[..., None] * psi - basis.ground
    lp, lm, gam, a, b = _project(basis, X)
    xe2 = linearized_energy_norm_sq(basis, lp, lm, a, b)
    crem = _remainder(p, basis, X, lp, lm, xe2)
    return Decomposition(sigma=sigma, X=X, lambda_plus=lp, lambda_minus=lm, gamma=gam, a=a, b=b,
                         x_norm_E=np.sqrt(xe2), c_rem=crem,
                         ambiguous=np.zeros(sigma.shape, dtype=bool))


def decompose(basis: SymplecticBasis, p: ModelParams, psi) -> Decomposition:
    """Decompose psi = sigma (Q~ + X) about the nearest ground state.

    Ties at the exact midpoint resolve to sigma = +1 and are flagged.
    """
    psi = np.asarray(psi, dtype=float)
    dp = np.linalg.norm(psi - basis.ground, axis=-1)
    dm = np.linalg.norm(psi + basis.ground, axis=-1)
    sigma = np.where(dm < dp, -1.0, 1.0)
    out = decompose_about(basis, p, psi, sigma)
    out.ambiguous = np.asarray(dp == dm)
    return out


# --- distance function ---

def cutoff(r):
    """Smooth cutoff: 1 on |r| <= 1, 0 on |r| >= 2, quintic smoothstep between (C^2)."""
    t = np.clip(np.abs(np.asarray(r, dtype=float)) - 1.0, 0.0, 1.0)
    out = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    return float(out) if np.ndim(out) == 0 else out


def _d_sigma(basis, p, psi, sigma, delta_e):
    dec = decompose_about(basis, p, psi, sigma)
    xe2 = np.square(dec.x_norm_E)
    rad = xe2 + cutoff(dec.x_norm_E / (2.0 * delta_e)) * dec.c_rem
    if np.any(rad < -1e-14):
        raise CalibrationError("negative radicand in the distance function; delta_E too large")
    return np.sqrt(np.maximum(rad, 0.0)), dec


@dataclass
class Distance:
    d_plus: np.ndarray
    d_minus: np.ndarray
    d_q: np.ndarray
    sigma: np.ndarray


def distance_dq(basis: SymplecticBasis, p: ModelParams, psi, delta_e: float) -> Distance:
    psi = np.asarray(psi, dtype=float)
    dp, _ = _d_sigma(basis, p, psi, 1.0, delta_e)
    dm, _ = _d_sigma(basis, p, psi, -1.0, delta_e)
    sigma = np.where(dm < dp, -1.0, 1.0)
    dq = np.minimum(dp, dm)
    if np.ndim(dq) == 0:
        return Distance(float(dp), float(dm), float(dq), float(sigma))
    return Distance(dp, dm, dq, sigma)


def dq_and_decomposition(basis: SymplecticBasis, p: ModelParams, psi, delta_e: float):
    """d_Q together with the decomposition about the minimising ground state."""
    psi = np.asarray(psi, dtype=float)
    dp, decp = _d_sigma(basis, p, psi, 1.0, delta_e)
    dm, decm = _d_sigma(basis, p, psi, -1.0, delta_e)
    use_m = dm < dp
    dec = decompose_about(basis, p, psi, np.where(use_m, -1.0, 1.0))
    return np.minimum(dp, dm), dec


# --- calibration ---

def _sample_unit_decomposition(rng, basis, n):
    """Random (lp, lm, a, b) on the unit sphere of the linearized energy norm."""
    g = rng.normal(size=(n, 4))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    scale = np.array([math.sqrt(2.0 / basis.k)] * 2 + [math.sqrt(2.0 / basis.omega)] * 2)
    return g * scale


def _perturbation(basis, coords):
    lp, lm, a, b = coords.T
    return (np.outer(lp, basis.xi_plus) + np.outer(lm, basis.xi_minus)
            + np.outer(a, basis.eta1) + np.outer(b, basis.eta2))


def remainder_ratio(basis: SymplecticBasis, p: ModelParams, X: np.ndarray) -> np.ndarray:
    """|C(psi)| / |X|_E^2 for perturbations X about Q~ (rows)."""
    X = np.atleast_2d(X)
    pos = basis.ground + X
    bad = np.hypot(pos[:, 0], pos[:, 1]) < 1e-12
    lp, lm, gam, a, b = _project(basis, X)
    xe2 = linearized_energy_norm_sq(basis, lp, lm, a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        X_safe = np.where(bad[:, None], 0.0, X)
        c = energy_excess(p, X_safe) + 0.5 * basis.k * np.square(lp + lm) - xe2
        ratio = np.where(xe2 > 0, np.abs(c) / xe2, 0.0)
    return np.where(bad, np.inf, ratio)


def _shell_worst_ratio(basis, p, dirs, radius, polish=8):
    """Max |C|/|X|_E^2 on the shell |X|_E = radius, sampled then locally maximised."""
    from scipy.optimize import minimize

    ratios = remainder_ratio(basis, p, _perturbation(basis, dirs * radius))
    worst = float(np.max(ratios))
    scale = np.array([math.sqrt(2.0 / basis.k)] * 2 + [math.sqrt(2.0 / basis.omega)] * 2)

    def neg(g):
        n = np.linalg.norm(g)
        if n == 0.0:
            return 0.0
        return -float(remainder_ratio(basis, p, _perturbation(basis, (g / n * scale * radius)[None]))[0])

    for i in np.argsort(ratios)[-polish:]:
        res = minimize(neg, dirs[i] / scale, method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 400})
        worst = max(worst, -float(res.fun))
    return worst


def calibrate_delta_e(basis: SymplecticBasis, p: ModelParams, samples: int = 20_000,
                      seed: int = 0, upper: float = 0.5) -> float:
    """Largest delta_E <= upper with |C| <= |X|_E^2/10 whenever |X|_E <= 4 delta_E.

    Directions are drawn uniformly on the unit sphere in decomposition
    coordinates with radii uniform in (0, 4 delta_E].  Since the ratio grows
    with the radius, the outer shell is also maximised locally over
    directions.  Bisection on delta_E.
    """
    if samples < 10_000:
        raise ValueError("samples must be >= 1e4")
    rng = np.random.default_rng(seed)
    dirs = _sample_unit_decomposition(rng, basis, samples)
    fracs = rng.uniform(0.0, 1.0, samples)

    def ok(delta):
        X = _perturbation(basis, dirs * (4.0 * delta * fracs)[:, None])
        if not np.all(remainder_ratio(basis, p, X) <= 0.1):
            return False
        return _shell_worst_ratio(basis, p, dirs, 4.0 * delta) <= 0.1

    if ok(upper):
        return upper
    if not ok(1e-4):
        raise CalibrationError("no delta_E >= 1e-4 certifies the remainder bound")
    lo, hi = 1e-4, upper
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def audit_delta_e(basis: SymplecticBasis, p: ModelParams, delta_e: float,
                  samples: int = 100_000, seed: int = 12345) -> float:
    """Worst |C|/|X|_E^2 over fresh samples with |X|_E <= 4 delta_E."""
    rng = np.random.default_rng(seed)
    dirs = _sample_unit_decomposition(rng, basis, samples)
    X = _perturbation(basis, dirs * (4.0 * delta_e * rng.uniform(0.0, 1.0, samples))[:, None])
    return float(np.max(remainder_ratio(basis, p, X)))


# --- nonlinear remainder ---

@dataclass
class Remainder:
    N: np.ndarray
    N_plus: np.ndarray
    N_minus: np.ndarray
    N1: np.ndarray
    N2: np.ndarray


def nonlinear_remainder(basis: SymplecticBasis, p: ModelParams, X) -> Remainder:
    """N(X) = F(Q~ + X) - A X and its projections.

    ``N1`` and ``N2`` are the forcings of the (lambda1, lambda2) system in the
    form ``lambda1' = k lambda2 + N1/2`` and ``lambda2' = k lambda1 - N2/2``,
    i.e. ``N1 = Omega(N, xi- - xi+)`` and ``N2 = -Omega(N, xi+ + xi-)``.
    """
    X = np.asarray(X, dtype=float)
    pos = basis.ground + X
    if np.any(np.hypot(pos[..., 0], pos[..., 1]) == 0.0):
        raise DomainError("Q~ + X sits at the origin")
    N = vector_field_symp(p, pos) - X @ basis.a_matrix.T
    n_plus = symplectic_form(N, basis.xi_minus)
    n_minus = symplectic_form(N, basis.xi_plus)
    return Remainder(N=N, N_plus=n_plus, N_minus=n_minus, N1=n_plus - n_minus, N2=-(n_plus + n_minus))


# --- sign function ---

def sign_of(v):
    return np.where(np.asarray(v) >= 0.0, 1, -1)


@dataclass(frozen=True)
class Calibration:
    """Per-alpha constants measured numerically."""

    delta_e: float
    delta_x: float
    c_star: float = float("nan")
    t_star: float = float("nan")
    epsilon: float = float("nan")

    @property
    def delta_s(self) -> float:
        return self.delta_x / (2.0 * self.c_star)


def calibrate(basis: SymplecticBasis, p: ModelParams, samples: int = 20_000, seed: int = 0) -> Calibration:
    de = calibrate_delta_e(basis, p, samples=samples, seed=seed)
    return Calibration(delta_e=de, delta_x=de / 4.0, epsilon=de / 100.0)


@dataclass(frozen=True)
class LinearContext:
    """Model, basis and calibration bundled for repeated d_Q evaluations."""

    params: ModelParams
    basis: SymplecticBasis
    calibration: Calibration

    def dq(self, psi):
        return distance_dq(self.basis, self.params, psi, self.calibration.delta_e).d_q

    def decompose(self, psi) -> Decomposition:
        return dq_and_decomposition(self.basis, self.params, psi, self.calibration.delta_e)[1]

    def with_constants(self, **kw) -> "LinearContext":
        return replace(self, calibration=replace(self.calibration, **kw))


@lru_cache(maxsize=None)
def linear_context(alpha: float) -> LinearContext:
    """Basis and default calibration for ``alpha`` (cached per process)."""
    p = ModelParams(float(alpha))
    basis = build_basis(p)
    return LinearContext(p, basis, calibrate(basis, p))


def sign_function(basis: SymplecticBasis, p: ModelParams, psi, delta: float, delta_e: float,
                  epsilon: float):
    """Continuous +/-1 label: sign(lambda1) near the ground states, sign(W) away.

    ``psi`` must lie in {E < E* + min(d_Q^2/2, epsilon^2)}.  In the overlap
    delta <= d_Q <= delta_E both rules apply and must agree.
    """
    psi = np.asarray(psi, dtype=float)
    dq, dec = dq_and_decomposition(basis, p, psi, delta_e)
    e = energy_symp(p, psi)
    if np.any(e >= p.e_star + np.minimum(0.5 * dq**2, epsilon**2)):
        raise DomainError("state lies outside the sign-function domain")
    near = dq <= delta_e
    far = dq >= delta
    s_near = sign_of(dec.lambda1)
    s_far = sign_of(scaling_w(p, psi[..., 0], psi[..., 1]))
    both = near & far
    if np.any(both & (s_near != s_far)):
        raise CalibrationError("sign(lambda1) and sign(W) disagree in the overlap region")
    out = np.where(near, s_near, s_far)
    return int(out) if np.ndim(out) == 0 else out


def basis_document(basis: SymplecticBasis, cal: Calibration | None = None) -> dict[str, str]:
    """Plain key/value rendering of the basis and calibration constants."""
    def vec(v):
        return ",".join(f"{x:.17g}" for x in v)

    doc = {
        "alpha": f"{basis.alpha:.17g}",
        "k": f"{basis.k:.17g}",
        "omega": f"{basis.omega:.17g}",
        "xi_plus": vec(basis.xi_plus),
        "xi_minus": vec(basis.xi_minus),
        "eta1": vec(basis.eta1),
        "eta2": vec(basis.eta2),
    }
    if cal is not None:
        for name in ("delta_e", "delta_x", "c_star", "t_star", "epsilon"):
            doc[name] = f"{getattr(cal, name):.17g}"
    return doc
