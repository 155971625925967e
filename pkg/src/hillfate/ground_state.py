"""Equilibria, ground-state energy and the constrained critical-point catalog.

Also hosts the numerical verifiers for the variational properties of the
ground states: the constrained infimum of E over {K >= 0, W <= 0}, the
away-from-singularity constant, and the uniform bound |K| >= kappa(delta)
below the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import (
    CartesianState,
    ModelParams,
    effective_potential,
    energy_cart,
    energy_gradient_cart,
    scaling_w,
    scaling_w_gradient,
    virial_k_cart,
    virial_k_gradient_cart,
)


class VerificationError(AssertionError):
    """A numerical audit found a counterexample to the property under test."""


@dataclass(frozen=True)
class CriticalPoint:
    label: str
    multiplier: float
    state: CartesianState
    radius: float
    energy: float


def lagrange_points(p: ModelParams) -> tuple[tuple[float, float], tuple[float, float]]:
    return (-p.q0, 0.0), (p.q0, 0.0)


def ground_state_energy(p: ModelParams) -> float:
    return p.e_star


def lagrange_residual(p: ModelParams, s, multiplier: float) -> float:
    """Max-norm residual of grad E = lambda grad K together with K = 0."""
    s = np.asarray(s, dtype=float)
    res = energy_gradient_cart(p, s) - multiplier * virial_k_gradient_cart(p, s)
    return float(max(np.max(np.abs(res)), abs(virial_k_cart(p, s))))


def two_constraint_residual(p: ModelParams, z) -> np.ndarray:
    """Residual of grad E = lambda grad K + mu grad W with K = W = 0; z = (state, lambda, mu)."""
    z = np.asarray(z, dtype=float)
    s, lam, mu = z[:4], z[4], z[5]
    wx, wy = scaling_w_gradient(p, s[0], s[1])
    grad_w = np.array([wx, wy, 0.0, 0.0])
    res = energy_gradient_cart(p, s) - lam * virial_k_gradient_cart(p, s) - mu * grad_w
    return np.concatenate([res, [virial_k_cart(p, s), scaling_w(p, s[0], s[1])]])


def critical_point_catalog(p: ModelParams) -> list[CriticalPoint]:
    """One representative of each family of solutions of grad E = lambda grad K, K = 0.

    Gamma2 +/- are returned only for alpha > 2; at alpha = 2 both multipliers
    collapse onto 1/2, which the multiplier system excludes.
    """
    a = p.alpha
    out = []

    r0 = a ** (1.0 / (a + 2.0))
    s0 = CartesianState(r0, 0.0, 0.0, 0.0)
    out.append(CriticalPoint("Gamma0", 0.0, s0, r0, energy_cart(p, s0.as_array())))

    r1 = (a * (a + 2.0) ** 2) ** (1.0 / (a + 2.0))
    x1 = math.sqrt(a / r1**a + 3.0 * r1**2 / (4.0 * (a + 2.0)))
    y1 = math.sqrt(-a / r1**a + (4.0 * a + 5.0) * r1**2 / (4.0 * (a + 2.0)))
    s1 = CartesianState(x1, y1, y1 / 2.0, -x1 / 2.0)
    out.append(CriticalPoint("Gamma1", -0.5, s1, r1, energy_cart(p, s1.as_array())))

    if a > 2.0:
        r2 = (a * (a + 2.0) * (a - 2.0) / 4.0) ** (1.0 / (a + 2.0))
        root = math.sqrt((a - 2.0) / (a + 2.0))
        for label, lam in (("Gamma2minus", 0.5 * (1.0 - root)), ("Gamma2plus", 0.5 * (1.0 + root))):
            s2 = CartesianState(0.0, r2, -2.0 * lam * r2 / (1.0 - 2.0 * lam), 0.0)
            out.append(CriticalPoint(label, lam, s2, r2, energy_cart(p, s2.as_array())))
    return out


def energy_ratio_gamma1(alpha: float) -> float:
    """E(Gamma1)/E(Gamma0) = (1/2)(alpha+2)^((2-alpha)/(alpha+2))."""
    return 0.5 * (alpha + 2.0) ** ((2.0 - alpha) / (alpha + 2.0))


def energy_ratio_gamma2(alpha: float) -> float:
    """E(Gamma2-)/E(Gamma1) for alpha > 2."""
    a = alpha
    root = math.sqrt((a - 2.0) / (a + 2.0))
    return (1.0 / (2.0 * (a + 2.0)) * (4.0 * (a + 2.0) / (a - 2.0)) ** (a / (a + 2.0))
            * (8.0 / (a + 2.0) - a * (1.0 - root) ** 2))


# --- sampling windows ---

def position_window(p: ModelParams) -> tuple[float, float]:
    return 1e-3, 4.0 * p.q0 * (p.alpha + 2.0) ** (1.0 / (p.alpha + 2.0))


def speed_window(p: ModelParams) -> float:
    return 3.0 * math.sqrt(2.0 * (abs(p.e_star) + 1.0))


def _sample_phase(rng: np.random.Generator, p: ModelParams, n: int) -> np.ndarray:
    r_lo, r_hi = position_window(p)
    # uniform in area over the annulus
    r = np.sqrt(rng.uniform(r_lo**2, r_hi**2, n))
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    s = speed_window(p) * np.sqrt(rng.uniform(0.0, 1.0, n))
    ph = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th), s * np.cos(ph), s * np.sin(ph)], axis=-1)


# --- constrained minimisation ---

def _kkt_polish(p: ModelParams, z: np.ndarray, lam_k: float, lam_w: float,
                active_k: bool, active_w: bool) -> tuple[np.ndarray, float]:
    """Newton-type solve of the KKT system on the identified active set."""

    def residual(u):
        s = u[:4]
        rest = list(u[4:])
        lk = rest.pop(0) if active_k else 0.0
        lw = rest.pop(0) if active_w else 0.0
        wx, wy = scaling_w_gradient(p, s[0], s[1])
        stat = energy_gradient_cart(p, s) - lk * virial_k_gradient_cart(p, s) + lw * np.array([wx, wy, 0.0, 0.0])
        extra = []
        if active_k:
            extra.append(virial_k_cart(p, s))
        if active_w:
            extra.append(scaling_w(p, s[0], s[1]))
        return np.concatenate([stat, extra])

    # only multipliers of active constraints are unknowns, so the system stays square
    u0 = np.concatenate([z, [lam_k] if active_k else [], [lam_w] if active_w else []])
    sol = optimize.least_squares(residual, u0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return sol.x[:4], float(np.max(np.abs(sol.fun)))


def _augmented_lagrangian_min(p: ModelParams, z0: np.ndarray, tol: float = 1e-10,
                              max_outer: int = 12) -> tuple[np.ndarray, float]:
    """Minimise E subject to K >= 0 and W <= 0.

    PHR augmented Lagrangian with multiplier updates and a growing penalty,
    followed by a KKT polish on the constraints found active.  Returns the
    minimiser and its first-order residual.
    """
    lam_k, lam_w, rho = 0.0, 0.0, 10.0
    z = z0.copy()

    def pieces(z):
        return -virial_k_cart(p, z), scaling_w(p, z[0], z[1])  # both in g <= 0 form

    def fun(z):
        if np.hypot(z[0], z[1]) < 1e-6:
            return 1e30, np.zeros(4)
        gk, gw = pieces(z)
        f = energy_cart(p, z)
        grad = energy_gradient_cart(p, z)
        tk = max(0.0, lam_k + rho * gk)
        tw = max(0.0, lam_w + rho * gw)
        f += (tk * tk - lam_k * lam_k) / (2.0 * rho) + (tw * tw - lam_w * lam_w) / (2.0 * rho)
        if tk > 0:
            grad = grad - tk * virial_k_gradient_cart(p, z)
        if tw > 0:
            wx, wy = scaling_w_gradient(p, z[0], z[1])
            grad = grad + tw * np.array([wx, wy, 0.0, 0.0])
        return f, grad

    def kkt(z, lk, lw):
        gk, gw = pieces(z)
        wx, wy = scaling_w_gradient(p, z[0], z[1])
        stat = energy_gradient_cart(p, z) - lk * virial_k_gradient_cart(p, z) + lw * np.array([wx, wy, 0.0, 0.0])
        return max(np.max(np.abs(stat)), max(gk, 0.0), max(gw, 0.0), abs(lk * gk), abs(lw * gw))

    residual = np.inf
    for _ in range(max_outer):
        res = optimize.minimize(fun, z, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 500})
        z = res.x
        gk, gw = pieces(z)
        lam_k = max(0.0, lam_k + rho * gk)
        lam_w = max(0.0, lam_w + rho * gw)
        residual = kkt(z, lam_k, lam_w)
        if residual <= tol:
            return z, residual
        rho = min(rho * 4.0, 1e8)

    gk, gw = pieces(z)
    zp, _ = _kkt_polish(p, z, lam_k, lam_w, abs(gk) < 1e-3 or lam_k > 0, abs(gw) < 1e-3 or lam_w > 0)
    gkp, gwp = pieces(zp)
    if gkp <= 1e-12 and gwp <= 1e-12 and np.linalg.norm(zp - z) < 1e-2:
        # multipliers re-estimated at the polished point
        wx, wy = scaling_w_gradient(p, zp[0], zp[1])
        G = np.stack([-virial_k_gradient_cart(p, zp), np.array([wx, wy, 0.0, 0.0])], axis=1)
        mult, *_ = np.linalg.lstsq(G, -energy_gradient_cart(p, zp), rcond=None)
        rp = kkt(zp, max(mult[0], 0.0), max(mult[1], 0.0))
        if rp < residual:
            return zp, rp
    return z, residual


@dataclass
class VariationalReport:
    alpha: float
    e_star: float
    samples: int
    feasible: int
    sampled_min_energy: float
    minimized_energy: float
    minimizer: np.ndarray
    distance_to_ground_state: float
    converged_to_ground_state: int
    starts: int
    max_kkt_residual: float
    asserted: bool
    passed: bool
    notes: list[str] = field(default_factory=list)


def verify_variational_infimum(p: ModelParams, samples: int = 1_000_000, seed: int = 0,
                               starts: int = 100, tol: float = 1e-6,
                               chunk: int = 200_000) -> VariationalReport:
    """Audit inf{E | K >= 0, W <= 0} = E* by sampling plus local minimisation.

    The bound is only asserted for alpha >= 2; other exponents are reported as
    controls.
    """
    if samples < 100_000:
        raise ValueError("samples must be >= 1e5")
    rng = np.random.default_rng(seed)
    keep_e = np.empty(0)
    keep_z = np.empty((0, 4))
    feasible = 0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        z = _sample_phase(rng, p, n)
        done += n
        mask = (virial_k_cart(p, z) >= 0.0) & (scaling_w(p, z[:, 0], z[:, 1]) <= 0.0)
        feasible += int(mask.sum())
        e = energy_cart(p, z[mask])
        keep_e = np.concatenate([keep_e, e])
        keep_z = np.concatenate([keep_z, z[mask]])
        order = np.argsort(keep_e)[:starts]
        keep_e, keep_z = keep_e[order], keep_z[order]
    if feasible == 0:
        raise VerificationError("no feasible samples in {K>=0, W<=0}; window or parameter bug")

    gs = np.array([[p.q0, 0, 0, 0], [-p.q0, 0, 0, 0]], dtype=float)
    best_e, best_z, worst_res, n_conv = np.inf, None, 0.0, 0
    for z0 in keep_z:
        z, res = _augmented_lagrangian_min(p, z0)
        e = energy_cart(p, z)
        dist = float(np.min(np.linalg.norm(gs - z, axis=1)))
        n_conv += dist <= 1e-4
        worst_res = max(worst_res, res)
        if e < best_e:
            best_e, best_z = e, z
    dist_best = float(np.min(np.linalg.norm(gs - best_z, axis=1)))
    asserted = p.alpha >= 2.0
    passed = bool(min(best_e, keep_e[0]) >= p.e_star - tol and dist_best <= 1e-4)
    return VariationalReport(
        alpha=p.alpha, e_star=p.e_star, samples=samples, feasible=feasible,
        sampled_min_energy=float(keep_e[0]), minimized_energy=float(best_e),
        minimizer=best_z, distance_to_ground_state=dist_best,
        converged_to_ground_state=int(n_conv), starts=len(keep_z),
        max_kkt_residual=worst_res, asserted=asserted, passed=passed if asserted else True,
    )


# --- away from the singularity ---

def _k_reach(p: ModelParams, x, y, r, e_cap):
    """Bounds (k_lo, k_hi, feasible) on K over velocities with E < e_cap.

    With speed s and angular momentum L = x vy - vx y, |L| <= r s, so
    K = s^2 + 2L + W ranges over [s^2 - 2rs + W, s^2 + 2rs + W].  The union
    over admissible speeds 0 <= s < s_max is (min_s (s^2 - 2rs) + W,
    s_max^2 + 2 r s_max + W).  s_max^2 + W is expanded by hand because both
    terms blow up like r^-alpha near the origin and cancel.
    """
    a = p.alpha
    V = effective_potential(p, x, y)
    W = scaling_w(p, x, y)
    smax2 = 2.0 * (e_cap - V)
    ok = smax2 > 0.0
    smax = np.sqrt(np.where(ok, smax2, 0.0))
    # r * s_max evaluated without forming r^-alpha
    rs2 = 2.0 * e_cap * r * r + (a + 2.0) * x * x * r * r + 2.0 * (a + 2.0) * r ** (2.0 - a)
    rs = np.sqrt(np.maximum(rs2, 0.0))
    k_hi = 2.0 * e_cap + 2.0 * (a + 2.0) * x * x + (2.0 - a) * (a + 2.0) * r ** (-a) + 2.0 * rs
    s_star = np.minimum(r, smax)
    k_lo = s_star**2 - 2.0 * r * s_star + W
    return k_lo, k_hi, ok


def _bad_positions(p: ModelParams, r: np.ndarray, theta: np.ndarray, e_cap: float,
                   c: float) -> np.ndarray:
    """Mask of positions admitting a velocity with E < e_cap and |K| < c."""
    x = r * np.cos(theta)
    y = r * np.sin(theta)
    k_lo, k_hi, ok = _k_reach(p, x, y, r, e_cap)
    return ok & (k_lo < c) & (k_hi > -c)


def _probe_grid(r_max: float, resolution: int):
    r = np.geomspace(r_max * 1e-9, r_max, resolution)
    th = np.linspace(0.0, np.pi / 2.0, resolution)  # V, W depend on x^2 only
    R, TH = np.meshgrid(r, th, indexing="ij")
    return R.ravel(), TH.ravel()


@dataclass
class AwayReport:
    alpha: float
    e_cap: float
    c_found: float
    certified: bool
    counterexample: tuple[float, float] | None = None


def verify_away_from_singularity(p: ModelParams, e_cap: float | None = None,
                                 grid: int = 400) -> AwayReport:
    """Largest c such that no state with r < c has E < e_cap and |K| < c.

    The velocity is eliminated analytically (see ``_bad_positions``) so only
    the configuration plane is scanned.  ``certified`` is False when no
    positive constant survives at this resolution; ``counterexample`` then
    holds the smallest offending (r, theta).
    """
    if e_cap is None:
        e_cap = 1.0 if p.alpha > 2.0 else -1.0
    r_top = p.q0

    def bad(c):
        R, TH = _probe_grid(min(c, r_top), grid)
        m = _bad_positions(p, R, TH, e_cap, c)
        return m, R, TH

    lo, hi = 0.0, r_top
    m, _, _ = bad(hi)
    if not m.any():
        return AwayReport(p.alpha, e_cap, hi, True)
    c_min = 1e-8
    m, R, TH = bad(c_min)
    if m.any():
        i = int(np.argmin(np.where(m, R, np.inf)))
        return AwayReport(p.alpha, e_cap, 0.0, False, (float(R[i]), float(TH[i])))
    lo = c_min
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if bad(mid)[0].any():
            hi = mid
        else:
            lo = mid
        if hi / lo < 1.0 + 1e-6:
            break
    return AwayReport(p.alpha, e_cap, lo, True)


def sample_nonnegative_k_near_origin(p: ModelParams, e_cap: float, r_max: float,
                                     samples: int = 100_000, seed: int = 0) -> int:
    """Count sampled states with r < r_max, E < e_cap and K >= 0."""
    rng = np.random.default_rng(seed)
    r = r_max * rng.uniform(0.0, 1.0, samples) ** 0.5
    r = np.maximum(r, 1e-12)
    th = rng.uniform(0.0, 2.0 * np.pi, samples)
    x, y = r * np.cos(th), r * np.sin(th)
    V = effective_potential(p, x, y)
    smax = np.sqrt(np.maximum(2.0 * (e_cap - V), 0.0))
    s = smax * np.sqrt(rng.uniform(0.0, 1.0, samples))
    ph = rng.uniform(0.0, 2.0 * np.pi, samples)
    z = np.stack([x, y, s * np.cos(ph), s * np.sin(ph)], axis=-1)
    mask = (energy_cart(p, z) < e_cap) & (virial_k_cart(p, z) >= 0.0)
    return int(mask.sum())


# --- kappa(delta) below the threshold ---

@dataclass
class KappaReport:
    alpha: float
    delta: float
    samples: int
    kappa: float
    sampled_min_abs_k: float
    analytic_bound: float
    max_k: float
    all_negative: bool


def verify_kappa_delta(p: ModelParams, delta: float, samples: int = 200_000,
                       seed: int = 0) -> KappaReport:
    """Empirical min |K| over {E <= E* - delta, W <= 0}.

    Positions are rejection-sampled in the inner region; velocities are drawn
    uniformly from the kinetic disc allowed by the energy cap.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    rng = np.random.default_rng(seed)
    cap = p.e_star - delta
    r_hi = p.q0
    got = []
    total = 0
    attempts = 0
    while total < samples:
        attempts += 1
        if attempts > 200:
            raise VerificationError("sampling exhausted before reaching the requested count")
        n = samples
        r = r_hi * np.sqrt(rng.uniform(0.0, 1.0, n))
        r = np.maximum(r, 1e-9)
        th = rng.uniform(0.0, 2.0 * np.pi, n)
        x, y = r * np.cos(th), r * np.sin(th)
        V = effective_potential(p, x, y)
        keep = (V < cap) & (scaling_w(p, x, y) <= 0.0)
        x, y, V = x[keep], y[keep], V[keep]
        m = len(x)
        s = np.sqrt(2.0 * (cap - V)) * np.sqrt(rng.uniform(0.0, 1.0, m))
        ph = rng.uniform(0.0, 2.0 * np.pi, m)
        z = np.stack([x, y, s * np.cos(ph), s * np.sin(ph)], axis=-1)
        got.append(virial_k_cart(p, z))
        total += m
    K = np.concatenate(got)[:samples]
    sampled = float(np.min(np.abs(K)))
    bound = kappa_lower_bound(p, delta)
    # sampling only over-estimates the infimum; keep the smaller of the two
    return KappaReport(p.alpha, delta, len(K), min(sampled, bound), sampled, bound,
                       float(np.max(K)), bool(np.all(K < 0.0)))


def kappa_lower_bound(p: ModelParams, delta: float, grid: int = 400) -> float:
    """Infimum of |K| on {E <= E* - delta, W <= 0} with velocities eliminated.

    At each position the largest reachable K is s_max^2 + 2 r s_max + W
    (attained on the energy surface with maximal angular momentum), so the
    infimum is -max of that function over the inner region.  Grid search
    followed by a constrained polish of the best nodes.
    """
    cap = p.e_star - delta

    def k_hi_at(q):
        x, y = q
        r = math.hypot(x, y)
        return float(_k_reach(p, x, y, r, cap)[1])

    # log-polar grid resolves the origin, a uniform grid resolves the bulk
    r = np.geomspace(1e-9, p.q0, grid)
    th = np.linspace(0.0, np.pi / 2.0, grid)
    R, TH = np.meshgrid(r, th, indexing="ij")
    lin = np.linspace(0.0, p.q0, grid)
    X2, Y2 = np.meshgrid(lin, lin, indexing="ij")
    x = np.concatenate([(R * np.cos(TH)).ravel(), X2.ravel()[1:]])
    y = np.concatenate([(R * np.sin(TH)).ravel(), Y2.ravel()[1:]])
    _, k_hi, ok = _k_reach(p, x, y, np.hypot(x, y), cap)
    ok &= scaling_w(p, x, y) <= 0.0
    vals = np.where(ok, k_hi, -np.inf)
    best = float(np.max(vals))
    cons = [
        {"type": "ineq", "fun": lambda q: cap - effective_potential(p, q[0], q[1])},
        {"type": "ineq", "fun": lambda q: -scaling_w(p, q[0], q[1])},
    ]
    for idx in np.argsort(vals)[-20:]:
        q0 = np.array([x[idx], y[idx]])
        sol = optimize.minimize(lambda q: -k_hi_at(q), q0, method="SLSQP", constraints=cons,
                                options={"ftol": 1e-14, "maxiter": 200})
        q = sol.x
        if (np.hypot(*q) > 0 and effective_potential(p, q[0], q[1]) <= cap + 1e-12
                and scaling_w(p, q[0], q[1]) <= 1e-12):
            best = max(best, k_hi_at(q))
    return -best


def two_constraint_root_search(p: ModelParams, starts: int = 2000, seed: int = 0,
                               tol: float = 1e-9) -> list[np.ndarray]:
    """Distinct zero-residual solutions of the two-constraint multiplier system.

    Levenberg-Marquardt from random starts over (x, y, vx, vy, lambda, mu).
    """
    rng = np.random.default_rng(seed)
    lo, hi = position_window(p)
    found: list[np.ndarray] = []
    for _ in range(starts):
        r = rng.uniform(0.2 * p.q0, min(hi, 3.0 * p.q0))
        th = rng.uniform(0.0, 2.0 * np.pi)
        z0 = np.array([r * np.cos(th), r * np.sin(th), *rng.normal(0.0, 1.0, 2),
                       *rng.uniform(-2.0, 2.0, 2)])
        try:
            sol = optimize.least_squares(lambda z: two_constraint_residual(p, z), z0, method="lm",
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400)
        except Exception:  # DomainError at the origin or numerical blow-up
            continue
        z = sol.x
        # LM also drifts to roots at infinity along the y-axis where W, K -> 0
        if not np.all(np.isfinite(z)) or np.max(np.abs(sol.fun)) > tol or np.hypot(z[0], z[1]) > hi:
            continue
        if not any(np.linalg.norm(z[:4] - f[:4]) < 1e-6 for f in found):
            found.append(z)
    return found


def singular_region_e_cap_bound(alpha: float) -> float:
    """Supremum of E along K = 0 states collapsing to the origin (alpha = 2 only).

    For alpha = 2 states with K = 0 exist at arbitrarily small r with energy
    tending to -2 sqrt(2), so any singularity-avoidance cap must sit below it.
    """
    if alpha != 2.0:
        raise ValueError("only defined for alpha = 2")
    return -2.0 * math.sqrt(2.0)


__all__ = [
    "AwayReport",
    "CriticalPoint",
    "KappaReport",
    "VariationalReport",
    "VerificationError",
    "critical_point_catalog",
    "energy_ratio_gamma1",
    "energy_ratio_gamma2",
    "ground_state_energy",
    "kappa_lower_bound",
    "lagrange_points",
    "lagrange_residual",
    "singular_region_e_cap_bound",
    "sample_nonnegative_k_near_origin",
    "two_constraint_residual",
    "two_constraint_root_search",
    "verify_away_from_singularity",
    "verify_kappa_delta",
    "verify_variational_infimum",
]
