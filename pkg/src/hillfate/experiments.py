"""Numerical audits of the dynamical claims: invariance of the W-sign regions,
collision envelopes, ejection from the ground states, one-pass behaviour and
threshold-energy dynamics.

Every experiment returns a report dataclass with a ``passed`` flag and a
``summary()`` mapping of plain key/value pairs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ground_state import kappa_lower_bound
from .integrate import (
    Event,
    IntegratorConfig,
    Trajectory,
    classify_fate,
    find_events,
    integrate,
    trap_radius,
)
from .linear import LinearContext, linear_context, sign_of
from .model import (
    ModelParams,
    cart_to_symp,
    effective_potential,
    energy_symp,
    moment_of_inertia,
    scaling_w,
    symp_to_cart,
    virial_k_symp,
)


def _summary(obj) -> dict:
    out = {}
    for k, v in asdict(obj).items():
        if isinstance(v, (list, tuple, dict, np.ndarray)):
            continue
        out[k] = v
    return out


# --- initial data ---

def sample_below_threshold(p: ModelParams, n: int, region: str, rng: np.random.Generator,
                           min_gap: float = 1e-2, max_gap: float = 2.0) -> np.ndarray:
    """Random symplectic states with E* - max_gap <= E <= E* - min_gap and sign(W) per ``region``.

    ``region`` is ``"minus"`` (W < 0, inner component) or ``"plus"`` (W > 0).
    Positions are uniform in a box, energies uniform in the allowed gap and
    velocity directions uniform.
    """
    if region not in ("minus", "plus"):
        raise ValueError("region must be 'minus' or 'plus'")
    out = []
    half = 2.0 * p.q0 if region == "minus" else 4.0 * p.q0
    while len(out) < n:
        m = 4 * n
        xy = rng.uniform(-half, half, size=(m, 2))
        r = np.hypot(xy[:, 0], xy[:, 1])
        xy, r = xy[r > 1e-3], r[r > 1e-3]
        v = effective_potential(p, xy[:, 0], xy[:, 1])
        w = scaling_w(p, xy[:, 0], xy[:, 1])
        e_hi = p.e_star - min_gap
        keep = (v < e_hi) & ((w < 0) if region == "minus" else (w > 0))
        xy, v = xy[keep], v[keep]
        e_lo = np.maximum(v, p.e_star - max_gap)
        ok = e_lo < e_hi
        xy, v, e_lo = xy[ok], v[ok], e_lo[ok]
        e = rng.uniform(e_lo, e_hi)
        speed = np.sqrt(2.0 * (e - v))
        ang = rng.uniform(0.0, 2.0 * np.pi, len(e))
        cart = np.column_stack([xy, speed * np.cos(ang), speed * np.sin(ang)])
        out.extend(cart_to_symp(cart))
    return np.array(out[:n])


def project_to_energy(p: ModelParams, s, level: float) -> np.ndarray:
    """Rescale the Cartesian velocity so that E(s) = level (requires V < level)."""
    c = symp_to_cart(np.asarray(s, dtype=float))
    v = effective_potential(p, c[0], c[1])
    if v >= level:
        raise ValueError("energy level below the potential at this position")
    speed = math.hypot(c[2], c[3])
    target = math.sqrt(2.0 * (level - v))
    if speed == 0.0:
        c[2] = target
    else:
        c[2:] *= target / speed
    return cart_to_symp(c)


# --- invariance ---

def resolved_max_k(p: ModelParams, nodes: np.ndarray, r_min: float) -> tuple[float, float]:
    """(max K over nodes with r >= r_min, max of K / ((alpha+2) r^-alpha) over all nodes).

    Close to a collision the terms of K are O(r^-alpha) and the integration
    error in K grows with them, so the sign of K is only checked where it is
    resolved; the normalised value is reported everywhere.
    """
    r = np.hypot(nodes[:, 0], nodes[:, 1])
    kk = virial_k_symp(p, nodes[:, :4])
    far = r >= r_min
    kmax = float(np.max(kk[far])) if np.any(far) else -math.inf
    return kmax, float(np.max(kk / ((p.alpha + 2.0) * r ** -p.alpha)))


@dataclass
class InvarianceReport:
    alpha: float
    w_initial: float
    fate: str
    t_end: float
    w_crossings: int
    max_k: float
    first_violation: float | None
    passed: bool

    def summary(self):
        return _summary(self)


def invariance_audit(p: ModelParams, s0, cfg: IntegratorConfig | None = None,
                     sub: int = 4) -> InvarianceReport:
    """W keeps its sign below E*; for alpha >= 2 with W < 0, K stays negative."""
    cfg = cfg or IntegratorConfig()
    s0 = np.asarray(s0, dtype=float)
    traj = integrate(p, s0, cfg)
    evs = [e for e in find_events(traj, w_crossings=True) if e.kind == "WZeroCrossing"]
    nodes = traj.fine_nodes(sub).reshape(-1, 5) if traj.n_steps else traj.y
    r_min = cfg.sundman_switch * cfg.r_collision
    max_k, _ = resolved_max_k(p, nodes, r_min)
    w0 = float(scaling_w(p, s0[0], s0[1]))
    times = [e.time for e in evs]
    if p.strong and w0 < 0 and max_k >= 0:
        kk = virial_k_symp(p, nodes[:, :4])
        bad = (kk >= 0) & (np.hypot(nodes[:, 0], nodes[:, 1]) >= r_min)
        times.append(float(nodes[int(np.argmax(bad)), 4]))
    first = min(times, key=abs) if times else None
    ok = first is None
    tag = {"collision-radius": "collision", "escape-radius": "global-escape",
           "t_max": "global-bounded"}.get(traj.status, "undetermined")
    return InvarianceReport(p.alpha, w0, tag, traj.t_end, len(evs), max_k, first, ok)


# --- dichotomy below E* with collision envelope ---

class KappaTable:
    """Lower bounds for min |K| on {E <= E* - delta, W <= 0} over a log grid of delta."""

    def __init__(self, p: ModelParams, lo: float = 1e-3, hi: float = 10.0, n: int = 25):
        self.deltas = np.geomspace(lo, hi, n)
        self.values = np.array([kappa_lower_bound(p, d) for d in self.deltas])

    def __call__(self, delta: float) -> float:
        i = np.searchsorted(self.deltas, delta, side="right") - 1
        return 0.0 if i < 0 else float(self.values[i])


@dataclass
class DichotomyRun:
    region: str
    energy: float
    fate: str
    t_end: float
    final_radius: float
    w_crossings: int
    max_k: float
    envelope_slack: float


@dataclass
class DichotomyReport:
    alpha: float
    n_minus: int
    n_plus: int
    minus_collided: int
    plus_collided: int
    w_sign_changes: int
    max_k_minus: float
    min_envelope_slack: float
    max_k_normalized_minus: float = -math.inf
    runs: list[DichotomyRun] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (self.minus_collided == self.n_minus and self.plus_collided == 0
                and self.w_sign_changes == 0 and self.max_k_minus < 0)

    def summary(self):
        d = _summary(self)
        d["passed"] = self.passed
        return d


def _envelope_slack(p, traj: Trajectory, kappa: float, sub: int = 4) -> float:
    """min over the orbit of [-kappa t^2/2 + Idot0 t + I0] - I(t)."""
    nodes = traj.fine_nodes(sub).reshape(-1, 5) if traj.n_steps else traj.y
    i0, idot0 = moment_of_inertia(traj.y[0, :4], "symp")
    t = nodes[:, 4] - traj.y[0, 4]
    inertia, _ = moment_of_inertia(nodes[:, :4], "symp")
    env = -0.5 * kappa * t * t + idot0 * t + i0
    return float(np.min(env - inertia))


def dichotomy_experiment(p: ModelParams, n: int = 500, seed: int = 0,
                         cfg: IntegratorConfig | None = None, kappa: KappaTable | None = None,
                         sub: int = 4) -> DichotomyReport:
    """Random ensembles in {E < E*, W < 0} and {E < E*, W > 0}."""
    cfg = cfg or IntegratorConfig()
    rng = np.random.default_rng(seed)
    kappa = kappa or KappaTable(p)
    rep = DichotomyReport(p.alpha, n, n, 0, 0, 0, -math.inf, math.inf)
    for region in ("minus", "plus"):
        for s0 in sample_below_threshold(p, n, region, rng):
            traj = integrate(p, s0, cfg)
            e = float(energy_symp(p, s0))
            nodes = traj.fine_nodes(sub).reshape(-1, 5) if traj.n_steps else traj.y
            w = scaling_w(p, nodes[:, 0], nodes[:, 1])
            crossings = int(np.count_nonzero(np.diff(np.sign(w)) != 0))
            kk, kn = resolved_max_k(p, nodes, cfg.sundman_switch * cfg.r_collision)
            fin = traj.final_state
            rfin = math.hypot(fin[0], fin[1])
            collided = traj.status == "collision-radius" and moment_of_inertia(fin, "symp")[1] < 0
            fate = "collision" if collided else traj.status
            slack = math.nan
            if region == "minus":
                rep.minus_collided += collided
                rep.max_k_minus = max(rep.max_k_minus, kk)
                rep.max_k_normalized_minus = max(rep.max_k_normalized_minus, kn)
                slack = _envelope_slack(p, traj, kappa(p.e_star - e), sub)
                rep.min_envelope_slack = min(rep.min_envelope_slack, slack)
            else:
                rep.plus_collided += collided
            rep.w_sign_changes += crossings
            rep.runs.append(DichotomyRun(region, e, fate, traj.t_end, rfin, crossings, kk, slack))
    return rep


# --- ejection ---

@dataclass
class EjectionReport:
    alpha: float
    R: float
    sign: int
    backward: bool
    k: float
    slope: float
    slope_ratio: float
    exit_time: float
    exit_dq: float
    exit_K: float
    exit_W: float
    sign_at_exit: int
    c_star: float
    t_star: float
    transverse_constant: float
    signs_after_threshold: bool
    passed: bool

    def summary(self):
        return _summary(self)


def ejection_initial_state(ctx: LinearContext, R: float, sign: int, backward: bool = False) -> np.ndarray:
    """Q~ + sign R xi+ (forward) or Q~ + sign R xi- (backward)."""
    b = ctx.basis
    vec = b.xi_minus if backward else b.xi_plus
    return b.ground + sign * R * vec


def ejection_experiment(p: ModelParams, ctx: LinearContext | None = None, R: float = 1e-4,
                        sign: int = 1, cfg: IntegratorConfig | None = None,
                        backward: bool = False, samples: int = 400) -> EjectionReport:
    """Grow the unstable mode from radius R until d_Q reaches delta_X.

    The growth rate of d_Q is fitted on log d_Q versus |t|.  ``C*`` is the
    worst two-sided ratio between d_Q(t) and e^{k|t|} d_Q(0); ``T*`` is the
    first |t| from which sK > 0 and sW > 0 hold up to the exit.
    """
    ctx = ctx or linear_context(p.alpha)
    cfg = cfg or IntegratorConfig()
    b = ctx.basis
    dx = ctx.calibration.delta_x
    if R > dx:
        raise ValueError("R must not exceed delta_X")
    s0 = ejection_initial_state(ctx, R, sign, backward)
    direction = -1.0 if backward else 1.0
    horizon = min(cfg.t_max, 3.0 * math.log(dx / R) / b.k + 5.0)
    traj = integrate(p, s0, cfg, direction=direction, t_max=horizon)
    exits = [e for e in find_events(traj, ctx, balls=(dx,), w_crossings=False) if e.kind == "BallExit"]
    if not exits:
        return EjectionReport(p.alpha, R, sign, backward, b.k, math.nan, math.nan, math.nan, math.nan,
                              math.nan, math.nan, 0, math.nan, math.nan, math.nan, False, False)
    ex = exits[0]
    t_exit = abs(ex.time)
    ts = direction * np.linspace(0.0, t_exit, samples)
    st = traj.at_times(ts)[:, :4]
    dq = ctx.dq(st)
    tt = np.abs(ts)
    slope = float(np.polyfit(tt[1:], np.log(dq[1:]), 1)[0])
    ratio = dq / (dq[0] * np.exp(b.k * tt))
    c_star = float(np.max(np.maximum(ratio, 1.0 / ratio)))
    dec = ctx.decompose(st)
    lam_grow = dec.lambda_minus if backward else dec.lambda_plus
    lam_decay = dec.lambda_plus if backward else dec.lambda_minus
    gam = np.linalg.norm(dec.gamma, axis=-1)
    trans = float(np.max((np.abs(lam_decay) + gam) / (R + R**1.5)))
    kk = virial_k_symp(p, st)
    ww = scaling_w(p, st[:, 0], st[:, 1])
    good = (sign * kk > 0) & (sign * ww > 0)
    bad = np.flatnonzero(~good)
    t_star = 0.0 if len(bad) == 0 else (float(tt[bad[-1] + 1]) if bad[-1] + 1 < len(tt) else math.inf)
    after = tt >= math.log(2.0 * c_star) / b.k
    signs_after = bool(np.all(good[after])) if np.any(after) else False
    exit_state = ex.state
    exit_k = float(virial_k_symp(p, exit_state))
    exit_w = float(scaling_w(p, exit_state[0], exit_state[1]))
    s_exit = int(sign_of(ctx.decompose(exit_state).lambda1))
    slope_ratio = slope / b.k
    ok = (0.95 <= slope_ratio <= 1.05 and s_exit == sign
          and int(np.sign(exit_k)) == sign and int(np.sign(exit_w)) == sign)
    return EjectionReport(p.alpha, R, sign, backward, b.k, slope, slope_ratio, t_exit, float(ex.aux),
                          exit_k, exit_w, s_exit, c_star, t_star, trans, signs_after, ok)


# --- one pass ---

@dataclass
class OnePassRun:
    sign: int
    t_trap: float
    returned: bool
    fate: str
    t_end: float


@dataclass
class OnePassReport:
    alpha: float
    epsilon: float
    R: float
    n: int
    ejected_minus: int
    ejected_plus: int
    returns_minus: int
    collisions_minus: int
    returns_plus: int
    escapes_plus: int
    trapped: int
    undetermined: int
    runs: list[OnePassRun] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        # only the sign -1 branch is asserted
        return self.returns_minus == 0 and self.collisions_minus == self.ejected_minus

    def summary(self):
        d = _summary(self)
        d["passed"] = self.passed
        return d


def one_pass_initial_states(ctx: LinearContext, n: int, eps: float, R: float, sign: int,
                            rng: np.random.Generator) -> np.ndarray:
    """States with E < E* + eps^2, d_Q < R and sign(lambda1) = ``sign``.

    Built from the unstable mode with small stable and centre components,
    placed at either ground state with equal probability.
    """
    p, b = ctx.params, ctx.basis
    out = []
    while len(out) < n:
        lp = sign * rng.uniform(0.05, 0.5) * R
        lm = rng.uniform(-0.2, 0.2) * R
        ab = rng.normal(size=2) * 0.05 * R
        X = lp * b.xi_plus + lm * b.xi_minus + ab[0] * b.eta1 + ab[1] * b.eta2
        sigma = 1.0 if rng.uniform() < 0.5 else -1.0
        psi = sigma * (b.ground + X)
        e = float(energy_symp(p, psi))
        if not e < p.e_star + eps * eps:
            continue
        if not ctx.dq(psi) < R:
            continue
        if int(sign_of(ctx.decompose(psi).lambda1)) != sign:
            continue
        out.append(psi)
    return np.array(out)


def one_pass_experiment(p: ModelParams, ctx: LinearContext | None = None, eps: float | None = None,
                        R: float | None = None, n: int = 200, sign: int = -1, seed: int = 0,
                        cfg: IntegratorConfig | None = None) -> OnePassReport:
    """Ensemble leaving the R-ball: no return to the (R + R^2)-ball afterwards."""
    ctx = ctx or linear_context(p.alpha)
    cfg = cfg or IntegratorConfig()
    eps = ctx.calibration.epsilon if eps is None else eps
    R = 10.0 * eps if R is None else R
    if not (0 < 2 * eps < R):
        raise ValueError("need 0 < 2 eps < R")
    rng = np.random.default_rng(seed)
    ball = trap_radius(ctx, R)
    rep = OnePassReport(p.alpha, eps, R, n, 0, 0, 0, 0, 0, 0, 0, 0)
    for psi in one_pass_initial_states(ctx, n, eps, R, sign, rng):
        traj = integrate(p, psi, cfg)
        evs = find_events(traj, ctx, balls=(ball,), w_crossings=False)
        exits = [e for e in evs if e.kind == "BallExit"]
        tag = {"collision-radius": "collision", "escape-radius": "global-escape",
               "t_max": "global-bounded"}.get(traj.status, "undetermined")
        if tag == "collision" and not any(e.kind == "Collision" for e in evs):
            tag = "undetermined"
        if not exits:
            rep.trapped += tag == "global-bounded"
            rep.undetermined += tag == "undetermined"
            rep.runs.append(OnePassRun(0, math.inf, False, tag, traj.t_end))
            continue
        t_trap = exits[0].time
        s_exit = int(sign_of(ctx.decompose(exits[0].state).lambda1))
        returned = any(e.kind == "BallEntry" and e.time > t_trap for e in evs)
        if s_exit < 0:
            rep.ejected_minus += 1
            rep.returns_minus += returned
            rep.collisions_minus += tag == "collision"
        else:
            rep.ejected_plus += 1
            rep.returns_plus += returned
            rep.escapes_plus += tag == "global-escape"
        rep.undetermined += tag == "undetermined"
        rep.runs.append(OnePassRun(s_exit, t_trap, returned, tag, traj.t_end))
    return rep


# --- threshold energy ---

@dataclass
class ThresholdRun:
    kind: str
    w_initial: float
    outcome: str
    min_dq: float
    k_at_min: float
    t_end: float


@dataclass
class ThresholdReport:
    alpha: float
    n: int
    collisions: int
    approaches: int
    globals_: int
    other: int
    stable_seed_approached: bool
    runs: list[ThresholdRun] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.other == 0 and self.stable_seed_approached

    def summary(self):
        d = _summary(self)
        d["passed"] = self.passed
        return d


def stable_manifold_seed(ctx: LinearContext, R: float = 1e-8, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """A point on the W < 0 branch of the stable manifold of Q~ at d_Q = delta_X.

    Obtained by flowing Q~ + s R xi- backward until d_Q reaches delta_X, with
    s chosen so that lambda1 < 0, then projecting onto E = E*.
    """
    rep_sign = -1
    p = ctx.params
    cfg = cfg or IntegratorConfig()
    s0 = ejection_initial_state(ctx, R, rep_sign, backward=True)
    dx = ctx.calibration.delta_x
    horizon = 3.0 * math.log(dx / R) / ctx.basis.k + 5.0
    traj = integrate(p, s0, cfg, direction=-1.0, t_max=horizon)
    ex = [e for e in find_events(traj, ctx, balls=(dx,), w_crossings=False) if e.kind == "BallExit"]
    if not ex:
        raise RuntimeError("backward run did not leave the delta_X ball")
    return project_to_energy(p, ex[0].state, p.e_star)


def _threshold_outcome(p, ctx, traj: Trajectory, approach_tol: float, sub: int = 4):
    nodes = traj.fine_nodes(sub).reshape(-1, 5)[:, :4] if traj.n_steps else traj.states
    dq = ctx.dq(nodes)
    i = int(np.argmin(dq))
    kmin = float(virial_k_symp(p, nodes[i]))
    fin = traj.final_state
    if dq[i] < approach_tol:
        return "approach", float(dq[i]), kmin
    if traj.status == "collision-radius" and moment_of_inertia(fin, "symp")[1] < 0:
        return "collision", float(dq[i]), kmin
    if traj.status in ("escape-radius", "t_max"):
        return "global", float(dq[i]), kmin
    return "undetermined", float(dq[i]), kmin


def threshold_experiment(p: ModelParams, ctx: LinearContext | None = None, n: int = 50, seed: int = 0,
                         cfg: IntegratorConfig | None = None, approach_tol: float = 1e-4) -> ThresholdReport:
    """Runs at E = E*: W <= 0 seeds must collide or approach the ground states."""
    ctx = ctx or linear_context(p.alpha)
    cfg = cfg or IntegratorConfig()
    rng = np.random.default_rng(seed)
    rep = ThresholdReport(p.alpha, 0, 0, 0, 0, 0, False)

    def record(kind, s, expect_global):
        traj = integrate(p, s, cfg)
        out, mdq, kmin = _threshold_outcome(p, ctx, traj, approach_tol)
        w0 = float(scaling_w(p, s[0], s[1]))
        rep.n += 1
        if out == "collision":
            rep.collisions += 1
        elif out == "approach":
            rep.approaches += 1
        elif out == "global":
            rep.globals_ += 1
        if (expect_global and out != "global") or (not expect_global and out not in ("collision", "approach")):
            rep.other += 1
        rep.runs.append(ThresholdRun(kind, w0, out, mdq, kmin, traj.t_end))
        return out

    seed_state = stable_manifold_seed(ctx, cfg=cfg)
    rep.stable_seed_approached = record("stable-manifold", seed_state, False) == "approach"
    for region, expect_global in (("minus", False), ("plus", True)):
        states = sample_below_threshold(p, n, region, rng, min_gap=0.05)
        for s in states:
            record(f"generic-{region}", project_to_energy(p, s, p.e_star), expect_global)
    return rep


__all__ = [
    "DichotomyReport", "EjectionReport", "InvarianceReport", "KappaTable", "OnePassReport",
    "ThresholdReport", "dichotomy_experiment", "ejection_experiment", "invariance_audit",
    "one_pass_experiment", "project_to_energy", "sample_below_threshold", "stable_manifold_seed",
    "threshold_experiment",
]
