"""Trajectory integration, event detection and fate classification.

Integration always runs in the symplectic chart.  Close to the origin the
independent variable switches to Sundman time so that collisions are
resolved with a bounded number of steps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import __version__
from . import _dop853 as k8
from .linear import LinearContext, linear_context
from .model import (
    DomainError,
    ModelParams,
    cart_to_symp,
    effective_potential,
    energy_symp,
    moment_of_inertia,
    scaling_w,
    symp_to_cart,
    vector_field_symp,
    virial_k_symp,
)


class IntegrationError(RuntimeError):
    def __init__(self, msg, last_state=None, t=None):
        super().__init__(msg)
        self.last_state = last_state
        self.t = t


class EnergyDriftExceeded(IntegrationError):
    pass


class StepUnderflow(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    h_max: float = 0.5
    t_max: float = 200.0
    r_collision: float = 1e-7
    r_escape: float | None = None  # None means 50 q0
    energy_drift_cap: float = 1e-6
    max_steps: int = 2_000_000
    sundman_switch: float = 1e3  # enter Sundman time below this multiple of r_collision
    equilibrium_tol: float = 1e-12  # |F(s0)| below this is treated as a rest point

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "h_max", "t_max", "r_collision", "energy_drift_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r_escape is not None and not self.r_escape > 0:
            raise ValueError("r_escape must be positive")

    def escape_radius(self, p: ModelParams) -> float:
        return 50.0 * p.q0 if self.r_escape is None else self.r_escape

    def check(self, p: ModelParams):
        if not (self.r_collision < p.q0 < self.escape_radius(p)):
            raise ValueError("need r_collision < q0 < r_escape")


STATUS = {
    k8.ST_TIME: "t_max",
    k8.ST_LOW: "collision-radius",
    k8.ST_HIGH: "escape-radius",
    k8.ST_UNDERFLOW: "step-underflow",
    k8.ST_DRIFT: "energy-drift",
    k8.ST_BUFFER: "max-steps",
    k8.ST_NONFINITE: "non-finite",
}


@dataclass
class Trajectory:
    """Accepted steps with their dense polynomials.

    ``y`` has rows ``(x, y, px, py, t)``; step ``i`` joins rows ``i`` and
    ``i+1`` through ``F[i]`` evaluated at a step fraction in [0, 1].
    """

    params: ModelParams
    y: np.ndarray
    F: np.ndarray
    mode: np.ndarray
    direction: float
    status: str
    e0: float

    @property
    def t(self) -> np.ndarray:
        return self.y[:, 4]

    @property
    def states(self) -> np.ndarray:
        return self.y[:, :4]

    @property
    def n_steps(self) -> int:
        return len(self.F)

    @property
    def final_state(self) -> np.ndarray:
        return self.y[-1, :4]

    @property
    def t_end(self) -> float:
        return float(self.y[-1, 4])

    def eval_step(self, i: int, theta) -> np.ndarray:
        return k8.dense_eval(self.F[i], self.y[i], theta)

    def _theta_at(self, i: int, tq: float) -> float:
        t0, t1 = self.y[i, 4], self.y[i + 1, 4]
        if t1 == t0:
            return 0.0
        lin = (tq - t0) / (t1 - t0)
        if self.mode[i] == 0:
            return min(max(lin, 0.0), 1.0)
        f = lambda th: self.eval_step(i, th)[4] - tq
        if f(0.0) == 0.0:
            return 0.0
        if f(1.0) == 0.0:
            return 1.0
        return brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def at_times(self, times) -> np.ndarray:
        """Dense states ``(x, y, px, py, t)`` at the requested times."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        key = self.direction * self.t
        idx = np.searchsorted(key, self.direction * times, side="right") - 1
        idx = np.clip(idx, 0, max(self.n_steps - 1, 0))
        if self.n_steps == 0:
            return np.repeat(self.y[:1], len(times), axis=0)
        out = np.empty((len(times), 5))
        regular = self.mode[idx] == 0
        t0 = self.y[idx, 4]
        t1 = self.y[idx + 1, 4]
        with np.errstate(invalid="ignore", divide="ignore"):
            th = np.clip(np.where(t1 != t0, (times - t0) / (t1 - t0), 0.0), 0.0, 1.0)
        if np.any(regular):
            r = np.flatnonzero(regular)
            out[r] = k8.dense_eval(self.F[idx[r]], self.y[idx[r]], th[r])
        for j in np.flatnonzero(~regular):
            out[j] = self.eval_step(idx[j], self._theta_at(idx[j], times[j]))
        out[:, 4] = times
        return out

    def sample(self, dt: float) -> np.ndarray:
        """Uniform-in-time resampling from 0 to the terminal time."""
        t0 = self.t[0]
        n = int(math.floor(abs(self.t_end - t0) / dt + 1e-9))
        times = t0 + self.direction * dt * np.arange(n + 1)
        return self.at_times(times)

    def fine_nodes(self, sub: int = 4) -> np.ndarray:
        """Dense states at ``sub`` equal fractions of every step, shape (n, sub+1, 5)."""
        th = np.linspace(0.0, 1.0, sub + 1)
        return k8.dense_eval(self.F[:, None], self.y[:-1, None], th[None, :])

    def truncate(self, i: int, theta: float):
        """Cut the trajectory inside step ``i`` at fraction ``theta``."""
        end = self.eval_step(i, theta)
        if theta <= 0.0:
            self.y, self.F, self.mode = self.y[: i + 1], self.F[:i], self.mode[:i]
            return
        # rescale the step polynomial onto [0, theta]: re-fit by sampling
        th = np.linspace(0.0, theta, k8.POWER + 1)
        pts = self.eval_step(i, th)
        F_new = _fit_dense(pts, self.y[i])
        self.y = np.vstack([self.y[: i + 1], end[None]])
        self.F = np.concatenate([self.F[:i], F_new[None]])
        self.mode = self.mode[: i + 1]

    def energy_drift(self) -> float:
        """Max |E - E0| relative to max(|E0|, (alpha+2) r^-alpha), the size of the terms in E."""
        s = self.states
        a = self.params.alpha
        e = energy_symp(self.params, s)
        scale = np.maximum(abs(self.e0), (a + 2.0) * np.hypot(s[:, 0], s[:, 1]) ** -a)
        return float(np.max(np.abs(e - self.e0) / scale))


def _refit_matrix() -> np.ndarray:
    m = k8.POWER + 1
    x = np.linspace(0.0, 1.0, m)
    basis = np.empty((m, k8.POWER))
    for c in range(k8.POWER):
        e = np.zeros((k8.POWER, 1))
        e[c, 0] = 1.0
        basis[:, c] = k8.dense_eval(e, np.zeros(1), x)[:, 0]
    return np.linalg.pinv(basis)


_REFIT = _refit_matrix()


def _fit_dense(pts: np.ndarray, y_old: np.ndarray) -> np.ndarray:
    """Coefficients in the nested (x, 1-x) form that interpolate ``pts`` at equal fractions."""
    return _REFIT @ (pts - y_old)


def integrate(p: ModelParams, s0, cfg: IntegratorConfig | None = None, chart: str = "symp",
              direction: float = 1.0, t_max: float | None = None, strict: bool = False) -> Trajectory:
    """Integrate from ``s0`` for ``t_max`` time units (backward if ``direction`` < 0).

    Stops early at the collision radius, the escape radius or on numerical
    failure; terminal crossings are placed exactly on the stopping surface.
    """
    cfg = cfg or IntegratorConfig()
    cfg.check(p)
    s0 = np.asarray(s0, dtype=float)
    if chart == "cart":
        s0 = cart_to_symp(s0)
    elif chart != "symp":
        raise ValueError(f"unknown chart {chart!r}")
    if math.hypot(s0[0], s0[1]) == 0.0:
        raise DomainError("initial state at the origin")
    direction = 1.0 if direction >= 0 else -1.0
    horizon = cfg.t_max if t_max is None else t_max
    t_end = direction * horizon
    r_low = cfg.r_collision
    r_high = cfg.escape_radius(p)
    r_in = cfg.sundman_switch * r_low
    e0 = float(energy_symp(p, s0))

    if np.linalg.norm(vector_field_symp(p, s0)) <= cfg.equilibrium_tol:
        # rest point to working precision: roundoff would otherwise be amplified
        # along the unstable direction like exp(k t)
        F = np.zeros((1, k8.POWER, 5))
        F[0, 0, 4] = t_end
        y = np.array([np.append(s0, 0.0), np.append(s0, t_end)])
        return Trajectory(p, y, F, np.zeros(1, dtype=np.int64), direction, "t_max", e0)

    y0 = np.append(s0, 0.0)
    mode = 1 if math.hypot(s0[0], s0[1]) < r_in else 0
    h = 0.0
    ys, Fs, ms = [], [], []
    cap = 2048
    total = 0
    while True:
        oy = np.empty((cap + 1, 5))
        oF = np.empty((cap, k8.POWER, 5))
        oh = np.empty(cap)
        om = np.empty(cap, dtype=np.int64)
        n, st, mode, h = k8.integrate_kernel(
            p.alpha, y0, mode, direction, t_end, cfg.rel_tol, cfg.abs_tol, cfg.h_max, h,
            r_low, r_high, r_in, 2.0 * r_in, e0, cfg.energy_drift_cap, oy, oF, oh, om)
        ys.append(oy[1: n + 1] if ys else oy[: n + 1])
        Fs.append(oF[:n])
        ms.append(om[:n])
        total += n
        if st != k8.ST_BUFFER or total >= cfg.max_steps:
            break
        y0 = oy[n].copy()
        cap = min(cap * 4, 1 << 18)
    y = np.concatenate(ys)
    traj = Trajectory(p, y, np.concatenate(Fs), np.concatenate(ms), direction, STATUS[st], e0)

    if st in (k8.ST_LOW, k8.ST_HIGH) and traj.n_steps:
        target = r_low if st == k8.ST_LOW else r_high
        i = traj.n_steps - 1
        g = lambda th: math.hypot(*traj.eval_step(i, th)[:2]) - target
        if g(0.0) * g(1.0) < 0:
            traj.truncate(i, brentq(g, 0.0, 1.0, xtol=1e-15))
    elif st == k8.ST_TIME and traj.n_steps and direction * (traj.t_end - t_end) > 0:
        i = traj.n_steps - 1
        traj.truncate(i, traj._theta_at(i, t_end))
        traj.y[-1, 4] = t_end

    if strict:
        if st == k8.ST_DRIFT:
            raise EnergyDriftExceeded("energy drift cap exceeded", traj.final_state, traj.t_end)
        if st in (k8.ST_UNDERFLOW, k8.ST_NONFINITE):
            raise StepUnderflow("step size underflow", traj.final_state, traj.t_end)
    return traj


# --- events ---

EVENT_PRIORITY = {"Collision": 0, "Escape": 1, "BallExit": 2, "BallEntry": 3,
                  "WZeroCrossing": 4, "LocalMinOfDq": 5}


@dataclass(frozen=True)
class Event:
    kind: str
    time: float
    state: np.ndarray = field(repr=False)
    aux: float = float("nan")


def _sign_changes(traj: Trajectory, fn, sub: int = 4):
    """Times where the boolean ``fn(states) > 0`` flips, root-polished on the dense output."""
    if traj.n_steps == 0:
        return []
    nodes = traj.fine_nodes(sub)
    vals = fn(nodes[..., :4])
    pos = vals > 0
    th = np.linspace(0.0, 1.0, sub + 1)
    out = []
    ii, jj = np.nonzero(pos[:, :-1] != pos[:, 1:])
    for i, j in zip(ii, jj):
        g = lambda t, i=i: float(fn(traj.eval_step(i, t)[:4]))
        a, b = th[j], th[j + 1]
        ga, gb = g(a), g(b)
        if ga == 0.0:
            root = a
        elif gb == 0.0:
            root = b
        elif ga * gb < 0:
            root = brentq(g, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        else:
            root = 0.5 * (a + b)
        state = traj.eval_step(i, root)
        out.append((int(i), root, state, bool(pos[i, j])))
    return out


def find_events(traj: Trajectory, ctx: LinearContext | None = None, balls=(),
                w_crossings: bool = True, dq_minima: bool = False, sub: int = 4,
                cfg: IntegratorConfig | None = None) -> list[Event]:
    p = traj.params
    events: list[Event] = []
    if w_crossings:
        w = lambda s: scaling_w(p, s[..., 0], s[..., 1])
        for i, th, st, was_pos in _sign_changes(traj, w, sub):
            events.append(Event("WZeroCrossing", float(st[4]), st[:4], -1.0 if was_pos else 1.0))
    if balls or dq_minima:
        if ctx is None:
            raise ValueError("d_Q events need a LinearContext")
    for radius in balls:
        fn = lambda s, radius=radius: ctx.dq(s) - radius
        for i, th, st, was_outside in _sign_changes(traj, fn, sub):
            kind = "BallEntry" if was_outside else "BallExit"
            events.append(Event(kind, float(st[4]), st[:4], radius))
    if dq_minima and traj.n_steps:
        nodes = traj.fine_nodes(sub)
        flat = np.concatenate([nodes[:, :-1].reshape(-1, 5), nodes[-1:, -1]])
        d = ctx.dq(flat[:, :4])
        for m in np.flatnonzero((d[1:-1] < d[:-2]) & (d[1:-1] <= d[2:])) + 1:
            i, j = divmod(m, sub)
            lo = (j - 1) / sub
            hi = (j + 1) / sub
            if lo < 0.0 or hi > 1.0:
                lo, hi = max(lo, 0.0), min(hi, 1.0)
            res = minimize_scalar(lambda t, i=i: float(ctx.dq(traj.eval_step(i, t)[:4])),
                                  bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
            st = traj.eval_step(i, res.x)
            events.append(Event("LocalMinOfDq", float(st[4]), st[:4], float(res.fun)))
    fin = traj.final_state
    if traj.status == "collision-radius":
        _, idot = moment_of_inertia(fin, "symp")
        u, v = fin[2] + fin[1], fin[3] - fin[0]
        if idot < 0:
            events.append(Event("Collision", traj.t_end, fin, math.hypot(u, v)))
    elif traj.status == "escape-radius":
        events.append(Event("Escape", traj.t_end, fin, math.hypot(fin[0], fin[1])))
    events.sort(key=lambda e: (traj.direction * e.time, EVENT_PRIORITY[e.kind]))
    return events


# --- fates ---

FATE_CODES = {"collision": 0, "global-bounded": 1, "global-escape": 2, "trapped": 3, "undetermined": 4}


@dataclass
class Prediction:
    rule: str
    expected: tuple[str, ...]


@dataclass
class Fate:
    tag: str
    t_end: float
    evidence: list[Event] = field(default_factory=list)
    predicted: Prediction | None = None
    min_radius: float = float("nan")
    max_dq: float = float("nan")
    status: str = ""

    @property
    def code(self) -> int:
        return FATE_CODES[self.tag]

    @property
    def matches(self) -> bool | None:
        if self.predicted is None or not self.predicted.expected:
            return None
        return self.tag in self.predicted.expected


def predict(p: ModelParams, s, epsilon: float | None = None, tol: float = 1e-10) -> Prediction | None:
    """Fate implied by the sign of W and the energy relative to E*; symplectic chart."""
    e = float(energy_symp(p, s))
    w = float(scaling_w(p, s[0], s[1]))
    if not p.strong:
        return None
    glob = ("global-bounded", "global-escape")
    if abs(e - p.e_star) <= tol * max(1.0, abs(p.e_star)):
        if w > 0:
            return Prediction("at-threshold", glob)
        return Prediction("at-threshold", ("collision", "trapped"))
    if e < p.e_star:
        return Prediction("below-threshold-dichotomy", glob if w > 0 else ("collision",))
    if epsilon is not None and e < p.e_star + epsilon**2:
        return Prediction("above-threshold-one-pass", ())
    return None


def trap_radius(ctx: LinearContext, R: float | None = None) -> float:
    R = ctx.calibration.delta_x if R is None else R
    return R + R * R


def _max_dq(ctx: LinearContext, traj: Trajectory, sub: int = 4) -> float:
    if traj.n_steps == 0:
        return float(ctx.dq(traj.y[0, :4]))
    nodes = traj.fine_nodes(sub).reshape(-1, 5)
    return float(np.max(ctx.dq(nodes[:, :4])))


def classify_fate(p: ModelParams, s0, cfg: IntegratorConfig | None = None, chart: str = "symp",
                  ctx: LinearContext | None = None, R: float | None = None,
                  events: bool = False) -> Fate:
    """Integrate and label the outcome; the rule-based prediction is attached.

    Trapped means d_Q < R + R^2 for the whole horizon (R defaults to delta_X).
    A run reaching ``t_max`` otherwise counts as global-bounded: it stayed in
    the annulus between its minimum radius (> r_collision) and r_escape.
    """
    cfg = cfg or IntegratorConfig()
    s0 = np.asarray(s0, dtype=float)
    s = cart_to_symp(s0) if chart == "cart" else s0
    ctx = ctx or linear_context(p.alpha)
    pred = predict(p, s, ctx.calibration.epsilon)
    traj = integrate(p, s, cfg)
    r = np.hypot(traj.y[:, 0], traj.y[:, 1])
    fate = Fate(tag="undetermined", t_end=traj.t_end, predicted=pred, min_radius=float(np.min(r)),
                status=traj.status)
    if events:
        fate.evidence = find_events(traj, ctx, cfg=cfg)
    fin = traj.final_state
    if traj.status == "collision-radius":
        _, idot = moment_of_inertia(fin, "symp")
        u, v = fin[2] + fin[1], fin[3] - fin[0]
        speed = math.hypot(u, v)
        kin = 2.0 * (traj.e0 - effective_potential(p, fin[0], fin[1]))
        if idot < 0 and speed >= 0.9 * math.sqrt(max(kin, 0.0)):
            fate.tag = "collision"
    elif traj.status == "escape-radius":
        fate.tag = "global-escape"
    elif traj.status == "t_max":
        tr = trap_radius(ctx, R)
        if ctx.dq(s) < tr:
            fate.max_dq = _max_dq(ctx, traj)
            fate.tag = "trapped" if fate.max_dq < tr else "global-bounded"
        else:
            fate.tag = "global-bounded"
    return fate


# --- export ---

def trajectory_table(traj: Trajectory, ctx: LinearContext | None = None, dt: float | None = None) -> np.ndarray:
    """Rows ``t,x,y,px,py,E,W,K,I,dq``; step nodes unless ``dt`` is given."""
    p = traj.params
    rows = traj.y if dt is None else traj.sample(dt)
    s = rows[:, :4]
    e = energy_symp(p, s)
    w = scaling_w(p, s[:, 0], s[:, 1])
    kk = virial_k_symp(p, s)
    inertia, _ = moment_of_inertia(s, "symp")
    dq = ctx.dq(s) if ctx is not None else np.full(len(s), np.nan)
    return np.column_stack([rows[:, 4], s, e, w, kk, inertia, dq])


TRAJECTORY_HEADER = ["t", "x", "y", "px", "py", "E", "W", "K", "I", "dq"]
EVENT_HEADER = ["kind", "t", "x", "y", "px", "py", "aux"]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trajectory_csv(path, table: np.ndarray, comment: str | None = None):
    """CSV with a ``# ...`` version line, then the column header and one row per node."""
    with open(path, "w", newline="") as fh:
        fh.write((comment or f"# hillfate v{__version__} trajectory") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for row in table:
            w.writerow([_fmt(v) for v in row])


def write_events_csv(path, events: list[Event], comment: str | None = None):
    with open(path, "w", newline="") as fh:
        fh.write((comment or f"# hillfate v{__version__} events") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        for ev in events:
            w.writerow([ev.kind, _fmt(ev.time), *(_fmt(v) for v in ev.state), _fmt(ev.aux)])


__all__ = [
    "EnergyDriftExceeded", "Event", "Fate", "FATE_CODES", "IntegratorConfig", "Prediction",
    "StepUnderflow", "Trajectory", "classify_fate", "find_events", "integrate", "predict",
    "symp_to_cart", "trajectory_table", "write_events_csv", "write_trajectory_csv",
]
