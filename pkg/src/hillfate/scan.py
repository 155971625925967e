"""Basin-of-fate maps over two-dimensional sections of phase space."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .integrate import FATE_CODES, IntegratorConfig, classify_fate
from .linear import LinearContext, linear_context
from .model import (
    ModelParams,
    cart_to_symp,
    default_window,
    effective_potential,
    scaling_w,
    scaling_w_gradient,
)

SECTIONS = ("ZeroVelocityPlane", "PositionMomentumLine", "EnergySlice")
INFEASIBLE = 255


@dataclass(frozen=True)
class ScanSpec:
    alpha: float
    section: str = "EnergySlice"
    window: tuple[float, float, float, float] | None = None
    nx: int = 64
    ny: int = 64
    cfg: IntegratorConfig = field(default_factory=IntegratorConfig)
    seed: int = 0
    energy: float | None = None  # EnergySlice level; default E* - 0.2
    direction: float = 0.5 * math.pi  # velocity angle from the outward radial direction

    def __post_init__(self):
        if self.section not in SECTIONS:
            raise ValueError(f"section must be one of {SECTIONS}")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("nx and ny must be >= 2")
        x0, x1, y0, y1 = self.resolved_window()
        if not (x1 > x0 and y1 > y0):
            raise ValueError("window must have positive extent")

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.alpha)

    def resolved_window(self) -> tuple[float, float, float, float]:
        if self.window is not None:
            return tuple(float(v) for v in self.window)
        h = default_window(ModelParams(self.alpha))
        return (-h, h, -h, h)

    def level(self) -> float:
        p = self.params
        return p.e_star - 0.2 if self.energy is None else self.energy

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        x0, x1, y0, y1 = self.resolved_window()
        xs, ys = np.linspace(x0, x1, self.nx), np.linspace(y0, y1, self.ny)
        # symmetric windows get exactly antisymmetric axes, so mirrored nodes are exact negatives
        if x0 == -x1:
            xs = 0.5 * (xs - xs[::-1])
        if y0 == -y1:
            ys = 0.5 * (ys - ys[::-1])
        return xs, ys

    def initial_state(self, x: float, y: float) -> np.ndarray | None:
        """Symplectic initial state for grid node (x, y), or None when infeasible.

        For PositionMomentumLine the second coordinate is p_y.
        """
        p = self.params
        rc = self.cfg.r_collision
        if self.section == "PositionMomentumLine":
            if abs(x) <= rc:
                return None
            return np.array([x, 0.0, 0.0, y])
        r = math.hypot(x, y)
        if r <= rc:
            return None
        if self.section == "ZeroVelocityPlane":
            return cart_to_symp(np.array([x, y, 0.0, 0.0]))
        v = effective_potential(p, x, y)
        e = self.level()
        if v > e:
            return None
        speed = math.sqrt(2.0 * (e - v))
        er = np.array([x, y]) / r
        et = np.array([-er[1], er[0]])
        d = math.cos(self.direction) * er + math.sin(self.direction) * et
        return cart_to_symp(np.array([x, y, speed * d[0], speed * d[1]]))

    def header(self) -> str:
        x0, x1, y0, y1 = self.resolved_window()
        return (f"# hill-scan v1 alpha={self.alpha:.17g} section={self.section} "
                f"window={x0:.17g},{x1:.17g},{y0:.17g},{y1:.17g} nx={self.nx} ny={self.ny}")

    def refined(self, factor: int) -> "ScanSpec":
        return replace(self, nx=(self.nx - 1) * factor + 1, ny=(self.ny - 1) * factor + 1)


@dataclass
class FateGrid:
    spec: ScanSpec
    codes: np.ndarray  # (nx, ny) uint8
    times: np.ndarray  # (nx, ny) terminal times
    meta: dict = field(default_factory=dict)

    def count(self, code: int) -> int:
        return int(np.count_nonzero(self.codes == code))


def _scan_rows(spec: ScanSpec, ctx: LinearContext, rows: range):
    p = spec.params
    xs, ys = spec.axes()
    codes = np.full((len(rows), spec.ny), INFEASIBLE, dtype=np.uint8)
    times = np.zeros((len(rows), spec.ny))
    for a, i in enumerate(rows):
        for j, y in enumerate(ys):
            s0 = spec.initial_state(xs[i], y)
            if s0 is None:
                continue
            try:
                fate = classify_fate(p, s0, spec.cfg, ctx=ctx)
                codes[a, j] = fate.code
                times[a, j] = fate.t_end
            except Exception:  # per-node failures never abort the scan
                codes[a, j] = FATE_CODES["undetermined"]
    return rows.start, codes, times


def run_scan(spec: ScanSpec, jobs: int = 1, ctx: LinearContext | None = None,
             block: int = 8) -> FateGrid:
    """Classify every node; rows are split into fixed blocks so results do not depend on ``jobs``."""
    ctx = ctx or linear_context(spec.alpha)
    blocks = [range(s, min(s + block, spec.nx)) for s in range(0, spec.nx, block)]
    codes = np.empty((spec.nx, spec.ny), dtype=np.uint8)
    times = np.empty((spec.nx, spec.ny))
    if jobs <= 1:
        results = (_scan_rows(spec, ctx, b) for b in blocks)
        for start, c, t in results:
            codes[start:start + len(c)] = c
            times[start:start + len(t)] = t
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_scan_rows, spec, ctx, b) for b in blocks]
            for f in futs:
                start, c, t = f.result()
                codes[start:start + len(c)] = c
                times[start:start + len(t)] = t
    cal = ctx.calibration
    meta = {"delta_e": cal.delta_e, "delta_x": cal.delta_x, "epsilon": cal.epsilon,
            "energy": spec.level() if spec.section == "EnergySlice" else float("nan")}
    return FateGrid(spec, codes, times, meta)


# --- persistence ---

def write_fate_grid(grid: FateGrid, path, matrix_path=None):
    spec = grid.spec
    xs, ys = spec.axes()
    with open(path, "w", newline="\n") as fh:
        fh.write(spec.header() + "\n")
        for i in range(spec.nx):
            for j in range(spec.ny):
                fh.write(f"{i},{j},{xs[i]:.17g},{ys[j]:.17g},{int(grid.codes[i, j])},"
                         f"{grid.times[i, j]:.17g}\n")
    if matrix_path is not None:
        with open(matrix_path, "w", newline="\n") as fh:
            fh.write(spec.header() + "\n")
            # gnuplot "matrix" layout: one line per y, columns along x
            for j in range(spec.ny):
                fh.write(" ".join(str(int(c)) for c in grid.codes[:, j]) + "\n")


def read_fate_grid(path, cfg: IntegratorConfig | None = None) -> FateGrid:
    with open(path) as fh:
        head = fh.readline().strip()
        fields = dict(tok.split("=", 1) for tok in head.split()[3:])
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    win = tuple(float(v) for v in fields["window"].split(","))
    spec = ScanSpec(alpha=float(fields["alpha"]), section=fields["section"], window=win,
                    nx=int(fields["nx"]), ny=int(fields["ny"]), cfg=cfg or IntegratorConfig())
    codes = np.empty((spec.nx, spec.ny), dtype=np.uint8)
    times = np.empty((spec.nx, spec.ny))
    ii, jj = rows[:, 0].astype(int), rows[:, 1].astype(int)
    codes[ii, jj] = rows[:, 4].astype(np.uint8)
    times[ii, jj] = rows[:, 5]
    return FateGrid(spec, codes, times)


# --- census ---

COLLISION = FATE_CODES["collision"]
GLOBAL = (FATE_CODES["global-bounded"], FATE_CODES["global-escape"])


def boundary_pairs(codes: np.ndarray) -> np.ndarray:
    """Midpoints (in index units) of adjacent node pairs with collision on one side and global on the other."""
    col = codes == COLLISION
    glo = np.isin(codes, GLOBAL)
    mids = []
    h = (col[:-1, :] & glo[1:, :]) | (glo[:-1, :] & col[1:, :])
    i, j = np.nonzero(h)
    mids.append(np.column_stack([i + 0.5, j.astype(float)]))
    v = (col[:, :-1] & glo[:, 1:]) | (glo[:, :-1] & col[:, 1:])
    i, j = np.nonzero(v)
    mids.append(np.column_stack([i.astype(float), j + 0.5]))
    return np.concatenate(mids)


def w_zero_curve(p: ModelParams, window, resolution: int = 1024) -> np.ndarray:
    """Points on {W = 0} inside ``window``, Newton-polished."""
    x0, x1, y0, y1 = window
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    r = np.hypot(X, Y)
    with np.errstate(divide="ignore"):
        W = (p.alpha + 2.0) * (X**2 - p.alpha * r ** (-p.alpha))
    W = np.where(np.isfinite(W), W, -1e300)
    pts = []
    for c in measure.find_contours(W, 0.0):
        px = x0 + c[:, 0] * (xs[1] - xs[0])
        py = y0 + c[:, 1] * (ys[1] - ys[0])
        for _ in range(30):
            w = scaling_w(p, px, py)
            gx, gy = scaling_w_gradient(p, px, py)
            g2 = gx * gx + gy * gy
            px, py = px - w * gx / g2, py - w * gy / g2
        pts.append(np.column_stack([px, py]))
    return np.concatenate(pts) if pts else np.empty((0, 2))


@dataclass
class CensusReport:
    boundary_cells: int
    max_distance_diagonals: float
    cells_off_curve: int
    box_counts: list[int]
    box_slope: float
    length_ratios: list[float]
    prediction_mismatches: int
    undetermined_fraction: float

    def summary(self) -> dict:
        return {
            "boundary_cells": self.boundary_cells,
            "max_distance_diagonals": self.max_distance_diagonals,
            "cells_off_curve": self.cells_off_curve,
            "box_counts": ",".join(str(c) for c in self.box_counts),
            "box_slope": self.box_slope,
            "length_ratios": ",".join(f"{v:.6g}" for v in self.length_ratios),
            "prediction_mismatches": self.prediction_mismatches,
            "undetermined_fraction": self.undetermined_fraction,
        }


def prediction_mismatches(grid: FateGrid) -> int:
    """Nodes below E* (alpha >= 2) whose fate disagrees with the sign of W; code 4 and 255 excluded."""
    spec = grid.spec
    p = spec.params
    if not p.strong or spec.section != "EnergySlice" or not spec.level() < p.e_star:
        return 0
    xs, ys = spec.axes()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        W = (p.alpha + 2.0) * (X**2 - p.alpha * np.hypot(X, Y) ** (-p.alpha))
    c = grid.codes
    valid = (c != INFEASIBLE) & (c != FATE_CODES["undetermined"])
    expect_col = W <= 0
    bad = valid & ((expect_col & (c != COLLISION)) | (~expect_col & ~np.isin(c, GLOBAL)))
    return int(np.count_nonzero(bad))


def boundary_census(grid: FateGrid, refined: list[FateGrid] = (), off_curve: float = 2.0) -> CensusReport:
    """Boundary cells between collision and global nodes and their distance to {W = 0}.

    Distances are measured in cell diagonals.  ``refined`` grids (2x, 4x, ...)
    feed the box-count slope and the boundary-length ratios.
    """
    spec = grid.spec
    p = spec.params
    x0, x1, y0, y1 = spec.resolved_window()
    dx = (x1 - x0) / (spec.nx - 1)
    dy = (y1 - y0) / (spec.ny - 1)
    diag = math.hypot(dx, dy)
    mids = boundary_pairs(grid.codes)
    n = len(mids)
    max_d = 0.0
    off = 0
    if n and spec.section != "PositionMomentumLine":
        curve = w_zero_curve(p, (x0, x1, y0, y1))
        pts = np.column_stack([x0 + mids[:, 0] * dx, y0 + mids[:, 1] * dy])
        if len(curve):
            d, _ = cKDTree(curve).query(pts)
            d = d / diag
        else:
            d = np.full(n, np.inf)
        max_d = float(np.max(d))
        off = int(np.count_nonzero(d > off_curve))
    counts = [n] + [len(boundary_pairs(g.codes)) for g in refined]
    sizes = [diag] + [math.hypot((x1 - x0) / (g.spec.nx - 1), (y1 - y0) / (g.spec.ny - 1)) for g in refined]
    slope = math.nan
    ratios = []
    if len(counts) > 1 and all(c > 0 for c in counts):
        slope = float(np.polyfit(np.log(1.0 / np.array(sizes)), np.log(counts), 1)[0])
        lengths = [c * s for c, s in zip(counts, sizes)]
        ratios = [lengths[i + 1] / lengths[i] for i in range(len(lengths) - 1)]
    und = grid.count(FATE_CODES["undetermined"]) / grid.codes.size
    return CensusReport(n, max_d, off, counts, slope, ratios, prediction_mismatches(grid), und)


__all__ = [
    "CensusReport", "FateGrid", "INFEASIBLE", "SECTIONS", "ScanSpec", "boundary_census",
    "prediction_mismatches", "read_fate_grid", "run_scan", "w_zero_curve", "write_fate_grid",
]
