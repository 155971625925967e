"""Hill's-type lunar problem with homogeneous potential exponent alpha.

Two charts are used throughout:

* Cartesian ``(x, y, vx, vy)`` with ``vx = dx/dt``, ``vy = dy/dt``;
* symplectic ``(x, y, px, py)`` with ``px = vx - y``, ``py = vy + x``.

Array-valued functions take a trailing axis of length 4 and broadcast over
any leading axes, so the same code serves single states and large samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from skimage import measure


class DomainError(ValueError):
    """Raised when a state sits on the collision singularity at the origin."""


@dataclass(frozen=True)
class ModelParams:
    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be a positive finite number, got {self.alpha!r}")

    @cached_property
    def q0(self) -> float:
        return self.alpha ** (1.0 / (self.alpha + 2.0))

    @cached_property
    def e_star(self) -> float:
        a = self.alpha
        return -0.5 * (a + 2.0) ** 2 * a ** (-a / (a + 2.0))

    @property
    def strong(self) -> bool:
        return self.alpha >= 2.0

    @cached_property
    def k(self) -> float:
        return eigenrates(self.alpha)[0]

    @cached_property
    def omega(self) -> float:
        return eigenrates(self.alpha)[1]


def eigenrates(alpha: float) -> tuple[float, float]:
    """Closed-form hyperbolic rate k and rotation rate omega at the ground states."""
    a = alpha
    root = math.sqrt(36 + 36 * a + 29 * a**2 + 10 * a**3 + a**4)
    lin = a**2 + 3 * a - 2
    return math.sqrt(root + lin) / math.sqrt(2.0), math.sqrt(root - lin) / math.sqrt(2.0)


@dataclass(frozen=True)
class CartesianState:
    x: float
    y: float
    vx: float
    vy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy], dtype=float)

    def to_symplectic(self) -> "SymplecticState":
        return SymplecticState(*cart_to_symp(self.as_array()))


@dataclass(frozen=True)
class SymplecticState:
    x: float
    y: float
    px: float
    py: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.px, self.py], dtype=float)

    def to_cartesian(self) -> CartesianState:
        return CartesianState(*symp_to_cart(self.as_array()))


def _radius(x, y, check: bool = True):
    r = np.hypot(x, y)
    if check and np.any(r == 0.0):
        raise DomainError("state at the origin (collision singularity)")
    return r


def _split(s):
    s = np.asarray(s, dtype=float)
    return s[..., 0], s[..., 1], s[..., 2], s[..., 3]


def _as_array_and_chart(s, chart):
    if isinstance(s, CartesianState):
        return s.as_array(), "cart"
    if isinstance(s, SymplecticState):
        return s.as_array(), "symp"
    if chart not in ("cart", "symp"):
        raise ValueError(f"chart must be 'cart' or 'symp', got {chart!r}")
    return np.asarray(s, dtype=float), chart


# --- chart maps ---

def cart_to_symp(s) -> np.ndarray:
    x, y, vx, vy = _split(s)
    return np.stack([x, y, vx - y, vy + x], axis=-1)


def symp_to_cart(s) -> np.ndarray:
    x, y, px, py = _split(s)
    return np.stack([x, y, px + y, py - x], axis=-1)


def chart_to_symplectic(s: CartesianState) -> SymplecticState:
    return s.to_symplectic()


def chart_to_cartesian(s: SymplecticState) -> CartesianState:
    return s.to_cartesian()


# --- scalar fields on configuration space ---

def effective_potential(p: ModelParams, x, y):
    r = _radius(x, y)
    a = p.alpha
    out = -0.5 * (a + 2.0) * np.square(x) - (a + 2.0) * r ** (-a)
    return float(out) if np.ndim(out) == 0 else out


def potential_gradient(p: ModelParams, x, y):
    """(V_x, V_y)."""
    r = _radius(x, y)
    a = p.alpha
    g = a * (a + 2.0) * r ** (-a - 2.0)
    return -(a + 2.0) * x + g * x, g * y


def scaling_w(p: ModelParams, x, y):
    """W = -x V_x - y V_y = (alpha+2)(x^2 - alpha/r^alpha)."""
    r = _radius(x, y)
    a = p.alpha
    out = (a + 2.0) * (np.square(x) - a * r ** (-a))
    return float(out) if np.ndim(out) == 0 else out


def scaling_w_gradient(p: ModelParams, x, y):
    r = _radius(x, y)
    a = p.alpha
    g = (a + 2.0) * a * a * r ** (-a - 2.0)
    return 2.0 * (a + 2.0) * x + g * x, g * y


# --- phase-space functionals ---

def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def energy_cart(p: ModelParams, s):
    x, y, vx, vy = _split(s)
    return _scalar(0.5 * (vx * vx + vy * vy) + effective_potential(p, x, y))


def energy_symp(p: ModelParams, s):
    x, y, px, py = _split(s)
    return _scalar(0.5 * ((px + y) ** 2 + (py - x) ** 2) + effective_potential(p, x, y))


def energy(p: ModelParams, s, chart: str = "cart"):
    arr, chart = _as_array_and_chart(s, chart)
    return energy_cart(p, arr) if chart == "cart" else energy_symp(p, arr)


def virial_k_cart(p: ModelParams, s):
    x, y, vx, vy = _split(s)
    return _scalar(vx * vx + vy * vy + 2.0 * (x * vy - vx * y) + scaling_w(p, x, y))


def virial_k_symp(p: ModelParams, s):
    x, y, px, py = _split(s)
    a = p.alpha
    r = _radius(x, y)
    return _scalar(px * px + py * py + (a + 1.0) * x * x - y * y - a * (a + 2.0) * r ** (-a))


def virial_k(p: ModelParams, s, chart: str = "cart"):
    arr, chart = _as_array_and_chart(s, chart)
    return virial_k_cart(p, arr) if chart == "cart" else virial_k_symp(p, arr)


def moment_of_inertia(s, chart: str = "cart"):
    """Return ``(I, dI/dt)``; no singularity check since both are regular at the origin."""
    arr, chart = _as_array_and_chart(s, chart)
    x, y, u, v = _split(arr)
    inertia = 0.5 * (x * x + y * y)
    # x*px + y*py equals x*vx + y*vy identically; both charts use the same expression
    return _scalar(inertia), _scalar(x * u + y * v)


def energy_gradient_symp(p: ModelParams, s) -> np.ndarray:
    x, y, px, py = _split(s)
    vx_, vy_ = potential_gradient(p, x, y)
    u = px + y
    v = py - x
    return np.stack([-v + vx_, u + vy_, u, v], axis=-1)


def virial_k_gradient_cart(p: ModelParams, s) -> np.ndarray:
    x, y, vx, vy = _split(s)
    wx, wy = scaling_w_gradient(p, x, y)
    return np.stack([2.0 * vy + wx, -2.0 * vx + wy, 2.0 * vx - 2.0 * y, 2.0 * vy + 2.0 * x], axis=-1)


def energy_gradient_cart(p: ModelParams, s) -> np.ndarray:
    x, y, vx, vy = _split(s)
    gx, gy = potential_gradient(p, x, y)
    return np.stack([gx, gy, vx, vy], axis=-1)


# --- vector fields ---

def vector_field_cart(p: ModelParams, s) -> np.ndarray:
    x, y, vx, vy = _split(s)
    gx, gy = potential_gradient(p, x, y)
    return np.stack([vx, vy, 2.0 * vy - gx, -2.0 * vx - gy], axis=-1)


def vector_field_symp(p: ModelParams, s) -> np.ndarray:
    """J grad E in the (q, p) chart."""
    grad = energy_gradient_symp(p, s)
    return np.concatenate([grad[..., 2:], -grad[..., :2]], axis=-1)


def vector_field(p: ModelParams, s, chart: str = "cart"):
    arr, chart = _as_array_and_chart(s, chart)
    return vector_field_cart(p, arr) if chart == "cart" else vector_field_symp(p, arr)


def ground_states_symp(p: ModelParams) -> np.ndarray:
    """Rows are +Q~ and -Q~ in the symplectic chart."""
    q0 = p.q0
    return np.array([[q0, 0.0, 0.0, q0], [-q0, 0.0, 0.0, -q0]])


# --- Hill's regions ---

def default_window(p: ModelParams) -> float:
    """Half-width of the square window used for zero-velocity curves."""
    return 3.0 * p.q0 * (p.alpha + 2.0) ** (1.0 / (p.alpha + 2.0))


def _potential_grid(p: ModelParams, half_width: float, resolution: int):
    xs = np.linspace(-half_width, half_width, resolution)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    r = np.hypot(X, Y)
    with np.errstate(divide="ignore"):
        V = -0.5 * (p.alpha + 2.0) * X**2 - (p.alpha + 2.0) * r ** (-p.alpha)
    return xs, V


def _polish_vertex(p: ModelParams, x: float, y: float, c: float) -> tuple[float, float]:
    # Newton along grad V onto {V = c}
    for _ in range(50):
        v = effective_potential(p, x, y) - c
        if abs(v) <= 1e-13 * max(1.0, abs(c)):
            break
        gx, gy = potential_gradient(p, x, y)
        g2 = gx * gx + gy * gy
        if g2 == 0.0:
            break
        x, y = x - v * gx / g2, y - v * gy / g2
    return float(x), float(y)


def hill_region_boundary(p: ModelParams, c: float, resolution: int = 256,
                         half_width: float | None = None) -> list[np.ndarray]:
    """Zero-velocity curves {V = c} as a list of (n, 2) polylines.

    Marching squares on a square window followed by Newton polishing of each
    vertex, so every vertex satisfies ``|V - c| <= 1e-6 |c|``.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    hw = default_window(p) if half_width is None else half_width
    xs, V = _potential_grid(p, hw, resolution)
    V = np.where(np.isfinite(V), V, np.nanmin(V[np.isfinite(V)]) - 1.0)
    step = xs[1] - xs[0]
    lines = []
    for contour in measure.find_contours(V, c):
        pts = xs[0] + contour * step
        polished = np.array([_polish_vertex(p, x, y, c) for x, y in pts])
        lines.append(polished)
    return lines


def hill_region_components(p: ModelParams, c: float, resolution: int = 256,
                           half_width: float | None = None):
    """Label the connected components of the allowed region {V <= c} on a grid.

    Returns ``(xs, labels)``; label 0 marks forbidden nodes.
    """
    from scipy import ndimage

    hw = default_window(p) if half_width is None else half_width
    xs, V = _potential_grid(p, hw, resolution)
    allowed = V <= c
    labels, _ = ndimage.label(allowed)
    return xs, labels


def hill_region_connected(p: ModelParams, c: float, a: tuple[float, float],
                          b: tuple[float, float], resolution: int = 256) -> bool:
    """True iff configuration points ``a`` and ``b`` lie in one component of {V <= c}."""
    xs, labels = hill_region_components(p, c, resolution)

    def node(pt):
        i = int(np.argmin(np.abs(xs - pt[0])))
        j = int(np.argmin(np.abs(xs - pt[1])))
        return labels[i, j]

    la, lb = node(a), node(b)
    return bool(la != 0 and la == lb)
