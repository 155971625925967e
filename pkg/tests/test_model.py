import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_states
from hillfate.model import (
    CartesianState,
    DomainError,
    ModelParams,
    SymplecticState,
    cart_to_symp,
    default_window,
    effective_potential,
    energy,
    energy_cart,
    energy_gradient_symp,
    energy_symp,
    ground_states_symp,
    hill_region_boundary,
    hill_region_connected,
    moment_of_inertia,
    scaling_w,
    symp_to_cart,
    vector_field,
    vector_field_cart,
    vector_field_symp,
    virial_k,
    virial_k_cart,
    virial_k_symp,
)

alphas = st.floats(min_value=0.2, max_value=10.0)


@given(alphas)
def test_params_closed_forms(a):
    p = ModelParams(a)
    assert p.q0 > 0
    assert math.isclose(p.q0 ** (a + 2), a, rel_tol=1e-12)
    assert math.isclose(p.e_star, -0.5 * (a + 2) ** 2 * a ** (-a / (a + 2)), rel_tol=1e-12)


@pytest.mark.parametrize("a", [0.0, -1.0, math.inf, math.nan])
def test_params_reject_bad_alpha(a):
    with pytest.raises(ValueError):
        ModelParams(a)


def test_potential_examples():
    assert effective_potential(ModelParams(1.0), 1.0, 0.0) == pytest.approx(-4.5, abs=1e-14)
    assert effective_potential(ModelParams(2.0), 2 ** 0.25, 0.0) == pytest.approx(-4 * math.sqrt(2), abs=1e-13)


def test_potential_reflection_symmetry(params, rng):
    x, y = rng.uniform(-3, 3, (2, 1000))
    v = effective_potential(params, x, y)
    assert np.array_equal(v, effective_potential(params, -x, y))
    assert np.array_equal(v, effective_potential(params, x, -y))


def test_origin_is_rejected(params):
    with pytest.raises(DomainError):
        effective_potential(params, 0.0, 0.0)
    with pytest.raises(DomainError):
        vector_field_symp(params, np.zeros(4))


def test_energy_at_ground_states(params):
    q0 = params.q0
    for sgn in (1, -1):
        assert energy(params, CartesianState(sgn * q0, 0, 0, 0)) == pytest.approx(params.e_star, rel=1e-13)


def test_kinetic_term_is_additive(params, rng):
    u, v = rng.normal(size=2)
    e = energy_cart(params, [params.q0, 0, u, v])
    assert e == pytest.approx(params.e_star + 0.5 * (u * u + v * v), rel=1e-13)


def test_energy_charts_agree(params, rng):
    s = random_states(rng, 2000)
    ec = energy_cart(params, s)
    es = energy_symp(params, cart_to_symp(s))
    assert np.max(np.abs(ec - es) / np.maximum(1.0, np.abs(ec))) <= 1e-13


def test_scaling_w_examples():
    p1 = ModelParams(1.0)
    assert scaling_w(p1, 0.1, 0.0) == pytest.approx(-29.97, rel=1e-13)
    assert scaling_w(p1, 10.0, 0.0) > 0
    for a in (1.0, 2.0, 3.0):
        p = ModelParams(a)
        assert abs(scaling_w(p, p.q0, 0.0)) <= 1e-13
        assert abs(scaling_w(p, -p.q0, 0.0)) <= 1e-13


def test_virial_k_vanishes_at_ground_states(params):
    for q in ground_states_symp(params):
        assert abs(virial_k_symp(params, q)) <= 1e-12
        assert abs(virial_k_cart(params, symp_to_cart(q))) <= 1e-12


def test_virial_k_charts_agree(params, rng):
    s = random_states(rng, 2000)
    kc = virial_k_cart(params, s)
    ks = virial_k_symp(params, cart_to_symp(s))
    assert np.max(np.abs(kc - ks) / np.maximum(1.0, np.abs(kc))) <= 1e-13


def test_inertia_examples(params, rng):
    for q in ground_states_symp(params):
        assert moment_of_inertia(q, "symp")[1] == 0.0
    th = rng.uniform(0, 2 * np.pi)
    assert moment_of_inertia([2 * np.cos(th), 2 * np.sin(th), 0.3, -0.2])[0] == pytest.approx(2.0, rel=1e-15)
    s = random_states(rng, 500)
    _, dc = moment_of_inertia(s, "cart")
    _, ds = moment_of_inertia(cart_to_symp(s), "symp")
    assert np.max(np.abs(dc - ds)) <= 1e-14 * np.max(np.abs(dc))


def test_dataclass_states_pick_their_chart(params):
    c = CartesianState(1.1, 0.2, 0.3, -0.4)
    s = c.to_symplectic()
    assert isinstance(s, SymplecticState)
    assert energy(params, c) == pytest.approx(energy(params, s), rel=1e-14)
    assert virial_k(params, c) == pytest.approx(virial_k(params, s), rel=1e-13)


def test_equilibria(params):
    for q in ground_states_symp(params):
        assert np.max(np.abs(vector_field_symp(params, q))) <= 1e-12
        assert np.max(np.abs(vector_field_cart(params, symp_to_cart(q)))) <= 1e-12


def test_vector_field_charts_conjugate(params, rng):
    s = random_states(rng, 1000)
    fc = vector_field_cart(params, s)
    fs = vector_field_symp(params, cart_to_symp(s))
    # d/dt (x, y, vx, vy) from the symplectic field: vx = px + y, vy = py - x
    pushed = np.column_stack([fs[:, 0], fs[:, 1], fs[:, 2] + fs[:, 1], fs[:, 3] - fs[:, 0]])
    assert np.max(np.abs(fc - pushed) / np.maximum(1.0, np.abs(fc))) <= 1e-12


def test_energy_conserved_by_field(params, rng):
    s = cart_to_symp(random_states(rng, 10_000))
    g = energy_gradient_symp(params, s)
    f = vector_field_symp(params, s)
    dedt = np.sum(g * f, axis=1)
    scale = np.linalg.norm(g, axis=1) * np.linalg.norm(f, axis=1)
    assert np.max(np.abs(dedt) / np.maximum(1.0, scale)) <= 1e-12


def test_point_reflection(params, rng):
    s = random_states(rng, 1000)
    for fn in (energy_cart, virial_k_cart):
        assert np.array_equal(fn(params, s), fn(params, -s))
    assert np.array_equal(scaling_w(params, s[:, 0], s[:, 1]), scaling_w(params, -s[:, 0], -s[:, 1]))
    assert np.array_equal(vector_field(params, -s), -vector_field(params, s))


def test_chart_map_examples(params, rng):
    q0 = params.q0
    assert np.array_equal(cart_to_symp([q0, 0, 0, 0]), [q0, 0, 0, q0])
    assert np.array_equal(cart_to_symp([0, 1, 0, 0]), [0, 1, -1, 0])
    s = random_states(rng, 1000)
    assert np.max(np.abs(symp_to_cart(cart_to_symp(s)) - s)) <= 1e-15 * 4


@settings(max_examples=200)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_chart_round_trip_property(v):
    s = np.array(v)
    back = symp_to_cart(cart_to_symp(s))
    assert np.allclose(back, s, rtol=1e-14, atol=1e-14 * max(1.0, np.max(np.abs(s))))


def test_hill_region_neck_closed_below_threshold():
    p = ModelParams(1.0)
    assert not hill_region_connected(p, -4.6, (0.3, 0.0), (2.0, 0.0))
    assert not hill_region_connected(p, -4.6, (0.3, 0.0), (-2.0, 0.0))


def test_hill_region_neck_open_above_threshold():
    p = ModelParams(1.0)
    assert hill_region_connected(p, -4.4, (0.3, 0.0), (2.0, 0.0))
    assert hill_region_connected(p, -4.4, (0.3, 0.0), (-2.0, 0.0))


def test_hill_region_curves_are_level_sets(params):
    c = params.e_star - 0.3
    for line in hill_region_boundary(params, c):
        v = effective_potential(params, line[:, 0], line[:, 1])
        assert np.max(np.abs(v - c)) <= 1e-6 * abs(c)


def test_hill_region_at_threshold_passes_lagrange_points(params):
    lines = np.vstack(hill_region_boundary(params, params.e_star, resolution=512))
    step = 2 * default_window(params) / 511
    for sgn in (1, -1):
        d = np.min(np.hypot(lines[:, 0] - sgn * params.q0, lines[:, 1]))
        assert d <= 2 * step
