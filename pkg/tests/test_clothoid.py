import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import fresnel

from trajattack import clothoid
from trajattack.core import ClothoidArc, Configuration

from oracles import brute_force_endpoint


def test_straight_arc():
    end = clothoid.propagate(Configuration(1.0, 2.0, 0.0, 0.0), ClothoidArc(0.0, 5.0))
    assert (end.x, end.y, end.psi, end.c0) == pytest.approx((6.0, 2.0, 0.0, 0.0), abs=1e-12)


def test_constant_curvature_closed_form():
    c0, psi, l = 0.2, 0.3, 4.0
    end = clothoid.propagate(Configuration(0.0, 0.0, psi, c0), ClothoidArc(0.0, l))
    assert end.x == pytest.approx((math.sin(psi + c0 * l) - math.sin(psi)) / c0, abs=1e-13)
    assert end.y == pytest.approx((math.cos(psi) - math.cos(psi + c0 * l)) / c0, abs=1e-13)


def test_pure_spiral_matches_fresnel_integrals():
    c1, l = 0.5, 5.0
    end = clothoid.propagate(Configuration(0.0, 0.0, 0.0, 0.0), ClothoidArc(c1, l))
    scale = math.sqrt(math.pi / c1)
    s_val, c_val = fresnel(l / scale)
    assert end.x == pytest.approx(scale * c_val, abs=1e-12)
    assert end.y == pytest.approx(scale * s_val, abs=1e-12)
    assert end.psi == pytest.approx(0.5 * c1 * l * l - 2 * math.pi, abs=1e-12)


def test_matches_brute_force_integrator():
    rng = np.random.default_rng(11)
    for _ in range(25):
        x, y = rng.uniform(-50, 50, 2)
        psi = rng.uniform(-math.pi, math.pi)
        c0, c1, l = rng.uniform(-0.2, 0.2), rng.uniform(-0.5, 0.5), rng.uniform(0.01, 5.0)
        end = clothoid.propagate(Configuration(x, y, psi, c0), ClothoidArc(c1, l))
        bx, by = brute_force_endpoint(x, y, psi, c0, c1, l)
        assert math.hypot(end.x - bx, end.y - by) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.2, 0.2), st.floats(-0.5, 0.5), st.floats(0.01, 5.0), st.floats(0.05, 0.95))
def test_split_consistency(c0, c1, l, frac):
    start = Configuration(0.0, 0.0, 0.4, c0)
    whole = clothoid.propagate(start, ClothoidArc(c1, l))
    mid = clothoid.propagate(start, ClothoidArc(c1, frac * l))
    two = clothoid.propagate(mid, ClothoidArc(c1, (1 - frac) * l))
    assert math.hypot(whole.x - two.x, whole.y - two.y) <= 1e-9
    assert whole.c0 == pytest.approx(two.c0, abs=1e-12)
    assert math.cos(whole.psi - two.psi) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.2, 0.2), st.floats(-0.5, 0.5), st.floats(0.01, 5.0))
def test_mirror_symmetry(c0, c1, l):
    a = clothoid.propagate(Configuration(0.0, 0.0, 0.0, c0), ClothoidArc(c1, l))
    b = clothoid.propagate(Configuration(0.0, 0.0, 0.0, -c0), ClothoidArc(-c1, l))
    assert a.x == pytest.approx(b.x, abs=1e-12)
    assert a.y == pytest.approx(-b.y, abs=1e-12)


def test_curvature_and_heading_profiles():
    start = Configuration(0.0, 0.0, 3.0, 0.1)
    arc = ClothoidArc(0.2, 2.0)
    assert clothoid.curvature_at(start, arc, 1.5) == pytest.approx(0.4)
    raw = 3.0 + 0.1 * 2.0 + 0.5 * 0.2 * 4.0
    assert clothoid.heading_at(start, arc, 2.0) == pytest.approx(raw - 2 * math.pi)
    with pytest.raises(ValueError):
        clothoid.curvature_at(start, arc, 2.5)
    with pytest.raises(ValueError):
        clothoid.heading_at(start, arc, -0.1)


def test_chain_is_sequential_propagation():
    start = Configuration(0.0, 0.0, 0.0, 0.0)
    arcs = [ClothoidArc(0.1, 1.0), ClothoidArc(-0.2, 0.5), ClothoidArc(0.0, 2.0)]
    chain = clothoid.propagate_chain(start, arcs)
    cur = start
    for arc, got in zip(arcs, chain):
        cur = clothoid.propagate(cur, arc)
        assert got == cur
    assert chain[-1].c0 == pytest.approx(0.0)


def test_sample_arc_stations():
    start = Configuration(0.0, 0.0, 0.0, 0.05)
    samples = clothoid.sample_arc(start, ClothoidArc(0.01, 1.0), 0.3)
    assert [s.s for s in samples] == pytest.approx([0.0, 0.3, 0.6, 0.9, 1.0])
    assert samples[0].config == start.normalized()
    assert samples[-1].config == clothoid.propagate(start, ClothoidArc(0.01, 1.0))
    exact = clothoid.sample_arc(start, ClothoidArc(0.0, 0.9), 0.3)
    assert [s.s for s in exact] == pytest.approx([0.0, 0.3, 0.6, 0.9])
    with pytest.raises(ValueError):
        clothoid.sample_arc(start, ClothoidArc(0.0, 1.0), 0.0)


def test_arc_validation():
    with pytest.raises(ValueError):
        ClothoidArc(0.1, 0.0)
    with pytest.raises(ValueError):
        ClothoidArc(math.inf, 1.0)
