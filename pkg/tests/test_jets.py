"""Jet calculus: validation, slot partials, total derivatives against the
composition property d_p (F o j phi)(x) = (total derivative of F) o j phi."""

import numpy as np
import pytest

from varimap import autodiff as ad
from varimap.engine import DualEngine
from varimap.jets import (
    JetPoint,
    JetSlots,
    LagrangianDensity,
    SourceForm,
    euler_lagrange,
    euler_lagrange_form,
    jet_partials,
    prolong,
    sample_jets,
    total_derivative,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_jetpoint_rejects_asymmetric_phi2(rng):
    jet = sample_jets(rng, 2, 2, 3)
    bad = jet.phi2.copy()
    bad[0, 0, 1] += 1e-12
    with pytest.raises(ValueError, match="symmetric"):
        JetPoint(jet.x, jet.phi, jet.phi1, bad, None)


def test_jetpoint_rejects_asymmetric_phi3(rng):
    jet = sample_jets(rng, 1, 3, 2)
    bad = jet.phi3.copy()
    bad[0, 0, 1, 2] *= -1.0
    with pytest.raises(ValueError, match="symmetric"):
        JetPoint(jet.x, jet.phi, jet.phi1, jet.phi2, bad)


def test_jetpoint_shape_checks(rng):
    jet = sample_jets(rng, 2, 2, 3)
    with pytest.raises(ValueError, match="phi3 given without phi2"):
        JetPoint(jet.x, jet.phi, jet.phi1, None, jet.phi3)
    with pytest.raises(ValueError, match="phi1"):
        JetPoint(jet.x, jet.phi, jet.phi1[:1], jet.phi2, None)


def test_sample_jets_symmetry_and_batch(rng):
    jet = sample_jets(rng, 2, 3, 5)
    assert jet.batch_shape == (5,)
    assert jet.order == 3
    assert np.array_equal(jet.phi2, np.swapaxes(jet.phi2, 1, 2))
    assert np.array_equal(jet.phi3, np.swapaxes(jet.phi3, 1, 3))


def test_jet_slots_roundtrip(rng):
    jet = sample_jets(rng, 2, 2, 4)
    slots = JetSlots(2, 2, order=2)
    vals = slots.values_from_jet(jet)
    assert len(vals) == slots.count == 2 + 2 + 4 + 6
    back = slots.jet_from_values(vals, jet)
    np.testing.assert_array_equal(back.phi1, jet.phi1)
    np.testing.assert_array_equal(back.phi2, jet.phi2)
    assert back.phi3 is jet.phi3


def test_phi2_partials_use_symmetrized_convention(rng):
    jet = sample_jets(rng, 1, 2, 3)

    def fn(j):
        return [2.0 * j.phi2[0, 0, 1] + 3.0 * j.phi2[0, 0, 0]]

    p = jet_partials(fn, jet, "phi2")
    np.testing.assert_allclose(p[0, 0, 0, 0], 3.0 * np.ones(3))
    np.testing.assert_allclose(p[0, 0, 0, 1], 1.0 * np.ones(3))
    np.testing.assert_allclose(p[0, 0, 1, 0], 1.0 * np.ones(3))
    np.testing.assert_allclose(p[0, 0, 1, 1], np.zeros(3))
    # contraction with a symmetric tensor reproduces the formal chain rule
    sym = np.zeros((1, 2, 2, 3))
    sym[0, 0, 1] = sym[0, 1, 0] = 1.7
    np.testing.assert_allclose(np.einsum("osij...,sij...->o...", p, sym), 2.0 * 1.7)


def test_first_order_partials(rng):
    jet = sample_jets(rng, 2, 2, 4)

    def fn(j):
        return [j.x[1] * j.phi1[0, 1] + j.phi[1] ** 2, j.phi[0] * j.phi1[1, 0]]

    px = jet_partials(fn, jet, "x")
    pphi = jet_partials(fn, jet, "phi")
    pphi1 = jet_partials(fn, jet, "phi1")
    np.testing.assert_allclose(px[0, 1], jet.phi1[0, 1])
    np.testing.assert_allclose(pphi[0, 1], 2 * np.asarray(jet.phi[1]))
    np.testing.assert_allclose(pphi[1, 0], jet.phi1[1, 0])
    np.testing.assert_allclose(pphi1[0, 0, 1], np.asarray(jet.x[1]))
    np.testing.assert_allclose(pphi1[1, 1, 0], np.asarray(jet.phi[0]))


def demo_map(x):
    return [x[0] ** 2 + ad.sin(x[1]), x[0] * x[1] ** 2]


def second_order_fn(j):
    return [
        j.phi2[0, 1, 1] * ad.sin(j.phi[1]) + j.x[0] * j.phi1[1, 0],
        j.phi2[1, 0, 1] * j.phi1[0, 1] + j.phi[0],
    ]


def test_prolong_frozen_values():
    x = [np.array([0.3]), np.array([0.7])]
    jet = prolong(demo_map, 2, x, order=3)
    np.testing.assert_allclose(jet.phi[0], 0.09 + np.sin(0.7))
    np.testing.assert_allclose(jet.phi1[0, 0], [0.6])
    np.testing.assert_allclose(jet.phi1[0, 1], [np.cos(0.7)])
    np.testing.assert_allclose(jet.phi2[0, 0, 0], [2.0])
    np.testing.assert_allclose(jet.phi2[0, 1, 1], [-np.sin(0.7)])
    np.testing.assert_allclose(jet.phi2[1, 0, 1], [2 * 0.7])
    np.testing.assert_allclose(jet.phi3[1, 0, 1, 1], [2.0])
    np.testing.assert_allclose(jet.phi3[0, 1, 1, 1], [-np.cos(0.7)])


def test_total_derivative_matches_composition(rng):
    x = list(rng.uniform(0.2, 0.8, size=(2, 3)))
    jet3 = prolong(demo_map, 2, x, order=3)
    td = total_derivative(second_order_fn, jet3, fn_order=2)
    h = 1e-6
    for p in range(2):
        shift = np.zeros(2)
        shift[p] = h
        jp = prolong(demo_map, 2, [v + s for v, s in zip(x, shift)], order=2)
        jm = prolong(demo_map, 2, [v - s for v, s in zip(x, shift)], order=2)
        fd = (
            np.asarray([second_order_fn(jp)[0], second_order_fn(jp)[1]])
            - np.asarray([second_order_fn(jm)[0], second_order_fn(jm)[1]])
        ) / (2 * h)
        np.testing.assert_allclose(td[:, p], fd, rtol=1e-6, atol=1e-8)


def test_total_derivative_nested_dual_oracle(rng):
    x = list(rng.uniform(0.2, 0.8, size=(2, 2)))
    jet3 = prolong(demo_map, 2, x, order=3)
    td = total_derivative(second_order_fn, jet3, fn_order=2)

    def composite(z):
        jet = prolong(demo_map, 2, z, order=2)
        return second_order_fn(jet)

    f0, d1 = DualEngine().derivs(composite, x, 1)
    np.testing.assert_allclose(td, d1, rtol=1e-10, atol=1e-12)


def test_total_derivative_requires_higher_jet(rng):
    jet2 = sample_jets(rng, 2, 2, 2, order=2)
    with pytest.raises(ValueError, match="phi3"):
        total_derivative(second_order_fn, jet2, fn_order=2)


def test_euler_lagrange_flat_energy(rng):
    jet = sample_jets(rng, 2, 2, 6)
    lag = LagrangianDensity(
        2, 2, lambda j: 0.5 * sum(j.phi1[s, i] ** 2 for s in range(2) for i in range(2))
    )
    el = euler_lagrange(lag, jet)
    expected = -(jet.phi2[:, 0, 0] + jet.phi2[:, 1, 1])
    np.testing.assert_allclose(el, expected, rtol=1e-12, atol=1e-12)


def test_euler_lagrange_with_x_dependent_coefficient(rng):
    jet = sample_jets(rng, 2, 2, 4)
    lag = LagrangianDensity(2, 2, lambda j: ad.exp(j.x[0]) * j.phi1[0, 0] * j.phi[1])
    el = euler_lagrange(lag, jet)
    a = np.exp(np.asarray(jet.x[0]))
    # dL/dphi^1 = a phi1[0,0]; d_0 (a phi^1) = a phi^1 + a phi1[1,0]
    exp0 = -(a * np.asarray(jet.phi[1]) + a * jet.phi1[1, 0])
    exp1 = a * jet.phi1[0, 0]
    np.testing.assert_allclose(el[0], exp0, rtol=1e-12)
    np.testing.assert_allclose(el[1], exp1, rtol=1e-12)


def test_euler_lagrange_form_wraps(rng):
    jet = sample_jets(rng, 1, 2, 3)
    lag = LagrangianDensity(1, 2, lambda j: 0.5 * (j.phi1[0, 0] ** 2 + j.phi1[0, 1] ** 2))
    form = euler_lagrange_form(lag)
    assert isinstance(form, SourceForm)
    assert form.lagrangian is lag
    np.testing.assert_allclose(form(jet)[0], -(jet.phi2[0, 0, 0] + jet.phi2[0, 1, 1]))
