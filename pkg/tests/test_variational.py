import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycurve.ambient import DiscreteCurve, arclength_reparametrize, derivatives_analytic, sample
from polycurve.families import (
    make_biharmonic_two_freq,
    make_circle,
    make_great_circle,
    make_r_circle,
    make_triharmonic_two_freq,
    make_two_freq,
)
from polycurve.geometry import covariant_stack, frenet_data
from polycurve.residuals import (
    residual_biharmonic_ode,
    residual_extrinsic,
    residual_fourharmonic_ode,
    residual_geodesic,
    residual_triharmonic_ode,
)
from polycurve.variational import (
    FlowOptions,
    ReducedLagrangian,
    _batched_energy,
    discrete_energy,
    energy_gradient_fd,
    euler_lagrange_residual_generic,
    fit_circle_parameters,
    gradient_flow,
    lagrangian_value,
    reduced_lagrangian_critical_points,
    second_variation_closed_form,
    second_variation_fd,
    second_variation_reduced,
)


def reduced(a2, al2, r):
    return a2 ** r * al2 * (1 - al2) ** (r - 1)


@pytest.mark.parametrize("r", [2, 3, 4])
@pytest.mark.parametrize("a2", [1.0, 2.0, 3.0, 4.0])
def test_energy_matches_reduced_lagrangian(r, a2):
    c = make_circle(a2)
    d = sample(c, 64)
    expected = d.L * reduced(a2, 1 / a2, r)
    for curve in (c, d):
        E = discrete_energy(curve, r)
        assert abs(E - expected) <= 1e-6 * max(expected, 1.0)


def test_energy_per_unit_length_examples():
    assert discrete_energy(make_r_circle(2), 2, interval_length=1.0) == pytest.approx(1.0)
    assert discrete_energy(make_r_circle(3), 3, interval_length=1.0) == pytest.approx(4.0)
    for r in (2, 3, 4):
        assert discrete_energy(make_great_circle(), r) == pytest.approx(0.0, abs=1e-20)


def test_energy_recursion_beyond_budget():
    for r in (5, 6, 8):
        assert discrete_energy(make_r_circle(r), r, interval_length=1.0) == pytest.approx(reduced(r, 1 / r, r))


def test_arclength_energy_is_reparametrization_invariant():
    d = sample(make_circle(2.5), 64)
    t = d.s
    u = t + 0.15 * d.L / (2 * math.pi) * np.sin(2 * math.pi * t / d.L)  # same curve, uneven speed
    uneven = DiscreteCurve(np.array([make_circle(2.5)(x) for x in u]), d.L)
    assert discrete_energy(uneven, 2) == pytest.approx(discrete_energy(d, 2), rel=1e-8)
    assert abs(discrete_energy(uneven, 2, parametrization="given") - discrete_energy(d, 2)) > 1e-3


def test_reduced_lagrangian():
    L = ReducedLagrangian(3)
    assert L(1 / math.sqrt(3), math.sqrt(3)) == pytest.approx(4.0)
    h = 1e-6
    for al in (0.3, 0.5, 0.8):
        fd = (L(al + h, 1.7) - L(al - h, 1.7)) / (2 * h)
        assert L.d_alpha(al, 1.7) == pytest.approx(fd, rel=1e-6)
    C = ReducedLagrangian(2, constrained=True)
    assert C(0.5) == pytest.approx(reduced(4.0, 0.25, 2))
    with pytest.raises(ValueError):
        L(0.5)


def test_critical_points():
    assert reduced_lagrangian_critical_points(2) == pytest.approx([0.5])
    assert reduced_lagrangian_critical_points(3) == pytest.approx([1.0, 1 / 3])
    assert reduced_lagrangian_critical_points(7) == pytest.approx([1.0, 1 / 7])


@pytest.mark.parametrize("r", range(2, 9))
def test_second_variation_sign_and_fd(r):
    v = second_variation_reduced(r)
    assert v < 0
    assert abs(second_variation_fd(r) - v) <= 0.01 * abs(v)


def test_second_variation_values():
    assert second_variation_reduced(2) == pytest.approx(-16.0)
    assert second_variation_reduced(3) == pytest.approx(-72.0)
    assert second_variation_closed_form(2, 2.5) == pytest.approx(-40.0)


def test_gradient_secant_consistency():
    rng = np.random.default_rng(7)
    base = sample(make_circle(2.5), 32)
    d = DiscreteCurve.from_points(base.samples + 0.05 * rng.standard_normal(base.samples.shape), base.L)
    g = energy_gradient_fd(d, 2)
    E = lambda Y: float(_batched_energy(Y[None], d.L, 2)[0])
    for _ in range(10):
        v = rng.standard_normal(d.samples.shape)
        v -= np.sum(v * d.samples, axis=1, keepdims=True) * d.samples
        h = 1e-5
        secant = (E(d.samples + h * v) - E(d.samples - h * v)) / (2 * h)
        assert abs(secant - np.sum(g * v)) <= 1e-4 * abs(secant)


def test_restricted_flow_from_critical_circle_takes_no_step():
    tr = gradient_flow(sample(make_r_circle(2), 128), 2, FlowOptions(mode="restricted"))
    assert tr.status == "converged" and len(tr.iterations) == 1


@pytest.mark.parametrize("r,alpha2", [(2, 0.4), (3, 0.45)])
def test_restricted_flow_rediscovers_critical_circle(r, alpha2):
    tr = gradient_flow(sample(make_circle(1 / alpha2), 128), r, FlowOptions(mode="restricted"))
    assert tr.status == "converged"
    assert tr.params["alpha2"] == pytest.approx(1 / r, abs=0.01)
    E = [it.energy for it in tr.iterations]
    assert all(b <= a for a, b in zip(E[1:], E[2:]))


def test_fit_circle_parameters():
    a, al = fit_circle_parameters(sample(make_circle(2.5), 64))
    assert a * a == pytest.approx(2.5) and al * al == pytest.approx(0.4)


def _perturbed_great_circle(N=64, eps=0.03):
    d = sample(make_great_circle(), N)
    X = d.samples + eps * np.outer(np.sin(3 * 2 * math.pi * d.s / d.L), [0, 0, 1])
    return DiscreteCurve.from_points(X, d.L)


@pytest.mark.parametrize("r", [2, 3])
def test_full_flow_energy_decreases(r):
    tr = gradient_flow(_perturbed_great_circle(), r, FlowOptions(max_iters=40))
    E = [it.energy for it in tr.iterations]
    assert all(b <= a for a, b in zip(E, E[1:]))
    assert E[-1] < E[0]
    X = tr.final_curve.samples
    assert np.max(np.abs(np.linalg.norm(X, axis=1) - 1)) < 1e-12


def test_full_flow_options():
    with pytest.raises(ValueError):
        gradient_flow(_perturbed_great_circle(), 4)
    with pytest.raises(ValueError):
        gradient_flow(_perturbed_great_circle(), 4, FlowOptions(allow_r4=True))
    with pytest.raises(ValueError):
        gradient_flow(_perturbed_great_circle(), 2, FlowOptions(mode="sideways"))


def test_trace_serializes():
    tr = gradient_flow(_perturbed_great_circle(), 2, FlowOptions(max_iters=3))
    data = json.loads(json.dumps(tr.to_dict()))
    assert data["mode"] == "full" and len(data["iterations"]) == len(tr.iterations)
    assert data["final_curve"]["type"] == "discrete"


FAMILIES = [
    make_great_circle(3),
    make_r_circle(2, 3),
    make_r_circle(3, 3),
    make_r_circle(4, 3),
    make_circle(2.5, 3),
    make_biharmonic_two_freq(math.sqrt(1.5)),
    make_biharmonic_two_freq(math.sqrt(0.5)),
    make_triharmonic_two_freq(0.5),
]


@pytest.mark.parametrize("curve", FAMILIES)
def test_generic_el_matches_hand_coded(curve):
    pairs = [("biharmonic", residual_biharmonic_ode), ("triharmonic", residual_triharmonic_ode),
             ("fourharmonic", residual_fourharmonic_ode)]
    for lid, fn in pairs:
        gen = euler_lagrange_residual_generic(lid, curve)
        ref = fn(curve)
        assert np.max(np.abs(gen.vectors - ref.vectors)) <= 1e-7
    geo = euler_lagrange_residual_generic("geodesic", curve)
    assert np.max(np.abs(geo.vectors - residual_geodesic(curve).vectors)) <= 1e-10
    for r in (2, 3, 4):
        ext = euler_lagrange_residual_generic("extrinsic_r", curve, r)
        assert np.max(np.abs(ext.vectors - residual_extrinsic(curve, r).vectors)) <= 1e-7


def test_generic_el_on_sampled_curve():
    d = sample(make_r_circle(3), 256)
    gen = euler_lagrange_residual_generic("triharmonic", d)
    assert gen.max_norm < 1e-5


@pytest.mark.parametrize("curve", FAMILIES[1:])
def test_lagrangians_equal_covariant_norms(curve):
    cs = covariant_stack(curve, 3)
    for lid, l in (("biharmonic", 1), ("triharmonic", 2), ("fourharmonic", 3)):
        assert np.max(np.abs(lagrangian_value(lid, curve) - np.sum(cs[l] ** 2, axis=1))) < 1e-9


def test_unknown_lagrangian():
    with pytest.raises(ValueError):
        euler_lagrange_residual_generic("quintic", make_great_circle())
    with pytest.raises(ValueError):
        euler_lagrange_residual_generic("extrinsic_r", make_great_circle())


unit_speed_curves = st.one_of(
    st.builds(lambda a2: make_circle(a2, 3), st.one_of(st.just(1.0), st.floats(1.0, 6.0))),
    st.builds(lambda a2: make_biharmonic_two_freq(math.sqrt(a2)), st.one_of(st.just(1.0), st.floats(0.05, 1.95))),
    st.builds(lambda a2, b2: make_two_freq(a2, b2, (1 - b2) / (a2 - b2)),
              st.floats(0.1, 0.9), st.floats(1.1, 4.0)),
)


@settings(max_examples=60, deadline=None)
@given(unit_speed_curves)
def test_extrinsic_biharmonic_curves_are_geodesics(curve):
    s = curve.default_grid()
    rep = residual_extrinsic(curve, 2, s)
    if rep.max_norm > 1e-8:
        return
    g = derivatives_analytic(curve, s, 2)
    assert np.max(np.abs(np.sum(g[2] ** 2, axis=1) - 1)) <= 1e-6
    assert np.max(frenet_data(curve, s=s).k) <= 1e-3


def test_extrinsic_property_sees_passing_curves():
    # the strategy above does generate passing curves: the a^2 = 1 members
    for c in (make_circle(1.0, 3), make_biharmonic_two_freq(1.0)):
        assert residual_extrinsic(c, 2).max_norm <= 1e-8
