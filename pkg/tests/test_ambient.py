import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycurve.ambient import (
    CircleAnsatzCurve,
    CircleTerm,
    DerivativeOrderError,
    DerivativeStack,
    DiscreteCurve,
    ambient_vector,
    arclength_reparametrize,
    curve_from_dict,
    curve_to_dict,
    derivatives_analytic,
    derivatives_spectral,
    evaluate,
    sample,
    spectral_derivative,
    trig_interpolate,
    triple_hodge,
)
from polycurve.families import make_biharmonic_two_freq, make_great_circle, make_r_circle, make_two_freq

E = np.eye(4)


def test_ambient_vector_rejects_short_and_nonfinite():
    with pytest.raises(ValueError):
        ambient_vector([1.0, 0.0])
    with pytest.raises(ValueError):
        ambient_vector([1.0, np.nan, 0.0])


def test_evaluate_r3_circle_at_zero():
    c = make_r_circle(3, 3)
    x = evaluate(c, 0.0)
    expected = E[0] / math.sqrt(3) + math.sqrt(2 / 3) * E[2]
    assert np.allclose(x, expected, atol=1e-15)
    assert abs(np.linalg.norm(x) - 1) < 1e-15


def test_evaluate_two_frequency_at_zero():
    c = make_biharmonic_two_freq(math.sqrt(1.5))
    x = evaluate(c, 0.0)
    assert np.allclose(x, (E[0] + E[2]) / math.sqrt(2), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 1.7), st.floats(0.05, 0.95))
def test_evaluate_unit_norm_random_ansatz(a2, p):
    b2 = 2.0 - a2
    if abs(a2 - b2) < 1e-3:
        return
    c = make_two_freq(a2, b2, p)
    s = np.random.default_rng(0).uniform(-50, 50, 1000)
    assert np.max(np.abs(np.linalg.norm(evaluate(c, s), axis=1) - 1)) < 1e-14


def test_ansatz_validation():
    with pytest.raises(ValueError, match="orthogonal"):
        CircleAnsatzCurve((CircleTerm(1.0, E[0], E[0]),), np.zeros(4))
    with pytest.raises(ValueError, match="differ"):
        CircleAnsatzCurve((CircleTerm(1.0, E[0], 0.5 * E[1]),), np.zeros(4))
    with pytest.raises(ValueError, match="must be 1"):
        CircleAnsatzCurve((CircleTerm(1.0, 0.5 * E[0], 0.5 * E[1]),), np.zeros(4))
    h = math.sqrt(0.5)
    with pytest.raises(ValueError, match="distinct"):
        CircleAnsatzCurve((CircleTerm(1.0, h * E[0], h * E[1]), CircleTerm(1.0, h * E[2], h * E[3])), np.zeros(4))


def test_great_circle_second_derivative():
    d = derivatives_analytic(make_great_circle(), np.linspace(0, 7, 50), 2)
    assert np.allclose(d[2], -d[0], atol=1e-15)


def test_r2_circle_fourth_derivative():
    c = make_r_circle(2)
    s = np.linspace(0, 5, 40)
    d = derivatives_analytic(c, s, 4)
    osc = d[0] - c.e0
    assert np.allclose(d[4], 4 * osc, atol=1e-14)
    assert np.allclose(d[4] + 2 * d[2], 0, atol=1e-14)


def test_order_zero_stack_is_curve():
    c = make_r_circle(3)
    s = np.linspace(0, 1, 5)
    d = derivatives_analytic(c, s, 0)
    assert d.order == 0
    assert np.allclose(d[0], evaluate(c, s))


def test_order_limit():
    # analytic derivatives are exact at any order; the sampled pipeline is capped
    assert derivatives_analytic(make_great_circle(), [0.0], 12).order == 12
    with pytest.raises(DerivativeOrderError):
        derivatives_spectral(sample(make_great_circle(), 32), 9)


def test_spectral_great_circle():
    d = derivatives_spectral(sample(make_great_circle(), 64), 2)
    assert np.max(np.abs(d[2] + d[0])) < 1e-10


def test_spectral_matches_analytic_r3():
    c = make_r_circle(3)
    dc = sample(c, 128)
    ds = derivatives_spectral(dc, 6)
    da = derivatives_analytic(c, dc.s, 6)
    assert np.max(np.abs(ds.values - da.values)) < 1e-8


@pytest.mark.parametrize("curve", [make_r_circle(4), make_two_freq(0.25, 2.25, 0.625), make_r_circle(2, 3)])
def test_spectral_matches_analytic_all_orders(curve):
    P = curve.period()
    N = 4 * int(math.ceil(curve.frequencies.max() * P / (2 * math.pi))) * 4 + 16
    N += N % 2
    dc = sample(curve, N)
    ds = derivatives_spectral(dc, 8)
    da = derivatives_analytic(curve, dc.s, 8)
    assert np.max(np.abs(ds.values - da.values)) < 1e-8


def test_spectral_derivative_of_constant_component():
    rng = np.random.default_rng(3)
    N, L = 64, 2 * math.pi
    t = np.arange(N) * L / N
    f = 3.0 + 0.1 * np.sin(t) + 0.05 * rng.standard_normal() * np.cos(2 * t)
    df = spectral_derivative(f, L, 1)
    assert abs(np.mean(df)) < 1e-12


def test_trig_interpolate_reproduces_band_limited():
    N, L = 32, 3.0
    t = np.arange(N) * L / N
    f = np.cos(2 * math.pi * 3 * t / L) + 0.5 * np.sin(2 * math.pi * 5 * t / L)
    tt = np.linspace(0, L, 17)
    g = np.cos(2 * math.pi * 3 * tt / L) + 0.5 * np.sin(2 * math.pi * 5 * tt / L)
    assert np.allclose(trig_interpolate(f, L, tt), g, atol=1e-13)


def test_discrete_validation():
    X = sample(make_great_circle(), 32).samples
    with pytest.raises(ValueError):
        DiscreteCurve(X[:15], 1.0)
    with pytest.raises(ValueError):
        DiscreteCurve(X[:17], 1.0)
    with pytest.raises(ValueError):
        DiscreteCurve(1.01 * X, 1.0)
    with pytest.raises(ValueError):
        DiscreteCurve(X, 0.0)


def test_reparametrize_fixed_point():
    d = sample(make_r_circle(3), 64)
    out = arclength_reparametrize(d)
    assert np.max(np.abs(out.samples - d.samples)) < 1e-10
    assert abs(out.L - d.L) < 1e-10


def test_reparametrize_speed_two():
    c = make_r_circle(2)
    d0 = sample(c, 64)
    d = DiscreteCurve(d0.samples, d0.L / 2)  # same points, period mislabelled
    out = arclength_reparametrize(d)
    speed = np.linalg.norm(spectral_derivative(out.samples, out.L, 1), axis=1)
    assert np.max(np.abs(speed - 1)) < 1e-6
    assert abs(out.L - d0.L) < 1e-9


def _chord_length(X):
    return np.sum(np.linalg.norm(np.roll(X, -1, axis=0) - X, axis=1))


def test_reparametrize_perturbed_curve():
    N = 128
    t = np.arange(N) * 2 * math.pi / N
    # nonuniform speed along an ellipse-like curve on S^2
    u = t + 0.3 * np.sin(t)
    X = np.c_[np.cos(u), 0.7 * np.sin(u), 0.3 + 0.1 * np.cos(2 * u)]
    d = DiscreteCurve.from_points(X, 2 * math.pi)
    out = arclength_reparametrize(d)
    speed = np.linalg.norm(spectral_derivative(out.samples, out.L, 1), axis=1)
    assert np.max(np.abs(speed - 1)) < 1e-6
    # length oracle: chord length of the trigonometric interpolant at 10x resolution
    fine = trig_interpolate(d.samples, d.L, np.arange(10 * N) * d.L / (10 * N))
    fine /= np.linalg.norm(fine, axis=1, keepdims=True)
    assert abs(out.L - _chord_length(fine)) < 1e-4


def test_reparametrize_rejects_stationary_point():
    N = 32
    t = np.arange(N) * 2 * math.pi / N
    u = t - np.sin(t)  # speed vanishes at t = 0
    X = np.c_[np.cos(u), np.sin(u), np.zeros(N)]
    with pytest.raises(ValueError, match="vanishing tangent"):
        arclength_reparametrize(DiscreteCurve(X, 2 * math.pi))


def test_unit_speed_identities_after_reparametrization():
    N = 256
    t = np.arange(N) * 2 * math.pi / N
    u = t + 0.2 * np.sin(t)
    X = np.c_[np.cos(u), np.sin(u), 0.4 * np.cos(u) ** 2, 0.2 * np.sin(2 * u)]
    out = arclength_reparametrize(DiscreteCurve.from_points(X, 2 * math.pi))
    g = derivatives_spectral(out, 4)
    dot = lambda i, j: np.sum(g[i] * g[j], axis=1)
    assert np.max(np.abs(dot(0, 1))) < 1e-6
    assert np.max(np.abs(dot(2, 0) + 1)) < 1e-6
    assert np.max(np.abs(dot(3, 0))) < 1e-6
    assert np.max(np.abs(dot(1, 2))) < 1e-6
    assert np.max(np.abs(dot(4, 0) - dot(2, 2))) < 1e-6


def test_leibniz_product_matches_analytic():
    s = np.linspace(0, 3, 20)
    f = DerivativeStack(np.array([np.sin(s), np.cos(s), -np.sin(s), -np.cos(s)]))
    g = DerivativeStack(np.array([np.exp(s)] * 4))
    h = f * g  # (sin s e^s)''' = 2 e^s (cos s - sin s)
    assert np.allclose(h[3], 2 * np.exp(s) * (np.cos(s) - np.sin(s)))
    q = g.reciprocal()
    assert np.allclose(q[3], -np.exp(-s))
    r = (g * g).sqrt()
    assert np.allclose(r.values, g.values)


def test_stack_is_read_only():
    st_ = DerivativeStack(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        st_.values[0, 0] = 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=12, max_size=12))
def test_hodge_is_orthogonal_and_alternating(xs):
    a, b, c = (np.array(xs[4 * i: 4 * i + 4])[None, None, :] for i in range(3))
    A, B, C = DerivativeStack(a), DerivativeStack(b), DerivativeStack(c)
    h = triple_hodge(A, B, C)[0][0]
    for v in (a, b, c):
        assert abs(h @ v[0, 0]) < 1e-12
    assert np.allclose(triple_hodge(B, A, C)[0][0], -h, atol=1e-14)
    M = np.stack([a[0, 0], b[0, 0], c[0, 0], h])
    assert abs(np.linalg.det(M) - h @ h) < 1e-10


def test_curve_json_round_trip():
    for c in (make_r_circle(3), make_biharmonic_two_freq(math.sqrt(0.5))):
        back = curve_from_dict(curve_to_dict(c))
        assert np.allclose(evaluate(back, [0.3, 1.2]), evaluate(c, [0.3, 1.2]))
    d = sample(make_r_circle(2), 32)
    back = curve_from_dict(curve_to_dict(d))
    assert np.array_equal(back.samples, d.samples) and back.L == d.L


@pytest.mark.parametrize("bad", [
    [],
    {"type": "ansatz", "terms": []},
    {"type": "ansatz", "terms": [], "e0": [0, 0, 1], "extra": 1},
    {"type": "discrete", "L": 1.0},
    {"type": "spline", "L": 1.0, "samples": []},
    {"type": "ansatz", "terms": [{"a": 1, "e_cos": [1, 0, 0]}], "e0": [0, 0, 0]},
])
def test_curve_json_rejects_malformed(bad):
    with pytest.raises(ValueError):
        curve_from_dict(bad)


def test_period_and_sampling():
    c = make_biharmonic_two_freq(math.sqrt(0.5))  # a = 1/sqrt2, b = sqrt(3/2): ratio sqrt3, irrational
    assert c.period() is None
    with pytest.raises(ValueError):
        sample(c, 64)
    c2 = make_two_freq(0.25, 2.25, 0.625)
    assert abs(c2.period() - 4 * math.pi) < 1e-12
