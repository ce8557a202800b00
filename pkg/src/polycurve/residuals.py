"""r-harmonicity residuals and conservation-law monitors for sphere curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ambient import (
    MAX_DERIVATIVE_ORDER,
    CircleAnsatzCurve,
    DerivativeOrderError,
    DerivativeStack,
    DiscreteCurve,
    curve_stack,
    spectral_stack,
)
from .geometry import (
    UNIT_SPHERE,
    ConstantFrenetCurve,
    SpaceForm,
    check_unit_speed,
    covariant_fields,
    frame_coefficients,
)

RESIDUAL_KINDS = ("intrinsic_r", "extrinsic_ode_r2", "extrinsic_ode_r3", "extrinsic_ode_r4",
                  "geodesic", "extrinsic_poly_r", "euler_lagrange")
SOLUTION_TOL_ANALYTIC = 1e-6
SOLUTION_TOL_SPECTRAL = 1e-5


@dataclass(frozen=True)
class ResidualReport:
    kind: str
    r: int
    s: np.ndarray
    per_sample: np.ndarray
    max_norm: float
    l2_norm: float
    lambda_estimate: Optional[np.ndarray] = None
    vectors: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self, full: bool = True) -> dict:
        out = {"kind": self.kind, "r": self.r, "max_norm": self.max_norm, "l2_norm": self.l2_norm}
        if full:
            out["s"] = self.s.tolist()
            out["per_sample"] = self.per_sample.tolist()
            if self.lambda_estimate is not None:
                out["lambda_estimate"] = np.asarray(self.lambda_estimate).tolist()
        return out


@dataclass(frozen=True)
class ConservationReport:
    law: str
    s: np.ndarray
    values: np.ndarray
    drift: float
    max_abs: float

    def to_dict(self) -> dict:
        return {"law": self.law, "drift": self.drift, "max_abs": self.max_abs,
                "s": self.s.tolist(), "values": self.values.tolist()}


def make_report(kind: str, r: int, s, vectors, lambda_estimate=None) -> ResidualReport:
    vectors = np.asarray(vectors, dtype=float)
    per = np.linalg.norm(vectors, axis=-1) if vectors.ndim > 1 else np.abs(vectors)
    s = np.asarray(s, dtype=float)
    ds = s[1] - s[0] if s.size > 1 else 1.0
    l2 = float(np.sqrt(np.sum(per ** 2) * ds))
    return ResidualReport(kind, r, s, per, float(per.max()), l2, lambda_estimate, vectors)


class _Calculus:
    """Differentiates derived quantities either by the Leibniz rule on
    derivative stacks or, for sampled curves, spectrally as fresh samples."""

    def __init__(self, curve, m: int, s=None, route: Optional[str] = None, check: bool = True):
        self.s, self.gamma = curve_stack(curve, m, s)
        if check:
            check_unit_speed(self.gamma)
        self.discrete = isinstance(curve, DiscreteCurve)
        self.L = curve.L if self.discrete else None
        self.route = route or ("spectral" if self.discrete else "leibniz")
        if self.route == "spectral" and not self.discrete:
            raise ValueError("the spectral route needs a sampled (discrete) curve")

    def g(self, l: int) -> DerivativeStack:
        return self.gamma.d(l)

    def D(self, q: DerivativeStack, k: int) -> np.ndarray:
        """k-th s-derivative samples of the quantity q."""
        if self.route == "spectral":
            return spectral_stack(q[0], self.L, k)[k]
        return q[k]

    def stack(self, q: DerivativeStack, k: int) -> DerivativeStack:
        if self.route == "spectral":
            return spectral_stack(q[0], self.L, k)
        return q.truncate(k)


def _require_budget(order: int) -> None:
    if order > MAX_DERIVATIVE_ORDER:
        raise DerivativeOrderError(f"needs derivatives up to order {order} > {MAX_DERIVATIVE_ORDER}")


def tension_from_fields(fields, r: int, K: float = 1.0) -> np.ndarray:
    """tau_r from samples of nabla_T^l T, l = 0..2r-1 (T = fields[0])."""
    T = fields[0]
    dot = lambda x, y: np.sum(x * y, axis=-1)[..., None]
    out = np.array(fields[2 * r - 1], dtype=float)
    for l in range(r - 1):
        hi = fields[2 * r - 3 - l]
        lo = fields[l]
        out = out + K * (-1) ** l * (dot(T, lo) * hi - dot(T, hi) * lo)
    return out


def _circle_fields(curve: CircleAnsatzCurve, s, n_fields: int):
    """nabla_T^l T for a single-frequency circle from the closed recursion:
    even l = 2j: (-a^2(1-alpha^2))^j gamma', odd l = 2j+1: same factor times nabla_T T."""
    if len(curve.terms) != 1:
        raise ValueError("closed recursion applies to single-frequency circles only")
    t = curve.terms[0]
    a2, al2 = t.a ** 2, t.alpha2
    g = curve_stack(curve, 2, s)[1]
    T = g[1]
    N1 = g[2] + (T * T).sum(axis=-1)[:, None] * g[0]
    q = -a2 * (1.0 - al2)
    return [q ** (l // 2) * (T if l % 2 == 0 else N1) for l in range(n_fields)]


def residual_intrinsic(curve, r: int, spaceform: SpaceForm = UNIT_SPHERE, s=None,
                       method: str = "auto") -> ResidualReport:
    """Tension field tau_r evaluated sample-wise.

    ``method``: "covariant" differentiates numerically (r <= 4), "recursion"
    uses the exact single-circle recursion (any r), "auto" picks recursion
    only when the derivative budget is exceeded.
    """
    if r < 2:
        raise ValueError("r must be >= 2; use residual_geodesic for r = 1")
    if isinstance(curve, ConstantFrenetCurve):
        K = curve.K
        fields = [np.array([frame_coefficients(curve.k, curve.tau, l)]) for l in range(2 * r)]
        ss = np.zeros(1) if s is None else np.atleast_1d(np.asarray(s, float))
        vec = np.repeat(tension_from_fields(fields, r, K), ss.size, axis=0)
        return make_report("intrinsic_r", r, ss, vec)
    if spaceform.K != 1.0:
        raise ValueError("embedded curves live on the unit sphere; use ConstantFrenetCurve for K != 1")
    if method == "auto":
        method = "recursion" if (2 * r > MAX_DERIVATIVE_ORDER and isinstance(curve, CircleAnsatzCurve)) else "covariant"
    if method == "recursion":
        if not isinstance(curve, CircleAnsatzCurve):
            raise ValueError("the recursion route needs a CircleAnsatzCurve")
        if s is None:
            s = curve.default_grid()
        g = curve_stack(curve, 1, s)[1]
        check_unit_speed(g)
        fields = _circle_fields(curve, s, 2 * r)
        return make_report("intrinsic_r", r, s, tension_from_fields(fields, r, 1.0))
    _require_budget(2 * r)
    s, gamma = curve_stack(curve, 2 * r, s)
    check_unit_speed(gamma)
    fields = [f[0] for f in covariant_fields(gamma, 2 * r - 1)]
    return make_report("intrinsic_r", r, s, tension_from_fields(fields, r, 1.0))


def residual_geodesic(curve, s=None) -> ResidualReport:
    s, g = curve_stack(curve, 2, s)
    vec = g[2] + np.sum(g[1] ** 2, axis=-1)[:, None] * g[0]
    return make_report("geodesic", 1, s, vec)


def residual_biharmonic_ode(curve, s=None, route=None) -> ResidualReport:
    """gamma'''' + 2 gamma'' + gamma (2 - |gamma''|^2)."""
    c = _Calculus(curve, 4, s, route)
    g = c.gamma
    g2 = np.sum(g[2] ** 2, axis=-1)
    lam = 2.0 - g2
    vec = g[4] + 2 * g[2] + lam[:, None] * g[0]
    return make_report("extrinsic_ode_r2", 2, c.s, vec, lam)


def residual_triharmonic_ode(curve, s=None, route=None) -> ResidualReport:
    c = _Calculus(curve, 6, s, route)
    g = c.gamma
    g2 = c.g(2).norm2()
    g2_1, g2_2 = c.D(g2, 1), c.D(g2, 2)
    g3sq = np.sum(g[3] ** 2, axis=-1)
    bracket = 4.5 * g2_2 - g3sq - 3.0 + 4.0 * g2[0]
    col = lambda x: x[:, None]
    vec = (g[6] + 2 * g[4] + 3 * g[2] - 2 * g[2] * col(g2[0]) - 2 * g[1] * col(g2_1)
           - g[0] * col(bracket))
    return make_report("extrinsic_ode_r3", 3, c.s, vec, bracket)


def residual_fourharmonic_ode(curve, s=None, route=None) -> ResidualReport:
    """The 8th-order 4-harmonic sphere equation with its printed
    multiplier-elimination block."""
    c = _Calculus(curve, 8, s, route)
    g = c.gamma
    G = c.g
    col = lambda x: x[:, None]
    dot = lambda x, y: np.sum(x * y, axis=-1)
    g2 = G(2).norm2()
    p41 = G(4).dot(G(1))
    p42 = G(4).dot(G(2))
    A = c.D(G(1) * p41, 2)        # (gamma' <g4, g'>)''
    B = c.D(g2 * g, 4)           # (|g''|^2 gamma)''''
    C = c.D(G(2) * p41, 1)        # (gamma'' <g4, g'>)'
    X = (g[8] + 2 * g[6] + 3 * g[4] - g[4] * col(g2[0]) - 6 * g[2] * col(g2[0]) + 4 * g[2]
         - 2 * g[2] * col(p42[0]) + 5 * A - B - 6 * g[1] * col(c.D(g2, 1))
         - 2 * g[1] * col(c.D(p42, 1)) - 5 * C)
    g0 = g[0]
    br1 = (dot(g[8], g0) + 2 * dot(g[6], g0) + 3 * dot(g[4], g0) - dot(g[4], g0) * g2[0]
           + 6 * g2[0] - 4 + 2 * p42[0])
    br2 = 5 * dot(g0, A) - dot(g0, B) - 5 * dot(g0, C)
    vec = X - g0 * col(br1) - g0 * col(br2)
    return make_report("extrinsic_ode_r4", 4, c.s, vec, -(br1 + br2))


def residual_extrinsic(curve, r: int, s=None) -> ResidualReport:
    """gamma^(2r) - gamma <gamma^(2r), gamma>."""
    if r < 1:
        raise ValueError("r must be >= 1")
    _require_budget(2 * r)
    c = _Calculus(curve, 2 * r, s)
    g = c.gamma
    proj = np.sum(g[2 * r] * g[0], axis=-1)
    vec = g[2 * r] - proj[:, None] * g[0]
    return make_report("extrinsic_poly_r", r, c.s, vec, -proj)


def residual_ode(curve, r: int, s=None, route=None) -> ResidualReport:
    """Dedicated printed sphere equation for r in {2, 3, 4}."""
    funcs = {2: residual_biharmonic_ode, 3: residual_triharmonic_ode, 4: residual_fourharmonic_ode}
    if r not in funcs:
        raise ValueError(f"no dedicated sphere ODE for r = {r}")
    return funcs[r](curve, s, route)


# ---------------------------------------------------------------------------
# Conservation laws


def _conservation(law: str, s, values) -> ConservationReport:
    values = np.asarray(values, dtype=float)
    return ConservationReport(law, np.asarray(s), values, float(values.max() - values.min()),
                              float(np.max(np.abs(values))))


def _norms(curve, s, route, extra: int, top: int = 3):
    c = _Calculus(curve, top + 1 + extra, s, route)
    fields = covariant_fields(c.gamma, top)
    return c, [None] + [fields[l].norm2() for l in range(1, top + 1)]


def conservation_triharmonic(curve, s=None, route=None):
    """The two integrated triharmonic conservation laws (c1, c2)."""
    c, n = _norms(curve, s, route, extra=2)
    c1 = c.D(n[1], 2) - n[2][0]
    c2 = 0.5 * c.D(n[2], 2) - 1.5 * n[3][0] + 0.5 * n[2][0] - n[1][0] ** 2
    return _conservation("tri_c1", c.s, c1), _conservation("tri_c2", c.s, c2)


def conservation_triharmonic_first_law(curve, s=None, route=None) -> ConservationReport:
    """Differential form (|nabla T|^2)''' - (|nabla^2 T|^2)', zero on triharmonic curves
    in any target."""
    c, n = _norms(curve, s, route, extra=3, top=2)
    return _conservation("tri_first", c.s, c.D(n[1], 3) - c.D(n[2], 1))


def conservation_fourharmonic(curve, s=None, route=None) -> ConservationReport:
    """F = (|nabla T|^2)'''' - 2 (|nabla^2 T|^2)'' + |nabla^3 T|^2; F' is the 4-harmonic law."""
    c, n = _norms(curve, s, route, extra=4)
    F = c.D(n[1], 4) - 2 * c.D(n[2], 2) + n[3][0]
    return _conservation("four_law", c.s, F)


def conjecture_probe(alpha: float, beta: float, s_range=(1.0, 10.0), n: int = 200) -> ConservationReport:
    """(k1')^2 + 2 k1 k1'' - k1^4 - k1^2 k2^2 for k1 = alpha/s, k2 = beta/s."""
    lo, hi = float(s_range[0]), float(s_range[1])
    if not lo < hi:
        raise ValueError("s_range must be an increasing interval")
    if lo <= 0.0 <= hi:
        raise ValueError("s_range must not contain s = 0")
    s = np.linspace(lo, hi, n)
    k1, k2 = alpha / s, beta / s
    dk1 = -alpha / s ** 2
    ddk1 = 2 * alpha / s ** 3
    vals = dk1 ** 2 + 2 * k1 * ddk1 - k1 ** 4 - k1 ** 2 * k2 ** 2
    return _conservation("conjecture", s, vals)
