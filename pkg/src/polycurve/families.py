"""Explicit solution families, algebraic critical-point systems and the
curvature-torsion relation for constant-curvature r-harmonic curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from .ambient import CircleAnsatzCurve, CircleTerm

TOL_ROOT = 1e-9
TOL_DEDUP = 1e-6
TOL_CLASS = 1e-6


# ---------------------------------------------------------------------------
# Constructions


def _axes(n: int) -> np.ndarray:
    return np.eye(n + 1)


def make_great_circle(n: int = 2) -> CircleAnsatzCurve:
    e = _axes(n)
    return CircleAnsatzCurve((CircleTerm(1.0, e[0], e[1]),), np.zeros(n + 1))


def make_r_circle(r: int, n: int = 2) -> CircleAnsatzCurve:
    """cos(sqrt(r) s) e1 + sin(sqrt(r) s) e2 + e3 with |e1|^2 = |e2|^2 = 1/r."""
    if r < 2:
        raise ValueError(f"r must be >= 2, got {r}")
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    e = _axes(n)
    amp = 1.0 / math.sqrt(r)
    return CircleAnsatzCurve((CircleTerm(math.sqrt(r), amp * e[0], amp * e[1]),),
                             math.sqrt((r - 1) / r) * e[2])


def make_circle(a2: float, n: int = 2) -> CircleAnsatzCurve:
    """Unit-speed small circle with frequency a = sqrt(a2), |e1|^2 = 1/a2 (a2 >= 1)."""
    if a2 < 1.0:
        raise ValueError(f"a unit-speed circle on the unit sphere needs a^2 >= 1, got {a2}")
    e = _axes(n)
    amp = 1.0 / math.sqrt(a2)
    return CircleAnsatzCurve((CircleTerm(math.sqrt(a2), amp * e[0], amp * e[1]),),
                             math.sqrt(max(1.0 - 1.0 / a2, 0.0)) * e[2])


def make_two_freq(a2: float, b2: float, alpha1_sq: float, n: int = 3) -> CircleAnsatzCurve:
    """cos(a s) e1 + sin(a s) e2 + cos(b s) e3 + sin(b s) e4, |e1|^2 = alpha1_sq."""
    if n < 3:
        raise ValueError("two-frequency curves need n >= 3")
    e = _axes(n)
    p, q = alpha1_sq, 1.0 - alpha1_sq
    return CircleAnsatzCurve(
        (CircleTerm(math.sqrt(a2), math.sqrt(p) * e[0], math.sqrt(p) * e[1]),
         CircleTerm(math.sqrt(b2), math.sqrt(q) * e[2], math.sqrt(q) * e[3])),
        np.zeros(n + 1))


def make_biharmonic_two_freq(a: float, n: int = 3) -> CircleAnsatzCurve:
    """Two-frequency proper biharmonic curve with b^2 = 2 - a^2 and all |e_i|^2 = 1/2.

    For a^2 = 1 both frequencies coincide and the result is the great circle
    they merge into; its ``is_geodesic`` flag is set.
    """
    a2 = float(a) ** 2
    if not 0.0 < a2 < 2.0:
        raise ValueError(f"need 0 < a^2 < 2, got {a2}")
    if n < 3:
        raise ValueError("two-frequency curves need n >= 3")
    if abs(a2 - 1.0) <= TOL_ROOT:
        e = _axes(n)
        h = math.sqrt(0.5)
        return CircleAnsatzCurve((CircleTerm(1.0, h * (e[0] + e[2]), h * (e[1] + e[3])),), np.zeros(n + 1))
    return make_two_freq(a2, 2.0 - a2, 0.5, n)


def triharmonic_two_freq_partner(a2: float):
    """Partner b^2 and alpha_1^2 on the non-geodesic branch
    a^4 + 3 a^2 b^2 + b^4 - 4 (a^2 + b^2) + 3 = 0 of the two-frequency
    triharmonic system, or None when no admissible partner exists."""
    # quadratic in B: B^2 + (3A - 4) B + (A^2 - 4A + 3) = 0
    A = a2
    bq, cq = 3 * A - 4, A * A - 4 * A + 3
    out = []
    for B in _quadratic_roots(1.0, bq, cq):
        if B <= 0 or abs(B - A) < 1e-12:
            continue
        p = (1 - B) / (A - B)
        if 0.0 < p < 1.0:
            out.append((B, p))
    return out[0] if out else None


def make_triharmonic_two_freq(a2: float, n: int = 3) -> CircleAnsatzCurve:
    partner = triharmonic_two_freq_partner(a2)
    if partner is None:
        raise ValueError(f"no admissible two-frequency partner for a^2 = {a2}")
    B, p = partner
    return make_two_freq(a2, B, p, n)


# ---------------------------------------------------------------------------
# Curvature-torsion relation


@dataclass(frozen=True)
class ClassificationCheck:
    K: float
    r: int
    k: float
    tau: float
    lhs: float
    rhs: float
    satisfied: bool


def check_relation(K: float, r: int, k: float, tau: float, tol: float = TOL_CLASS) -> ClassificationCheck:
    """Compare (k^2 + tau^2)^2 with K ((r - 1) k^2 + tau^2)."""
    lhs = (k * k + tau * tau) ** 2
    rhs = K * ((r - 1) * k * k + tau * tau)
    ok = abs(lhs - rhs) <= tol * max(1.0, abs(lhs), abs(rhs))
    return ClassificationCheck(K, r, k, tau, lhs, rhs, bool(ok))


def _quadratic_roots(a: float, b: float, c: float) -> List[float]:
    """Real roots of a x^2 + b x + c, avoiding cancellation."""
    if a == 0:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        if disc > -1e-14 * max(b * b, abs(4 * a * c), 1e-300):
            disc = 0.0
        else:
            return []
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    if q == 0:
        return [0.0, 0.0]
    return sorted([q / a, c / q])


def solve_relation_for_k(K: float, r: int, tau: float, tol: float = TOL_ROOT) -> List[float]:
    """Nonnegative roots k^2 of (k^2 + tau^2)^2 = K ((r - 1) k^2 + tau^2)."""
    t2 = tau * tau
    roots = _quadratic_roots(1.0, 2 * t2 - K * (r - 1), t2 * t2 - K * t2)
    return [max(x, 0.0) for x in roots if x >= -tol]


# ---------------------------------------------------------------------------
# Single-frequency polynomials


@dataclass(frozen=True)
class Root:
    value: float
    multiplicity: int
    is_geodesic: bool


KNOWN_POLYNOMIALS = {
    2: (1, -2),            # a^2 - 2
    3: (1, -4, 3),         # a^4 - 4 a^2 + 3
    4: (1, -6, 9, -4),     # a^6 - 6 a^4 + 9 a^2 - 4 = (a^2 - 4)(a^2 - 1)^2
}


def single_freq_polynomial(r: int) -> tuple:
    """Integer coefficients (highest first) in x = a^2 of (x - 1)^(r-2) (x - r)."""
    if r < 2:
        raise ValueError("r must be >= 2")
    coeffs = [1, -r]
    for _ in range(r - 2):
        coeffs = [c1 - c0 for c0, c1 in zip([0] + coeffs, coeffs + [0])]
    return tuple(coeffs)


def _divisors(n: int) -> List[int]:
    n = abs(n)
    return [d for d in range(1, n + 1) if n % d == 0]


def _deflate(coeffs: List[Fraction], root: Fraction):
    out, acc = [], Fraction(0)
    for c in coeffs:
        acc = acc * root + c
        out.append(acc)
    return out[:-1], out[-1]


def integer_poly_real_roots(coeffs: Sequence[int]) -> List[tuple]:
    """Real roots with multiplicity of an integer polynomial (highest first).

    Rational roots are peeled off exactly; a remaining quadratic is solved in
    closed form and anything of higher degree falls back to numpy.roots.
    """
    poly = [Fraction(int(c)) for c in coeffs]
    found: Dict[Fraction, int] = {}
    while len(poly) > 1 and poly[-1] == 0:
        poly.pop()
        _record(found, Fraction(0))
    changed = True
    while len(poly) > 3 and changed:
        changed = False
        lead, const = int(poly[0]), int(poly[-1])
        cands = {Fraction(sgn * p, q) for p in _divisors(const) for q in _divisors(lead) for sgn in (1, -1)}
        for c in sorted(cands):
            rest, rem = _deflate(poly, c)
            if rem == 0:
                poly = rest
                _record(found, c)
                changed = True
                break
    roots = [(float(v), m) for v, m in found.items()]
    if len(poly) == 3:
        rs = _quadratic_roots(float(poly[0]), float(poly[1]), float(poly[2]))
        disc = poly[1] ** 2 - 4 * poly[0] * poly[2]
        if disc == 0:
            roots.append((float(-poly[1] / (2 * poly[0])), 2))
        else:
            roots += [(x, 1) for x in rs]
    elif len(poly) == 2:
        roots.append((float(-poly[1] / poly[0]), 1))
    elif len(poly) > 3:
        for z in np.roots([float(c) for c in poly]):
            if abs(z.imag) < 1e-12:
                roots.append((float(z.real), 1))
    merged: Dict[float, int] = {}
    for v, m in roots:
        key = next((k for k in merged if abs(k - v) <= TOL_ROOT), v)
        merged[key] = merged.get(key, 0) + m
    return sorted(merged.items())


def _record(found, value):
    found[value] = found.get(value, 0) + 1
    return found


def solve_single_freq_polynomial(r: int) -> List[Root]:
    """Roots a^2 >= 0 (with multiplicity) of the single-circle critical-point equation."""
    coeffs = KNOWN_POLYNOMIALS.get(r) or single_freq_polynomial(r)
    return [Root(v, m, abs(v - 1.0) <= TOL_ROOT)
            for v, m in integer_poly_real_roots(coeffs) if v >= -TOL_ROOT]


# ---------------------------------------------------------------------------
# Algebraic systems


@dataclass(frozen=True)
class AlgebraicSolution:
    unknowns: Dict[str, float]
    residual: float
    is_geodesic: bool

    def to_dict(self) -> dict:
        return {"unknowns": dict(self.unknowns), "residual": self.residual, "is_geodesic": self.is_geodesic}


@dataclass(frozen=True)
class NonConvergence:
    seed: tuple
    reason: str
    residual: float


@dataclass
class SweepResult:
    solutions: List[AlgebraicSolution]
    failures: List[NonConvergence] = field(default_factory=list)

    @property
    def proper(self) -> List[AlgebraicSolution]:
        return [s for s in self.solutions if not s.is_geodesic]

    def __iter__(self):
        return iter(self.solutions)

    def __len__(self):
        return len(self.solutions)


TRI_UNKNOWNS = ("a2", "b2", "alpha1_sq", "alpha3_sq", "lam")


def triharmonic_two_freq_system(x: np.ndarray) -> np.ndarray:
    """Residuals of the two-frequency triharmonic system; x[..., :] = (A, B, p, q, lam)."""
    A, B, p, q, lam = np.moveaxis(np.asarray(x, float), -1, 0)
    return np.stack([
        A ** 3 * (1 - 2 * p) - 2 * A ** 2 + 3 * A - 2 * A * B ** 2 * q + lam,
        B ** 3 * (1 - 2 * q) - 2 * B ** 2 + 3 * B - 2 * B * A ** 2 * p + lam,
        A * p + B * q - 1,
        p + q - 1,
    ], axis=-1)


def _tri_jacobian(x: np.ndarray) -> np.ndarray:
    A, B, p, q, lam = np.moveaxis(x, -1, 0)
    one, zero = np.ones_like(A), np.zeros_like(A)
    rows = [
        [3 * A ** 2 * (1 - 2 * p) - 4 * A + 3 - 2 * B ** 2 * q, -4 * A * B * q, -2 * A ** 3, -2 * A * B ** 2, one],
        [-4 * A * B * p, 3 * B ** 2 * (1 - 2 * q) - 4 * B + 3 - 2 * A ** 2 * p, -2 * B * A ** 2, -2 * B ** 3, one],
        [p, q, A, B, zero],
        [zero, zero, one, one, zero],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def damped_newton(F, J, x0: np.ndarray, tol: float = 1e-12, max_iter: int = 200, max_halvings: int = 40):
    """Batched damped Gauss-Newton with minimum-norm steps (works for
    underdetermined systems). Returns (x, residual_inf, converged, reason)."""
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    res = np.max(np.abs(F(x)), axis=-1)
    done = res <= tol
    stalled = np.zeros(n, bool)
    for _ in range(max_iter):
        active = ~(done | stalled)
        if not active.any():
            break
        xa = x[active]
        Fa = F(xa)
        step = -_min_norm_step(_safe(J(xa)), Fa)
        norm0 = np.linalg.norm(Fa, axis=-1)
        t = np.ones(xa.shape[0])
        accepted = np.zeros(xa.shape[0], bool)
        trial = xa.copy()
        for _ in range(max_halvings + 1):
            pending = ~accepted
            if not pending.any():
                break
            cand = xa[pending] + t[pending, None] * step[pending]
            better = np.linalg.norm(F(cand), axis=-1) < norm0[pending]
            better &= np.all(np.isfinite(cand), axis=-1)
            idx = np.flatnonzero(pending)[better]
            trial[idx] = cand[better]
            accepted[idx] = True
            t[pending] *= 0.5
        xa = np.where(accepted[:, None], trial, xa)
        x[active] = xa
        ra = np.max(np.abs(F(xa)), axis=-1)
        res[active] = ra
        ids = np.flatnonzero(active)
        done[ids] = ra <= tol
        stalled[ids] = ~accepted & ~(ra <= tol)
    reason = np.where(done, "converged", np.where(stalled, "line search stalled", "iteration limit"))
    return x, res, done, reason


def _min_norm_step(Jm: np.ndarray, Fv: np.ndarray) -> np.ndarray:
    # J^T (J J^T)^{-1} F with a tiny Tikhonov shift for rank-deficient rows
    JJt = np.einsum("nij,nkj->nik", Jm, Jm)
    shift = 1e-14 * (1.0 + np.einsum("nii->n", JJt))
    JJt = JJt + shift[:, None, None] * np.eye(JJt.shape[-1])
    y = np.linalg.solve(JJt, Fv[..., None])[..., 0]
    return np.einsum("nji,nj->ni", Jm, y)


def _safe(M: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(M), M, 0.0)


def default_triharmonic_seeds(n_freq: int = 25, n_simplex: int = 16) -> np.ndarray:
    """n_freq^2 * n_simplex seeds over (0, 6]^2 x {p + q = 1}; lambda from the first equation."""
    f = np.linspace(6.0 / n_freq, 6.0, n_freq)
    p = np.linspace(0.0, 1.0, n_simplex)
    A, B, P = np.meshgrid(f, f, p, indexing="ij")
    A, B, P = A.ravel(), B.ravel(), P.ravel()
    Q = 1.0 - P
    lam = -(A ** 3 * (1 - 2 * P) - 2 * A ** 2 + 3 * A - 2 * A * B ** 2 * Q)
    return np.stack([A, B, P, Q, lam], axis=-1)


def _feasible(x: np.ndarray, tol: float = TOL_ROOT) -> np.ndarray:
    A, B, p, q, _ = np.moveaxis(x, -1, 0)
    return (A > tol) & (B > tol) & (p >= -tol) & (q >= -tol)


def dedup(rows: np.ndarray, tol: float = TOL_DEDUP) -> np.ndarray:
    """Deterministic max-norm deduplication after lexicographic sorting."""
    if len(rows) == 0:
        return rows
    order = np.lexsort(rows.T[::-1])
    rows = rows[order]
    kept: List[np.ndarray] = []
    for r in rows:
        if not any(np.max(np.abs(r - k)) <= tol for k in kept[-64:]):
            kept.append(r)
    return np.array(kept)


def solve_triharmonic_two_freq(seeds=None, tol: float = 1e-12) -> SweepResult:
    """Damped Newton from every seed on the two-frequency triharmonic system.

    Seeds are rows (a^2, b^2, alpha_1^2, alpha_3^2, lambda). Converged,
    feasible roots are deduplicated and flagged geodesic when a^2 = b^2 = 1.
    """
    seeds = default_triharmonic_seeds() if seeds is None else np.atleast_2d(np.asarray(seeds, float))
    if not np.all(np.isfinite(seeds)):
        raise ValueError("seeds must be finite")
    x, res, ok, reason = damped_newton(triharmonic_two_freq_system, _tri_jacobian, seeds, tol=tol)
    feas = _feasible(x)
    failures = [NonConvergence(tuple(seeds[i]), str(reason[i]) if not ok[i] else "infeasible root", float(res[i]))
                for i in np.flatnonzero(~(ok & feas))]
    good = x[ok & feas]
    good[:, 2:4] = np.clip(good[:, 2:4], 0.0, None)
    # the geodesic root a^2 = b^2 = 1 is singular: a residual of tol only
    # pins it down to a distance of order sqrt(tol)
    geo_tol = max(TOL_ROOT, 10.0 * math.sqrt(tol))
    sols = []
    for row in dedup(good):
        resid = float(np.max(np.abs(triharmonic_two_freq_system(row))))
        geo = bool(abs(row[0] - 1) <= geo_tol and abs(row[1] - 1) <= geo_tol)
        # a vanishing amplitude leaves a single circle whose own frequency decides
        if row[2] <= TOL_ROOT:
            geo = abs(row[1] - 1) <= geo_tol
        elif row[3] <= TOL_ROOT:
            geo = abs(row[0] - 1) <= geo_tol
        sols.append(AlgebraicSolution(dict(zip(TRI_UNKNOWNS, map(float, row))), resid, geo))
    return SweepResult(sols, failures)


def solve_biharmonic_three_freq(eps=(0.0, 0.0, 0.0)) -> AlgebraicSolution:
    """Solve a^2 + b^2 = 2 + e1, a^2 + c^2 = 2 + e2, b^2 + c^2 = 2 + e3."""
    r1, r2, r3 = (2.0 + float(e) for e in eps)
    M = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    rhs = np.array([r1, r2, r3])
    A, B, C = 0.5 * (r1 + r2 - r3), 0.5 * (r1 - r2 + r3), 0.5 * (-r1 + r2 + r3)
    resid = float(np.max(np.abs(M @ np.array([A, B, C]) - rhs)))
    geo = all(abs(v - 1.0) <= TOL_ROOT for v in (A, B, C))
    return AlgebraicSolution({"a2": A, "b2": B, "c2": C}, resid, geo)
