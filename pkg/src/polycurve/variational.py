"""r-energies of sphere curves, the reduced one-parameter Lagrangian of the
circle ansatz, projected gradient flows and a mechanized Euler-Lagrange
operator for Lagrangians built from inner products of derivatives."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ambient import (
    MAX_DERIVATIVE_ORDER,
    CircleAnsatzCurve,
    CircleTerm,
    DerivativeOrderError,
    DerivativeStack,
    DiscreteCurve,
    arclength_reparametrize,
    curve_stack,
    sample,
    spectral_derivative,
    spectral_stack,
)
from .families import integer_poly_real_roots
from .geometry import check_unit_speed, covariant_fields
from .residuals import ResidualReport, _Calculus, make_report

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Energies


def _circle_density(curve: CircleAnsatzCurve, r: int) -> float:
    t = curve.terms[0]
    a2, al2 = t.a ** 2, t.alpha2
    return a2 ** r * al2 * (1.0 - al2) ** (r - 1)


def _invariant_density(X: np.ndarray, L: float, r: int) -> Tuple[np.ndarray, np.ndarray]:
    """|nabla^{r-1}_T T|^2 w.r.t. arclength and the speed, for samples of any
    parametrization. Leading axes of X are batch axes; axis -2 runs along the curve."""
    Xs = np.moveaxis(X, -2, 0)
    dX = spectral_derivative(Xs, L, 1)
    speed = np.linalg.norm(dX, axis=-1)
    T = dX / speed[..., None]
    Y = T
    for _ in range(r - 1):
        dY = spectral_derivative(Y, L, 1) / speed[..., None]
        Y = dY + np.sum(Y * T, axis=-1)[..., None] * Xs
    dens = np.sum(Y * Y, axis=-1)
    return np.moveaxis(dens, 0, -1), np.moveaxis(speed, 0, -1)


def _parametric_density(gamma: DerivativeStack, r: int) -> np.ndarray:
    fields = covariant_fields(gamma, r - 1)
    return np.sum(fields[r - 1][0] ** 2, axis=-1)


def discrete_energy(curve, r: int, interval_length: Optional[float] = None,
                    parametrization: str = "arclength", method: str = "auto") -> float:
    """Quadrature of |nabla_T^{r-1} T|^2 over one period.

    ``parametrization="arclength"`` measures the energy of the geometric
    curve (invariant under reparametrization); ``"given"`` uses T = gamma'
    for the stored parameter. Both agree on unit-speed curves. For an
    analytic circle ``interval_length`` rescales the per-length density
    (default: one period); ``method="recursion"`` uses the closed circle
    recursion and supports any r.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if isinstance(curve, CircleAnsatzCurve):
        P = curve.period()
        length = interval_length if interval_length is not None else P
        if length is None:
            raise ValueError("frequencies are not rationally related; pass interval_length")
        if method == "recursion" or (method == "auto" and r + 1 > MAX_DERIVATIVE_ORDER):
            if len(curve.terms) != 1:
                raise ValueError("the recursion applies to single-frequency circles")
            return length * _circle_density(curve, r)
        if P is None:
            raise ValueError("energy density average needs a closed curve")
        s = np.arange(64) * (P / 64)
        _, gamma = curve_stack(curve, r, s)
        if parametrization == "arclength":
            check_unit_speed(gamma)
        return float(length * np.mean(_parametric_density(gamma, r)))
    if 2 * r > MAX_DERIVATIVE_ORDER:
        raise DerivativeOrderError(f"discrete curves support r <= {MAX_DERIVATIVE_ORDER // 2}")
    length = curve.L if interval_length is None else interval_length
    if parametrization == "arclength":
        dens, speed = _invariant_density(curve.samples, curve.L, r)
        return float(np.mean(dens * speed) * length)
    gamma = spectral_stack(curve.samples, curve.L, r)
    return float(np.mean(_parametric_density(gamma, r)) * length)


def _batched_energy(X: np.ndarray, L: float, r: int) -> np.ndarray:
    Xn = X / np.linalg.norm(X, axis=-1, keepdims=True)
    dens, speed = _invariant_density(Xn, L, r)
    return np.mean(dens * speed, axis=-1) * L


def energy_gradient_fd(curve: DiscreteCurve, r: int, h: float = 1e-6, batch: int = 512) -> np.ndarray:
    """Central-difference gradient of the (radially projected) discrete
    energy in sample coordinates, projected onto the sphere's tangent spaces."""
    X = curve.samples
    n = X.size
    flat = X.ravel()
    grad = np.empty(n)
    for start in range(0, n, batch):
        idx = np.arange(start, min(start + batch, n))
        P = np.repeat(flat[None, :], 2 * idx.size, axis=0)
        P[np.arange(idx.size), idx] += h
        P[idx.size + np.arange(idx.size), idx] -= h
        E = _batched_energy(P.reshape(-1, *X.shape), curve.L, r)
        grad[idx] = (E[: idx.size] - E[idx.size:]) / (2 * h)
    G = grad.reshape(X.shape)
    return G - np.sum(G * X, axis=1, keepdims=True) * X


# ---------------------------------------------------------------------------
# Reduced Lagrangian of the single-circle ansatz


@dataclass(frozen=True)
class ReducedLagrangian:
    """alpha -> a^{2r} alpha^2 (1 - alpha^2)^{r-1}; constrained mode ties a by a^2 alpha^2 = 1."""

    r: int
    constrained: bool = False

    def __call__(self, alpha, a=None):
        alpha = np.asarray(alpha, dtype=float)
        if self.constrained:
            a2 = 1.0 / alpha ** 2
        else:
            if a is None:
                raise ValueError("unconstrained mode needs the frequency a")
            a2 = np.asarray(a, dtype=float) ** 2
        return a2 ** self.r * alpha ** 2 * (1.0 - alpha ** 2) ** (self.r - 1)

    def d_alpha(self, alpha, a):
        """Derivative in alpha at fixed a."""
        alpha = np.asarray(alpha, dtype=float)
        a2 = np.asarray(a, dtype=float) ** 2
        return 2 * a2 ** self.r * alpha * (1 - alpha ** 2) ** (self.r - 2) * (1 - self.r * alpha ** 2)


def reduced_lagrangian_critical_points(r: int) -> List[float]:
    """Critical alpha^2 in (0, 1] of the reduced Lagrangian at fixed a."""
    if r < 2:
        raise ValueError("r must be >= 2")
    # (1 - x)^{r-2} (1 - r x) in integer coefficients, highest power first
    coeffs = [-r, 1]
    for _ in range(r - 2):
        coeffs = [c1 - c0 for c0, c1 in zip(coeffs + [0], [0] + coeffs)]
    roots = integer_poly_real_roots(coeffs)
    return sorted((v for v, _ in roots if 0.0 < v <= 1.0 + 1e-12), reverse=True)


def second_variation_closed_form(r: int, interval_length: float = 1.0) -> float:
    alpha2 = 1.0 / r
    return -4.0 * interval_length * r ** r * (1.0 - alpha2) ** (r - 2)


def second_variation_fd(r: int, interval_length: float = 1.0, rel_step: float = 1e-4) -> float:
    """Centered second difference in alpha of |I| L_r(alpha) at a^2 = r."""
    L = ReducedLagrangian(r)
    a = math.sqrt(r)
    al = 1.0 / math.sqrt(r)
    h = rel_step * al
    E = lambda x: interval_length * float(L(x, a))
    return (E(al + h) - 2 * E(al) + E(al - h)) / h ** 2


def second_variation_reduced(r: int, interval_length: float = 1.0) -> float:
    """Second alpha-derivative of the r-energy at the critical circle alpha^2 = 1/r.

    Cross-checked against a finite difference; raises ArithmeticError when
    the two disagree by more than 1 %.
    """
    if r < 2 or interval_length <= 0:
        raise ValueError("need r >= 2 and a positive interval length")
    exact = second_variation_closed_form(r, interval_length)
    fd = second_variation_fd(r, interval_length)
    if abs(fd - exact) > 0.01 * abs(exact):
        raise ArithmeticError(f"finite difference {fd} disagrees with closed form {exact}")
    return exact


# ---------------------------------------------------------------------------
# Gradient flows


class LineSearchStall(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class FlowOptions:
    mode: str = "full"
    tol_flow: float = 1e-6
    max_iters: int = 5000
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    reparam_every: int = 10
    fd_step: float = 1e-6
    initial_step: float = 1.0
    allow_r4: bool = False


@dataclass(frozen=True)
class FlowStep:
    step: int
    energy: float
    constraint_violation: float
    step_size: float
    r_energy: float


@dataclass
class EnergyTrace:
    iterations: List[FlowStep]
    final_curve: object
    status: str
    mode: str
    r: int
    params: Dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_curve: bool = True) -> dict:
        from .ambient import curve_to_dict

        out = {
            "mode": self.mode,
            "r": self.r,
            "status": self.status,
            "params": dict(self.params),
            "iterations": [vars(it) for it in self.iterations],
        }
        if include_curve:
            out["final_curve"] = curve_to_dict(self.final_curve)
        return out


def fit_circle_parameters(curve) -> Tuple[float, float]:
    """(a, alpha) of a single-circle ansatz, read off its samples: |e0| is
    the norm of the mean point and a alpha is the speed."""
    if isinstance(curve, CircleAnsatzCurve):
        if len(curve.terms) != 1:
            raise ValueError("restricted flow needs a single-frequency circle")
        t = curve.terms[0]
        return t.a, math.sqrt(t.alpha2)
    center = curve.samples.mean(axis=0)
    alpha = math.sqrt(max(1.0 - float(center @ center), 0.0))
    speed = float(np.mean(np.linalg.norm(spectral_derivative(curve.samples, curve.L, 1), axis=1)))
    return speed / alpha, alpha


def _circle(a: float, alpha: float, dim: int) -> CircleAnsatzCurve:
    e = np.eye(dim)
    return CircleAnsatzCurve((CircleTerm(a, alpha * e[0], alpha * e[1]),),
                             math.sqrt(max(1.0 - alpha * alpha, 0.0)) * e[2])


def gradient_flow(initial, r: int, options: FlowOptions = FlowOptions(), N: Optional[int] = None) -> EnergyTrace:
    """Projected gradient descent with Armijo backtracking.

    ``mode="full"`` descends the discrete r-energy in all sample coordinates
    (sphere projection each step, arclength reparametrization every
    ``reparam_every`` accepted steps). ``mode="restricted"`` moves only the
    circle parameters (a, alpha) and descends the stationarity functional
    ``0.5 (dE/dalpha / a^{2r})^2 + 0.5 (a^2 alpha^2 - 1)^2``, whose zeros are
    unit-speed critical circles.
    """
    if options.mode == "restricted":
        return _restricted_flow(initial, r, options, N)
    if options.mode != "full":
        raise ValueError(f"unknown flow mode {options.mode!r}")
    if r not in (2, 3) and not (r == 4 and options.allow_r4):
        raise ValueError("full flow supports r in {2, 3} (r = 4 behind allow_r4)")
    if isinstance(initial, CircleAnsatzCurve):
        initial = sample(initial, N or (512 if r == 4 else 128))
    if r == 4 and initial.N < 512:
        raise ValueError("the r = 4 flow needs N >= 512")
    return _full_flow(initial, r, options)


def _armijo(f, x, g, f0, t0, opts, project):
    gg = float(np.sum(g * g))
    t = t0
    for _ in range(opts.max_backtracks):
        trial, viol = project(x - t * g)
        ft = f(trial)
        if np.isfinite(ft) and ft <= f0 - opts.armijo_c * t * gg:
            return trial, ft, t, viol
        t *= opts.backtrack
    return None, f0, 0.0, 0.0


def _full_flow(curve: DiscreteCurve, r: int, opts: FlowOptions) -> EnergyTrace:
    L = curve.L
    energy = lambda X: float(_batched_energy(X[None], L, r)[0])

    def project(X):
        nrm = np.linalg.norm(X, axis=1, keepdims=True)
        return X / nrm, float(np.max(np.abs(nrm - 1.0)))

    X = curve.samples.copy()
    E = energy(X)
    trace = [FlowStep(0, E, 0.0, 0.0, E)]
    t = opts.initial_step
    accepted = 0
    status = "max_iters"
    for it in range(1, opts.max_iters + 1):
        current = DiscreteCurve(X, L)
        g = energy_gradient_fd(current, r, opts.fd_step)
        if np.max(np.abs(g)) <= opts.tol_flow:
            status = "converged"
            break
        Xn, En, step, viol = _armijo(energy, X, g, E, t, opts, project)
        if Xn is None:
            status = "line_search_stall"
            logger.info("line search stalled at iteration %d (E=%g)", it, E)
            break
        X, E = Xn, En
        accepted += 1
        t = min(step / opts.backtrack, 1e6)
        if opts.reparam_every and accepted % opts.reparam_every == 0:
            try:
                rp = arclength_reparametrize(DiscreteCurve(X, L))
                Er = energy(rp.samples)
                if Er <= E:
                    X, E, L = rp.samples.copy(), Er, rp.L
                    energy = lambda Y, L=L: float(_batched_energy(Y[None], L, r)[0])
            except ValueError:
                pass
        trace.append(FlowStep(it, E, viol, step, E))
    return EnergyTrace(trace, DiscreteCurve(X, L), status, "full", r)


def _restricted_energy_density(a: float, alpha2: float, r: int, N: int, dim: int) -> float:
    d = sample(_circle(a, math.sqrt(alpha2), dim), N)
    return discrete_energy(d, r, parametrization="given") / d.L


def _restricted_flow(initial, r: int, opts: FlowOptions, N: Optional[int]) -> EnergyTrace:
    # state (a, alpha^2); the energy is differentiated in alpha^2, which
    # keeps the degenerate point-curve alpha = 0 from being stationary
    if isinstance(initial, DiscreteCurve):
        N = N or initial.N
    N = N or 128
    dim = initial.dim
    a0, al0 = fit_circle_parameters(initial)
    h_x = 1e-5
    lo, hi = 1e-3, 1.0 - 2 * h_x
    max_move = 0.05

    def parts(x):
        a, x2 = x
        dE = (_restricted_energy_density(a, x2 + h_x, r, N, dim)
              - _restricted_energy_density(a, x2 - h_x, r, N, dim)) / (2 * h_x)
        return dE / a ** (2 * r), a * a * x2 - 1.0

    def objective(x):
        if not (lo <= x[1] <= hi and x[0] > 0.0):
            return np.inf
        g, c = parts(x)
        return 0.5 * g * g + 0.5 * c * c

    def grad(x):
        h = 1e-6
        out = np.zeros(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out[i] = (objective(x + e) - objective(x - e)) / (2 * h)
        return out

    def project(x):
        y = np.array([max(x[0], 1e-3), min(max(x[1], lo), hi)])
        return y, float(np.max(np.abs(y - x)))

    violation = lambda x: abs(x[0] ** 2 * x[1] - 1)
    x = project(np.array([a0, al0 * al0]))[0]
    S = objective(x)
    dens = lambda x: _restricted_energy_density(x[0], x[1], r, N, dim)
    trace = [FlowStep(0, S, violation(x), 0.0, dens(x))]
    t = opts.initial_step
    status = "max_iters"
    for it in range(1, opts.max_iters + 1):
        g = grad(x)
        gmax = float(np.max(np.abs(g)))
        if gmax <= opts.tol_flow:
            status = "converged"
            break
        # cap the parameter move so a step cannot jump across basins
        t0 = min(t, max_move / gmax)
        xn, Sn, step, _ = _armijo(objective, x, g, S, t0, opts, project)
        if xn is None:
            status = "line_search_stall"
            break
        x, S = xn, Sn
        t = min(step / opts.backtrack, 1e3)
        trace.append(FlowStep(it, S, violation(x), step, dens(x)))
    a, x2 = float(x[0]), float(x[1])
    final = sample(_circle(a, math.sqrt(x2), dim), N)
    return EnergyTrace(trace, final, status, "restricted", r,
                       {"a": a, "alpha": math.sqrt(x2), "alpha2": x2})


# ---------------------------------------------------------------------------
# Mechanized Euler-Lagrange operator

# A Lagrangian is a sum of monomials c * prod_k <gamma^(i_k), gamma^(j_k)>.
Monomial = Tuple[float, Tuple[Tuple[int, int], ...]]

LAGRANGIANS: Dict[str, List[Monomial]] = {
    "geodesic": [(1.0, ((1, 1),))],
    "biharmonic": [(1.0, ((2, 2),)), (-1.0, ((1, 1), (1, 1)))],
    "triharmonic": [
        (1.0, ((3, 3),)),
        (9.0, ((2, 1), (2, 1))),
        (1.0, ((1, 1), (1, 1), (1, 1))),
        (6.0, ((2, 1), (3, 0))),
        (2.0, ((1, 1), (1, 3))),
    ],
    "fourharmonic": [
        (1.0, ((4, 4),)),
        (16.0, ((3, 1), (3, 1))),
        (9.0, ((2, 2), (2, 2))),
        (35.0, ((2, 1), (2, 1), (1, 1))),
        (1.0, ((1, 1), (1, 1), (2, 2))),
        (-1.0, ((1, 1), (1, 1), (1, 1), (1, 1))),
        (8.0, ((3, 1), (4, 0))),
        (6.0, ((4, 0), (2, 2))),
        (10.0, ((2, 1), (4, 1))),
        (2.0, ((1, 1), (4, 2))),
        (2.0, ((1, 1), (1, 1), (4, 0))),
        (24.0, ((3, 1), (2, 2))),
    ],
}


def extrinsic_lagrangian(r: int) -> List[Monomial]:
    return [(1.0, ((r, r),))]


def lagrangian_monomials(lagrangian_id: str, r: Optional[int] = None) -> List[Monomial]:
    if lagrangian_id == "extrinsic_r":
        if r is None or r < 1:
            raise ValueError("extrinsic_r needs r >= 1")
        return extrinsic_lagrangian(r)
    if lagrangian_id not in LAGRANGIANS:
        raise ValueError(f"unknown lagrangian_id {lagrangian_id!r}")
    return LAGRANGIANS[lagrangian_id]


def _top_order(monomials: Sequence[Monomial]) -> int:
    return max(max(i, j) for _, pairs in monomials for i, j in pairs)


def lagrangian_value(lagrangian_id: str, curve, r: Optional[int] = None, s=None) -> np.ndarray:
    """Sample-wise value of the (multiplier-free) Lagrangian."""
    mons = lagrangian_monomials(lagrangian_id, r)
    q = _top_order(mons)
    s, gamma = curve_stack(curve, q, s)
    dot = lambda i, j: np.sum(gamma[i] * gamma[j], axis=-1)
    total = 0.0
    for c, pairs in mons:
        term = c
        for i, j in pairs:
            term = term * dot(i, j)
        total = total + term
    return total


def euler_lagrange_residual_generic(lagrangian_id: str, curve, r: Optional[int] = None, s=None,
                                    route: Optional[str] = None) -> ResidualReport:
    """sum_l (-1)^l (d/ds)^l dL/dgamma^(l) + dL/dgamma, normalized so that the
    leading term is +gamma^(2q), with the sphere multiplier removed by
    projecting out gamma."""
    mons = lagrangian_monomials(lagrangian_id, r)
    q = _top_order(mons)
    if 2 * q > MAX_DERIVATIVE_ORDER:
        raise DerivativeOrderError(f"Lagrangian of order {q} needs {2 * q} derivatives")
    c = _Calculus(curve, 2 * q, s, route)
    G = c.g
    pair = {}

    def P(i, j):
        key = (min(i, j), max(i, j))
        if key not in pair:
            pair[key] = G(i).dot(G(j))
        return pair[key]

    partial: Dict[int, DerivativeStack] = {}
    for coef, pairs in mons:
        for k, (i, j) in enumerate(pairs):
            rest = None
            for m, (u, v) in enumerate(pairs):
                if m != k:
                    rest = P(u, v) if rest is None else rest * P(u, v)
            for p, other in ((i, j), (j, i)):
                vec = G(other) * coef
                if rest is not None:
                    vec = rest * vec
                partial[p] = vec if p not in partial else partial[p] + vec
    total = np.zeros_like(c.gamma[0])
    for p, vec in partial.items():
        total = total + (-1) ** p * (c.D(vec, p) if p else vec[0])
    total = total * (0.5 * (-1) ** q)
    g0 = c.gamma[0]
    lam = -np.sum(total * g0, axis=-1)
    vec = total + lam[:, None] * g0
    return make_report("euler_lagrange", q, c.s, vec, lam)
