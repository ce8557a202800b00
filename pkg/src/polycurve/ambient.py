"""Curves on the unit sphere S^n in R^{n+1} and their s-derivatives.

Two curve representations are supported:

* :class:`CircleAnsatzCurve` -- a finite sum of circles
  ``sum_j cos(a_j s) e_cos_j + sin(a_j s) e_sin_j + e_0``, differentiated in
  closed form.
* :class:`DiscreteCurve` -- a uniformly sampled closed curve, differentiated
  with Fourier (trigonometric interpolation) differentiation.

Both produce a :class:`DerivativeStack`, the list ``gamma, gamma', ...``
sampled on a grid. Stacks support Leibniz-rule arithmetic so that derived
quantities (inner products, covariant derivatives, ...) carry their own
derivatives along.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Sequence, Union

import numpy as np

MAX_DERIVATIVE_ORDER = 8
TOL_SPHERE = 1e-9
TOL_ARC = 1e-6
SPECTRAL_NOISE_FLOOR = 1e-13


class DerivativeOrderError(ValueError):
    """Requested derivative order is negative or beyond the supported budget."""


def ambient_vector(coords: Sequence[float]) -> np.ndarray:
    v = np.asarray(coords, dtype=float)
    if v.ndim != 1 or v.size < 3:
        raise ValueError(f"ambient vectors need at least 3 coordinates, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("ambient vector has non-finite coordinates")
    return v


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_order(m: int, limit: int = MAX_DERIVATIVE_ORDER) -> None:
    if m < 0:
        raise DerivativeOrderError(f"derivative order must be >= 0, got {m}")
    if m > limit:
        raise DerivativeOrderError(f"derivative order {m} exceeds supported maximum {limit}")


@dataclass(frozen=True)
class DerivativeStack:
    """Samples of a field and its first ``order`` derivatives in s.

    ``values[l]`` holds the l-th derivative on the sample grid, with shape
    ``(N,)`` for scalar fields and ``(N, d)`` for vector fields.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))

    @property
    def order(self) -> int:
        return self.values.shape[0] - 1

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 2

    def __getitem__(self, l):
        return self.values[l]

    def __len__(self):
        return self.values.shape[0]

    def truncate(self, m: int) -> "DerivativeStack":
        if m > self.order:
            raise DerivativeOrderError(f"stack has order {self.order}, cannot keep {m}")
        return DerivativeStack(self.values[: m + 1])

    def d(self, k: int = 1) -> "DerivativeStack":
        """Stack of the k-th derivative (order drops by k)."""
        if k > self.order:
            raise DerivativeOrderError(f"stack of order {self.order} cannot be differentiated {k} times")
        return DerivativeStack(self.values[k:])

    def _common(self, other: "DerivativeStack"):
        m = min(self.order, other.order)
        return self.values[: m + 1], other.values[: m + 1]

    def __add__(self, other):
        if isinstance(other, DerivativeStack):
            a, b = self._common(other)
            return DerivativeStack(a + b)
        out = np.array(self.values)
        out[0] = out[0] + other
        return DerivativeStack(out)

    __radd__ = __add__

    def __neg__(self):
        return DerivativeStack(-self.values)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, DerivativeStack):
            return DerivativeStack(self.values * other)
        if not self.is_scalar and not other.is_scalar:
            raise TypeError("use dot() for the product of two vector stacks")
        a, b = self._common(other)
        if a.ndim < b.ndim:
            a = a[..., None]
        elif b.ndim < a.ndim:
            b = b[..., None]
        return DerivativeStack(_leibniz(a, b, lambda x, y: x * y))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DerivativeStack):
            return self * other.reciprocal()
        return DerivativeStack(self.values / other)

    def dot(self, other: "DerivativeStack") -> "DerivativeStack":
        a, b = self._common(other)
        return DerivativeStack(_leibniz(a, b, lambda x, y: np.einsum("...i,...i->...", x, y)))

    def norm2(self) -> "DerivativeStack":
        return self.dot(self)

    def reciprocal(self) -> "DerivativeStack":
        if not self.is_scalar:
            raise TypeError("reciprocal of a vector stack")
        f = self.values
        u = np.empty_like(f)
        u[0] = 1.0 / f[0]
        for n in range(1, len(f)):
            acc = np.zeros_like(f[0])
            for j in range(1, n + 1):
                acc += math.comb(n, j) * f[j] * u[n - j]
            u[n] = -acc / f[0]
        return DerivativeStack(u)

    def sqrt(self) -> "DerivativeStack":
        if not self.is_scalar:
            raise TypeError("sqrt of a vector stack")
        f = self.values
        g = np.empty_like(f)
        g[0] = np.sqrt(f[0])
        for n in range(1, len(f)):
            acc = np.array(f[n])
            for j in range(1, n):
                acc -= math.comb(n, j) * g[j] * g[n - j]
            g[n] = acc / (2.0 * g[0])
        return DerivativeStack(g)

    def project_out(self, unit: "DerivativeStack") -> "DerivativeStack":
        """Remove the component along the unit field ``unit``."""
        return self - self.dot(unit) * unit


def _leibniz(a: np.ndarray, b: np.ndarray, op) -> np.ndarray:
    m = a.shape[0] - 1
    first = op(a[0], b[0])
    out = np.empty((m + 1,) + np.shape(first))
    out[0] = first
    for n in range(1, m + 1):
        acc = 0.0
        for j in range(n + 1):
            acc = acc + math.comb(n, j) * op(a[j], b[n - j])
        out[n] = acc
    return out


def constant_stack(value, n_samples: int, order: int) -> DerivativeStack:
    vals = np.zeros((order + 1, n_samples))
    vals[0] = value
    return DerivativeStack(vals)


def triple_hodge(a: DerivativeStack, b: DerivativeStack, c: DerivativeStack) -> DerivativeStack:
    """Hodge star of a^b^c in R^4, with derivatives (trilinear Leibniz rule)."""
    m = min(a.order, b.order, c.order)
    out = np.zeros((m + 1,) + a.values.shape[1:])
    for n in range(m + 1):
        for i in range(n + 1):
            for j in range(n - i + 1):
                l = n - i - j
                coef = math.factorial(n) // (math.factorial(i) * math.factorial(j) * math.factorial(l))
                out[n] += coef * _hodge4(a[i], b[j], c[l])
    return DerivativeStack(out)


def _hodge4(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    # component i = det of the 3x3 minor obtained by deleting column i, with alternating sign
    M = np.stack([x, y, z], axis=-2)
    out = np.empty(x.shape)
    cols = [0, 1, 2, 3]
    for i in range(4):
        keep = [c for c in cols if c != i]
        out[..., i] = (-1) ** (i + 1) * np.linalg.det(M[..., keep])
    return out


# ---------------------------------------------------------------------------
# Curve types


@dataclass(frozen=True)
class CircleTerm:
    a: float
    e_cos: np.ndarray
    e_sin: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "e_cos", _readonly(ambient_vector(self.e_cos)))
        object.__setattr__(self, "e_sin", _readonly(ambient_vector(self.e_sin)))

    @property
    def alpha2(self) -> float:
        return float(self.e_cos @ self.e_cos)


@dataclass(frozen=True)
class CircleAnsatzCurve:
    """gamma(s) = sum_j (cos(a_j s) e_cos_j + sin(a_j s) e_sin_j) + e_0."""

    terms: tuple
    e0: np.ndarray
    tol: float = TOL_SPHERE

    def __post_init__(self):
        terms = tuple(t if isinstance(t, CircleTerm) else CircleTerm(*t) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "e0", _readonly(ambient_vector(self.e0)))
        self._validate()

    def _validate(self):
        if not self.terms:
            raise ValueError("an ansatz curve needs at least one circle term")
        dim = self.e0.size
        vecs = [self.e0]
        freqs = []
        for t in self.terms:
            if t.a <= 0:
                raise ValueError(f"frequencies must be positive, got {t.a}")
            if t.e_cos.size != dim or t.e_sin.size != dim:
                raise ValueError("all ansatz vectors must share one ambient dimension")
            if abs(t.e_cos @ t.e_cos - t.e_sin @ t.e_sin) > self.tol:
                raise ValueError("|e_cos| and |e_sin| differ within a circle term")
            vecs += [t.e_cos, t.e_sin]
            freqs.append(t.a)
        G = np.array(vecs) @ np.array(vecs).T
        off = G - np.diag(np.diag(G))
        if np.max(np.abs(off)) > self.tol:
            raise ValueError("ansatz vectors are not mutually orthogonal")
        total = sum(t.alpha2 for t in self.terms) + self.e0 @ self.e0
        if abs(total - 1.0) > self.tol:
            raise ValueError(f"sum of squared amplitudes is {total!r}, must be 1")
        f = np.sort(freqs)
        if np.any(np.diff(f) <= self.tol):
            raise ValueError("frequencies must be pairwise distinct")

    @property
    def dim(self) -> int:
        return self.e0.size

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([t.a for t in self.terms])

    @property
    def speed2(self) -> float:
        return float(sum(t.a ** 2 * t.alpha2 for t in self.terms))

    @property
    def is_geodesic(self) -> bool:
        """True for unit-speed great circles (all a_j = 1, e_0 = 0)."""
        return bool(np.all(np.abs(self.frequencies - 1.0) <= 1e-9) and self.e0 @ self.e0 <= 1e-18)

    def period(self, max_denominator: int = 1000):
        """Least common period, or None when the frequencies are not rationally related."""
        a = self.frequencies
        ratios = []
        for x in a / a[0]:
            q = Fraction(x).limit_denominator(max_denominator)
            if abs(float(q) - x) > 1e-12 * max(1.0, x):
                return None
            ratios.append(q)
        Q = reduce(lambda u, v: u * v // math.gcd(u, v), (q.denominator for q in ratios), 1)
        nums = [q.numerator * (Q // q.denominator) for q in ratios]
        g = reduce(math.gcd, nums)
        return 2 * math.pi * Q / (a[0] * g)

    def default_grid(self, n: int = 64) -> np.ndarray:
        P = self.period()
        if P is None:
            P = 2 * math.pi / self.frequencies.min()
        return np.arange(n) * (P / n)

    def __call__(self, s):
        return evaluate(self, s)


@dataclass(frozen=True)
class DiscreteCurve:
    """Uniformly sampled closed curve on S^n over one period of length ``L``."""

    samples: np.ndarray
    L: float
    tol: float = TOL_SPHERE

    def __post_init__(self):
        X = np.asarray(self.samples, dtype=float)
        if X.ndim != 2 or X.shape[1] < 3:
            raise ValueError(f"samples must be an (N, n+1) array with n+1 >= 3, got {X.shape}")
        N = X.shape[0]
        if N < 16 or N % 2:
            raise ValueError(f"need an even number N >= 16 of samples, got {N}")
        if not self.L > 0:
            raise ValueError(f"period must be positive, got {self.L}")
        dev = np.max(np.abs(np.linalg.norm(X, axis=1) - 1.0))
        if dev > self.tol:
            raise ValueError(f"samples leave the unit sphere by {dev:.3e} > {self.tol:.1e}")
        object.__setattr__(self, "samples", _readonly(X))
        object.__setattr__(self, "L", float(self.L))

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def s(self) -> np.ndarray:
        return np.arange(self.N) * (self.L / self.N)

    @classmethod
    def from_points(cls, points, L: float) -> "DiscreteCurve":
        """Build from arbitrary nonzero points, radially projecting onto the sphere."""
        X = np.asarray(points, dtype=float)
        return cls(X / np.linalg.norm(X, axis=1, keepdims=True), L)


Curve = Union[CircleAnsatzCurve, DiscreteCurve]


# ---------------------------------------------------------------------------
# Evaluation and differentiation


def evaluate(curve: CircleAnsatzCurve, s):
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape + (curve.dim,)) + curve.e0
    for t in curve.terms:
        out += np.cos(t.a * s)[..., None] * t.e_cos + np.sin(t.a * s)[..., None] * t.e_sin
    return out


def derivatives_analytic(curve: CircleAnsatzCurve, s, m: int) -> DerivativeStack:
    """Exact derivatives gamma, ..., gamma^(m) at the points ``s``."""
    _check_order(m, limit=10 ** 6)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    vals = np.zeros((m + 1, s.size, curve.dim))
    vals[0] += curve.e0
    for t in curve.terms:
        for l in range(m + 1):
            phase = t.a * s + l * math.pi / 2
            vals[l] += t.a ** l * (np.cos(phase)[:, None] * t.e_cos + np.sin(phase)[:, None] * t.e_sin)
    return DerivativeStack(vals)


def _wavenumbers(N: int, L: float) -> np.ndarray:
    return 2 * math.pi * np.fft.rfftfreq(N, d=L / N)


def _filtered_rfft(f: np.ndarray, noise_floor: float) -> np.ndarray:
    F = np.fft.rfft(f, axis=0)
    if noise_floor > 0:
        amp = np.abs(F)
        F = np.where(amp <= noise_floor * amp.max(), 0.0, F)
    return F


def spectral_derivative(f, L: float, m: int, noise_floor: float = SPECTRAL_NOISE_FLOOR) -> np.ndarray:
    """m-th derivative of periodic samples along axis 0 (period L)."""
    f = np.asarray(f, dtype=float)
    N = f.shape[0]
    if N % 2:
        raise ValueError("spectral differentiation needs an even number of samples")
    if m == 0:
        return f.copy()
    F = _filtered_rfft(f, noise_floor)
    fac = (1j * _wavenumbers(N, L)) ** m
    if m % 2:
        fac[-1] = 0.0
    fac = fac.reshape((-1,) + (1,) * (f.ndim - 1))
    return np.fft.irfft(F * fac, n=N, axis=0)


def spectral_stack(f, L: float, m: int, noise_floor: float = SPECTRAL_NOISE_FLOOR) -> DerivativeStack:
    """Spectral derivative stack of periodic samples (scalar or vector)."""
    f = np.asarray(f, dtype=float)
    N = f.shape[0]
    if N % 2:
        raise ValueError("spectral differentiation needs an even number of samples")
    F = _filtered_rfft(f, noise_floor)
    k = _wavenumbers(N, L).reshape((-1,) + (1,) * (f.ndim - 1))
    vals = [f]
    for l in range(1, m + 1):
        fac = (1j * k) ** l
        if l % 2:
            fac = np.array(fac)
            fac[-1] = 0.0
        vals.append(np.fft.irfft(F * fac, n=N, axis=0))
    return DerivativeStack(np.array(vals))


def derivatives_spectral(curve: DiscreteCurve, m: int, noise_floor: float = SPECTRAL_NOISE_FLOOR) -> DerivativeStack:
    _check_order(m)
    return spectral_stack(curve.samples, curve.L, m, noise_floor)


def curve_stack(curve: Curve, m: int, s=None, n: int = 64):
    """Sample grid and derivative stack of order m for either curve type."""
    if isinstance(curve, DiscreteCurve):
        if s is not None:
            raise ValueError("discrete curves are evaluated on their own sample grid")
        return curve.s, derivatives_spectral(curve, m)
    if s is None:
        s = curve.default_grid(n)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return s, derivatives_analytic(curve, s, m)


def sample(curve: CircleAnsatzCurve, N: int, periods: int = 1) -> DiscreteCurve:
    """Sample an ansatz curve over whole least-common periods."""
    P = curve.period()
    if P is None:
        raise ValueError("frequencies are not rationally related; no closed discretization exists")
    L = P * periods
    X = evaluate(curve, np.arange(N) * (L / N))
    return DiscreteCurve(X / np.linalg.norm(X, axis=1, keepdims=True), L)


# ---------------------------------------------------------------------------
# Arclength reparametrization


def trig_interpolate(f, L: float, t) -> np.ndarray:
    """Evaluate the trigonometric interpolant of periodic samples at points t."""
    f = np.asarray(f, dtype=float)
    N = f.shape[0]
    F = np.fft.rfft(f, axis=0) / N
    w = 2 * math.pi / L
    t = np.asarray(t, dtype=float)
    k = np.arange(F.shape[0])
    E = np.exp(1j * w * np.outer(t, k))
    weights = np.full(F.shape[0], 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    coef = F * weights.reshape((-1,) + (1,) * (f.ndim - 1))
    # Nyquist mode contributes a pure cosine
    out = np.real(E[:, :-1] @ coef[:-1].reshape(F.shape[0] - 1, -1))
    out += np.cos(w * (N // 2) * t)[:, None] * np.real(coef[-1]).reshape(1, -1)
    return out.reshape(t.shape + f.shape[1:])


def arclength_reparametrize(curve: DiscreteCurve, sweeps: int = 3, tol_speed: float = 1e-8) -> DiscreteCurve:
    """Resample a closed curve uniformly in arclength.

    The arclength function is integrated spectrally from the speed and inverted
    by Newton's method on the trigonometric interpolant; samples are then
    pushed back to the sphere.
    """
    current = curve
    for _ in range(sweeps):
        X, L, N = current.samples, current.L, current.N
        speed = np.linalg.norm(spectral_derivative(X, L, 1), axis=1)
        if speed.min() <= tol_speed * max(speed.mean(), 1e-300):
            raise ValueError("curve has a vanishing tangent; arclength is not invertible")
        total = speed.mean() * L
        if np.max(np.abs(speed / speed.mean() - 1.0)) < 1e-13 and abs(total - L) < 1e-13 * L:
            break
        # s(t) = mean_speed * t + periodic antiderivative of (speed - mean)
        Sp = np.fft.rfft(speed) / N
        k = _wavenumbers(N, L)
        targets = np.arange(N) * (total / N)
        t = targets * (L / total)
        for _ in range(50):
            phase = np.exp(1j * np.outer(t, k[1:]))
            wts = np.full(k.size - 1, 2.0)
            wts[-1] = 1.0
            periodic = np.real(phase @ (wts * Sp[1:] / (1j * k[1:])))
            s_t = speed.mean() * t + periodic - np.real(np.sum(wts * Sp[1:] / (1j * k[1:])))
            sig = trig_interpolate(speed, L, t)
            step = (s_t - targets) / sig
            t = t - step
            if np.max(np.abs(step)) < 1e-15 * L:
                break
        Y = trig_interpolate(X, L, t)
        Y /= np.linalg.norm(Y, axis=1, keepdims=True)
        current = DiscreteCurve(Y, total)
    return current


# ---------------------------------------------------------------------------
# Curve JSON


def curve_to_dict(curve: Curve) -> dict:
    if isinstance(curve, CircleAnsatzCurve):
        return {
            "type": "ansatz",
            "terms": [{"a": t.a, "e_cos": t.e_cos.tolist(), "e_sin": t.e_sin.tolist()} for t in curve.terms],
            "e0": curve.e0.tolist(),
        }
    return {"type": "discrete", "L": curve.L, "samples": curve.samples.tolist()}


def curve_from_dict(data: dict) -> Curve:
    """Parse the curve JSON schema; raises ValueError on any malformed input."""
    if not isinstance(data, dict):
        raise ValueError("curve JSON must be an object")
    kind = data.get("type")
    try:
        if kind == "ansatz":
            _require_keys(data, {"type", "terms", "e0"})
            terms = []
            for t in data["terms"]:
                _require_keys(t, {"a", "e_cos", "e_sin"})
                terms.append(CircleTerm(float(t["a"]), t["e_cos"], t["e_sin"]))
            return CircleAnsatzCurve(tuple(terms), data["e0"])
        if kind == "discrete":
            _require_keys(data, {"type", "L", "samples"})
            return DiscreteCurve(data["samples"], float(data["L"]))
    except (TypeError, KeyError) as exc:
        raise ValueError(f"malformed curve JSON: {exc}") from exc
    raise ValueError(f"unknown curve type {kind!r}")


def _require_keys(obj, keys):
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    if set(obj) != keys:
        raise ValueError(f"expected keys {sorted(keys)}, got {sorted(obj)}")
