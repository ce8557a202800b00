"""Covariant derivatives along sphere curves, Frenet frames and the
closed-form iterated Frenet derivatives in 3-dimensional space forms."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .ambient import (
    TOL_ARC,
    Curve,
    DerivativeOrderError,
    DerivativeStack,
    curve_stack,
    triple_hodge,
)

TOL_FRENET = 1e-8
MAX_COVARIANT_ORDER = 7


class UndefinedTorsion(ValueError):
    """The curvature vanishes, so the normal frame and torsion are undefined."""


@dataclass(frozen=True)
class SpaceForm:
    K: float = 1.0
    dim: int = 3


UNIT_SPHERE = SpaceForm(1.0, 3)


@dataclass(frozen=True)
class ConstantFrenetCurve:
    """A unit-speed curve in a 3-dimensional space form known only through
    its constant curvature ``k`` and torsion ``tau``.

    There is no embedding for K != 1; all covariant data are expressed in
    the Frenet frame {T, F2, F3}.
    """

    k: float
    tau: float
    K: float = 1.0


@dataclass(frozen=True)
class CovariantStack:
    """Fields nabla_T^l T, l = 0..m, expressed through the embedding."""

    s: np.ndarray
    gamma: DerivativeStack
    fields: tuple

    @property
    def order(self) -> int:
        return len(self.fields) - 1

    @property
    def values(self) -> np.ndarray:
        return np.array([f[0] for f in self.fields])

    def __getitem__(self, l) -> np.ndarray:
        return self.fields[l][0]


@dataclass(frozen=True)
class FrenetData:
    s: np.ndarray
    k: np.ndarray
    tau: np.ndarray
    tau_defined: np.ndarray
    frame: np.ndarray  # (N, 3, max(d, 4)): rows T, F2, F3

    def to_csv(self, path) -> None:
        d = self.frame.shape[2]
        header = ["s", "k", "tau"] + [f"{name}_{i}" for name in ("T", "F2", "F3") for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for j in range(self.s.size):
                tau = repr(float(self.tau[j])) if self.tau_defined[j] else "nan"
                row = [repr(float(self.s[j])), repr(float(self.k[j])), tau]
                row += [repr(float(x)) for x in self.frame[j].ravel()]
                w.writerow(row)


def check_unit_speed(gamma: DerivativeStack, tol: float = TOL_ARC) -> None:
    speed = np.linalg.norm(gamma[1], axis=-1)
    dev = np.max(np.abs(speed - 1.0))
    if dev > tol:
        raise ValueError(f"curve is not parametrized by arclength (speed deviates by {dev:.2e})")


def covariant_fields(gamma: DerivativeStack, m: int) -> List[DerivativeStack]:
    """nabla_T^l T for l = 0..m via d(iota)(nabla_T X) = X' + <X, gamma'> gamma.

    Each application costs one derivative, so the l-th field keeps order
    ``gamma.order - 1 - l``.
    """
    if m < 0:
        raise DerivativeOrderError("covariant order must be >= 0")
    if gamma.order < m + 1:
        raise DerivativeOrderError(f"need gamma up to order {m + 1}, have {gamma.order}")
    T = gamma.d()
    fields = [T]
    for _ in range(m):
        X = fields[-1]
        fields.append(X.d() + X.dot(T) * gamma)
    return fields


def covariant_stack(curve: Curve, m: int, s=None, extra: int = 0, check: bool = True) -> CovariantStack:
    """Covariant derivatives nabla_T^l T, l = 0..m, of a unit-speed sphere curve.

    ``extra`` keeps that many additional s-derivatives on every field, for
    callers that differentiate scalar combinations afterwards.
    """
    if m > MAX_COVARIANT_ORDER:
        raise DerivativeOrderError(f"covariant order {m} exceeds {MAX_COVARIANT_ORDER}")
    s, gamma = curve_stack(curve, m + 1 + extra, s)
    if check:
        check_unit_speed(gamma)
    return CovariantStack(s, gamma, tuple(covariant_fields(gamma, m)))


def iterated_frenet(k: float, tau: float, l: int):
    """Coefficients of nabla_T^l T in the Frenet frame {T, F2, F3} for
    constant curvature and torsion (l >= 2)."""
    if l < 2:
        raise ValueError(f"closed form holds for l >= 2, got {l}")
    w = k * k + tau * tau
    m, odd = divmod(l, 2)
    if odd:
        return (0.0, (-1) ** m * k * w ** m, 0.0)
    return ((-1) ** m * k * k * w ** (m - 1), 0.0, (-1) ** (m + 1) * k * tau * w ** (m - 1))


def frame_coefficients(k: float, tau: float, l: int):
    """Like iterated_frenet but also covering l = 0 (T) and l = 1 (k F2)."""
    if l == 0:
        return (1.0, 0.0, 0.0)
    if l == 1:
        return (0.0, k, 0.0)
    return iterated_frenet(k, tau, l)


def _pad4(gamma: DerivativeStack) -> DerivativeStack:
    """Curves on S^2 are treated as curves in the equatorial S^2 of S^3."""
    d = gamma.values.shape[-1]
    if d >= 4:
        return gamma
    pad = np.zeros(gamma.values.shape[:-1] + (4 - d,))
    return DerivativeStack(np.concatenate([gamma.values, pad], axis=-1))


def _span_basis(gamma: DerivativeStack, rank_tol: float = 1e-9) -> np.ndarray:
    d = gamma.values.shape[-1]
    A = gamma.values.reshape(-1, d)
    _, sv, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(sv > rank_tol * sv[0]))
    if rank > 4:
        raise ValueError(f"curve spans {rank} ambient dimensions; a 3-dimensional space form needs <= 4")
    return Vt[:4].T  # (d, 4); padded with orthonormal completions when rank < 4


def _frenet_jets(gamma: DerivativeStack, tol: float):
    """Frenet quantities as derivative stacks, computed in the 4-dimensional
    span of the curve. Returns (Q, gamma4, T, k, F2, F3, tau, mask)."""
    Q = _span_basis(gamma)
    g4 = DerivativeStack(gamma.values @ Q)
    T, X1 = covariant_fields(g4, 1)
    k2 = X1.norm2()
    mask = np.sqrt(np.maximum(k2[0], 0.0)) > tol
    safe = np.array(k2.values)
    safe[:, ~mask] = 0.0
    safe[0, ~mask] = 1.0
    k = DerivativeStack(safe).sqrt()
    F2 = X1 * k.reciprocal()
    F3 = triple_hodge(g4, T, F2)
    nabla_F2 = F2.d() + F2.dot(T) * g4
    tau = nabla_F2.dot(F3)[0]
    kval = np.where(mask, k[0], 0.0)
    return Q, g4, T, kval, F2, F3, tau, mask


def frenet_data(curve, spaceform: SpaceForm = UNIT_SPHERE, s=None, strict: bool = False,
                tol_frenet: float = TOL_FRENET) -> FrenetData:
    """Curvature k, torsion tau and the frame {T, F2, F3} along a curve.

    Sphere curves must be unit speed and span at most 4 ambient dimensions;
    curves in R^3 are padded into R^4, so their frame has 4 components.
    At samples with k <= tol_frenet, k is reported as 0 and tau flagged
    undefined; with ``strict=True`` such samples raise UndefinedTorsion.
    """
    if isinstance(curve, ConstantFrenetCurve):
        n = 1 if s is None else np.size(s)
        ss = np.zeros(n) if s is None else np.atleast_1d(np.asarray(s, float))
        defined = abs(curve.k) > tol_frenet
        if strict and not defined:
            raise UndefinedTorsion("geodesic: torsion is undefined")
        return FrenetData(ss, np.full(n, abs(curve.k)), np.full(n, curve.tau if defined else np.nan),
                          np.full(n, defined), np.tile(np.eye(3), (n, 1, 1)))
    if spaceform.K != 1.0:
        raise ValueError("embedded curves live on the unit sphere (K = 1); "
                         "use ConstantFrenetCurve for other space forms")
    s, gamma = curve_stack(curve, 3, s)
    check_unit_speed(gamma)
    gamma = _pad4(gamma)
    Q, g4, T, k, F2, F3, tau, mask = _frenet_jets(gamma, tol_frenet)
    if strict and not mask.all():
        raise UndefinedTorsion(f"curvature vanishes at {np.sum(~mask)} of {mask.size} samples")
    frame = np.stack([T[0] @ Q.T, F2[0] @ Q.T, F3[0] @ Q.T], axis=1)
    frame[~mask, 1:] = np.nan
    return FrenetData(s, k, np.where(mask, tau, np.nan), mask, frame)


def frenet_residual(curve, s=None, tol_frenet: float = TOL_FRENET) -> dict:
    """Max violations of orthonormality and of the three Frenet equations,
    using differentiated frame fields. Samples with vanishing k are skipped."""
    s, gamma = curve_stack(curve, 3, s)
    check_unit_speed(gamma)
    Q, g4, T, k, F2, F3, tau, mask = _frenet_jets(_pad4(gamma), tol_frenet)
    nabla = lambda X: X.d() + X.dot(T) * g4
    e1 = nabla(T)[0] - k[:, None] * F2[0]
    e2 = nabla(F2)[0] + k[:, None] * T[0] - tau[:, None] * F3[0]
    e3 = nabla(F3)[0] + tau[:, None] * F2[0]
    frame = np.stack([T[0], F2[0], F3[0]], axis=1)
    gram = np.einsum("nij,nkj->nik", frame, frame) - np.eye(3)
    pick = lambda a: float(np.max(np.abs(a[mask]))) if mask.any() else 0.0
    return {
        "orthonormality": pick(gram.reshape(len(mask), -1)),
        "tangent": pick(np.linalg.norm(e1, axis=1)),
        "normal": pick(np.linalg.norm(e2, axis=1)),
        "binormal": pick(np.linalg.norm(e3, axis=1)),
    }
