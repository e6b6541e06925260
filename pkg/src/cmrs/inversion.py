"""One-dimensional numerical Laplace inversion.

Two rules are provided: the Gaver-Stehfest rule, which samples the transform
on the positive real axis with alternating combinatorial weights, and the
Euler (binomial-accelerated Fourier series) rule on a Bromwich contour.  The
Euler rule optionally applies an exponential tilt theta > 0: the transform is
then sampled at z_k - theta and the recovered value multiplied by
exp(-theta*s), which damps the oscillatory error at large s.  Tilting is
meaningless for Gaver-Stehfest (its nodes would leave the transform's domain),
so any positive tilt there is refused.

Gaver-Stehfest weights grow like ~22^M, so in double precision the usable
order tops out around M = 8..10: beyond that the weighted sum amplifies the
rounding of the transform values themselves and no implementation detail can
recover the lost digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial
from typing import Callable, Sequence

import numpy as np

from .errors import CmrsError, DomainError, InversionError

_LN2 = math.log(2.0)

GS_ORDER_CAP = 24

_TILT_INCOMPATIBLE_MSG = (
    "gaver-stehfest cannot be combined with positive tilting; use the euler scheme"
)


@lru_cache(maxsize=None)
def gs_weights_exact(M: int) -> tuple[Fraction, ...]:
    """Exact rational Gaver-Stehfest weights zeta_1..zeta_{2M}.

    They satisfy sum_k zeta_k = 0 and sum_k zeta_k/k = 1 exactly; both
    identities are checked here before the weights are released.
    """
    if not (1 <= M <= GS_ORDER_CAP):
        raise InversionError(f"gaver-stehfest order must be in 1..{GS_ORDER_CAP}, got {M}")
    out = []
    for k in range(1, 2 * M + 1):
        acc = Fraction(0)
        for j in range((k + 1) // 2, min(k, M) + 1):
            acc += (
                Fraction(j ** (M + 1), factorial(M))
                * comb(M, j)
                * comb(2 * j, j)
                * comb(j, k - j)
            )
        out.append((-1) ** (M + k) * acc)
    assert sum(out) == 0
    assert sum(w / k for k, w in enumerate(out, start=1)) == 1
    return tuple(out)


@lru_cache(maxsize=None)
def gs_weights(M: int) -> tuple[float, ...]:
    """Gaver-Stehfest weights rounded once from exact rationals to floats."""
    return tuple(float(w) for w in gs_weights_exact(M))


@dataclass(frozen=True)
class GsScheme:
    """Real-axis rule of order M (2M transform evaluations per point)."""

    M: int = 8
    weights: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", gs_weights(self.M))

    @property
    def nodes_per_point(self) -> int:
        return 2 * self.M

    def describe(self) -> str:
        return f"gs(M={self.M})"


@dataclass(frozen=True)
class EulerScheme:
    """Bromwich-contour rule: N retained terms, binomial average of order m,
    contour parameter A, optional tilt theta >= 0.

    A tilted call at s needs A > 2*theta*s, otherwise the shifted contour
    leaves the right half-plane and the call is refused.
    """

    A: float = 18.4
    N: int = 25
    m: int = 15
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (self.A > 0.0 and math.isfinite(self.A)):
            raise InversionError(f"contour parameter A must be positive, got {self.A}")
        if self.N < 0 or self.m < 0:
            raise InversionError(f"need N >= 0 and m >= 0, got N={self.N}, m={self.m}")
        if not (self.theta >= 0.0) or not math.isfinite(self.theta):
            raise InversionError(f"tilt must be finite and >= 0, got {self.theta}")

    @property
    def nodes_per_point(self) -> int:
        return self.N + self.m + 1

    def describe(self) -> str:
        if self.theta > 0.0:
            return f"euler(A={self.A:g},N={self.N},m={self.m},theta={self.theta:g})"
        return f"euler(A={self.A:g},N={self.N},m={self.m})"


Scheme = GsScheme | EulerScheme


def scheme_nodes(scheme: Scheme, s: float) -> np.ndarray:
    """Transform evaluation nodes for one gridpoint, as a complex array.

    The same node values are used by the scalar and batch paths, which is what
    makes their outputs bit-identical.
    """
    if not (s > 0.0):
        raise DomainError(f"inversion target must satisfy s > 0, got {s}")
    if isinstance(scheme, GsScheme):
        c = _LN2 / s
        ks = np.arange(1, 2 * scheme.M + 1, dtype=float)
        return (ks * c).astype(complex)
    re = scheme.A / (2.0 * s) - scheme.theta
    if not (re > 0.0):
        raise InversionError(
            f"contour violation at s={s}: A={scheme.A} requires A > 2*theta*s = "
            f"{2.0 * scheme.theta * s}"
        )
    c = math.pi / s
    ks = np.arange(scheme.N + scheme.m + 1, dtype=float)
    return re + 1j * (ks * c)


def _as_real(val) -> float:
    return val.real if isinstance(val, complex) else float(val)


def _gs_cell(values: Sequence[float], s: float, scheme: GsScheme) -> float:
    c = _LN2 / s
    return c * math.fsum(w * v for w, v in zip(scheme.weights, values))


def _euler_csums(values: Sequence[float]) -> list[float]:
    # Neumaier-compensated running sums of the alternating series
    # 0.5*a_0 - a_1 + a_2 - ...; the compensated value is recorded after
    # every term so the binomial average can pick out S_N..S_{N+m}.
    csums = []
    acc = 0.0
    comp = 0.0
    for k, v in enumerate(values):
        t = 0.5 * v if k == 0 else (v if k % 2 == 0 else -v)
        tnew = acc + t
        if abs(acc) >= abs(t):
            comp += (acc - tnew) + t
        else:
            comp += (t - tnew) + acc
        acc = tnew
        csums.append(acc + comp)
    return csums


def _euler_cell(values: Sequence[float], s: float, scheme: EulerScheme) -> float:
    csums = _euler_csums(values)
    pref = math.exp(scheme.A / 2.0) / s
    out = (
        math.fsum(comb(scheme.m, r) * pref * csums[scheme.N + r] for r in range(scheme.m + 1))
        / 2.0**scheme.m
    )
    if scheme.theta > 0.0:
        out *= math.exp(-scheme.theta * s)
    return out


def invert_values(values: np.ndarray, s: float, scheme: Scheme) -> np.ndarray:
    """Invert many transforms at one s from their pre-evaluated node values.

    ``values`` has one row per node (in ``scheme_nodes`` order, real parts)
    and one column per target transform.  Column results are bit-identical to
    the scalar ``gs_invert`` / ``euler_invert`` on the same node values: the
    accumulation below performs the same elementary float operations in the
    same order, just elementwise across columns.
    """
    values = np.asarray(values, dtype=float)
    if isinstance(scheme, GsScheme):
        c = _LN2 / s
        return np.array(
            [
                c * math.fsum(w * v for w, v in zip(scheme.weights, values[:, j]))
                for j in range(values.shape[1])
            ]
        )
    ncols = values.shape[1]
    acc = np.zeros(ncols)
    comp = np.zeros(ncols)
    csums = np.empty((values.shape[0], ncols))
    for k in range(values.shape[0]):
        v = values[k]
        t = 0.5 * v if k == 0 else (v if k % 2 == 0 else -v)
        tnew = acc + t
        comp = comp + np.where(np.abs(acc) >= np.abs(t), (acc - tnew) + t, (t - tnew) + acc)
        acc = tnew
        csums[k] = acc + comp
    pref = math.exp(scheme.A / 2.0) / s
    sel = csums[scheme.N : scheme.N + scheme.m + 1]
    coef = [comb(scheme.m, r) * pref for r in range(scheme.m + 1)]
    out = np.array(
        [math.fsum(coef[r] * sel[r, j] for r in range(scheme.m + 1)) for j in range(ncols)]
    )
    out /= 2.0**scheme.m
    if scheme.theta > 0.0:
        out *= math.exp(-scheme.theta * s)
    return out


def _eval_nodes(transform: Callable, nodes: np.ndarray, s: float) -> list[float]:
    vals = []
    for k, z in enumerate(nodes):
        zc = complex(z)
        raw = transform(zc.real if zc.imag == 0.0 else zc)
        v = _as_real(raw)
        if not math.isfinite(v):
            raise InversionError(
                f"transform returned non-finite value {raw!r} at node {k} (z={zc}, s={s})"
            )
        vals.append(v)
    return vals


def gs_invert(transform: Callable, s: float, scheme: GsScheme, tilt: float = 0.0) -> float:
    """Gaver-Stehfest inversion of ``transform`` at s > 0.

    ``transform`` is sampled at the real nodes k*ln2/s, k = 1..2M.  Any
    positive ``tilt`` is refused: the rule has no contour to shift.
    """
    if tilt > 0.0:
        raise InversionError(_TILT_INCOMPATIBLE_MSG)
    nodes = scheme_nodes(scheme, s)
    return _gs_cell(_eval_nodes(transform, nodes, s), s, scheme)


def euler_invert(transform: Callable, s: float, scheme: EulerScheme) -> float:
    """Euler-summation inversion of ``transform`` at s > 0.

    With scheme.theta > 0 the nodes are shifted left by theta and the result
    multiplied by exp(-theta*s); the recovered density is the same (up to
    roundoff), the tilt only reshapes where the numerical error lives.
    """
    nodes = scheme_nodes(scheme, s)
    return _euler_cell(_eval_nodes(transform, nodes, s), s, scheme)


def invert(transform: Callable, s: float, scheme: Scheme) -> float:
    if isinstance(scheme, GsScheme):
        return gs_invert(transform, s, scheme)
    return euler_invert(transform, s, scheme)


def invert_batch(
    transforms: Sequence[Callable], s_grid: Sequence[float], scheme: Scheme
) -> np.ndarray:
    """Invert several transforms on a shared grid.

    Output has one row per gridpoint and one column per transform; the node
    set is computed once per gridpoint and shared across all targets.  A cell
    whose transform evaluation fails or returns a non-finite value is marked
    NaN instead of aborting the batch; a contour violation at some s marks
    that whole row.
    """
    out = np.full((len(s_grid), len(transforms)), np.nan)
    for si, s in enumerate(s_grid):
        try:
            nodes = scheme_nodes(scheme, float(s))
        except InversionError:
            continue
        for j, tr in enumerate(transforms):
            try:
                vals = _eval_nodes(tr, nodes, float(s))
            except (CmrsError, ArithmeticError, ValueError):
                continue
            if isinstance(scheme, GsScheme):
                out[si, j] = _gs_cell(vals, float(s), scheme)
            else:
                out[si, j] = _euler_cell(vals, float(s), scheme)
    return out
