"""Mixing laws for frailty portfolios.

A mixing law packages the Laplace-Stieltjes transform of a nonnegative
mixing variable Theta, its derivative, and a discrete quadrature
approximation sum_k w_k delta_{theta_k} used wherever an expectation over
Theta has to be carried out pointwise (density oracles, samplers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln, roots_genlaguerre

from .errors import ModelSpecError

_WEIGHT_SUM_TOL = 1e-10


@dataclass(frozen=True)
class MixingLawHandle:
    """Transform pair plus quadrature nodes for one mixing variable.

    quadrature_nodes holds (theta_k, w_k) pairs with theta_k >= 0, w_k > 0
    and sum_k w_k = 1 up to 1e-10.  sampler, when present, draws Theta
    variates as sampler(rng, size).
    """

    lst: Callable[[float], float]
    lst_deriv: Callable[[float], float]
    quadrature_nodes: tuple[tuple[float, float], ...]
    label: str = ""
    sampler: Optional[Callable] = None
    _nodes: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pairs = tuple((float(t), float(w)) for t, w in self.quadrature_nodes)
        if not pairs:
            raise ModelSpecError("mixing law needs at least one quadrature node")
        nodes = np.array([p[0] for p in pairs])
        weights = np.array([p[1] for p in pairs])
        if not (np.isfinite(nodes).all() and np.isfinite(weights).all()):
            raise ModelSpecError("mixing quadrature nodes must be finite")
        if (nodes < 0.0).any():
            raise ModelSpecError("mixing quadrature locations must be >= 0")
        if (weights <= 0.0).any():
            raise ModelSpecError("mixing quadrature weights must be positive")
        total = math.fsum(weights.tolist())
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise ModelSpecError(
                f"mixing quadrature weights sum to {total!r}, expected 1 within "
                f"{_WEIGHT_SUM_TOL}"
            )
        object.__setattr__(self, "quadrature_nodes", pairs)
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_weights", weights)

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def weights(self) -> np.ndarray:
        return self._weights


def gamma_mixing(alpha: float, n_nodes: int = 200) -> MixingLawHandle:
    """Gamma(alpha, 1) mixing: L(u) = (1+u)^(-alpha).

    Quadrature is generalized Gauss-Laguerre with exponent alpha-1, i.e. the
    nodes integrate exactly against the gamma density for polynomial
    integrands up to degree 2*n_nodes - 1.
    """
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ModelSpecError(f"gamma mixing needs alpha > 0, got {alpha}")
    if n_nodes < 1:
        raise ModelSpecError(f"need at least one quadrature node, got {n_nodes}")
    x, w = roots_genlaguerre(n_nodes, alpha - 1.0)
    with np.errstate(divide="ignore"):
        weights = np.exp(np.log(w) - gammaln(alpha))
    # far-tail weights underflow to 0 for large rules; they carry no mass
    keep = weights > 0.0
    pairs = tuple(zip(x[keep].tolist(), weights[keep].tolist()))

    def lst(u):
        return (1.0 + u) ** (-alpha)

    def lst_deriv(u):
        return -alpha * (1.0 + u) ** (-alpha - 1.0)

    def sampler(rng, size):
        return rng.gamma(alpha, 1.0, size)

    return MixingLawHandle(lst, lst_deriv, pairs, label=f"gamma(alpha={alpha:g})", sampler=sampler)


def _legendre_on(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return mid + half * x, half * w


def levy_mixing(kappa: float, n_nodes: int = 200) -> MixingLawHandle:
    """Positive stable(1/2) mixing: L(u) = exp(-kappa*sqrt(u)).

    The density kappa/(2 sqrt(pi)) theta^(-3/2) exp(-kappa^2/(4 theta)) has
    both an essential singularity at 0 and a heavy theta^(-3/2) tail, so a
    single rule on theta is hopeless.  Substituting theta = v^2 tames the
    singularity; the trunk rule covers v in [kappa/12, 10 kappa] and the tail
    v > 10 kappa is folded onto w = 1/v in (0, 1/(10 kappa)], where the
    integrand is an analytic Gaussian.  The mass dropped below v = kappa/12
    is erfc(6) ~ 2e-17.
    """
    if not (kappa > 0.0 and math.isfinite(kappa)):
        raise ModelSpecError(f"levy mixing needs kappa > 0, got {kappa}")
    if n_nodes < 2:
        raise ModelSpecError(f"need at least two quadrature nodes, got {n_nodes}")
    n_trunk = n_nodes // 2
    n_tail = n_nodes - n_trunk
    c = kappa / math.sqrt(math.pi)

    v, wv = _legendre_on(kappa / 12.0, 10.0 * kappa, n_trunk)
    trunk_theta = v**2
    trunk_w = wv * c * np.exp(-(kappa**2) / (4.0 * v**2)) / v**2

    u, wu = _legendre_on(0.0, 1.0 / (10.0 * kappa), n_tail)
    tail_theta = 1.0 / u**2
    tail_w = wu * c * np.exp(-(kappa**2) * u**2 / 4.0)

    theta = np.concatenate([trunk_theta, tail_theta])
    weights = np.concatenate([trunk_w, tail_w])
    weights = weights / math.fsum(weights.tolist())
    pairs = tuple(zip(theta.tolist(), weights.tolist()))

    def lst(u):
        return math.exp(-kappa * math.sqrt(u))

    def lst_deriv(u):
        r = math.sqrt(u)
        return -kappa / (2.0 * r) * math.exp(-kappa * r)

    def sampler(rng, size):
        z = rng.standard_normal(size)
        return kappa**2 / (2.0 * z**2)

    return MixingLawHandle(lst, lst_deriv, pairs, label=f"levy(kappa={kappa:g})", sampler=sampler)


def point_mass_mixing(theta0: float) -> MixingLawHandle:
    """Degenerate mixing at theta0 > 0 (independent exponentials scaled by theta0)."""
    if not (theta0 > 0.0 and math.isfinite(theta0)):
        raise ModelSpecError(f"point mass location must be positive, got {theta0}")

    def lst(u):
        return math.exp(-theta0 * u)

    def lst_deriv(u):
        return -theta0 * math.exp(-theta0 * u)

    def sampler(rng, size):
        return np.full(size, theta0)

    return MixingLawHandle(
        lst, lst_deriv, ((theta0, 1.0),), label=f"point(theta={theta0:g})", sampler=sampler
    )
