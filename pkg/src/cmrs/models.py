"""Closed-form model families given at Laplace-transform level.

Every builder returns a JointTransformModel exposing the aggregate transform
L_S(z) = E[exp(-zS)] and the allocation transforms L_i(z) = E[X_i exp(-zS)]
for Re z > 0, together with any atoms of S (point masses split across risks).
The scalar allocation path delegates to the vectorized batch evaluator, so
both agree bit for bit by construction.

Each builder probes its aggregate transform near the origin at construction
time: L(1e-8) must sit within 1e-6 of 1, which catches unnormalized weights,
wrong signs and similar wiring mistakes before any inversion is attempted.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import lambertw, roots_hermite

from .errors import (
    DomainError,
    EvaluationError,
    ModelSpecError,
    SingularMatrixError,
)
from .mixing import MixingLawHandle
from .transforms import AtomEntry, AtomSet, JointTransformModel

_PROBE_T = 1e-8
_PROBE_TOL = 1e-6


def _probe_unit_mass(agg: Callable, label: str) -> None:
    try:
        v = complex(agg(_PROBE_T))
    except Exception as exc:
        raise ModelSpecError(f"{label}: aggregate transform failed near 0: {exc}") from exc
    if not (abs(v - 1.0) <= _PROBE_TOL):
        raise ModelSpecError(
            f"{label}: aggregate transform at t={_PROBE_T} is {v}, expected 1 within {_PROBE_TOL}"
        )


def _positive_tuple(values: Sequence[float], what: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not out:
        raise ModelSpecError(f"{what} must be nonempty")
    if not all(math.isfinite(v) and v > 0.0 for v in out):
        raise ModelSpecError(f"{what} must be finite and positive, got {out}")
    return out


# ---------------------------------------------------------------------------
# linear solves


def complex_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for complex A by LU with partial pivoting.

    Raises SingularMatrixError when a pivot falls below 1e-14 * max|A| or when
    the residual fails |Ax - b| <= 1e-10 (|A| |x| + |b|) in the max norm.
    """
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape[0] != n:
        raise ModelSpecError(f"shape mismatch: A {A.shape}, b {b.shape}")
    scale = np.abs(A).max()
    if not (scale > 0.0 and np.isfinite(scale)):
        raise SingularMatrixError(f"matrix has no finite nonzero entries (max |A| = {scale})")
    lu = A.copy()
    x = b.astype(complex).copy()
    for col in range(n):
        p = col + int(np.argmax(np.abs(lu[col:, col])))
        if abs(lu[p, col]) < 1e-14 * scale:
            raise SingularMatrixError(
                f"pivot {abs(lu[p, col]):.3e} below 1e-14 * max|A| at column {col}"
            )
        if p != col:
            lu[[col, p]] = lu[[p, col]]
            x[[col, p]] = x[[p, col]]
        piv = lu[col, col]
        for r in range(col + 1, n):
            m = lu[r, col] / piv
            lu[r, col] = m
            if m != 0.0:
                lu[r, col + 1 :] -= m * lu[col, col + 1 :]
                x[r] = x[r] - m * x[col]
    for r in range(n - 1, -1, -1):
        if r + 1 < n:
            x[r] = x[r] - np.dot(lu[r, r + 1 :], x[r + 1 :])
        x[r] = x[r] / lu[r, r]
    resid = np.abs(A @ x - b).max()
    bound = 1e-10 * (scale * np.abs(x).max() + np.abs(b).max())
    if not (resid <= bound):
        raise SingularMatrixError(f"solve residual {resid:.3e} exceeds bound {bound:.3e}")
    return x


# ---------------------------------------------------------------------------
# mixed-exponential frailty


@dataclass(frozen=True)
class MixedExpFrailtySpec:
    """Conditionally exponential risks: given Theta = theta, X_j is
    exponential with rate theta / lambda_j, independently across j."""

    lambdas: tuple[float, ...]
    mixing: MixingLawHandle

    def __post_init__(self) -> None:
        object.__setattr__(self, "lambdas", _positive_tuple(self.lambdas, "lambdas"))


def build_mixed_exp_frailty(spec: MixedExpFrailtySpec) -> JointTransformModel:
    """Transform model for a mixed-exponential frailty portfolio.

    Expectations over Theta use the mixing law's quadrature nodes; with the
    shipped rules the node error is far below inversion error.
    """
    lam = np.array(spec.lambdas)
    n = len(spec.lambdas)
    theta = spec.mixing.nodes
    w = spec.mixing.weights
    if (theta <= 0.0).any():
        raise ModelSpecError("frailty mixing needs strictly positive quadrature locations")
    r = theta[:, None] / lam[None, :]  # (nodes, risks)

    def aggregate(z):
        return complex(np.dot(w, np.prod(r / (r + z), axis=1)))

    def batch(z):
        fk = np.prod(r / (r + z), axis=1)
        return (w * fk) @ (1.0 / (r + z))

    def allocation(i, z):
        return complex(batch(z)[i])

    model = JointTransformModel(
        n=n,
        aggregate_transform=aggregate,
        allocation_transform=allocation,
        batch_allocation_transform=batch,
        label=f"mixed_exp_frailty(n={n},{spec.mixing.label})",
    )
    _probe_unit_mass(aggregate, model.label)
    return model


# ---------------------------------------------------------------------------
# exponential-dispersion frailty


@dataclass(frozen=True)
class EdfFrailtySpec:
    """Risks from exponential-dispersion families joined by a common frailty.

    Risk j has cumulant function kappa_j, canonical parameter eta_j(theta)
    driven by the frailty, and dispersion phi_j.  ``t_max`` declares the
    largest Re z for which every kappa_j(eta_j(theta_k) - phi_j z) stays
    inside the cumulant domain; evaluation beyond it is refused rather than
    guessed at.
    """

    cumulants: tuple[Callable, ...]
    cumulant_derivs: tuple[Callable, ...]
    canonical_maps: tuple[Callable, ...]
    dispersions: tuple[float, ...]
    mixing: MixingLawHandle
    t_max: float

    def __post_init__(self) -> None:
        n = len(self.cumulants)
        if n == 0:
            raise ModelSpecError("need at least one risk")
        if not (len(self.cumulant_derivs) == len(self.canonical_maps) == len(self.dispersions) == n):
            raise ModelSpecError("cumulants, derivs, canonical maps and dispersions must align")
        object.__setattr__(self, "cumulants", tuple(self.cumulants))
        object.__setattr__(self, "cumulant_derivs", tuple(self.cumulant_derivs))
        object.__setattr__(self, "canonical_maps", tuple(self.canonical_maps))
        object.__setattr__(self, "dispersions", _positive_tuple(self.dispersions, "dispersions"))
        if not (self.t_max > 0.0):
            raise ModelSpecError(f"t_max must be positive, got {self.t_max}")

    @property
    def n(self) -> int:
        return len(self.cumulants)


def build_edf_frailty(spec: EdfFrailtySpec) -> JointTransformModel:
    n = spec.n
    theta = spec.mixing.nodes
    w = spec.mixing.weights
    etas = [np.array([spec.canonical_maps[j](t) for t in theta]) for j in range(n)]
    base = [np.array([spec.cumulants[j](e) for e in etas[j]]) for j in range(n)]

    def _check(z: complex) -> complex:
        z = complex(z)
        if z.real > spec.t_max:
            raise DomainError(
                f"Re z = {z.real} exceeds declared cumulant domain t_max = {spec.t_max}"
            )
        return z

    def _log_factors(z):
        # (nodes,) array of sum_j (kappa_j(eta_j - phi_j z) - kappa_j(eta_j)) / phi_j
        acc = np.zeros(len(theta), dtype=complex)
        for j in range(n):
            phi = spec.dispersions[j]
            kj = spec.cumulants[j]
            acc += (np.array([kj(e - phi * z) for e in etas[j]]) - base[j]) / phi
        return acc

    def aggregate(z):
        z = _check(z)
        return complex(np.dot(w, np.exp(_log_factors(z))))

    def batch(z):
        z = _check(z)
        ex = w * np.exp(_log_factors(z))
        out = np.empty(n, dtype=complex)
        for i in range(n):
            phi = spec.dispersions[i]
            ki = spec.cumulant_derivs[i]
            out[i] = np.dot(ex, np.array([ki(e - phi * z) for e in etas[i]]))
        return out

    def allocation(i, z):
        return complex(batch(z)[i])

    model = JointTransformModel(
        n=n,
        aggregate_transform=aggregate,
        allocation_transform=allocation,
        batch_allocation_transform=batch,
        label=f"edf_frailty(n={n},{spec.mixing.label})",
    )
    _probe_unit_mass(aggregate, model.label)
    return model


# ---------------------------------------------------------------------------
# matrix-exponential risks


@dataclass(frozen=True, eq=False)
class MatrixExpSpec:
    """One matrix-exponential risk: L_X(z) = p0 + alpha (zI - T)^{-1} u.

    No phase-type structure is assumed; any (alpha, T, u, p0) giving a valid
    transform is accepted, and validity is probed rather than certified.
    """

    alpha: np.ndarray
    T: np.ndarray
    u: np.ndarray
    p0: float = 0.0

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        T = np.atleast_2d(np.asarray(self.T, dtype=float))
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        d = a.shape[0]
        if T.shape != (d, d) or u.shape != (d,):
            raise ModelSpecError(
                f"dimension mismatch: alpha {a.shape}, T {T.shape}, u {u.shape}"
            )
        if not (np.isfinite(a).all() and np.isfinite(T).all() and np.isfinite(u).all()):
            raise ModelSpecError("matrix-exponential parameters must be finite")
        if not (0.0 <= self.p0 < 1.0):
            raise ModelSpecError(f"p0 must lie in [0, 1), got {self.p0}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "u", u)

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]

    def lst(self, z: complex) -> complex:
        M = z * np.eye(self.dim) - self.T
        return self.p0 + complex(np.dot(self.alpha, complex_solve(M, self.u)))

    def mean_lst(self, z: complex) -> complex:
        """E[X exp(-zX)] = alpha (zI - T)^{-2} u, via two solves."""
        M = z * np.eye(self.dim) - self.T
        y = complex_solve(M, self.u)
        return complex(np.dot(self.alpha, complex_solve(M, y)))


def is_phase_type(spec: MatrixExpSpec, tol: float = 1e-9) -> bool:
    """True when (alpha, T, u, p0) is an explicit phase-type representation:
    sub-generator T, nonnegative entry vector, exit rates u = -T 1."""
    T = spec.T
    off = T - np.diag(np.diag(T))
    if (off < -tol).any() or (np.diag(T) > tol).any():
        return False
    if (spec.alpha < -tol).any():
        return False
    if abs(spec.p0 + spec.alpha.sum() - 1.0) > 1e-8:
        return False
    return bool(np.abs(spec.u + T.sum(axis=1)).max() <= max(tol, 1e-9 * np.abs(T).max()))


def exponential_me_spec(rate: float) -> MatrixExpSpec:
    if not (rate > 0.0):
        raise ModelSpecError(f"rate must be positive, got {rate}")
    return MatrixExpSpec(np.array([1.0]), np.array([[-rate]]), np.array([rate]))


def erlang_me_spec(k: int, rate: float) -> MatrixExpSpec:
    """Erlang(k, rate) as a k-stage chain."""
    if k < 1:
        raise ModelSpecError(f"need k >= 1 stages, got {k}")
    if not (rate > 0.0):
        raise ModelSpecError(f"rate must be positive, got {rate}")
    T = -rate * np.eye(k) + rate * np.eye(k, k=1)
    u = np.zeros(k)
    u[-1] = rate
    alpha = np.zeros(k)
    alpha[0] = 1.0
    return MatrixExpSpec(alpha, T, u)


def build_matrix_exp(specs: Sequence[MatrixExpSpec]) -> JointTransformModel:
    """Independent sum of matrix-exponential risks."""
    specs = tuple(specs)
    if not specs:
        raise ModelSpecError("need at least one risk")
    n = len(specs)
    for k, sp in enumerate(specs):
        v = complex(sp.lst(1e-6))
        if not (abs(v.imag) <= 1e-12 and 0.0 < v.real <= 1.0 + 1e-9):
            raise ModelSpecError(f"risk {k}: transform probe at z=1e-6 gave {v}, not in (0, 1]")
        if abs(sp.lst(_PROBE_T) - 1.0) > _PROBE_TOL:
            raise ModelSpecError(f"risk {k}: transform at t={_PROBE_T} not within {_PROBE_TOL} of 1")

    def aggregate(z):
        out = 1.0 + 0.0j
        for sp in specs:
            out *= sp.lst(z)
        return out

    def batch(z):
        vals = [sp.lst(z) for sp in specs]
        pre = np.ones(n + 1, dtype=complex)
        for j in range(n):
            pre[j + 1] = pre[j] * vals[j]
        suf = np.ones(n + 1, dtype=complex)
        for j in range(n - 1, -1, -1):
            suf[j] = suf[j + 1] * vals[j]
        return np.array([specs[i].mean_lst(z) * pre[i] * suf[i + 1] for i in range(n)])

    def allocation(i, z):
        return complex(batch(z)[i])

    atom_mass = math.prod(sp.p0 for sp in specs)
    atoms = AtomSet(
        (AtomEntry(0.0, atom_mass, (0.0,) * n),) if atom_mass > 0.0 else ()
    )
    model = JointTransformModel(
        n=n,
        aggregate_transform=aggregate,
        allocation_transform=allocation,
        batch_allocation_transform=batch,
        atoms=atoms,
        label=f"matrix_exp(n={n})",
    )
    _probe_unit_mass(aggregate, model.label)
    return model


# ---------------------------------------------------------------------------
# compound sums with (a, b, 0) frequencies


@dataclass(frozen=True)
class SeverityHandle:
    """Severity law at transform level: lst(z) = E[exp(-zY)] and
    mean_lst(z) = E[Y exp(-zY)]; zero_mass = P(Y = 0)."""

    lst: Callable[[complex], complex]
    mean_lst: Callable[[complex], complex]
    mean: Optional[float] = None
    zero_mass: float = 0.0
    sampler: Optional[Callable] = None
    label: str = ""


def exponential_severity(rate: float) -> SeverityHandle:
    if not (rate > 0.0 and math.isfinite(rate)):
        raise ModelSpecError(f"severity rate must be positive, got {rate}")

    def sampler(rng, size):
        return rng.exponential(1.0 / rate, size)

    return SeverityHandle(
        lst=lambda z: rate / (rate + z),
        mean_lst=lambda z: rate / (rate + z) ** 2,
        mean=1.0 / rate,
        sampler=sampler,
        label=f"exp(rate={rate:g})",
    )


_KATZ_KINDS = ("degenerate", "poisson", "binomial", "negbin")


def _katz_kind(a: float, b: float) -> str:
    if a == 0.0 and b == 0.0:
        return "degenerate"
    if a == 0.0:
        if b < 0.0:
            raise ModelSpecError(f"frequency (a=0, b={b}) is not a counting law")
        return "poisson"
    if a < 0.0:
        m = -(a + b) / a
        if m <= 0.0 or abs(m - round(m)) > 1e-8:
            raise ModelSpecError(
                f"(a={a}, b={b}) needs -(a+b)/a to be a positive integer, got {m}"
            )
        return "binomial"
    if a < 1.0:
        if a + b <= 0.0:
            raise ModelSpecError(f"(a={a}, b={b}) needs a + b > 0")
        return "negbin"
    raise ModelSpecError(f"frequency slope a must be < 1, got a={a}")


@dataclass(frozen=True)
class KatzCompoundSpec:
    """Independent compound sums whose claim counts follow the (a, b, 0)
    recursion p_k / p_{k-1} = a + b / k."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    severities: tuple[SeverityHandle, ...]
    kinds: tuple[str, ...] = field(init=False, compare=False)

    def __post_init__(self) -> None:
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        if not a or len(a) != len(b) or len(a) != len(self.severities):
            raise ModelSpecError("a, b and severities must have equal positive length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "kinds", tuple(_katz_kind(ai, bi) for ai, bi in zip(a, b)))

    @property
    def n(self) -> int:
        return len(self.a)

    def count_mean(self, i: int) -> float:
        return (self.a[i] + self.b[i]) / (1.0 - self.a[i])


def _katz_pgf(kind: str, a: float, b: float, w: complex) -> complex:
    if kind == "degenerate":
        return 1.0 + 0.0j
    if kind == "poisson":
        return cmath.exp(b * (w - 1.0))
    if (a * w).real >= 1.0 - 1e-15:
        raise EvaluationError(f"frequency pgf evaluated at aw = {a * w}, too close to 1")
    if kind == "binomial":
        m = round(-(a + b) / a)
        p = a / (a - 1.0)
        return (1.0 - p + p * w) ** m
    return ((1.0 - a) / (1.0 - a * w)) ** ((a + b) / a)


def build_katz_compound(spec: KatzCompoundSpec) -> JointTransformModel:
    n = spec.n

    def aggregate(z):
        out = 1.0 + 0.0j
        for i in range(n):
            out *= _katz_pgf(spec.kinds[i], spec.a[i], spec.b[i], spec.severities[i].lst(z))
        return out

    def batch(z):
        ls = aggregate(z)
        out = np.empty(n, dtype=complex)
        for i in range(n):
            a, b = spec.a[i], spec.b[i]
            if spec.kinds[i] == "degenerate":
                out[i] = 0.0
                continue
            phi = spec.severities[i].lst(z)
            if (a * phi).real >= 1.0 - 1e-15:
                raise EvaluationError(f"frequency pgf evaluated at aw = {a * phi}, too close to 1")
            out[i] = (a + b) / (1.0 - a * phi) * spec.severities[i].mean_lst(z) * ls
        return out

    def allocation(i, z):
        return complex(batch(z)[i])

    atom_mass = 1.0
    for i in range(n):
        atom_mass *= abs(
            _katz_pgf(spec.kinds[i], spec.a[i], spec.b[i], spec.severities[i].zero_mass)
        )
    atoms = AtomSet(
        (AtomEntry(0.0, atom_mass, (0.0,) * n),) if atom_mass > 0.0 else ()
    )
    means = None
    if all(sev.mean is not None for sev in spec.severities):
        means = tuple(spec.count_mean(i) * spec.severities[i].mean for i in range(n))
    model = JointTransformModel(
        n=n,
        aggregate_transform=aggregate,
        allocation_transform=allocation,
        batch_allocation_transform=batch,
        atoms=atoms,
        means=means,
        label=f"katz_compound(n={n})",
    )
    _probe_unit_mass(aggregate, model.label)
    return model


# ---------------------------------------------------------------------------
# common-shock compound Poisson portfolio


@dataclass(frozen=True)
class CommonShockCPSpec:
    """Compound Poisson risks sharing one shock stream.

    A common Poisson(lambda0) stream produces Exp(beta0) amounts split across
    risks in fixed proportions ``weights``; risk i additionally carries its
    own compound Poisson(lambdas[i]) / Exp(betas[i]) stream.
    """

    lambda0: float
    lambdas: tuple[float, ...]
    beta0: float
    betas: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        lams = tuple(float(v) for v in self.lambdas)
        betas = tuple(float(v) for v in self.betas)
        w = tuple(float(v) for v in self.weights)
        if not lams or len(lams) != len(betas) or len(lams) != len(w):
            raise ModelSpecError("lambdas, betas and weights must have equal positive length")
        if self.lambda0 < 0.0 or any(v < 0.0 for v in lams):
            raise ModelSpecError("claim rates must be >= 0")
        if self.lambda0 + sum(lams) <= 0.0:
            raise ModelSpecError("at least one claim rate must be positive")
        if not (self.beta0 > 0.0) or any(not (v > 0.0) for v in betas):
            raise ModelSpecError("claim size rates must be positive")
        if any(v < 0.0 for v in w):
            raise ModelSpecError(f"split weights must be >= 0, got {w}")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ModelSpecError(f"split weights must sum to 1 within 1e-12, got sum {math.fsum(w)!r}")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.lambdas)

    @property
    def total_rate(self) -> float:
        return self.lambda0 + math.fsum(self.lambdas)


def build_common_shock_cp(spec: CommonShockCPSpec) -> JointTransformModel:
    n = spec.n
    lam0, b0 = spec.lambda0, spec.beta0
    lam = np.array(spec.lambdas)
    bet = np.array(spec.betas)
    p = np.array(spec.weights)

    def aggregate(z):
        acc = lam0 * (b0 / (b0 + z) - 1.0)
        acc += np.sum(lam * (bet / (bet + z) - 1.0))
        return cmath.exp(acc)

    def batch(z):
        return aggregate(z) * (lam0 * p * b0 / (b0 + z) ** 2 + lam * bet / (bet + z) ** 2)

    def allocation(i, z):
        return complex(batch(z)[i])

    atoms = AtomSet((AtomEntry(0.0, math.exp(-spec.total_rate), (0.0,) * n),))
    means = tuple(float(lam0 * p[i] / b0 + lam[i] / bet[i]) for i in range(n))
    model = JointTransformModel(
        n=n,
        aggregate_transform=aggregate,
        allocation_transform=allocation,
        batch_allocation_transform=batch,
        atoms=atoms,
        means=means,
        label=f"common_shock_cp(n={n})",
    )
    _probe_unit_mass(aggregate, model.label)
    return model


# ---------------------------------------------------------------------------
# lognormal portfolio (Gauss-Hermite transform approximation)


@lru_cache(maxsize=None)
def _gh_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    # nodes v_j plus log(w_j) + v_j^2; edge weights underflow to 0 for very
    # large rules, log turns them into -inf terms that drop out cleanly
    v, w = roots_hermite(order)
    with np.errstate(divide="ignore"):
        return v, np.log(w) + v * v


_EXP_UNDERFLOW = -700.0


def _lognormal_sum(mu: float, sigma: float, z: complex, order: int, factor: bool, stats=None):
    """E[Y^factor exp(-z Y)] for Y lognormal(mu, sigma), Re z >= 0.

    Plain quadrature in the normal variable loses all digits once |Im z| is
    large, because exp(-z e^(mu + sigma x)) oscillates with unbounded local
    frequency.  Instead the integration ray is rotated by psi = arg(z), which
    turns the kernel into exp(-|z| t) on the ray and leaves a bounded
    oscillation exp(i psi x / sigma); a Gauss-Hermite rule centered on the
    Lambert-W saddle of the rotated exponent then converges uniformly in
    |Im z|.  Terms whose total exponent has real part below -700 are dropped
    (they underflow anyway); drops are counted in ``stats['suppressed_terms']``
    when a stats dict is supplied."""
    zc = complex(z)
    if zc.real < 0.0 or (zc.real == 0.0 and zc.imag != 0.0):
        raise DomainError(f"lognormal transform needs Re z >= 0, got {zc}")
    radius = abs(zc)
    psi = math.atan2(zc.imag, zc.real)
    v, logw = _gh_rule(order)
    if psi * psi / (2.0 * sigma * sigma) > 600.0:
        # near-degenerate margin: the rotated representation is
        # ill-conditioned (terms ~ exp(psi^2/(2 sigma^2))), but the kernel
        # barely oscillates, so the direct rule is the accurate one here
        x = math.sqrt(2.0) * sigma * v
        expo = logw - v * v - zc * np.exp(mu + x)
        if factor:
            expo = expo + (mu + x)
        lam = 1.0
        phase = 1.0 + 0.0j
    else:
        sad = float(lambertw(radius * sigma * sigma * math.exp(mu)).real)
        x0 = -sad / sigma
        lam = 1.0 / math.sqrt(1.0 + sad)
        x = x0 + math.sqrt(2.0) * lam * v
        expo = (
            logw
            - 0.5 * x * x
            + (1j * psi / sigma) * x
            - radius * np.exp(mu + sigma * x)
            + psi * psi / (2.0 * sigma * sigma)
        )
        if factor:
            expo = expo + (mu + sigma * x)
        phase = cmath.exp(-1j * psi) if factor else 1.0 + 0.0j
    keep = expo.real >= _EXP_UNDERFLOW
    dropped = int((~keep).sum())
    if dropped and stats is not None:
        stats["suppressed_terms"] = stats.get("suppressed_terms", 0) + dropped
    if not keep.any():
        return 0.0 + 0.0j
    return (lam / math.sqrt(math.pi)) * phase * complex(np.exp(expo[keep]).sum())


def lognormal_lst(mu: float, sigma: float, z: complex, gh_order: int = 64) -> complex:
    """Saddle-centered quadrature approximation of E[exp(-z Y)] for Y
    lognormal(mu, sigma)."""
    return _lognormal_sum(mu, sigma, z, gh_order, factor=False)


def lognormal_lst_deriv(mu: float, sigma: float, z: complex, gh_order: int = 64) -> complex:
    """d/dz of the same approximation: -E[Y exp(-z Y)]."""
    return -_lognormal_sum(mu, sigma, z, gh_order, factor=True)


@dataclass(frozen=True)
class LognormalPortfolioSpec:
    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    gh_order: int = 64

    def __post_init__(self) -> None:
        mu = tuple(float(v) for v in self.mu)
        sig = tuple(float(v) for v in self.sigma)
        if not mu or len(mu) != len(sig):
            raise ModelSpecError("mu and sigma must have equal positive length")
        if not all(math.isfinite(v) for v in mu):
            raise ModelSpecError(f"mu must be finite, got {mu}")
        if not all(math.isfinite(v) and v > 0.0 for v in sig):
            raise ModelSpecError(f"sigma must be finite and positive, got {sig}")
        if self.gh_order < 2 or self.gh_order % 2:
            raise ModelSpecError(f"gh_order must be a positive even integer, got {self.gh_order}")
        if max(sig) > 3.0:
            warnings.warn(
                f"sigma = {max(sig):g} > 3: the quadrature transform loses accuracy "
                "for very heavy lognormal tails",
                stacklevel=2,
            )
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sig)

    @classmethod
    def from_moments(
        cls, means: Sequence[float], variances: Sequence[float], gh_order: int = 64
    ) -> "LognormalPortfolioSpec":
        means = tuple(float(v) for v in means)
        variances = tuple(float(v) for v in variances)
        if len(means) != len(variances):
            raise ModelSpecError("means and variances must have equal length")
        if any(m <= 0.0 for m in means) or any(v <= 0.0 for v in variances):
            raise ModelSpecError("moment matching needs positive means and variances")
        sig2 = tuple(math.log1p(v / m**2) for m, v in zip(means, variances))
        mu = tuple(math.log(m) - s2 / 2.0 for m, s2 in zip(means, sig2))
        return cls(mu, tuple(math.sqrt(s2) for s2 in sig2), gh_order)

    @property
    def n(self) -> int:
        return len(self.mu)


def build_lognormal_portfolio(spec: LognormalPortfolioSpec) -> JointTransformModel:
    n = spec.n
    stats: dict = {}

    def _lsts(z):
        return [
            _lognormal_sum(spec.mu[j], spec.sigma[j], z, spec.gh_order, False, stats)
            for j in range(n)
        ]

    def aggregate(z):
        out = 1.0 + 0.0j
        for v in _lsts(z):
            out *= v
        return out

    def batch(z):
        vals = _lsts(z)
        pre = np.ones(n + 1, dtype=complex)
        for j in range(n):
            pre[j + 1] = pre[j] * vals[j]
        suf = np.ones(n + 1, dtype=complex)
        for j in range(n - 1, -1, -1):
            suf[j] = suf[j + 1] * vals[j]
        return np.array(
            [
                _lognormal_sum(spec.mu[i], spec.sigma[i], z, spec.gh_order, True, stats)
                * pre[i]
                * suf[i + 1]
                for i in range(n)
            ]
        )

    def allocation(i, z):
        return complex(batch(z)[i])

    means = tuple(math.exp(m + s**2 / 2.0) for m, s in zip(spec.mu, spec.sigma))
    model = JointTransformModel(
        n=n,
        aggregate_transform=aggregate,
        allocation_transform=allocation,
        batch_allocation_transform=batch,
        means=means,
        label=f"lognormal(n={n},gh={spec.gh_order})",
        stats=stats,
    )
    _probe_unit_mass(aggregate, model.label)
    return model
