"""Exact joint law of the pair (returns to 0, visits to x).

Everything here is a closed-form function of the site constants
(gamma, gamma_x, q_x, s_x, m_x); the one nontrivial object is the joint
pmf oracle, which rebuilds the law by convolving per-excursion visit
distributions and must reproduce the moment generating function.

Two deliberately independent routes to the restricted MGF are kept: the
direct (q, s) product form and the phi/psi form.  They are cross-checked
at every evaluation, never collapsed.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .errors import OriginNotAllowed, OutOfDomain
from .green import DerivedConstants

__all__ = [
    "JointSite",
    "site_pack",
    "bare_sup",
    "estimate_window",
    "phi",
    "psi",
    "psi_envelope",
    "k_gamma",
    "log_phi_dev_bound",
    "restricted_mgf",
    "marginal_visit_law",
    "ExcursionLaw",
    "excursion_law",
    "JointLaw",
    "joint_pmf_oracle",
]


class JointSite(NamedTuple):
    gamma: float
    gamma_x: float
    q_x: float
    s_x: float
    m_x: float


def site_pack(dc: DerivedConstants, x) -> JointSite:
    t = tuple(int(c) for c in x)
    if all(c == 0 for c in t):
        raise OriginNotAllowed("joint law couples the origin with x != 0")
    s = dc.site(t)
    return JointSite(
        gamma=dc.gamma, gamma_x=s.gamma_x, q_x=s.q_x, s_x=s.s_x, m_x=s.m_x
    )


def bare_sup(gamma: float) -> float:
    """Upper end of the v-domain for bare MGF evaluation, log(1/(1-gamma)).

    Inside it q_x e^v < 1 automatically, since q_x <= 1 - gamma.
    """
    return -math.log1p(-gamma)


def estimate_window(gamma: float) -> Tuple[float, float]:
    """The stricter window log(1 -+ gamma(1-gamma)) used by the phi/psi
    estimates; |e^v - 1| < gamma(1-gamma) holds exactly on it."""
    g = gamma * (1.0 - gamma)
    return math.log1p(-g), math.log1p(g)


def _check_domain(v: float, gamma: float, strict: bool) -> None:
    if strict:
        lo, hi = estimate_window(gamma)
        if not lo < v < hi:
            raise OutOfDomain(f"v={v} outside estimate window ({lo:.6f}, {hi:.6f})")
    elif v >= bare_sup(gamma):
        raise OutOfDomain(f"v={v} >= log(1/(1-gamma)) = {bare_sup(gamma):.6f}")


def _uy(v: float, c: JointSite) -> Tuple[float, float]:
    ev1 = math.expm1(v)
    one_g = 1.0 - c.gamma
    one_gx = 1.0 - c.gamma_x
    u = (one_g * one_g - one_gx * one_gx) / (c.gamma * one_g) * ev1
    y = (one_g - one_gx * one_gx) / c.gamma * ev1
    return u, y


def phi(v: float, c: JointSite, strict: bool = False) -> float:
    """Per-excursion visit MGF given a finite return time: (1-u)/(1-y)."""
    _check_domain(v, c.gamma, strict)
    u, y = _uy(v, c)
    if abs(1.0 - y) < 1e-14:
        raise OutOfDomain(f"phi denominator vanishes at v={v}")
    return (1.0 - u) / (1.0 - y)


def psi(v: float, c: JointSite, strict: bool = False) -> float:
    """Visit MGF of the final (escaping) excursion."""
    _check_domain(v, c.gamma, strict)
    _, y = _uy(v, c)
    if abs(1.0 - y) < 1e-14:
        raise OutOfDomain(f"psi denominator vanishes at v={v}")
    num = 1.0 - (c.gamma_x - c.gamma) / c.gamma * math.expm1(v)
    return num / (1.0 - y)


def psi_envelope(v: float, gamma: float) -> float:
    """Uniform-in-x bound (1+|e^v-1|)/(1-|e^v-1|/gamma) on psi."""
    a = abs(math.expm1(v))
    if a >= gamma:
        raise OutOfDomain(f"|e^v-1| = {a:.6f} >= gamma")
    return (1.0 + a) / (1.0 - a / gamma)


def k_gamma(v: float, gamma: float) -> float:
    """Geometric-series constant controlling |log phi(v) - m_x v| / (m_x v^2).

    Both u and y are bounded by rho = |e^v-1|/(gamma(1-gamma)), so the
    Taylor remainder of log((1-u)/(1-y)) is m_x |e^v-1| rho/(1-rho); the
    constant below is that series summed, 1/(gamma(1-gamma) - |e^v-1|).
    """
    a = abs(math.expm1(v))
    g = gamma * (1.0 - gamma)
    if a >= g:
        raise OutOfDomain(f"|e^v-1| = {a:.6f} >= gamma(1-gamma) = {g:.6f}")
    return 1.0 / (g - a)


def log_phi_dev_bound(v: float, c: JointSite) -> float:
    """Bound on |log phi(v) - m_x v| over the estimate window."""
    return c.m_x * v * v * k_gamma(v, c.gamma)


def _mgf_qs(v: float, k: int, c: JointSite) -> float:
    ev = math.exp(v)
    den = 1.0 - c.q_x * ev
    if den <= 0.0:
        raise OutOfDomain(f"q_x e^v = {c.q_x * ev:.6f} >= 1")
    per = c.q_x + c.s_x * c.s_x * ev / den
    hat = (1.0 - c.q_x - c.s_x) * (1.0 + c.s_x * ev / den)
    return per ** k * hat


def _mgf_phipsi(v: float, k: int, c: JointSite) -> float:
    return c.gamma * (1.0 - c.gamma) ** k * phi(v, c) ** k * psi(v, c)


def restricted_mgf(v: float, k: int, c: JointSite, form: str = "both") -> float:
    """E(e^{v xi(x,inf)}; xi(0,inf)=k), the joint transform at row k.

    form="both" evaluates the (q,s) product form and the phi/psi form and
    demands agreement to 1e-12; the individual forms are for tests that
    want one route in isolation.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    _check_domain(v, c.gamma, strict=False)
    if form == "qs":
        return _mgf_qs(v, k, c)
    if form == "phipsi":
        return _mgf_phipsi(v, k, c)
    if form != "both":
        raise ValueError(f"unknown form {form!r}")
    a = _mgf_qs(v, k, c)
    b = _mgf_phipsi(v, k, c)
    if abs(a - b) > 1e-12 * max(1.0, abs(a)):
        raise ArithmeticError(
            f"dual MGF forms disagree at v={v}, k={k}: {a!r} vs {b!r}"
        )
    return a


def marginal_visit_law(j: int, c: JointSite) -> float:
    """P(xi(x,inf) = j): gamma_x at j=0, then a geometric tail with the
    return probability 1-gamma by translation invariance."""
    if j < 0:
        raise ValueError("j must be nonnegative")
    if j == 0:
        return c.gamma_x
    return (1.0 - c.gamma_x) * (1.0 - c.gamma) ** (j - 1) * c.gamma


@dataclass(frozen=True)
class ExcursionLaw:
    """Visit-count laws for one excursion from 0, split by whether the
    walk returns (mass 1-gamma) or escapes (mass gamma)."""

    q_x: float
    s_x: float

    def pmf_finite(self, j: int) -> float:
        if j < 0:
            raise ValueError("j must be nonnegative")
        if j == 0:
            return self.q_x
        return self.s_x * self.s_x * self.q_x ** (j - 1)

    def pmf_infinite(self, j: int) -> float:
        if j < 0:
            raise ValueError("j must be nonnegative")
        atom = 1.0 - self.q_x - self.s_x
        if j == 0:
            return atom
        return self.s_x * atom * self.q_x ** (j - 1)

    def mass_finite(self) -> float:
        return self.q_x + self.s_x * self.s_x / (1.0 - self.q_x)

    def mass_infinite(self) -> float:
        atom = 1.0 - self.q_x - self.s_x
        return atom * (1.0 + self.s_x / (1.0 - self.q_x))


def excursion_law(c: JointSite) -> ExcursionLaw:
    return ExcursionLaw(q_x=c.q_x, s_x=c.s_x)


@dataclass(frozen=True)
class JointLaw:
    """Truncated joint pmf P(xi(0,inf)=k, xi(x,inf)=j), k <= K, j <= J.

    Tails are never dropped: row_tail[k] holds the exact j > J mass of
    row k (by subtraction from the closed-form row mass gamma(1-gamma)^k)
    and high_k_mass holds the k > K block, (1-gamma)^{K+1}.
    """

    x: Optional[Tuple[int, ...]]
    K: int
    J: int
    gamma: float
    pmf: np.ndarray
    row_tail: np.ndarray
    high_k_mass: float

    def row_sum(self, k: int) -> float:
        return math.fsum(self.pmf[k].tolist()) + float(self.row_tail[k])

    def total_mass(self) -> float:
        parts = [float(v) for v in self.pmf.ravel()]
        parts.extend(float(v) for v in self.row_tail)
        parts.append(self.high_k_mass)
        return math.fsum(parts)


def joint_pmf_oracle(
    c: JointSite, K: int = 40, J: int = 40, x: Optional[Tuple[int, ...]] = None
) -> JointLaw:
    """Rebuild the joint law by convolution, independently of the MGF.

    Row k is the k-fold convolution of the finite-excursion law with one
    escaping-excursion law; masses multiply to gamma(1-gamma)^k without
    normalization.  Entries are accumulated with compensated summation
    since they span many orders of magnitude.
    """
    if K < 0 or J < 0:
        raise ValueError("K and J must be nonnegative")
    q, s = c.q_x, c.s_x
    atom = 1.0 - q - s

    fin = np.zeros(J + 1)
    fin[0] = q
    if J >= 1:
        fin[1:] = s * s * q ** np.arange(J, dtype=np.float64)
    inf_ = np.zeros(J + 1)
    inf_[0] = atom
    if J >= 1:
        inf_[1:] = s * atom * q ** np.arange(J, dtype=np.float64)

    pmf = np.zeros((K + 1, J + 1))
    row = inf_.copy()
    pmf[0] = row
    for k in range(1, K + 1):
        nxt = np.empty(J + 1)
        for j in range(J + 1):
            terms = [row[j - i] * fin[i] for i in range(j + 1)]
            nxt[j] = math.fsum(terms)
        row = nxt
        pmf[k] = row

    row_tail = np.empty(K + 1)
    for k in range(K + 1):
        mass = c.gamma * (1.0 - c.gamma) ** k
        row_tail[k] = mass - math.fsum(pmf[k].tolist())
    high = (1.0 - c.gamma) ** (K + 1)
    return JointLaw(
        x=x, K=K, J=J, gamma=c.gamma, pmf=pmf, row_tail=row_tail, high_k_mass=high
    )
