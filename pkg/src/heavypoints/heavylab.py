"""Heavy-point statistics over local-time fields.

Everything here is pure analysis of immutable fields: heavy sets at the
threshold k_n = floor((1-delta) * lam * log n), local-time profiles
over Q-norm balls normalised by the per-site factor m_x, coverage
radii, and the rare-event scan pairing a high local time at S_j with an
unvisited companion site nearby.

The underlying limit statements hold almost surely as n -> infinity; at
any finite n the brackets used by the test suite are Monte Carlo
calibrations, and the hypothesis flags on HeavyConfig merely evaluate
the smallness expressions at the given n rather than certifying a
limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _packing
from .errors import MissingConstants, MissingGreenValue
from .green import DerivedConstants
from .lattice import Ball, CovarianceData, enumerate_ball
from .walk import LocalTimeField, WalkRun

# advisory cutoff for "plausibly small at this n" hypothesis flags
_SMALLNESS_CUT = 0.5


@dataclass(frozen=True)
class HeavyConfig:
    """Threshold and ball parameters for one analysis scale n.

    k_n = floor((1-delta) * lam * log n) is the heavy threshold;
    beta_n = r^(2d-4) * log log n / log n is the profile smallness
    parameter.  Both are evaluated eagerly so reports can quote them.
    """

    n: int
    dim: int
    lam: float
    delta: float = 0.0
    r: float = 2.0
    eps: float = 0.25

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be >= 3 (log log n must be positive)")
        if self.dim < 3:
            raise ValueError("dim must be >= 3")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def k_n(self) -> int:
        return int(math.floor((1.0 - self.delta) * self.lam * math.log(self.n)))

    @property
    def beta_n(self) -> float:
        ln = math.log(self.n)
        return self.r ** (2 * self.dim - 4) * math.log(ln) / ln

    def hypothesis_flags(self) -> Dict[str, float]:
        """Evaluate the smallness hypotheses at this n (advisory only;
        no single n can certify a limit)."""
        beta = self.beta_n
        dr = self.delta * self.r ** (2 * self.dim - 4)
        return {
            "beta_n": beta,
            "beta_n_small": beta < _SMALLNESS_CUT,
            "delta_r_term": dr,
            "delta_r_small": dr < _SMALLNESS_CUT,
        }


def heavy_sites(field: LocalTimeField, cfg: HeavyConfig) -> np.ndarray:
    """A_n: sites z with xi(z, n) >= k_n, lexicographic order."""
    k = cfg.k_n
    if k < 1:
        raise ValueError(f"threshold k_n = {k} must be >= 1")
    mask = field.counts >= k
    return _packing.unpack_keys(field.keys[mask], field.dim)


def heavy_index_count(run: WalkRun, cfg: HeavyConfig) -> int:
    """|B_n| without the path: each visit before n to a site that is
    heavy in the H-field contributes exactly one index j."""
    k = cfg.k_n
    if k < 1:
        raise ValueError(f"threshold k_n = {k} must be >= 1")
    hk = run.field_H.keys[run.field_H.counts >= k]
    return int(run.field_n.lookup_keys(hk).sum())


def heavy_index_sites(run: WalkRun, cfg: HeavyConfig) -> np.ndarray:
    """Distinct sites {S_j : j in B_n}: visited by step n and heavy in
    the H-field.  Lexicographic order."""
    k = cfg.k_n
    if k < 1:
        raise ValueError(f"threshold k_n = {k} must be >= 1")
    hk = run.field_H.keys[run.field_H.counts >= k]
    seen = run.field_n.lookup_keys(hk) >= 1
    return _packing.unpack_keys(hk[seen], run.dim)


def heavy_indices(run: WalkRun, cfg: HeavyConfig) -> np.ndarray:
    """B_n: indices 1 <= j <= n with xi(S_j, H) >= k_n, ascending.

    Enumerating indices (rather than sites) requires the retained path.
    """
    if run.horizon <= run.n:
        raise ValueError("B_n needs horizon H > n")
    if run.path is None:
        raise ValueError("index enumeration requires a retained path")
    k = cfg.k_n
    if k < 1:
        raise ValueError(f"threshold k_n = {k} must be >= 1")
    coords = np.asarray(run.path[1:run.n + 1], dtype=np.int64)
    keys = _packing.pack_coords(coords, run.dim)
    vals = run.field_H.lookup_keys(keys)
    return np.flatnonzero(vals >= k).astype(np.int64) + 1


def _site_constants(constants: DerivedConstants, x: Tuple[int, ...]):
    try:
        return constants.site(x)
    except MissingGreenValue as exc:
        raise MissingConstants(str(exc)) from exc


def _ball_for(cfg_r: float, constants: DerivedConstants,
              ball: Optional[Ball]) -> Ball:
    if ball is not None:
        return ball
    if constants.cov is None:
        raise MissingConstants(
            "constants carry no covariance; pass a pre-built ball")
    return enumerate_ball(cfg_r, constants.cov)


def profile(field: LocalTimeField, center: Sequence[int], cfg: HeavyConfig,
            constants: DerivedConstants, ball: Optional[Ball] = None) -> Dict:
    """Local-time profile around one heavy center.

    For every x in the Q-norm ball B(r) reports the ratio
    xi(center+x, .) / (m_x * lam * log n) together with the sup and
    mean of |ratio - 1|, the statistic whose a.s. limit is 0.
    """
    z = tuple(int(c) for c in center)
    b = _ball_for(cfg.r, constants, ball)
    norm = cfg.lam * math.log(cfg.n)
    ratios: Dict[Tuple[int, ...], float] = {}
    counts: Dict[Tuple[int, ...], int] = {}
    devs = []
    for x in b.points:
        m_x = _site_constants(constants, x).m_x
        cnt = field.get(tuple(z[i] + x[i] for i in range(field.dim)))
        ratio = cnt / (m_x * norm)
        ratios[x] = ratio
        counts[x] = cnt
        devs.append(abs(ratio - 1.0))
    return {
        "center": z,
        "center_count": field.get(z),
        "ratios": ratios,
        "counts": counts,
        "sup_dev": max(devs) if devs else 0.0,
        "mean_dev": float(np.mean(devs)) if devs else 0.0,
    }


def neighbor_ratio(field: LocalTimeField, center: Sequence[int],
                   constants: DerivedConstants) -> float:
    """Mean over the 2d unit vectors e of xi(z+e) / (m_e * xi(z)).

    Self-normalised version of the profile statistic: the center's own
    count replaces lam * log n, so the ratio tends to 1 for heavy z
    without knowing n.
    """
    z = tuple(int(c) for c in center)
    kz = field.get(z)
    if kz < 1:
        raise ValueError("center was never visited")
    acc = []
    for ax in range(field.dim):
        for sgn in (1, -1):
            e = tuple(sgn if i == ax else 0 for i in range(field.dim))
            m_e = _site_constants(constants, e).m_x
            cnt = field.get(tuple(z[i] + e[i] for i in range(field.dim)))
            acc.append(cnt / (m_e * kz))
    return float(np.mean(acc))


@dataclass(frozen=True)
class CoverageResult:
    """Largest realizable Q-norm radius whose ball is fully visited.

    origin_only means even the nearest shell has an unvisited site, in
    which case radius is reported as 0 (the covered ball is {0} alone).
    """

    radius: float
    radius_sq: float
    origin_only: bool
    first_unvisited: Tuple[int, ...]


def coverage_radius(field: LocalTimeField, center: Sequence[int],
                    cov: CovarianceData) -> CoverageResult:
    """Scan shells outward from `center` until a site is unvisited.

    Candidates are sorted by Q-norm^2 (rounded to 9 decimals so float
    jitter cannot split a shell); the radius is the norm of the last
    shell below the first unvisited site.  Terminates because the field
    is finite.  The center itself must have been visited.
    """
    z = np.asarray([int(c) for c in center], dtype=np.int64)
    if field.get(z) < 1:
        raise ValueError("center was never visited")
    half = _packing.half_range(field.dim)
    r = 2.0
    while True:
        ball = enumerate_ball(r, cov)
        norms = np.round(np.asarray(ball.norms_sq, dtype=np.float64), 9)
        pts = np.asarray(ball.points, dtype=np.int64)
        nz = norms > 0
        norms = norms[nz]
        pts = pts[nz]
        if norms.size == 0:
            r *= 2.0
            continue
        order = np.argsort(norms, kind="stable")
        norms = norms[order]
        pts = pts[order]
        targ = pts + z
        vis = np.zeros(targ.shape[0], dtype=bool)
        inside = np.abs(targ).max(axis=1) < half
        if inside.any():
            vis[inside] = field.lookup_keys(
                _packing.pack_coords(targ[inside], field.dim)) >= 1
        bad = np.flatnonzero(~vis)
        if bad.size == 0:
            # the whole enumerated ball is covered; widen the scan
            r *= 2.0
            continue
        first_bad = int(bad[0])
        below = norms[:first_bad][norms[:first_bad] < norms[first_bad]]
        best_sq = float(below[-1]) if below.size else 0.0
        return CoverageResult(
            radius=math.sqrt(best_sq), radius_sq=best_sq,
            origin_only=best_sq == 0.0,
            first_unvisited=tuple(int(c) for c in pts[first_bad]))


def min_nonzero_radius_sq(cov: CovarianceData) -> float:
    """Smallest Q-norm^2 over nonzero lattice points (the first shell)."""
    ball = enumerate_ball(2.5, cov)
    vals = [v for v in ball.norms_sq if v > 0]
    r = 2.5
    while not vals:
        r *= 2
        ball = enumerate_ball(r, cov)
        vals = [v for v in ball.norms_sq if v > 0]
    return float(min(vals))


def fixed_set_sum(field: LocalTimeField, center: Sequence[int],
                  A: Sequence[Sequence[int]],
                  constants: DerivedConstants) -> Dict[str, float]:
    """Sum of local times over a fixed offset set A around `center`,
    with the predicted value lam * log n * sum m_x and their ratio.
    n is the field's own step count."""
    z = tuple(int(c) for c in center)
    total = 0
    m_sum = 0.0
    for x in A:
        xt = tuple(int(c) for c in x)
        m_sum += _site_constants(constants, xt).m_x
        total += field.get(tuple(z[i] + xt[i] for i in range(field.dim)))
    predicted = constants.lam * math.log(field.total) * m_sum
    return {
        "sum": float(total),
        "predicted": predicted,
        "ratio": total / predicted if predicted > 0 else math.nan,
    }


@dataclass(frozen=True)
class Thm13Result:
    """Indices j where the paired rare event holds: a heavy local time
    at S_j together with an unvisited companion at S_j + offset*e1."""

    c: float
    eps: float
    horizon: int
    indices: np.ndarray
    sites: np.ndarray
    counts: np.ndarray
    thresholds: np.ndarray
    offsets: np.ndarray

    @property
    def n_hits(self) -> int:
        return int(self.indices.shape[0])


def thm13_scan(run: WalkRun, c: float, eps: float,
               constants: DerivedConstants) -> Thm13Result:
    """Scan j in [3, n] for xi(S_j, H) >= lam*(log j + a*log log j) with
    a = (d-4)/(d-2) - eps, while S_j + floor(c*(log j)^(1/(2d-4)))*e1
    has xi = 0 at the horizon.

    Stated for the simple symmetric walk; the scan itself only needs
    the retained path (j starts at 3 so log log j > 0).
    """
    if run.path is None:
        raise ValueError("scan requires a retained path")
    if not eps > 0:
        raise ValueError("eps must be positive")
    d = run.dim
    lam = constants.lam
    n = run.n
    if n < 3:
        return Thm13Result(c=c, eps=eps, horizon=run.horizon,
                           indices=np.empty(0, dtype=np.int64),
                           sites=np.empty((0, d), dtype=np.int64),
                           counts=np.empty(0, dtype=np.int64),
                           thresholds=np.empty(0, dtype=np.float64),
                           offsets=np.empty(0, dtype=np.int64))
    a = (d - 4) / (d - 2) - eps
    expo = 1.0 / (2 * d - 4)
    jj = np.arange(3, n + 1, dtype=np.int64)
    logs = np.log(jj)
    thr = lam * (logs + a * np.log(logs))
    mags = np.floor(c * logs ** expo).astype(np.int64)
    pos = np.asarray(run.path[3:n + 1], dtype=np.int64)
    xi = run.field_H.lookup_keys(_packing.pack_coords(pos, d))
    off = pos.copy()
    off[:, 0] += mags
    xi_off = run.field_H.lookup_keys(_packing.pack_coords(off, d))
    hits = (xi >= thr) & (xi_off == 0)
    w = np.flatnonzero(hits)
    return Thm13Result(c=c, eps=eps, horizon=run.horizon,
                       indices=jj[w], sites=pos[w], counts=xi[w],
                       thresholds=thr[w], offsets=mags[w])


@dataclass(frozen=True)
class HeavyReport:
    """Per-run heavy-point summary; empty heavy sets report neutral
    zeros rather than erroring (sup over an empty set is 0)."""

    k_n: int
    beta_n: float
    a_sites: np.ndarray
    b_count: int
    b_sites: np.ndarray
    sup_dev: float
    mean_dev: float
    radii: np.ndarray
    r_median: float


def heavy_report(run: WalkRun, cfg: HeavyConfig,
                 constants: DerivedConstants,
                 ball: Optional[Ball] = None) -> HeavyReport:
    """A_n, B_n, profile deviations over A_n (n-field), and coverage
    radii at the distinct B_n sites (H-field)."""
    a = heavy_sites(run.field_n, cfg)
    b_count = heavy_index_count(run, cfg)
    b_sites = heavy_index_sites(run, cfg)
    sup_dev = 0.0
    mean_devs: List[float] = []
    if a.shape[0]:
        b = _ball_for(cfg.r, constants, ball)
        for row in a:
            p = profile(run.field_n, row, cfg, constants, ball=b)
            sup_dev = max(sup_dev, p["sup_dev"])
            mean_devs.append(p["mean_dev"])
    radii = []
    if b_sites.shape[0]:
        if constants.cov is None:
            raise MissingConstants("coverage needs the step covariance")
        for row in b_sites:
            radii.append(coverage_radius(run.field_H, row, constants.cov).radius)
    radii_arr = np.asarray(radii, dtype=np.float64)
    return HeavyReport(
        k_n=cfg.k_n,
        beta_n=cfg.beta_n,
        a_sites=a,
        b_count=b_count,
        b_sites=b_sites,
        sup_dev=sup_dev,
        mean_dev=float(np.mean(mean_devs)) if mean_devs else 0.0,
        radii=radii_arr,
        r_median=float(np.median(radii_arr)) if radii_arr.size else 0.0,
    )
