"""Step distributions on Z^d and the quadratic-form geometry they induce.

A step distribution is a finite symmetric probability law p(x) on the
d-dimensional integer lattice, d >= 3.  Validation enforces the standing
assumptions used everywhere else: probabilities sum to 1, p(x) = p(-x),
and the subgroup of Z^d generated by the support is all of Z^d
(aperiodicity; strong aperiodicity is deliberately not required, so
bipartite walks such as the simple walk pass).

The covariance matrix Q = sum_x p(x) x x^T defines the norm
|x|_Q^2 = x Q^{-1} x whose balls are the ellipsoidal neighborhoods used
by the profile and coverage statistics.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    AsymmetricLaw,
    BadProbabilities,
    DimensionTooSmall,
    NotAperiodic,
    RadiusTooLarge,
)

LatticePoint = Tuple[int, ...]

# Hard cap on enumerated ball sizes; coverage scans never get near this.
BALL_POINT_CAP = 2_000_000

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class CovarianceData:
    """Covariance matrix of one step, its inverse, and determinant.

    qinv_exact holds Q^{-1} as Fractions when every probability is an
    exact rational; ball membership is then decided exactly.
    """

    Q: np.ndarray
    Qinv: np.ndarray
    detQ: float
    qinv_exact: Optional[Tuple[Tuple[Fraction, ...], ...]] = None

    @property
    def dim(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class StepDistribution:
    dim: int
    kind: str  # "simple-symmetric" | "custom"
    points: Tuple[LatticePoint, ...]
    probs: Tuple[float, ...]
    cov: CovarianceData
    exact_probs: Optional[Tuple[Fraction, ...]] = None

    # derived, filled by build_distribution
    max_step: int = 0
    content_hash: str = ""
    orthant_symmetric: bool = False
    perm_symmetric: bool = False

    def points_array(self) -> np.ndarray:
        return np.array(self.points, dtype=np.int64)

    def probs_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=np.float64)

    @property
    def support_size(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Ball:
    radius: float
    points: Tuple[LatticePoint, ...]
    norms_sq: Tuple[float, ...] = field(default=())


def _hermite_diagonal(points: Sequence[LatticePoint], dim: int) -> Optional[List[int]]:
    """Diagonal of the upper-triangular Hermite basis of the lattice
    spanned by the given integer vectors, or None if the rank is < dim.

    The product of the diagonal is the index [Z^d : L]; the lattice is
    all of Z^d exactly when every diagonal entry is 1.
    """
    rows = [list(map(int, p)) for p in points]
    diag: List[int] = []
    for col in range(dim):
        while True:
            nz = [r for r in rows if r[col] != 0]
            if not nz:
                return None
            piv = min(nz, key=lambda r: abs(r[col]))
            if len(nz) == 1:
                diag.append(abs(piv[col]))
                rows = [r for r in rows if r is not piv]
                break
            reduced = []
            for r in rows:
                if r is not piv and r[col] != 0:
                    k = r[col] // piv[col]
                    r = [a - k * b for a, b in zip(r, piv)]
                reduced.append(r)
            rows = reduced
    return diag


def _lattice_is_full(points: Sequence[LatticePoint], dim: int) -> bool:
    diag = _hermite_diagonal(points, dim)
    return diag is not None and all(h == 1 for h in diag)


def _bfs_lattice_is_full(points: Sequence[LatticePoint], dim: int, box: int = 5) -> bool:
    """Brute-force cross-check of the Hermite test: BFS over sums and
    differences of support points inside [-box, box]^d must reach every
    unit vector."""
    moves = set()
    for p in points:
        moves.add(tuple(int(c) for c in p))
        moves.add(tuple(-int(c) for c in p))
    moves.discard((0,) * dim)
    origin = (0,) * dim
    seen = {origin}
    dq = deque([origin])
    while dq:
        cur = dq.popleft()
        for mv in moves:
            nxt = tuple(a + b for a, b in zip(cur, mv))
            if nxt not in seen and max(abs(c) for c in nxt) <= box:
                seen.add(nxt)
                dq.append(nxt)
    units = []
    for i in range(dim):
        e = [0] * dim
        e[i] = 1
        units.append(tuple(e))
        e[i] = -1
        units.append(tuple(e))
    return all(u in seen for u in units)


def _fraction_inverse(mat: List[List[Fraction]]) -> Optional[List[List[Fraction]]]:
    """Exact Gauss-Jordan inverse; None if singular."""
    n = len(mat)
    a = [row[:] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(mat)]
    for col in range(n):
        piv = None
        for r in range(col, n):
            if a[r][col] != 0:
                piv = r
                break
        if piv is None:
            return None
        a[col], a[piv] = a[piv], a[col]
        pv = a[col][col]
        a[col] = [v / pv for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * w for v, w in zip(a[r], a[col])]
    return [row[n:] for row in a]


def _fraction_det(mat: List[List[Fraction]]) -> Fraction:
    n = len(mat)
    a = [row[:] for row in mat]
    det = Fraction(1)
    for col in range(n):
        piv = None
        for r in range(col, n):
            if a[r][col] != 0:
                piv = r
                break
        if piv is None:
            return Fraction(0)
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
            det = -det
        det *= a[col][col]
        inv = a[col][col]
        for r in range(col + 1, n):
            if a[r][col] != 0:
                f = a[r][col] / inv
                a[r] = [v - f * w for v, w in zip(a[r], a[col])]
    return det


def _simple_support(dim: int) -> List[Tuple[LatticePoint, Fraction]]:
    out = []
    p = Fraction(1, 2 * dim)
    for i in range(dim):
        e = [0] * dim
        e[i] = 1
        out.append((tuple(e), p))
        e[i] = -1
        out.append((tuple(e), p))
    return out


def _check_axis_symmetries(points: Sequence[LatticePoint], probs: Sequence[float]) -> Tuple[bool, bool]:
    """(orthant_symmetric, perm_symmetric) flags used to exploit symmetry
    when tabulating the Green function.

    Invariance under every single-axis sign flip (resp. every adjacent
    transposition) extends to the full group those elements generate, so
    each check is O(dim * support) instead of group-order enumeration.
    """
    table = {tuple(p): pr for p, pr in zip(points, probs)}
    dim = len(points[0])

    orthant = True
    for p, pr in table.items():
        for ax in range(dim):
            q = tuple(-c if i == ax else c for i, c in enumerate(p))
            if table.get(q) != pr:
                orthant = False
                break
        if not orthant:
            break

    perm = True
    for p, pr in table.items():
        for ax in range(dim - 1):
            q = list(p)
            q[ax], q[ax + 1] = q[ax + 1], q[ax]
            if table.get(tuple(q)) != pr:
                perm = False
                break
        if not perm:
            break
    return orthant, perm


def build_distribution(
    dim: int,
    spec: Union[str, Sequence[Tuple[Sequence[int], Union[float, Fraction, str]]]],
) -> StepDistribution:
    """Validate and construct a step distribution.

    spec is either the token "simple" (simple symmetric walk, mass
    1/(2d) on each +-e_i) or a sequence of (point, probability) pairs.
    Probabilities may be floats, Fractions, or strings like "1/6".
    """
    if dim < 3:
        raise DimensionTooSmall(f"dimension {dim} < 3")

    if isinstance(spec, str):
        if spec in ("simple", "simple-symmetric", "srw"):
            pairs = _simple_support(dim)
            kind = "simple-symmetric"
        else:
            raise BadProbabilities(f"unknown distribution tag {spec!r}")
    else:
        if not spec:
            raise BadProbabilities("empty support")
        pairs = []
        for pt, pr in spec:
            pt = tuple(int(c) for c in pt)
            if len(pt) != dim:
                raise BadProbabilities(f"support point {pt} has wrong dimension")
            if isinstance(pr, str):
                pr = Fraction(pr)
            pairs.append((pt, pr))
        kind = "custom"

    # exact path only when every probability is a rational summing to 1
    all_exact = all(isinstance(pr, Fraction) for _, pr in pairs)

    seen = set()
    for pt, _ in pairs:
        if pt in seen:
            raise BadProbabilities(f"duplicate support point {pt}")
        seen.add(pt)

    pairs = [(pt, pr) for pt, pr in pairs if pr != 0]
    if not pairs:
        raise BadProbabilities("empty support after dropping zero-mass points")

    floats = [float(pr) for _, pr in pairs]
    if any(p < 0 or p > 1 for p in floats):
        raise BadProbabilities("probability outside [0, 1]")
    total = math.fsum(floats)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise BadProbabilities(f"probabilities sum to {total!r}, not 1")
    if all_exact and sum(pr for _, pr in pairs) != 1:
        all_exact = False

    table = {pt: pr for pt, pr in pairs}
    for pt, pr in pairs:
        neg = tuple(-c for c in pt)
        other = table.get(neg)
        if other is None or abs(float(other) - float(pr)) > PROB_SUM_TOL:
            raise AsymmetricLaw(f"p({pt}) != p({neg})")

    gen_points = [pt for pt in table if any(pt)]
    if not gen_points or not _lattice_is_full(gen_points, dim):
        raise NotAperiodic("support does not generate Z^d")

    order = sorted(range(len(pairs)), key=lambda i: pairs[i][0])
    points = tuple(pairs[i][0] for i in order)
    probs = tuple(floats[i] for i in order)
    exact = tuple(pairs[i][1] for i in order) if all_exact else None

    # covariance Q = sum p(x) x x^T
    if all_exact:
        qf = [[Fraction(0)] * dim for _ in range(dim)]
        for pt, pr in zip(points, exact):
            for i in range(dim):
                if pt[i]:
                    for j in range(dim):
                        if pt[j]:
                            qf[i][j] += pr * pt[i] * pt[j]
        qinv_f = _fraction_inverse(qf)
        det_f = _fraction_det(qf)
        if qinv_f is None or det_f <= 0:
            raise BadProbabilities("covariance matrix is singular")
        Q = np.array([[float(v) for v in row] for row in qf])
        Qinv = np.array([[float(v) for v in row] for row in qinv_f])
        detQ = float(det_f)
        qinv_exact = tuple(tuple(row) for row in qinv_f)
    else:
        pa = np.array(points, dtype=np.float64)
        wa = np.array(probs, dtype=np.float64)
        Q = (pa * wa[:, None]).T @ pa
        Q = 0.5 * (Q + Q.T)
        detQ = float(np.linalg.det(Q))
        if detQ <= 0 or np.linalg.eigvalsh(Q).min() <= 0:
            raise BadProbabilities("covariance matrix is not positive definite")
        Qinv = np.linalg.inv(Q)
        qinv_exact = None

    cov = CovarianceData(Q=Q, Qinv=Qinv, detQ=detQ, qinv_exact=qinv_exact)

    h = hashlib.sha256()
    h.update(f"dim={dim}".encode())
    for pt, pr in zip(points, probs):
        h.update(repr((pt, pr)).encode())
    orthant, perm = _check_axis_symmetries(points, probs)

    return StepDistribution(
        dim=dim,
        kind=kind,
        points=points,
        probs=probs,
        cov=cov,
        exact_probs=exact,
        max_step=max(max(abs(c) for c in pt) for pt in points),
        content_hash=h.hexdigest()[:16],
        orthant_symmetric=orthant,
        perm_symmetric=perm,
    )


def q_norm_sq(x: Sequence[int], cov: CovarianceData) -> float:
    """x Q^{-1} x; zero iff x = 0."""
    if len(x) != cov.dim:
        raise ValueError("dimension mismatch")
    if cov.qinv_exact is not None:
        acc = Fraction(0)
        for i, xi in enumerate(x):
            if xi:
                row = cov.qinv_exact[i]
                for j, xj in enumerate(x):
                    if xj:
                        acc += row[j] * xi * xj
        return float(acc)
    v = np.asarray(x, dtype=np.float64)
    return float(v @ cov.Qinv @ v)


def _q_norm_sq_exact(x: Sequence[int], cov: CovarianceData) -> Optional[Fraction]:
    if cov.qinv_exact is None:
        return None
    acc = Fraction(0)
    for i, xi in enumerate(x):
        if xi:
            row = cov.qinv_exact[i]
            for j, xj in enumerate(x):
                if xj:
                    acc += row[j] * xi * xj
    return acc


def enumerate_ball(r: float, cov: CovarianceData, cap: int = BALL_POINT_CAP) -> Ball:
    """All lattice points with |x|_Q <= r, in lexicographic order.

    Membership is exact on the quadratic form when Q is rational; for
    float covariances a relative 1e-9 slack avoids boundary flicker.
    """
    if r < 0:
        raise ValueError("radius must be nonnegative")
    dim = cov.dim
    # the extreme coordinate on the ellipsoid x Qinv x = r^2 is r*sqrt(Q_ii)
    bounds = [int(math.floor(r * math.sqrt(cov.Q[i, i]) + 1e-9)) for i in range(dim)]
    est = 1
    for b in bounds:
        est *= 2 * b + 1
        if est > 40 * cap:
            raise RadiusTooLarge(f"bounding box of {est}+ points exceeds cap")

    exact = cov.qinv_exact is not None
    if exact:
        r_sq = Fraction(r) ** 2
    else:
        r_sq = r * r

    pts: List[LatticePoint] = []
    norms: List[float] = []
    for x in itertools.product(*(range(-b, b + 1) for b in bounds)):
        if exact:
            q = _q_norm_sq_exact(x, cov)
            ok = q <= r_sq
            qf = float(q)
        else:
            v = np.asarray(x, dtype=np.float64)
            qf = float(v @ cov.Qinv @ v)
            ok = qf <= r_sq * (1 + 1e-9) + 1e-9
        if ok:
            pts.append(x)
            norms.append(qf)
            if len(pts) > cap:
                raise RadiusTooLarge(f"ball exceeds {cap} points")
    return Ball(radius=float(r), points=tuple(pts), norms_sq=tuple(norms))


def euclid_ball(r: float, dim: int, cap: int = BALL_POINT_CAP) -> Tuple[LatticePoint, ...]:
    """All lattice points with Euclidean |x|_2 <= r, in lexicographic order.

    Site ranges in tables and cross-validation sweeps are Euclidean
    regardless of the step covariance; membership is exact on integers.
    """
    if r < 0:
        raise ValueError("radius must be nonnegative")
    b = int(math.floor(r))
    if (2 * b + 1) ** dim > 40 * cap:
        raise RadiusTooLarge(f"bounding box of {(2*b+1)**dim} points exceeds cap")
    r_sq = r * r
    pts: List[LatticePoint] = []
    for x in itertools.product(range(-b, b + 1), repeat=dim):
        if sum(c * c for c in x) <= r_sq:
            pts.append(x)
            if len(pts) > cap:
                raise RadiusTooLarge(f"ball exceeds {cap} points")
    return tuple(pts)


def moment_report(dist: StepDistribution) -> dict:
    """Euclidean moment summaries: sum |x|^2 p, sum |x|^2 log(|x|+1) p,
    sum |x|^(d-2) p.  Always finite for finite support; reported for
    documentation of the standing moment hypotheses."""
    second = 0.0
    logw = 0.0
    poww = 0.0
    for pt, pr in zip(dist.points, dist.probs):
        n2 = math.fsum(float(c * c) for c in pt)
        n = math.sqrt(n2)
        second += n2 * pr
        logw += n2 * math.log(n + 1.0) * pr
        poww += n ** (dist.dim - 2) * pr
    return {
        "second_moment": second,
        "log_weighted": logw,
        "power_weighted": poww,
    }


def parse_model_text(text: str) -> StepDistribution:
    """Parse the distribution spec format.

    One header line `dim=<d>`, then either the single token `simple` or
    one support point per line, `x1 x2 ... xd : prob`.  Probabilities
    accept fractions ("1/6") and decimals.  '#' starts a comment.
    """
    dim = None
    simple = False
    support: List[Tuple[Tuple[int, ...], Union[Fraction, float]]] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("dim"):
            key, _, val = line.partition("=")
            if key.strip() != "dim":
                raise BadProbabilities(f"bad header line {raw!r}")
            dim = int(val.strip())
            continue
        if line == "simple":
            simple = True
            continue
        if ":" not in line:
            raise BadProbabilities(f"bad support line {raw!r}")
        coords, _, prob = line.partition(":")
        pt = tuple(int(tok) for tok in coords.split())
        prob = prob.strip()
        pr: Union[Fraction, float]
        if "/" in prob:
            pr = Fraction(prob)
        else:
            try:
                pr = Fraction(prob)  # exact for integer-like strings
                if pr.denominator > 10**6:
                    pr = float(prob)
            except ValueError:
                pr = float(prob)
        support.append((pt, pr))
    if dim is None:
        raise BadProbabilities("model file missing dim= header")
    if simple:
        if support:
            raise BadProbabilities("model file mixes `simple` with support lines")
        return build_distribution(dim, "simple")
    return build_distribution(dim, support)


def parse_model_file(path) -> StepDistribution:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model_text(fh.read())
