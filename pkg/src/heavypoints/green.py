"""Green function machinery: torus quadrature, a step-iteration DP
oracle, cached tables, and the constants derived from G.

Two independent routes to G(x) are kept deliberately separate:

* ``green_quadrature`` integrates cos(theta.x)/(1 - phat(theta)) over the
  torus with adaptive dyadic subdivision near the singularity at 0.
* ``green_dp_oracle`` iterates the exact one-step convolution on a finite
  box and sums P(S_n = x) directly, with a fitted power-law tail bound.

Neither route may be used to calibrate the other; tests compare them.
"""

import heapq
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import zeta as _hurwitz_zeta

from . import _jsonfmt
from .backend import get_kernels
from .errors import (
    AsymptoticMismatch,
    BoxTooSmall,
    MemoryCap,
    MissingGreenValue,
    NoConvergence,
    OriginNotAllowed,
    SpectrumDegenerate,
)
from .lattice import CovarianceData, LatticePoint, StepDistribution, q_norm_sq

__all__ = [
    "QuadResult",
    "green_quadrature",
    "GreenDPResult",
    "green_dp_oracle",
    "green_dp_multi",
    "GreenEntry",
    "GreenTable",
    "build_green_table",
    "default_cache_dir",
    "cache_path",
    "SiteConstants",
    "DerivedConstants",
    "derive_constants",
    "asymptotic_coefficient",
    "green_asymptotic",
    "validate_asymptotic",
    "canonical_site",
]

# cells allowed in a DP field before we refuse to allocate
_DP_CELL_CAP = 40_000_000
_DENSE_CELL_CAP = 30_000_000
_LEAK_BUDGET = 1e-12

# distributions whose spectrum scan already passed, by content hash
_SPECTRUM_OK: set = set()


def canonical_site(x: Sequence[int]) -> Tuple[int, ...]:
    """Orbit representative under coordinate permutations and sign flips."""
    return tuple(sorted(abs(int(c)) for c in x))


# ---------------------------------------------------------------------------
# torus quadrature
# ---------------------------------------------------------------------------


class QuadResult(NamedTuple):
    value: float
    abs_error: float
    n_boxes: int
    n_evals: int


@lru_cache(maxsize=None)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _char_fn(dist: StepDistribution):
    """1 - phat(theta), evaluated as sum_y p(y) 2 sin^2(theta.y/2).

    The naive 1 - sum p cos cancels catastrophically near theta = 0, where
    the adaptive rule needs accurate values; this form is exact and stays
    positive down to the last refinement level.
    """
    Y = dist.points_array().astype(np.float64)
    p = dist.probs_array()

    def one_minus_phat(theta):
        # theta: (m, d) -> (m,)
        s = np.sin(theta @ (0.5 * Y.T))
        return (s * s) @ (2.0 * p)

    return one_minus_phat


def _spectrum_scan(dist: StepDistribution) -> None:
    """Reject laws with phat(theta) = 1 off the origin.

    Only +1 is fatal; bipartite laws hit -1 at (pi,...,pi) and are fine.
    """
    if dist.content_hash in _SPECTRUM_OK:
        return
    d = dist.dim
    omp = _char_fn(dist)
    if dist.orthant_symmetric:
        axes = [np.linspace(0.0, np.pi, 13)] * d
    else:
        axes = [np.linspace(0.0, np.pi, 13)] + [np.linspace(-np.pi, np.pi, 25)] * (d - 1)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    worst = 1.0
    for lo in range(0, pts.shape[0], 1 << 16):
        blk = pts[lo : lo + (1 << 16)]
        vals = omp(blk)
        off = np.max(np.abs(blk), axis=1) > 1e-12
        if np.any(off):
            worst = min(worst, float(np.min(vals[off])))
    if worst <= 1e-9:
        raise SpectrumDegenerate(
            f"1 - phat(theta) = {worst:.3e} at some theta != 0; "
            "law outside the supported class"
        )
    _SPECTRUM_OK.add(dist.content_hash)


def _gl_tensor(f, lo, hi, g: int) -> float:
    d = len(lo)
    nodes, wts = _leggauss(g)
    axes = []
    waxes = []
    for j in range(d):
        h = 0.5 * (hi[j] - lo[j])
        axes.append(lo[j] + h * (nodes + 1.0))
        waxes.append(wts * h)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g_.ravel() for g_ in grids], axis=1)
    w = waxes[0]
    for j in range(1, d):
        w = np.multiply.outer(w, waxes[j])
    return float(np.dot(w.ravel(), f(pts))), pts


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def green_quadrature(
    x: Sequence[int],
    dist: StepDistribution,
    tol: float = 1e-8,
    max_boxes: int = 150_000,
) -> QuadResult:
    """G(x) via the Fourier integral (2pi)^-d int cos(theta.x)/(1-phat).

    Error control: each box is scored by the difference between its
    one-panel Gauss-Legendre value and the two-panel value after one
    dyadic split (a two-level Richardson estimate); boxes touching the
    singular corner additionally carry an analytic 1/|theta|^2 envelope
    bound.  The worst box is split until the summed score is below tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = dist.dim
    xv = np.asarray(tuple(int(c) for c in x), dtype=np.float64)
    if len(xv) != d:
        raise ValueError(f"point has dimension {len(xv)}, law has {d}")
    _spectrum_scan(dist)
    omp = _char_fn(dist)

    if dist.orthant_symmetric:
        # integrand is even per axis: fold onto [0,pi]^d
        prefactor = math.pi ** (-d)
        dom_lo = np.zeros(d)
        dom_hi = np.full(d, math.pi)

        def fval(pts):
            num = np.prod(np.cos(pts * xv), axis=1)
            return num / omp(pts)

    else:
        # even under joint theta -> -theta only: fold axis 0
        prefactor = 2.0 * (2.0 * math.pi) ** (-d)
        dom_lo = np.concatenate([[0.0], np.full(d - 1, -math.pi)])
        dom_hi = np.full(d, math.pi)

        def fval(pts):
            return np.cos(pts @ xv) / omp(pts)

    tol_raw = tol / prefactor
    g_rule = 7
    evals = [0]

    def eval_box(lo, hi):
        v, pts = _gl_tensor(fval, lo, hi, g_rule)
        evals[0] += pts.shape[0]
        return v, pts

    def touches_origin(lo, hi):
        if lo[0] != 0.0:
            return False
        return all(lo[j] <= 0.0 <= hi[j] for j in range(1, d))

    def corner_bound(lo, hi, pts):
        # integral of 1/(c_min |theta|^2) over a ball covering the box
        nsq = np.einsum("ij,ij->i", pts, pts)
        ratio = omp(pts) / nsq
        cmin = 0.5 * float(np.min(ratio))
        if cmin <= 0.0:
            return math.inf
        r2 = sum(max(lo[j] ** 2, hi[j] ** 2) for j in range(d))
        frac = 0.5 if not dist.orthant_symmetric else 0.5 ** d
        return frac * _sphere_area(d) * math.sqrt(r2) ** (d - 2) / ((d - 2) * cmin)

    def split_axis(lo, hi):
        best, score = 0, -1.0
        for j in range(d):
            s = (hi[j] - lo[j]) * (1.0 + 0.5 * abs(xv[j]))
            if s > score + 1e-15 * score:
                best, score = j, s
        return best

    def make_entry(lo, hi, v_coarse, order):
        ax = split_axis(lo, hi)
        mid = 0.5 * (lo[ax] + hi[ax])
        lo_b = list(lo)
        lo_b[ax] = mid
        hi_a = list(hi)
        hi_a[ax] = mid
        va, pa = eval_box(lo, tuple(hi_a))
        vb, pb = eval_box(tuple(lo_b), hi)
        v_fine = va + vb
        err = abs(v_fine - v_coarse)
        if touches_origin(lo, hi):
            err += corner_bound(lo, hi, np.concatenate([pa, pb]))
        return (
            -err,
            order,
            (tuple(lo), tuple(hi), v_fine, err, ax, mid, va, vb),
        )

    root_lo = tuple(dom_lo)
    root_hi = tuple(dom_hi)
    v0, _ = eval_box(root_lo, root_hi)
    order = 0
    heap = [make_entry(root_lo, root_hi, v0, order)]
    run_err = heap[0][2][3]

    while True:
        if run_err <= tol_raw:
            exact = math.fsum(e[2][3] for e in heap)
            if exact <= tol_raw:
                run_err = exact
                break
            run_err = exact
        if len(heap) >= max_boxes:
            raise NoConvergence(
                f"quadrature error {run_err * prefactor:.3e} > tol {tol:.3e} "
                f"after {len(heap)} boxes"
            )
        neg, _, (lo, hi, v_fine, err, ax, mid, va, vb) = heapq.heappop(heap)
        lo_b = list(lo)
        lo_b[ax] = mid
        hi_a = list(hi)
        hi_a[ax] = mid
        order += 1
        ea = make_entry(lo, tuple(hi_a), va, order)
        order += 1
        eb = make_entry(tuple(lo_b), hi, vb, order)
        heapq.heappush(heap, ea)
        heapq.heappush(heap, eb)
        run_err += ea[2][3] + eb[2][3] - err

    total = math.fsum(e[2][2] for e in heap)
    return QuadResult(
        value=prefactor * total,
        abs_error=prefactor * run_err,
        n_boxes=len(heap),
        n_evals=evals[0],
    )


# ---------------------------------------------------------------------------
# step-iteration DP oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GreenDPResult:
    """Partial Green sum at one site with tail machinery.

    value is the exact partial sum over n <= n_max; the true G(x) lies in
    [value, value + tail_bound].  estimate adds a fitted tail and carries
    its own (heuristic, conservative) estimate_error.
    """

    x: Tuple[int, ...]
    n_max: int
    value: float
    tail_bound: float
    estimate: float
    estimate_error: float
    leakage: float
    jp_max: float
    box: int
    n_cells: int
    mode: str


def _binom_table(rows: int, d: int) -> np.ndarray:
    B = np.zeros((rows, d + 2), dtype=np.int64)
    B[:, 0] = 1
    for k in range(1, d + 2):
        for n in range(1, rows):
            B[n, k] = B[n - 1, k] + B[n - 1, k - 1]
    return B


def _enum_sorted_tuples(L: int, d: int) -> np.ndarray:
    """All ascending tuples 0 <= c_0 <= ... <= c_{d-1} <= L, colex order.

    Row index equals the colex rank sum_i C(c_i + i, i + 1), so ranks
    computed from the binomial table index this array directly.
    """
    arr = np.arange(L + 1, dtype=np.int32).reshape(-1, 1)
    for _ in range(d - 1):
        counts = arr[:, 0].astype(np.int64) + 1
        total = int(counts.sum())
        rep = np.repeat(arr, counts, axis=0)
        offs = np.repeat(np.cumsum(counts) - counts, counts)
        first = (np.arange(total, dtype=np.int64) - offs).astype(np.int32)
        arr = np.concatenate([first.reshape(-1, 1), rep], axis=1)
    return np.ascontiguousarray(arr)


def _orbit_weights(reps: np.ndarray, d: int) -> np.ndarray:
    runpos = np.zeros(reps.shape, dtype=np.int64)
    for i in range(1, d):
        same = reps[:, i] == reps[:, i - 1]
        runpos[:, i] = np.where(same, runpos[:, i - 1] + 1, 0)
    permdiv = np.prod(runpos + 1, axis=1)
    perms = math.factorial(d) // 1
    w = (perms / permdiv).astype(np.float64)
    w *= 2.0 ** np.count_nonzero(reps, axis=1)
    return w


def _bernstein_box(depth: int, dist: StepDistribution, leak_target: float = 1e-13) -> int:
    """Smallest half-width L with union-bounded boundary leakage below target."""
    d = dist.dim
    var = float(np.max(np.diag(dist.cov.Q)))
    M = dist.max_step
    log_budget = math.log(4.0 * d / leak_target)
    L = M + 1
    while True:
        t = L - M
        if t > 0 and t * t / (2.0 * (depth * var + M * t / 3.0)) >= log_budget:
            return L
        L += 1


class _OctaEngine:
    """Convolution iteration on canonical classes (sorted absolute coords).

    Valid only for laws invariant under coordinate permutations and sign
    flips; fields are stored once per orbit with orbit weights for mass.
    Bipartite laws get a two-colour field pair, halving the work.
    """

    def __init__(self, dist: StepDistribution, L: int):
        d = dist.dim
        n_cells = math.comb(L + d, d)
        if n_cells > _DP_CELL_CAP:
            raise MemoryCap(
                f"octahedral box L={L} needs {n_cells} cells > cap {_DP_CELL_CAP}"
            )
        self.dist = dist
        self.d = d
        self.L = L
        self.kern = get_kernels()
        steps = dist.points_array()
        self.probs = dist.probs_array()
        self.max_axis_step = int(np.max(np.abs(steps)))
        self.bipartite = bool(np.all(np.abs(steps).sum(axis=1) % 2 == 1))

        B = _binom_table(L + self.max_axis_step + d + 2, d)
        reps = _enum_sorted_tuples(L, d)
        N = reps.shape[0]
        assert N == n_cells
        check = np.zeros(N, dtype=np.int64)
        for i in range(d):
            check += B[reps[:, i].astype(np.int64) + i, i + 1]
        assert np.array_equal(check, np.arange(N, dtype=np.int64))
        del check
        self.B = B
        self.reps = reps
        self.weights = _orbit_weights(reps, d)
        self.par = (reps.sum(axis=1, dtype=np.int64) & 1).astype(np.int8)

        # cumulative even-parity count over colex ranks, for prefix slicing
        cum_even = np.zeros(N + 1, dtype=np.int64)
        np.cumsum(self.par == 0, out=cum_even[1:])
        self.cum_even = cum_even

        if self.bipartite:
            self.domains = [np.nonzero(self.par == 0)[0], np.nonzero(self.par == 1)[0]]
        else:
            self.domains = [np.arange(N, dtype=np.int64)]
        self.dom_w = [self.weights[idx] for idx in self.domains]

        # nbr[t][i, j]: packed source cell feeding target cell i of domain t
        self.nbr = []
        for t, idx in enumerate(self.domains):
            src_dom = 1 - t if self.bipartite else 0
            tbl = np.empty((idx.size, len(self.probs)), dtype=np.int32)
            sink = self.domains[src_dom].size
            base = reps[idx].astype(np.int64)
            for j, y in enumerate(steps):
                cand = np.sort(np.abs(base - y[None, :]), axis=1)
                outside = cand[:, -1] > L
                rank = np.zeros(idx.size, dtype=np.int64)
                for i in range(d):
                    rank += B[cand[:, i] + i, i + 1]
                rank[outside] = 0
                pos = self._pack_pos(rank, src_dom)
                pos[outside] = sink
                tbl[:, j] = pos.astype(np.int32)
            self.nbr.append(tbl)

    def _pack_pos(self, rank: np.ndarray, dom: int) -> np.ndarray:
        if not self.bipartite:
            return rank
        if dom == 0:
            return self.cum_even[rank]
        return rank - self.cum_even[rank]

    def rank_of(self, x: Sequence[int]) -> int:
        c = canonical_site(x)
        if c[-1] > self.L:
            raise ValueError(f"site {x} outside box L={self.L}")
        return int(sum(int(self.B[c[i] + i, i + 1]) for i in range(self.d)))

    def domain_of(self, x: Sequence[int]) -> int:
        if not self.bipartite:
            return 0
        return int(sum(abs(int(c)) for c in x) & 1)

    def active_len(self, reach: int, dom: int) -> int:
        full = math.comb(min(reach, self.L) + self.d, self.d)
        if not self.bipartite:
            return full
        ne = int(self.cum_even[full])
        return ne if dom == 0 else full - ne

    def reach_radii(self, depth: int) -> np.ndarray:
        """Per-step truncation radius: cells beyond it carry negligible
        mass (union Bernstein bound, 2e-13 total across the run) and are
        dropped; whatever really leaks is caught by the final mass audit."""
        d = self.d
        if depth < 1:
            return np.zeros(0, dtype=np.int64)
        var = float(np.max(np.diag(self.dist.cov.Q)))
        M = self.max_axis_step
        c = math.log(4.0 * d * depth / 2e-13)
        m = np.arange(1, depth + 1, dtype=np.float64)
        t = M * c / 3.0 + np.sqrt((M * c / 3.0) ** 2 + 2.0 * m * var * c)
        r = np.ceil(t).astype(np.int64) + M
        r = np.minimum(m.astype(np.int64) * M, r)
        return np.minimum(r, self.L)


class _DenseEngine:
    """Plain convolution on the full cube [-L, L]^d for arbitrary laws."""

    def __init__(self, dist: StepDistribution, L: int):
        d = dist.dim
        side = 2 * L + 1
        if side ** d > _DENSE_CELL_CAP:
            raise MemoryCap(f"dense box L={L} needs {side ** d} cells")
        self.dist = dist
        self.d = d
        self.L = L
        self.side = side
        self.shape = (side,) * d
        self.steps = dist.points_array()
        self.probs = dist.probs_array()

    def index_of(self, x: Sequence[int]) -> Tuple[int, ...]:
        return tuple(int(c) + self.L for c in x)

    def sweep(self, out: np.ndarray, src: np.ndarray) -> None:
        out.fill(0.0)
        for y, p in zip(self.steps, self.probs):
            dst_sl = []
            src_sl = []
            for j in range(self.d):
                s = int(y[j])
                dst_sl.append(slice(max(s, 0), self.side + min(s, 0)))
                src_sl.append(slice(max(-s, 0), self.side + min(-s, 0)))
            out[tuple(dst_sl)] += p * src[tuple(src_sl)]


def _parity_tail_sum(s: float, n_from: int, parity: Optional[int]) -> float:
    """sum of n^-s over n > n_from, restricted to n = parity (mod 2) if given."""
    if parity is None:
        return float(_hurwitz_zeta(s, n_from + 1))
    if parity == 0:
        t0 = n_from // 2 + 1
        return float(2.0 ** (-s) * _hurwitz_zeta(s, t0))
    t0 = (n_from + 1) // 2
    return float(2.0 ** (-s) * _hurwitz_zeta(s, t0 + 0.5))


def _fit_tail(
    r: np.ndarray, n_max: int, d: int, parity: Optional[int]
) -> Tuple[float, float]:
    """Fit r_n * n^{d/2} = A + B/n + C/n^2 on a late window, return
    (tail, err) where tail integrates the fit beyond n_max."""
    lo = max(8, n_max // 3)
    ns = np.arange(lo, n_max + 1)
    ys = r[lo : n_max + 1]
    keep = ys > 0
    ns, ys = ns[keep], ys[keep]
    if ns.size < 3:
        return math.nan, math.inf
    ys = ys * ns.astype(np.float64) ** (d / 2.0)

    def tail_of(coefs):
        return math.fsum(
            c * _parity_tail_sum(d / 2.0 + k, n_max, parity)
            for k, c in enumerate(coefs)
        )

    fits = []
    for terms in (2, 3):
        if ns.size < 2 * terms:
            continue
        basis = np.vstack([ns.astype(np.float64) ** (-k) for k in range(terms)]).T
        coefs, *_ = np.linalg.lstsq(basis, ys, rcond=None)
        fits.append(tail_of(coefs))
    if not fits:
        basis = np.ones((ns.size, 1))
        coefs, *_ = np.linalg.lstsq(basis, ys, rcond=None)
        return tail_of(coefs), abs(tail_of(coefs))
    if len(fits) == 1:
        return fits[0], 0.5 * abs(fits[0])
    err = 3.0 * abs(fits[1] - fits[0]) + 1e-9 * abs(fits[1])
    return fits[1], err


def _dp_run(
    dist: StepDistribution,
    n_max: int,
    targets: List[Tuple[int, ...]],
    box: Optional[int],
    mode: str,
    engine: Optional[str] = None,
) -> Dict:
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if n_max > 1_000_000:
        raise MemoryCap("n_max too large for the DP oracle")
    d = dist.dim
    kern = get_kernels()
    octa = dist.perm_symmetric and dist.orthant_symmetric
    if engine == "dense":
        octa = False
    elif engine == "octa" and not octa:
        raise ValueError("octahedral engine needs a fully symmetric law")
    elif engine not in (None, "octa", "dense"):
        raise ValueError(f"unknown engine {engine!r}")

    squared = mode == "squared"
    if squared and any(any(c != 0 for c in t) for t in targets):
        raise ValueError("squared mode computes the origin series only")
    depth = (n_max + 1) // 2 if squared else n_max

    L = box if box is not None else _bernstein_box(max(depth, 1), dist)
    r = {t: np.zeros(n_max + 1) for t in targets}
    jp: List[Tuple[int, float]] = []
    leak = 0.0

    if octa:
        eng = _OctaEngine(dist, L)
        n_cells = eng.reps.shape[0]
        ndom = len(eng.domains)
        fields = [np.zeros(eng.domains[t].size + 1) for t in range(ndom)]
        if not eng.bipartite:
            fields.append(np.zeros(eng.domains[0].size + 1))
        pos0 = int(eng._pack_pos(np.array([0]), 0)[0])
        fields[0][pos0] = 1.0

        tpos = {}
        for t in targets:
            dom = eng.domain_of(t)
            rank = eng.rank_of(t)
            tpos[t] = (dom, int(eng._pack_pos(np.array([rank]), dom)[0]))
        if (0,) * d in r:
            r[(0,) * d][0] = 1.0

        jp_every = 1 if n_cells <= 2_500_000 else 4
        last = fields[0]
        half = d / 2.0
        radii = eng.reach_radii(depth)
        for m in range(1, depth + 1):
            if eng.bipartite:
                dom = m & 1
                src = fields[1 - dom]
                dst = fields[dom]
            else:
                dom = 0
                src = fields[(m - 1) & 1]
                dst = fields[m & 1]
            # the truncation radius grows monotonically, so cells beyond
            # act were never written and stay zero
            act = eng.active_len(int(radii[m - 1]), dom)
            kern.dp_sweep(dst[:act], src, eng.nbr[dom][:act], eng.probs)
            if not squared:
                for t, (tdom, tp) in tpos.items():
                    if tdom == dom and tp < act:
                        r[t][m] = dst[tp]
            else:
                wdom = eng.dom_w[dom][:act]
                f = dst[:act]
                n_even = 2 * m
                if n_even <= n_max:
                    r[(0,) * d][n_even] = float(np.einsum("i,i,i->", wdom, f, f))
                if not eng.bipartite:
                    g = src[:act]
                    n_odd = 2 * m - 1
                    if n_odd <= n_max:
                        r[(0,) * d][n_odd] = float(np.einsum("i,i,i->", wdom, f, g))
            if m % jp_every == 0 or m == depth:
                jp.append((m, float(np.max(dst[:act])) * m ** half))
            last = dst

        # mass can only leave through the box boundary, never return, so a
        # single audit of the final field bounds the leakage at every step
        leak = 0.0
        if depth > 0:
            wfin = eng.dom_w[(depth & 1) if eng.bipartite else 0]
            live = float(np.dot(last[:-1], wfin))
            leak = max(0.0, 1.0 - live)
        box_cells = n_cells
        bipartite = eng.bipartite
    else:
        eng = _DenseEngine(dist, L)
        n_cells = eng.side ** d
        f = np.zeros(eng.shape)
        g = np.zeros(eng.shape)
        f[eng.index_of((0,) * d)] = 1.0
        tidx = {t: eng.index_of(t) for t in targets}
        if (0,) * d in r:
            r[(0,) * d][0] = 1.0
        steps_par = np.abs(dist.points_array()).sum(axis=1) % 2
        bipartite = bool(np.all(steps_par == 1))
        half = d / 2.0
        for m in range(1, depth + 1):
            eng.sweep(g, f)
            if not squared:
                for t, ti in tidx.items():
                    r[t][m] = g[ti]
            else:
                n_even = 2 * m
                if n_even <= n_max:
                    r[(0,) * d][n_even] = float(np.vdot(g, g))
                n_odd = 2 * m - 1
                if n_odd <= n_max and not bipartite:
                    r[(0,) * d][n_odd] = float(np.vdot(g, f))
            jp.append((m, float(np.max(g)) * m ** half))
            f, g = g, f
        live = float(np.sum(f)) if depth > 0 else 1.0
        leak = max(0.0, 1.0 - live) if depth > 0 else 0.0
        box_cells = n_cells

    if leak > _LEAK_BUDGET:
        raise BoxTooSmall(
            f"boundary leakage {leak:.3e} exceeds {_LEAK_BUDGET:.0e} "
            f"(box L={L}, depth={depth})"
        )
    return {
        "r": r,
        "jp": jp,
        "leak": leak,
        "L": L,
        "n_cells": box_cells,
        "bipartite": bipartite,
        "mode": "squared" if squared else "direct",
        "depth": depth,
    }


def _postprocess(
    raw: Dict, t: Tuple[int, ...], dist: StepDistribution, n_max: int
) -> GreenDPResult:
    d = dist.dim
    r = raw["r"][t]
    partial = math.fsum(r.tolist())
    parity = (sum(abs(c) for c in t) & 1) if raw["bipartite"] else None

    jp = [(n, v) for n, v in raw["jp"] if n >= 10]
    jp_max = max((v for _, v in jp), default=math.nan)

    # tail envelope: local-limit decay pinned to the late-window constant.
    # In squared mode the origin series itself gives the window; in direct
    # mode the field max dominates every site uniformly.
    if raw["mode"] == "squared":
        lo = max(1, n_max // 2)
        window = [r[n] * n ** (d / 2.0) for n in range(lo, n_max + 1) if r[n] > 0]
    else:
        lo = max(10, raw["depth"] // 2)
        window = [v for n, v in raw["jp"] if n >= lo]
    if window:
        c_hat = 1.05 * max(window)
        tail_bound = c_hat * _parity_tail_sum(d / 2.0, n_max, parity)
    else:
        tail_bound = math.inf

    if n_max >= 40:
        tail_fit, fit_err = _fit_tail(r, n_max, d, parity)
        if math.isnan(tail_fit):
            estimate, estimate_error = partial, tail_bound
        else:
            estimate = partial + tail_fit
            estimate_error = fit_err + 10.0 * raw["leak"]
    else:
        estimate, estimate_error = partial, tail_bound

    return GreenDPResult(
        x=t,
        n_max=n_max,
        value=partial,
        tail_bound=tail_bound,
        estimate=estimate,
        estimate_error=estimate_error,
        leakage=raw["leak"],
        jp_max=jp_max,
        box=raw["L"],
        n_cells=raw["n_cells"],
        mode=raw["mode"],
    )


def green_dp_oracle(
    x: Sequence[int],
    dist: StepDistribution,
    n_max: int,
    box: Optional[int] = None,
    mode: str = "auto",
    engine: Optional[str] = None,
) -> GreenDPResult:
    """Sum P(S_n = x) for n <= n_max by exact convolution iteration.

    mode: "direct" iterates to depth n_max; "squared" (origin only) gets
    the depth-2m return probability from the squared depth-m field, which
    halves the work; "auto" picks squared for x = 0 with large n_max.
    """
    t = tuple(int(c) for c in x)
    if len(t) != dist.dim:
        raise ValueError(f"point has dimension {len(t)}, law has {dist.dim}")
    if mode not in ("auto", "direct", "squared"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "auto":
        origin = all(c == 0 for c in t)
        mode = "squared" if (origin and n_max >= 512) else "direct"
    raw = _dp_run(dist, n_max, [t], box, mode, engine)
    return _postprocess(raw, t, dist, n_max)


def green_dp_multi(
    points: Iterable[Sequence[int]],
    dist: StepDistribution,
    n_max: int,
    box: Optional[int] = None,
) -> Dict[Tuple[int, ...], GreenDPResult]:
    """Direct-mode oracle for many sites sharing one field iteration."""
    targets = []
    for x in points:
        t = tuple(int(c) for c in x)
        if len(t) != dist.dim:
            raise ValueError(f"point has dimension {len(t)}, law has {dist.dim}")
        if t not in targets:
            targets.append(t)
    raw = _dp_run(dist, n_max, targets, box, "direct")
    return {t: _postprocess(raw, t, dist, n_max) for t in targets}


# ---------------------------------------------------------------------------
# tables, cache, derived constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GreenEntry:
    value: float
    abs_error: float
    method: str  # "quadrature" | "dp"


@dataclass
class GreenTable:
    dim: int
    dist_hash: str
    symmetric_reduce: bool
    entries: Dict[Tuple[int, ...], GreenEntry]

    def _key(self, x: Sequence[int]) -> Optional[Tuple[int, ...]]:
        t = tuple(int(c) for c in x)
        if t in self.entries:
            return t
        neg = tuple(-c for c in t)
        if neg in self.entries:
            return neg
        if self.symmetric_reduce:
            c = canonical_site(t)
            if c in self.entries:
                return c
        return None

    def lookup(self, x: Sequence[int]) -> GreenEntry:
        k = self._key(x)
        if k is None:
            raise MissingGreenValue(f"no Green value for {tuple(x)}")
        return self.entries[k]

    def value(self, x: Sequence[int]) -> float:
        return self.lookup(x).value

    def __contains__(self, x) -> bool:
        return self._key(x) is not None

    def validate(self) -> None:
        origin = (0,) * self.dim
        if origin not in self.entries:
            return
        g0 = self.entries[origin].value
        if g0 < 1.0:
            raise RuntimeError(f"G(0) = {g0} < 1")
        for k, e in self.entries.items():
            if e.value <= 0.0:
                raise RuntimeError(f"G{k} = {e.value} <= 0")
            if k != origin and e.value >= g0:
                raise RuntimeError(f"G{k} >= G(0)")


def default_cache_dir() -> Path:
    env = os.environ.get("HEAVYPOINTS_CACHE")
    if env:
        return Path(env)
    xdg = os.environ.get("XDG_CACHE_HOME")
    base = Path(xdg) if xdg else Path.home() / ".cache"
    return base / "heavypoints"


def cache_path(dist: StepDistribution, cache_dir: Optional[Path] = None) -> Path:
    root = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    return root / f"green-{dist.content_hash}.json"


_CACHE_VERSION = 1


def _load_cache(path: Path, dist: StepDistribution) -> Dict[Tuple[int, ...], GreenEntry]:
    try:
        import json

        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("version") != _CACHE_VERSION:
            return {}
        if doc.get("dist_hash") != dist.content_hash or doc.get("dim") != dist.dim:
            return {}
        out = {}
        for key, rec in doc.get("entries", {}).items():
            pt = tuple(int(c) for c in key.split(","))
            value, err, method = float(rec[0]), float(rec[1]), str(rec[2])
            out[pt] = GreenEntry(value, err, method)
        return out
    except (OSError, ValueError, KeyError, IndexError, TypeError):
        return {}


def _save_cache(
    path: Path, dist: StepDistribution, entries: Dict[Tuple[int, ...], GreenEntry]
) -> None:
    doc = {
        "version": _CACHE_VERSION,
        "dist_hash": dist.content_hash,
        "dim": dist.dim,
        "entries": {
            ",".join(str(c) for c in k): [e.value, e.abs_error, e.method]
            for k, e in entries.items()
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    _jsonfmt.write_file(tmp, doc)
    os.replace(tmp, path)


def build_green_table(
    dist: StepDistribution,
    points: Iterable[Sequence[int]],
    tol: float = 1e-8,
    cache_dir: Optional[Path] = None,
    use_cache: bool = True,
) -> GreenTable:
    """Quadrature table for the given sites, reusing the on-disk cache.

    Cached entries are honoured only when their recorded error meets the
    requested tolerance, so tightening tol forces recomputation.
    """
    reduce = dist.perm_symmetric and dist.orthant_symmetric
    want: List[Tuple[int, ...]] = []
    seen = set()
    for x in points:
        t = tuple(int(c) for c in x)
        key = canonical_site(t) if reduce else t
        if key not in seen:
            seen.add(key)
            want.append(key)

    path = cache_path(dist, cache_dir)
    cached = _load_cache(path, dist) if use_cache else {}
    entries: Dict[Tuple[int, ...], GreenEntry] = {}
    dirty = False
    for key in want:
        hit = cached.get(key)
        if hit is not None and hit.abs_error <= tol and hit.method == "quadrature":
            entries[key] = hit
            continue
        res = green_quadrature(key, dist, tol=tol)
        entries[key] = GreenEntry(res.value, res.abs_error, "quadrature")
        dirty = True
    if use_cache and dirty:
        merged = dict(cached)
        merged.update(entries)
        _save_cache(path, dist, merged)

    gt = GreenTable(
        dim=dist.dim,
        dist_hash=dist.content_hash,
        symmetric_reduce=reduce,
        entries=entries,
    )
    gt.validate()
    return gt


@dataclass(frozen=True)
class SiteConstants:
    G: float
    gamma_x: float
    q_x: float
    s_x: float
    m_x: float


@dataclass(frozen=True)
class DerivedConstants:
    dim: int
    G0: float
    gamma: float
    lam: float
    sites: Dict[Tuple[int, ...], SiteConstants]
    # step covariance, carried along so ball-based consumers can build
    # Q-norm neighborhoods without re-threading the distribution
    cov: Optional["CovarianceData"] = None

    def site(self, x: Sequence[int]) -> SiteConstants:
        t = tuple(int(c) for c in x)
        if t in self.sites:
            return self.sites[t]
        raise MissingGreenValue(f"no derived constants for {t}")


def derive_constants(
    gt: GreenTable, sites: Iterable[Sequence[int]],
    cov: Optional["CovarianceData"] = None,
) -> DerivedConstants:
    """Escape probability gamma = 1/G(0), lambda = -1/log(1-gamma), and the
    per-site (gamma_x, q_x, s_x, m_x) family.

    At x = 0 the excursion split degenerates: m_0 = 1 by convention and
    q_0, s_0 are reported as NaN.
    """
    origin = (0,) * gt.dim
    g0 = gt.value(origin)
    gamma = 1.0 / g0
    lam = -1.0 / math.log1p(-gamma)
    table: Dict[Tuple[int, ...], SiteConstants] = {}
    for x in sites:
        t = tuple(int(c) for c in x)
        if t == origin:
            table[t] = SiteConstants(
                G=g0, gamma_x=0.0, q_x=math.nan, s_x=math.nan, m_x=1.0
            )
            continue
        gx = gt.value(t)
        one_m_gx = gx / g0
        gamma_x = 1.0 - one_m_gx
        q_x = 1.0 - gamma / (1.0 - one_m_gx * one_m_gx)
        s_x = one_m_gx * (1.0 - q_x)
        m_x = one_m_gx * one_m_gx / (1.0 - gamma)
        table[t] = SiteConstants(G=gx, gamma_x=gamma_x, q_x=q_x, s_x=s_x, m_x=m_x)
    return DerivedConstants(dim=gt.dim, G0=g0, gamma=gamma, lam=lam,
                            sites=table, cov=cov)


# ---------------------------------------------------------------------------
# large-|x| asymptotics
# ---------------------------------------------------------------------------


def asymptotic_coefficient(d: int) -> float:
    return math.gamma(d / 2.0 - 1.0) / (2.0 * math.pi ** (d / 2.0))


def green_asymptotic(x: Sequence[int], dist: StepDistribution) -> float:
    """Leading-order G(x) ~ c_d |Q|^{-1/2} ||x||^{2-d} in the Q-norm."""
    t = tuple(int(c) for c in x)
    if all(c == 0 for c in t):
        raise OriginNotAllowed("asymptotic form is for x != 0")
    nsq = float(q_norm_sq(t, dist.cov))
    d = dist.dim
    return (
        asymptotic_coefficient(d)
        / math.sqrt(dist.cov.detQ)
        * nsq ** ((2.0 - d) / 2.0)
    )


def validate_asymptotic(
    dist: StepDistribution,
    radii: Sequence[int] = (15, 17, 19, 21, 23, 25),
    tol: float = 1e-7,
    reject_level: float = 0.01,
) -> Tuple[float, float]:
    """Regression check of the closed-form coefficient c_d.

    Fits G(x)||x||^{d-2}|Q|^{1/2} = c + b/||x|| on axis points and compares
    the intercept with the closed form; a mismatch beyond reject_level is
    an error, never silently adopted.
    """
    d = dist.dim
    cd = asymptotic_coefficient(d)
    norms = []
    ys = []
    for k in radii:
        x = (k,) + (0,) * (d - 1)
        g = green_quadrature(x, dist, tol=tol).value
        nrm = math.sqrt(float(q_norm_sq(x, dist.cov)))
        norms.append(nrm)
        ys.append(g * nrm ** (d - 2) * math.sqrt(dist.cov.detQ))
    A = np.vstack([np.ones(len(norms)), 1.0 / np.asarray(norms)]).T
    coefs, *_ = np.linalg.lstsq(A, np.asarray(ys), rcond=None)
    c_hat = float(coefs[0])
    if abs(c_hat / cd - 1.0) > reject_level:
        raise AsymptoticMismatch(
            f"fitted coefficient {c_hat:.6g} vs closed form {cd:.6g} "
            f"(relative gap {abs(c_hat / cd - 1.0):.2%})"
        )
    return c_hat, cd
