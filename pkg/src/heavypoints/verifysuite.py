"""Invariant checks behind `heavypoints verify`.

Level `quick` exercises the exact engines only: algebraic identities,
dual-form agreement, cache fault detection, packing order, determinism.
Level `full` adds the Monte Carlo suites, each pinned to a fixed seed
so a pass is reproducible.  A crashed check is reported as a failure,
never as a crashed suite.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from contextlib import redirect_stdout
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter
from typing import Callable, List, Optional

import numpy as np

from . import _packing, backend
from .config import ExperimentConfig, parse_config
from .errors import ConfigError
from .green import (
    GreenEntry,
    _load_cache,
    _save_cache,
    build_green_table,
    cache_path,
    derive_constants,
    green_dp_oracle,
    green_quadrature,
)
from .heavylab import neighbor_ratio, thm13_scan
from .jointlaw import (
    joint_pmf_oracle,
    log_phi_dev_bound,
    estimate_window,
    phi,
    psi,
    psi_envelope,
    restricted_mgf,
    site_pack,
)
from .lattice import build_distribution, euclid_ball
from .walk import (
    estimate_hitting,
    max_local_time,
    merge_fields,
    sample_excursions,
    sample_return_counts,
    simulate,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    bound: float
    detail: str = ""
    seconds: float = 0.0

    def render(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: measured={self.measured:.6g} "
                f"bound={self.bound:.6g} [{self.seconds:.2f}s]"
                + (f" {self.detail}" if self.detail else ""))


def _dist(d: int):
    return build_distribution(d, "simple")


def _constants(d: int, radius: float, tol: float = 1e-8):
    dist = _dist(d)
    pts = euclid_ball(radius, d)
    gt = build_green_table(dist, pts, tol=tol)
    return dist, gt, derive_constants(gt, pts, cov=dist.cov)


# ---------------------------------------------------------------------------
# quick checks
# ---------------------------------------------------------------------------

def _chk_constants_identities() -> CheckResult:
    """gamma*G0=1, 1-gamma_x=G/G0, lambda=-1/log(1-gamma), and the
    mutually-derived (q, s, m) relations, residuals at 1e-12."""
    worst = 0.0
    n_sites = 0
    for d, radius in ((3, 2.0), (4, 1.0), (5, 1.0)):
        _, gt, dc = _constants(d, radius)
        worst = max(worst, abs(dc.gamma * dc.G0 - 1.0))
        worst = max(worst, abs(dc.lam + 1.0 / math.log1p(-dc.gamma)))
        for x, s in dc.sites.items():
            n_sites += 1
            worst = max(worst, abs((1.0 - s.gamma_x) - s.G / dc.G0))
            if all(c == 0 for c in x):
                worst = max(worst, abs(s.m_x - 1.0))
                continue
            one_m = 1.0 - s.gamma_x
            # independent recombinations of the definitions
            worst = max(worst, abs(s.m_x * (1.0 - dc.gamma) - one_m * one_m))
            worst = max(worst, abs(s.s_x - one_m * (1.0 - s.q_x)))
            worst = max(worst,
                        abs(s.q_x + s.s_x + dc.gamma / (1.0 + one_m) - 1.0))
    return CheckResult("constants-identities", worst <= 1e-12, worst, 1e-12,
                       f"d=3,4,5, {n_sites} sites")


def _chk_hitting_inequalities() -> CheckResult:
    """gamma_x >= gamma, (1-gamma)/(2-gamma) <= q_x <= 1-gamma, and
    1-q_x-s_x >= gamma/(2-gamma).  The bounds are attained exactly at
    unit vectors, so each margin may dip below zero only by the
    certified quadrature error of the table values, not further."""
    worst = -math.inf  # margin deficit in units of the certified slack
    n = 0
    for d, radius in ((3, 2.0), (4, 1.0), (5, 1.0)):
        _, gt, dc = _constants(d, radius)
        g = dc.gamma
        origin = (0,) * d
        e0 = gt.lookup(origin).abs_error
        lo_q, hi_q = (1.0 - g) / (2.0 - g), 1.0 - g
        floor_qs = g / (2.0 - g)
        for x, s in dc.sites.items():
            if all(c == 0 for c in x):
                continue
            n += 1
            # derived quantities have O(1) sensitivity to (G0, G(x))
            slack = 4.0 * (gt.lookup(x).abs_error + e0) / dc.G0
            margins = (
                s.gamma_x - g,
                s.q_x - lo_q,
                hi_q - s.q_x,
                (1.0 - s.q_x - s.s_x) - floor_qs,
            )
            worst = max(worst, -min(margins) / slack)
    return CheckResult("hitting-inequalities", worst <= 1.0, worst, 1.0,
                       f"{n} nonzero sites, d=3,4,5")


def _chk_jointlaw_dual() -> CheckResult:
    """(q,s) product form vs phi/psi form of the restricted MGF, plus
    total mass and the exact geometric row marginals."""
    dist, gt, dc = _constants(3, 2.0)
    worst = 0.0
    for xs in ((1, 0, 0), (1, 1, 0)):
        c = site_pack(dc, xs)
        for v in (-0.2, -0.1, 0.05, 0.1):
            for k in range(11):
                a = restricted_mgf(v, k, c, form="qs")
                b = restricted_mgf(v, k, c, form="phipsi")
                worst = max(worst, abs(a - b) / max(1.0, abs(a)))
        law = joint_pmf_oracle(c, K=12, J=30, x=xs)
        worst = max(worst, abs(law.total_mass() - 1.0))
        for k in range(13):
            want = dc.gamma * (1.0 - dc.gamma) ** k
            worst = max(worst, abs(law.row_sum(k) - want))
    return CheckResult("jointlaw-dual-forms", worst <= 1e-12, worst, 1e-12,
                       "x=e1,(1,1,0), v in {-0.2,-0.1,0.05,0.1}")


def _chk_mgf_envelopes() -> CheckResult:
    """|log phi - m_x v| <= m_x v^2 K_gamma and psi <= its closed-form
    envelope on the interior of the admissible window."""
    dist, gt, dc = _constants(3, 2.0)
    worst = -math.inf
    for xs in ((1, 0, 0), (1, 1, 0)):
        c = site_pack(dc, xs)
        lo, hi = estimate_window(c.gamma)
        vs = np.linspace(0.9 * lo, 0.9 * hi, 25)
        for v in vs:
            v = float(v)
            if v == 0.0:
                continue
            dev = abs(math.log(phi(v, c)) - c.m_x * v)
            worst = max(worst, dev - log_phi_dev_bound(v, c))
            worst = max(worst, psi(v, c) - psi_envelope(v, c.gamma))
    return CheckResult("mgf-envelopes", worst <= 1e-12, worst, 1e-12,
                       "max bound excess over the v-grid")


def _chk_green_dp_quadrature() -> CheckResult:
    """Quadrature vs convolution-iteration bracket at the origin and e1,
    d=3; agreement within the sum of stated error bounds."""
    dist = _dist(3)
    worst = 0.0
    for x, mode in (((0, 0, 0), "squared"), ((1, 0, 0), "direct")):
        quad = green_quadrature(x, dist, tol=1e-8)
        dp = green_dp_oracle(x, dist, n_max=512, mode=mode)
        budget = quad.abs_error + dp.estimate_error
        worst = max(worst, abs(quad.value - dp.estimate) / budget)
    return CheckResult("green-dp-vs-quadrature", worst <= 1.0, worst, 1.0,
                       "gap / combined error budget, n_max=512")


def _chk_tampered_cache() -> CheckResult:
    """Perturb one cached Green value by 1e-2 and demand the direct
    quadrature cross-check notices."""
    dist = _dist(3)
    origin = (0, 0, 0)
    with tempfile.TemporaryDirectory() as td:
        cd = Path(td)
        build_green_table(dist, [origin], tol=1e-8, cache_dir=cd)
        path = cache_path(dist, cd)
        cached = _load_cache(path, dist)
        ent = cached[origin]
        cached[origin] = GreenEntry(ent.value + 1e-2, ent.abs_error,
                                    ent.method)
        _save_cache(path, dist, cached)
        gt = build_green_table(dist, [origin], tol=1e-8, cache_dir=cd)
        fresh = green_quadrature(origin, dist, tol=1e-8)
        gap = abs(gt.value(origin) - fresh.value)
        budget = gt.lookup(origin).abs_error + fresh.abs_error
    detected = gap > budget
    return CheckResult("tampered-cache-detection", detected, gap, budget,
                       "perturbed G(0) must exceed the combined bounds")


def _chk_packing_order() -> CheckResult:
    """int64 key order must equal lexicographic site order."""
    rng = np.random.default_rng(7)
    worst = 0
    for d in (3, 4, 5):
        half = _packing.half_range(d)
        span = min(half - 1, 10**5)
        pts = rng.integers(-span, span + 1, size=(4000, d)).astype(np.int64)
        keys = _packing.pack_coords(pts, d)
        by_key = np.argsort(keys, kind="stable")
        by_lex = np.lexsort(tuple(pts[:, i] for i in range(d - 1, -1, -1)))
        worst += int(np.any(pts[by_key] != pts[by_lex]))
    return CheckResult("packing-lex-order", worst == 0, worst, 0,
                       "4000 random sites per d in {3,4,5}")


def _chk_merge_conservation() -> CheckResult:
    dist = _dist(3)
    fields = []
    total = 0
    for r in range(3):
        run, f_n, _ = simulate(dist, 20000, 99, 1.0, stream=r)
        fields.append(f_n)
        total += f_n.total
    merged = merge_fields(fields)
    gap = abs(merged.total - total)
    gap += abs(int(merged.counts.sum()) - total)
    probe = (0, 0, 0)
    gap += abs(merged.get(probe) - sum(f.get(probe) for f in fields))
    return CheckResult("merge-conservation", gap == 0, gap, 0,
                       "3 shards of 20000 steps")


def _chk_walk_determinism() -> CheckResult:
    dist = _dist(3)
    a, fa, _ = simulate(dist, 30000, 4242, 2.0)
    b, fb, _ = simulate(dist, 30000, 4242, 2.0)
    same = (np.array_equal(fa.keys, fb.keys)
            and np.array_equal(fa.counts, fb.counts)
            and a.end == b.end)
    detail = "rerun"
    if backend.compiled_available():
        c, fc, _ = simulate(dist, 30000, 4242, 2.0, backend_force="python")
        same = same and (np.array_equal(fa.keys, fc.keys)
                         and np.array_equal(fa.counts, fc.counts)
                         and a.end == c.end)
        detail = "rerun + compiled-vs-python"
    return CheckResult("walk-determinism", same, 0.0 if same else 1.0, 0.0,
                       detail)


def _chk_config_roundtrip() -> CheckResult:
    cfg = ExperimentConfig(model="simple", dim=4, steps=12345,
                           horizon_factor=2.5, seeds=7, seed=99,
                           green_tol=1e-9, delta=0.05, radius=2.5,
                           eps=0.1, site="1,1,0,0", kmax=9, jmax=17,
                           c=1.25, outdir="x/y")
    ok = parse_config(cfg.to_text()) == cfg
    rejected = False
    try:
        parse_config(cfg.to_text() + "zzz=1\n")
    except ConfigError:
        rejected = True
    passed = ok and rejected
    return CheckResult("config-roundtrip", passed, 0.0 if passed else 1.0,
                       0.0, "exact round-trip + unknown-key rejection")


def _run_cli(argv: List[str], workers: Optional[int] = None) -> int:
    from . import cli

    old = os.environ.get(cli.WORKERS_ENV)
    if workers is not None:
        os.environ[cli.WORKERS_ENV] = str(workers)
    try:
        with redirect_stdout(io.StringIO()):
            return cli.main(argv)
    finally:
        if workers is not None:
            if old is None:
                os.environ.pop(cli.WORKERS_ENV, None)
            else:
                os.environ[cli.WORKERS_ENV] = old


def _dir_bytes(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def _chk_archive_roundtrip() -> CheckResult:
    """Write a small archive through the CLI, replay it, tamper with a
    report, and demand the replay notices."""
    from . import cli

    with tempfile.TemporaryDirectory() as td:
        out = Path(td) / "arc"
        rc = _run_cli(["simulate", "--steps", "20000", "--seed", "5",
                       "--replicas", "2", "--out", str(out)])
        ok = rc == 0
        checks = cli.replay_archive(out)
        ok = ok and all(checks.values())
        data = (out / "seed-000000.json").read_bytes()
        (out / "seed-000000.json").write_bytes(data.replace(b'"n": 20000',
                                                            b'"n": 20001'))
        tampered = cli.replay_archive(out)
        ok = ok and not tampered["hashes"]
    return CheckResult("archive-roundtrip", ok, 0.0 if ok else 1.0, 0.0,
                       "hashes + aggregate replay + tamper detection")


# ---------------------------------------------------------------------------
# full-level Monte Carlo checks
# ---------------------------------------------------------------------------

def _chk_geometric_law() -> CheckResult:
    """xi(0,H) across fresh walks against the geometric law
    gamma(1-gamma)^k, 4-sigma binomial bands."""
    dist, gt, dc = _constants(3, 1.0)
    R, H = 10000, 100000
    counts, _ = sample_return_counts(dist, R, H, seed=31337)
    worst = 0.0
    for k in range(9):
        p = dc.gamma * (1.0 - dc.gamma) ** k
        emp = float(np.mean(counts == k))
        se = math.sqrt(p * (1.0 - p) / R)
        worst = max(worst, abs(emp - p) / se)
    return CheckResult("geometric-law", worst <= 4.0, worst, 4.0,
                       f"{R} replicas, H={H}, k<=8")


def _chk_excursion_mean() -> CheckResult:
    """Mean visits to e1 per completed excursion vs m_x, and
    P(Z=0 | T<inf) vs q_x/(1-gamma)."""
    dist, gt, dc = _constants(3, 1.0)
    s = dc.site((1, 0, 0))
    samp = sample_excursions(dist, (1, 0, 0), replicas=110000,
                             horizon=30000, seed=20240)
    summ = samp.summary()
    z_mean = (summ["mean_z"] - s.m_x) / summ["se_mean"]
    p0_exact = s.q_x / (1.0 - dc.gamma)
    z_p0 = (summ["p_zero"] - p0_exact) / summ["se_pzero"]
    worst = max(abs(z_mean), abs(z_p0))
    return CheckResult("excursion-mean", worst <= 3.5, worst, 3.5,
                       f"{summ['n_excursions']} excursions "
                       f"(z_mean={z_mean:.2f}, z_p0={z_p0:.2f})")


def _chk_hitting_race() -> CheckResult:
    """First-passage race frequencies vs the exact (q_x, s_x, 1-q-s)
    partition; the truncation bias at this horizon is well inside the
    band."""
    dist, gt, dc = _constants(3, 1.0)
    s = dc.site((1, 0, 0))
    est = estimate_hitting(dist, (1, 0, 0), replicas=30000, n=30000,
                           seed=777)
    exact = {"q": s.q_x, "s": s.s_x, "never": 1.0 - s.q_x - s.s_x}
    worst = 0.0
    for key in ("q", "s", "never"):
        worst = max(worst, abs(est[key] - exact[key]) / est[f"se_{key}"])
    part = abs(est["q"] + est["s"] + est["never"] - 1.0)
    ok = worst <= 4.0 and part <= 1e-12
    return CheckResult("hitting-race", ok, worst, 4.0,
                       f"30000 replicas, partition residual {part:.1e}")


def _chk_max_local_time_bracket() -> CheckResult:
    """max_x xi(x,n) / (lambda log n) should concentrate near 1; demand
    [0.4, 1.6] for at least 95 of 100 seeds at n=1e5."""
    dist, gt, dc = _constants(3, 1.0)
    n = 100000
    denom = dc.lam * math.log(n)
    inside = 0
    for r in range(100):
        _, f_n, _ = simulate(dist, n, 222, 1.0, stream=r)
        best, _ = max_local_time(f_n)
        if 0.4 <= best / denom <= 1.6:
            inside += 1
    return CheckResult("max-local-time-bracket", inside >= 95,
                       inside, 95, "ratio in [0.4,1.6], 100 seeds, n=1e5")


def _chk_neighbor_ratio() -> CheckResult:
    """Self-normalized profile at the heaviest site, averaged over unit
    vectors: inside [0.4, 1.6] for at least 2 of 3 seeds at n=1e6."""
    dist, gt, dc = _constants(3, 2.0)
    inside = 0
    vals = []
    for r in range(3):
        run, f_n, _ = simulate(dist, 10**6, 555, 10.0, stream=r)
        _, argmax = max_local_time(f_n)
        v = neighbor_ratio(f_n, argmax[0], dc)
        vals.append(round(v, 3))
        if 0.4 <= v <= 1.6:
            inside += 1
    return CheckResult("neighbor-ratio", inside >= 2, inside, 2,
                       f"ratios {vals} at n=1e6")


def _chk_thm13_audit() -> CheckResult:
    """Every reported hit must satisfy both defining conditions under a
    direct recount from the fields."""
    dist, gt, dc = _constants(3, 1.0)
    run, f_n, f_H = simulate(dist, 200000, 2024, 10.0, retain_path=True)
    res = thm13_scan(run, c=1.0, eps=0.1, constants=dc)
    d = run.dim
    a = (d - 4.0) / (d - 2.0) - 0.1
    bad = 0
    idx = res.indices
    sample = idx if idx.size <= 10 else idx[:: max(1, idx.size // 10)][:10]
    for j in sample:
        j = int(j)
        site = run.path[j]
        thr = dc.lam * (math.log(j) + a * math.log(math.log(j)))
        mag = int(math.floor(1.0 * math.log(j) ** (1.0 / (2 * d - 4))))
        off = site.copy()
        off[0] += mag
        if not (f_H.get(site) >= thr and f_H.get(off) == 0):
            bad += 1
    return CheckResult("thm13-audit", bad == 0, bad, 0,
                       f"{len(sample)} of {res.n_hits} hits recounted")


def _chk_workers_identity() -> CheckResult:
    """The same run under 1 and 2 workers must leave byte-identical
    archives."""
    with tempfile.TemporaryDirectory() as td:
        a = Path(td) / "w1"
        b = Path(td) / "w2"
        rc1 = _run_cli(["simulate", "--steps", "20000", "--seed", "8",
                        "--replicas", "3", "--out", str(a)], workers=1)
        rc2 = _run_cli(["simulate", "--steps", "20000", "--seed", "8",
                        "--replicas", "3", "--out", str(b)], workers=2)
        same = rc1 == 0 and rc2 == 0 and _dir_bytes(a) == _dir_bytes(b)
    return CheckResult("workers-identity", same, 0.0 if same else 1.0, 0.0,
                       "1 vs 2 workers, 3 streams")


QUICK_CHECKS: List[Callable[[], CheckResult]] = [
    _chk_constants_identities,
    _chk_hitting_inequalities,
    _chk_jointlaw_dual,
    _chk_mgf_envelopes,
    _chk_green_dp_quadrature,
    _chk_tampered_cache,
    _chk_packing_order,
    _chk_merge_conservation,
    _chk_walk_determinism,
    _chk_config_roundtrip,
    _chk_archive_roundtrip,
]

FULL_CHECKS: List[Callable[[], CheckResult]] = [
    _chk_geometric_law,
    _chk_excursion_mean,
    _chk_hitting_race,
    _chk_max_local_time_bracket,
    _chk_neighbor_ratio,
    _chk_thm13_audit,
    _chk_workers_identity,
]


def run_suite(level: str = "quick") -> List[CheckResult]:
    if level not in ("quick", "full"):
        raise ConfigError(f"unknown verify level {level!r}")
    checks = list(QUICK_CHECKS)
    if level == "full":
        checks += FULL_CHECKS
    out: List[CheckResult] = []
    for fn in checks:
        t0 = perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashed check is a failed check
            res = CheckResult(fn.__name__.replace("_chk_", "").replace("_", "-"),
                              False, math.nan, math.nan,
                              f"raised {type(exc).__name__}: {exc}")
        res.seconds = perf_counter() - t0
        out.append(res)
    return out
