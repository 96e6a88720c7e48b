"""Acceptance gate: ten end-to-end criteria over the whole package.

Each test prints one visible line, ``[criterion NN] PASS/FAIL ...``,
with the measured statistic and wall time, then asserts.  Exact-math
criteria (1-4) carry hard tolerances; the Monte Carlo criteria (5-9)
run at fixed seeds with the quoted confidence bands; criterion 10 is
the engineering budget.  Runs are ordered so the slow multi-scale
batches sit in module-scoped fixtures shared by the criteria that need
them.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import table_slack
from heavypoints.green import canonical_site, green_dp_multi, green_dp_oracle
from heavypoints.heavylab import (
    HeavyConfig,
    heavy_report,
    min_nonzero_radius_sq,
    neighbor_ratio,
    thm13_scan,
)
from heavypoints.jointlaw import (
    estimate_window,
    joint_pmf_oracle,
    log_phi_dev_bound,
    phi,
    psi,
    psi_envelope,
    restricted_mgf,
    site_pack,
)
from heavypoints.lattice import euclid_ball
from heavypoints.walk import (
    max_local_time,
    sample_excursions,
    sample_return_counts,
    simulate,
)

# criterion scales
DP_DEPTH = {3: 1500, 4: 400, 5: 150}
SEED_GEOM = 505
SEED_EXC = 601
BASE_PROFILE = 4000
BASE_MEGA = 4000
SEED_ENGINEERING = 1234


def _report(capsys, num, name, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = (f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {name}: "
            f"{detail} ({elapsed:.1f}s / limit {limit:.0f}s)")
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. Green cross-validation


def test_criterion_01_green_cross_validation(request, capsys):
    t0 = time.monotonic()
    worst_ratio = 0.0  # |quad - dp partial| / (quad err + dp tail bound)
    origin_gap = math.inf
    for d in (3, 4, 5):
        dist, gt, _, _ = request.getfixturevalue(f"bundle{d}")
        sites = euclid_ball(3.0, d)
        classes = sorted({canonical_site(x) for x in sites})
        dp = green_dp_multi(classes, dist, n_max=DP_DEPTH[d])
        for x in sites:
            e = gt.lookup(x)
            r = dp[canonical_site(x)]
            budget = e.abs_error + r.tail_bound
            gap = abs(e.value - r.value)
            worst_ratio = max(worst_ratio, gap / budget)
            # partial sum must bracket from below
            assert r.value <= e.value + e.abs_error
        if d == 3:
            r0 = green_dp_oracle((0,) * 3, dist, n_max=DP_DEPTH[3])
            origin_gap = abs(gt.value((0,) * 3) - r0.estimate)
    elapsed = time.monotonic() - t0
    ok = worst_ratio <= 1.0 and origin_gap <= 1e-3
    _report(capsys, 1, "green cross-validation (d=3,4,5, 3-ball)", ok,
            f"max |quad-dp|/(err+tail) {worst_ratio:.3f}, "
            f"G(0) d=3 cross-method gap {origin_gap:.2e} (tol 1e-3)",
            elapsed, 300)


# ---------------------------------------------------------------------------
# 2. identity suite and two-sided hitting inequalities


def test_criterion_02_identity_suite(request, capsys):
    t0 = time.monotonic()
    worst_id = 0.0
    worst_slack = -math.inf  # inequality violation beyond certified slack
    for d in (3, 4, 5):
        _, gt, dc, sites = request.getfixturevalue(f"bundle{d}")
        origin = (0,) * d
        g0 = gt.value(origin)
        gam = dc.gamma
        worst_id = max(worst_id, abs(gam * g0 - 1.0))
        worst_id = max(worst_id, abs(dc.lam - (-1.0 / math.log1p(-gam))))
        lo_q = (1.0 - gam) / (2.0 - gam)
        hi_q = 1.0 - gam
        floor_qs = gam / (2.0 - gam)
        for x in sites:
            if all(c == 0 for c in x):
                continue
            s = dc.site(x)
            gx = gt.value(x)
            one_m = 1.0 - s.gamma_x
            worst_id = max(worst_id, abs(one_m - gx / g0))
            worst_id = max(worst_id, abs(s.q_x - (1.0 - gam / (1.0 - one_m ** 2))))
            worst_id = max(worst_id, abs(s.s_x - one_m * (1.0 - s.q_x)))
            worst_id = max(worst_id, abs(s.m_x - one_m ** 2 / (1.0 - gam)))
            slack = table_slack(gt, x)
            worst_slack = max(
                worst_slack,
                (gam - s.gamma_x) - slack,        # gamma_x >= gamma
                (lo_q - s.q_x) - slack,           # q_x >= (1-gamma)/(2-gamma)
                (s.q_x - hi_q) - slack,           # q_x <= 1-gamma
                (floor_qs - (1.0 - s.q_x - s.s_x)) - slack,
            )
    elapsed = time.monotonic() - t0
    ok = worst_id <= 1e-12 and worst_slack <= 0.0
    _report(capsys, 2, "identity and inequality suite (5-ball, d=3,4,5)", ok,
            f"max identity dev {worst_id:.2e} (tol 1e-12), "
            f"max inequality excess {worst_slack:.2e} (certified slack)",
            elapsed, 60)


# ---------------------------------------------------------------------------
# 3. joint-law equivalence: convolution oracle vs closed-form MGF


def test_criterion_03_jointlaw_equivalence(bundle3, capsys):
    t0 = time.monotonic()
    _, _, dc, _ = bundle3
    K, J = 15, 80
    vs = (-0.2, -0.1, 0.05, 0.1)
    worst_mgf = 0.0
    worst_mass = 0.0
    rows_exact = True
    for x in ((1, 0, 0), (2, 0, 0), (1, 1, 0)):
        c = site_pack(dc, x)
        law = joint_pmf_oracle(c, K=K, J=J, x=tuple(x))
        worst_mass = max(worst_mass, abs(law.total_mass() - 1.0))
        for k in range(K + 1):
            if law.row_sum(k) != c.gamma * (1.0 - c.gamma) ** k:
                rows_exact = False
        jj = np.arange(J + 1, dtype=np.float64)
        for v in vs:
            w = np.exp(v * jj)
            for k in range(K + 1):
                lhs = math.fsum((law.pmf[k] * w).tolist())
                worst_mgf = max(worst_mgf, abs(lhs - restricted_mgf(v, k, c)))
    elapsed = time.monotonic() - t0
    ok = worst_mgf <= 1e-10 and worst_mass <= 1e-12 and rows_exact
    _report(capsys, 3, "joint-law equivalence (d=3, k<=15)", ok,
            f"max |pmf-mgf| {worst_mgf:.2e} (tol 1e-10), "
            f"mass dev {worst_mass:.2e} (tol 1e-12), "
            f"row marginals exact: {rows_exact}",
            elapsed, 10)


# ---------------------------------------------------------------------------
# 4. moment-estimate bounds on the admissible window


def test_criterion_04_moment_bounds(bundle3, capsys):
    t0 = time.monotonic()
    _, _, dc, sites = bundle3
    lo, hi = estimate_window(dc.gamma)
    grid = np.linspace(lo, hi, 52)[1:-1]  # 50 interior points
    assert grid.shape[0] == 50
    worst_phi = -math.inf  # |log phi - m v| - bound, must stay <= 0
    worst_psi = -math.inf  # psi - envelope, must stay <= 0
    n_sites = 0
    for x in sites:
        if all(c == 0 for c in x):
            continue
        n_sites += 1
        c = site_pack(dc, x)
        for v in grid:
            dev = abs(math.log(phi(v, c)) - c.m_x * v)
            worst_phi = max(worst_phi, dev - log_phi_dev_bound(v, c))
            worst_psi = max(worst_psi, psi(v, c) - psi_envelope(v, dc.gamma))
    elapsed = time.monotonic() - t0
    ok = worst_phi <= 1e-15 and worst_psi <= 1e-12
    _report(capsys, 4, "moment-estimate bounds (50 grid points)", ok,
            f"{n_sites} sites; max phi excess {worst_phi:.2e}, "
            f"max psi excess {worst_psi:.2e}",
            elapsed, 10)


# ---------------------------------------------------------------------------
# 5. geometric law of the origin local time


def test_criterion_05_geometric_law(bundle3, capsys):
    t0 = time.monotonic()
    dist, _, dc, _ = bundle3
    replicas, horizon = 10_000, 100_000
    counts, _ = sample_return_counts(dist, replicas, horizon, seed=SEED_GEOM)
    gam = dc.gamma
    worst_z = 0.0
    for k in range(9):
        p = gam * (1.0 - gam) ** k
        emp = float(np.mean(counts == k))
        z = abs(emp - p) / math.sqrt(p * (1.0 - p) / replicas)
        worst_z = max(worst_z, z)
    elapsed = time.monotonic() - t0
    ok = worst_z <= 4.0
    _report(capsys, 5, "geometric origin law (1e4 replicas, H=1e5)", ok,
            f"max |z| over k<=8: {worst_z:.2f} (band 4 sigma)",
            elapsed, 300)


# ---------------------------------------------------------------------------
# 6. per-excursion visit mean and zero-visit probability


def test_criterion_06_excursion_mean(bundle3, capsys):
    t0 = time.monotonic()
    dist, _, dc, _ = bundle3
    site = dc.site((1, 0, 0))
    m_ref = site.m_x                          # E[Z | completed]
    p0_ref = site.q_x / (1.0 - dc.gamma)      # P(Z = 0 | completed)
    assert abs(site.m_x - 0.3405) <= 1e-4     # quoted target
    samp = sample_excursions(dist, (1, 0, 0), replicas=210_000,
                             horizon=60_000, seed=SEED_EXC)
    r = samp.summary()
    z_mean = (r["mean_z"] - m_ref) / r["se_mean"]
    z_p0 = (r["p_zero"] - p0_ref) / r["se_pzero"]
    elapsed = time.monotonic() - t0
    ok = (r["n_excursions"] >= 100_000
          and abs(z_mean) <= 3.0 and abs(z_p0) <= 3.0)
    _report(capsys, 6, "excursion visit law (>=1e5 excursions)", ok,
            f"n={r['n_excursions']}, mean z {z_mean:+.2f}, "
            f"P(Z=0) z {z_p0:+.2f} (bands 3 sigma)",
            elapsed, 300)


# ---------------------------------------------------------------------------
# 7. heavy-site neighbor profile across scales


def test_criterion_07_heavy_profile(bundle3, capsys):
    t0 = time.monotonic()
    dist, _, dc, _ = bundle3
    stats = {100_000: [], 10_000_000: []}
    for i in range(20):
        for n in stats:
            _, fn, _ = simulate(dist, n, BASE_PROFILE + i, horizon_factor=1)
            _, zs = max_local_time(fn)
            stats[n].append(neighbor_ratio(fn, zs[0], dc))
    small = np.asarray(stats[100_000])
    big = np.asarray(stats[10_000_000])
    inband = int(np.sum((big >= 0.6) & (big <= 1.4)))
    sd_small = float(small.std(ddof=1))
    sd_big = float(big.std(ddof=1))
    elapsed = time.monotonic() - t0
    ok = inband >= 18 and sd_big <= sd_small
    _report(capsys, 7, "heavy-site profile across scales (20 seeds)", ok,
            f"in [0.6,1.4] at n=1e7: {inband}/20 (need 18), "
            f"cross-seed sd 1e5->1e7: {sd_small:.4f}->{sd_big:.4f}",
            elapsed, 1800)


# ---------------------------------------------------------------------------
# criteria 8 and 9 share one 20-replica batch at n=1e6, H=1e7


@pytest.fixture(scope="module")
def mega_batch(bundle3):
    t0 = time.monotonic()
    dist, _, dc, _ = bundle3
    cfg = HeavyConfig(n=1_000_000, dim=3, lam=dc.lam)
    r_min = math.sqrt(min_nonzero_radius_sq(dist.cov))
    per_seed = []
    audits = []
    for i in range(20):
        run, _, _ = simulate(dist, 1_000_000, BASE_MEGA + i,
                             horizon_factor=10, retain_path=True)
        rep = heavy_report(run, cfg, dc)
        scan = thm13_scan(run, c=1.0, eps=0.1, constants=dc)
        if scan.n_hits and len(audits) < 10:
            audits.append(_audit_hit(run, scan, dc, pick=len(audits)))
        per_seed.append({
            "r_median": rep.r_median,
            "b_count": rep.b_count,
            "hits": scan.n_hits,
        })
        del run, rep, scan
    return {"per_seed": per_seed, "audits": audits, "r_min": r_min,
            "build_s": time.monotonic() - t0}


def _audit_hit(run, scan, dc, pick):
    """Recount both defining conditions for one scan hit from the raw
    path and H-field, independently of the scan's vector math."""
    i = pick % scan.n_hits
    j = int(scan.indices[i])
    site = run.path[j].astype(np.int64)
    d = run.dim
    a = (d - 4) / (d - 2) - scan.eps
    thr = dc.lam * (math.log(j) + a * math.log(math.log(j)))
    mag = math.floor(scan.c * math.log(j) ** (1.0 / (2 * d - 4)))
    xi_site = run.field_H.get(site)
    companion = site.copy()
    companion[0] += mag
    xi_comp = run.field_H.get(companion)
    # recount the pre-n local time straight off the path
    path_count = int(np.sum(np.all(run.path[1:] == site, axis=1)))
    return {
        "j": j,
        "site_on_path": bool(np.array_equal(scan.sites[i], site)),
        "count_matches": int(scan.counts[i]) == xi_site,
        "heavy_holds": xi_site >= thr,
        "thr_gap": abs(float(scan.thresholds[i]) - thr),
        "offset_matches": int(scan.offsets[i]) == mag,
        "companion_unvisited": xi_comp == 0,
        "path_count_consistent": path_count <= xi_site,
    }


def test_criterion_08_coverage(mega_batch, bundle3, capsys):
    t0 = time.monotonic()
    r_min = mega_batch["r_min"]
    meds = [s["r_median"] for s in mega_batch["per_seed"]]
    good = sum(1 for m in meds if m >= r_min - 1e-9)
    # the shared 20-replica batch is built on first use; bill it here
    elapsed = time.monotonic() - t0 + mega_batch["build_s"]
    ok = good >= 16
    _report(capsys, 8, "heavy-center coverage (n=1e6, H=1e7)", ok,
            f"median coverage radius >= first shell in {good}/20 seeds "
            f"(need 16, batch time included)", elapsed, 1200)


def test_criterion_09_rare_event_scan(mega_batch, capsys):
    t0 = time.monotonic()
    audits = mega_batch["audits"]
    hits = [s["hits"] for s in mega_batch["per_seed"]]
    nonempty = sum(1 for h in hits if h > 0)
    clean = all(
        a["site_on_path"] and a["count_matches"] and a["heavy_holds"]
        and a["thr_gap"] <= 1e-9
        and a["offset_matches"] and a["companion_unvisited"]
        and a["path_count_consistent"]
        for a in audits
    )
    elapsed = time.monotonic() - t0
    ok = clean and len(audits) == 10 and nonempty >= 10
    _report(capsys, 9, "rare-event scan audit (c=1, eps=0.1, n=1e6)", ok,
            f"{len(audits)} hits recounted clean: {clean}; "
            f"nonempty in {nonempty}/20 seeds (need 10); "
            f"hit counts {min(hits)}..{max(hits)}",
            elapsed, 1200)


# ---------------------------------------------------------------------------
# 10. engineering budget and scheduling-independent archives


def test_criterion_10_engineering(bundle3, tmp_path, capsys):
    dist, _, _, _ = bundle3
    t0 = time.monotonic()
    _, field, _ = simulate(dist, 10 ** 8, SEED_ENGINEERING, horizon_factor=1)
    sim_s = time.monotonic() - t0
    n_sites = field.n_sites
    del field

    def run_cli(workers, outdir):
        env = dict(os.environ, HEAVYPOINTS_WORKERS=str(workers))
        cmd = [sys.executable, "-m", "heavypoints", "simulate",
               "--dim", "3", "--steps", "200000", "--seeds", "4",
               "--seed", "9", "--out", str(outdir)]
        subprocess.run(cmd, check=True, env=env, capture_output=True)
        return {p.name: p.read_bytes() for p in sorted(outdir.iterdir())}

    a = run_cli(1, tmp_path / "w1")
    b = run_cli(2, tmp_path / "w2")
    identical = a == b
    elapsed = time.monotonic() - t0
    ok = sim_s < 120.0 and identical and len(a) >= 3
    _report(capsys, 10, "engineering budget", ok,
            f"1e8 steps tracked in {sim_s:.1f}s (limit 120), "
            f"{n_sites} distinct sites; archives byte-identical across "
            f"worker counts: {identical}",
            elapsed, 600)
