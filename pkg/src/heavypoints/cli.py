"""Command-line front door.

Subcommands: constants, green, simulate, heavy-scan, coverage,
jointlaw, thm13, estimate, verify, bench.  Monte Carlo commands write a
RunArchive directory (config snapshot, per-stream JSON reports,
aggregate CSVs, hash manifest); exact-engine commands write a single
CSV/JSON artifact or stdout.

Replica r of a run with base seed s draws from the counter-based
stream (s, r), so reports are independent of scheduling; the worker
count (env HEAVYPOINTS_WORKERS) changes wall time only.  Exit codes:
0 success, 1 invariant/runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__, _jsonfmt
from .archive import (
    ArchiveWriter,
    RunArchive,
    csv_bytes,
    json_bytes,
    replay_aggregates,
)
from .config import ExperimentConfig, load_config
from .errors import (
    AsymmetricLaw,
    AsymptoticMismatch,
    BadProbabilities,
    BoxTooSmall,
    ConfigError,
    DimensionTooSmall,
    MemoryCap,
    MissingConstants,
    MissingGreenValue,
    NoConvergence,
    NotAperiodic,
    OriginNotAllowed,
    OutOfDomain,
    PackingRange,
    RadiusTooLarge,
    SpectrumDegenerate,
)
from .green import (
    asymptotic_coefficient,
    build_green_table,
    derive_constants,
)
from .heavylab import (
    HeavyConfig,
    coverage_radius,
    heavy_index_sites,
    heavy_report,
    min_nonzero_radius_sq,
    thm13_scan,
)
from .jointlaw import joint_pmf_oracle, site_pack
from .lattice import (
    StepDistribution,
    build_distribution,
    enumerate_ball,
    euclid_ball,
    parse_model_file,
)
from .walk import estimate_hitting, eta, max_local_time, simulate, top_sites

WORKERS_ENV = "HEAVYPOINTS_WORKERS"

_USAGE_ERRORS = (
    ConfigError,
    BadProbabilities,
    DimensionTooSmall,
    AsymmetricLaw,
    NotAperiodic,
    OriginNotAllowed,
    OutOfDomain,
    RadiusTooLarge,
    SpectrumDegenerate,
    MissingGreenValue,
    MissingConstants,
    FileNotFoundError,
)
_RUNTIME_ERRORS = (
    NoConvergence,
    BoxTooSmall,
    AsymptoticMismatch,
    MemoryCap,
    PackingRange,
)

_MODEL_TOKENS = ("simple", "simple-symmetric", "srw")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1").strip()
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc


def _pmap(fn: Callable, items: Sequence) -> List:
    """Order-preserving map; the pool is a speed knob only since every
    payload carries its own (seed, stream) RNG identity."""
    items = list(items)
    w = worker_count()
    if w <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(min(w, len(items))) as pool:
        return pool.map(fn, items, chunksize=1)


def _int_arg(s: str) -> int:
    """Integer flag accepting scientific notation (1e6)."""
    try:
        return int(s)
    except ValueError:
        pass
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer")
    iv = int(round(v))
    if not math.isfinite(v) or abs(v - iv) > 1e-9 * max(1.0, abs(v)):
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer")
    return iv


def _parse_site(text: str, dim: int) -> Tuple[int, ...]:
    toks = text.replace(",", " ").split()
    try:
        x = tuple(int(t) for t in toks)
    except ValueError as exc:
        raise ConfigError(f"bad site {text!r}: {exc}") from exc
    if len(x) != dim:
        raise ConfigError(f"site {text!r} has {len(x)} coordinates, expected {dim}")
    return x


_CFG_FIELDS = (
    "model", "dim", "steps", "horizon_factor", "seeds", "seed",
    "green_tol", "delta", "radius", "eps", "site", "kmax", "jmax", "c",
)


def _effective_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (if any) overridden by explicit flags."""
    base = getattr(args, "config", None)
    cfg = load_config(base) if base else ExperimentConfig()
    updates = {}
    for name in _CFG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            updates[name] = v
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def _dist_for(cfg: ExperimentConfig) -> StepDistribution:
    if cfg.model in _MODEL_TOKENS:
        return build_distribution(cfg.dim, "simple")
    dist = parse_model_file(cfg.model)
    if dist.dim != cfg.dim:
        raise ConfigError(
            f"model file {cfg.model} has dim={dist.dim} but config says "
            f"dim={cfg.dim}; pass --dim {dist.dim}"
        )
    return dist


def _resolve_out(args: argparse.Namespace, cfg: ExperimentConfig) -> str:
    out = getattr(args, "out", None) or cfg.outdir
    if not out:
        raise ConfigError("output directory required (--out)")
    return out


def _snapshot_text(cfg: ExperimentConfig) -> str:
    # archives are relocatable: the output location is not part of the
    # reproducibility payload
    return dataclasses.replace(cfg, outdir="").to_text()


def _write_archive(outdir: str, cfg: ExperimentConfig,
                   reports: List[Tuple[int, dict]],
                   aggregates: Dict[str, bytes]) -> Path:
    writer = ArchiveWriter(outdir, _snapshot_text(cfg))
    try:
        for stream, rep in reports:
            writer.add_seed_report(stream, rep)
        for name, data in sorted(aggregates.items()):
            writer.add_aggregate(name, data)
    except Exception:
        writer.finalize(complete=False)
        raise
    return writer.finalize(complete=True)


def _emit(args: argparse.Namespace, payload: bytes) -> None:
    out = getattr(args, "out", None)
    if out and out != "-":
        Path(out).write_bytes(payload)
        print(f"wrote {out}")
    else:
        sys.stdout.write(payload.decode("utf-8"))


# ---------------------------------------------------------------------------
# per-stream report builders (module level: picklable for the pool)
# ---------------------------------------------------------------------------

def simulate_report(run, top_k: int = 10) -> dict:
    field_n, field_H = run.field_n, run.field_H
    origin = (0,) * run.dim
    best, argmax = max_local_time(field_n)
    coords, counts = top_sites(field_n, top_k)
    return {
        "command": "simulate",
        "dim": run.dim,
        "dist_id": run.dist_id,
        "seed": run.stream,
        "base_seed": run.seed,
        "n": run.n,
        "horizon": run.horizon,
        "xi_origin": int(field_n.get(origin)),
        "xi_origin_horizon": int(field_H.get(origin)),
        "max_xi": int(best),
        "argmax": [[int(c) for c in row] for row in argmax],
        "eta": (int(eta(run)) if run.horizon > run.n else None),
        "top_sites": [
            {"x": [int(c) for c in xrow], "count": int(cnt)}
            for xrow, cnt in zip(coords, counts)
        ],
        "end": [int(c) for c in run.end],
    }


def _simulate_replica(payload) -> dict:
    dist, n, factor, base_seed, stream, top_k, backend = payload
    run, _, _ = simulate(dist, n, base_seed, factor, stream=stream,
                         backend_force=backend)
    return simulate_report(run, top_k=top_k)


def _heavy_replica(payload) -> dict:
    dist, n, factor, base_seed, stream, delta, radius, eps, constants, ball = payload
    run, _, _ = simulate(dist, n, base_seed, factor, stream=stream)
    hcfg = HeavyConfig(n=run.n, dim=run.dim, lam=constants.lam,
                       delta=delta, r=radius, eps=eps)
    rep = heavy_report(run, hcfg, constants, ball=ball)
    flags = hcfg.hypothesis_flags()
    return {
        "command": "heavy-scan",
        "seed": stream,
        "base_seed": base_seed,
        "n": run.n,
        "horizon": run.horizon,
        "delta": delta,
        "radius": radius,
        "eps": eps,
        "k_n": int(rep.k_n),
        "beta_n": float(rep.beta_n),
        "beta_small": bool(flags["beta_n_small"]),
        "n_heavy": int(rep.a_sites.shape[0]),
        "a_sites": [[int(c) for c in row] for row in rep.a_sites],
        "b_count": int(rep.b_count),
        "n_b_sites": int(rep.b_sites.shape[0]),
        "sup_dev": float(rep.sup_dev),
        "mean_dev": float(rep.mean_dev),
        "radii": [float(r) for r in rep.radii],
        "r_median": float(rep.r_median),
    }


def _coverage_replica(payload) -> dict:
    dist, n, factor, base_seed, stream, delta, lam = payload
    run, _, _ = simulate(dist, n, base_seed, factor, stream=stream)
    hcfg = HeavyConfig(n=run.n, dim=run.dim, lam=lam, delta=delta)
    centers = heavy_index_sites(run, hcfg)
    min_sq = min_nonzero_radius_sq(dist.cov)
    results = [coverage_radius(run.field_H, row, dist.cov) for row in centers]
    covered = [res.radius_sq >= min_sq - 1e-9 for res in results]
    return {
        "command": "coverage",
        "seed": stream,
        "base_seed": base_seed,
        "n": run.n,
        "horizon": run.horizon,
        "delta": delta,
        "k_n": int(hcfg.k_n),
        "min_nonzero_sq": float(min_sq),
        "centers": [[int(c) for c in row] for row in centers],
        "radii": [float(r.radius) for r in results],
        "radii_sq": [float(r.radius_sq) for r in results],
        "origin_only": [bool(r.origin_only) for r in results],
        "n_centers": len(results),
        "n_covered": int(sum(covered)),
        "all_covered": bool(all(covered)),
    }


def _thm13_replica(payload) -> dict:
    dist, n, factor, base_seed, stream, cpar, eps, constants = payload
    run, _, _ = simulate(dist, n, base_seed, factor, stream=stream,
                         retain_path=True)
    res = thm13_scan(run, cpar, eps, constants)
    return {
        "command": "thm13",
        "seed": stream,
        "base_seed": base_seed,
        "n": run.n,
        "horizon": run.horizon,
        "c": float(cpar),
        "eps": float(eps),
        "n_hits": int(res.n_hits),
        "indices": [int(j) for j in res.indices],
        "sites": [[int(c) for c in row] for row in res.sites],
        "counts": [int(v) for v in res.counts],
        "thresholds": [float(t) for t in res.thresholds],
        "offsets": [int(o) for o in res.offsets],
    }


# ---------------------------------------------------------------------------
# aggregate builders: pure functions of the per-stream reports, so
# `verify` can replay any archive byte-for-byte
# ---------------------------------------------------------------------------

SUMMARY_HEADER = ["seed", "n", "horizon", "xi_origin", "max_xi",
                  "n_argmax", "argmax", "eta"]
HEAVY_HEADER = ["seed", "k_n", "|A_n|", "|B_n|", "sup_dev", "mean_dev",
                "R_median"]
COVERAGE_HEADER = ["seed", "center", "R", "R_sq", "origin_only"]
THM13_HEADER = ["seed", "hits", "j_min", "j_max"]
JOINTLAW_HEADER = ["k", "j", "probability"]


def _coords_cell(row: Sequence[int]) -> str:
    return " ".join(str(int(c)) for c in row)


def simulate_aggregate(reports: List[Tuple[int, dict]]) -> Dict[str, bytes]:
    rows = []
    for _, rep in reports:
        am = rep["argmax"]
        rows.append((
            rep["seed"], rep["n"], rep["horizon"], rep["xi_origin"],
            rep["max_xi"], len(am),
            _coords_cell(am[0]) if am else "", rep["eta"],
        ))
    return {"summary.csv": csv_bytes(SUMMARY_HEADER, rows)}


def heavy_scan_aggregate(reports: List[Tuple[int, dict]]) -> Dict[str, bytes]:
    rows = [
        (rep["seed"], rep["k_n"], rep["n_heavy"], rep["b_count"],
         rep["sup_dev"], rep["mean_dev"], rep["r_median"])
        for _, rep in reports
    ]
    return {"heavy.csv": csv_bytes(HEAVY_HEADER, rows)}


def coverage_aggregate(reports: List[Tuple[int, dict]]) -> Dict[str, bytes]:
    rows = []
    for _, rep in reports:
        for center, r, rsq, oo in zip(rep["centers"], rep["radii"],
                                      rep["radii_sq"], rep["origin_only"]):
            rows.append((rep["seed"], _coords_cell(center), r, rsq, oo))
    return {"coverage.csv": csv_bytes(COVERAGE_HEADER, rows)}


def thm13_aggregate(reports: List[Tuple[int, dict]]) -> Dict[str, bytes]:
    rows = []
    for _, rep in reports:
        idx = rep["indices"]
        rows.append((rep["seed"], rep["n_hits"],
                     idx[0] if idx else -1, idx[-1] if idx else -1))
    return {"thm13.csv": csv_bytes(THM13_HEADER, rows)}


def jointlaw_aggregate(reports: List[Tuple[int, dict]]) -> Dict[str, bytes]:
    rows = []
    for _, rep in reports:
        rows.extend((int(k), int(j), p) for k, j, p in rep["rows"])
    return {"pmf.csv": csv_bytes(JOINTLAW_HEADER, rows)}


AGGREGATORS: Dict[str, Callable] = {
    "summary.csv": simulate_aggregate,
    "heavy.csv": heavy_scan_aggregate,
    "coverage.csv": coverage_aggregate,
    "thm13.csv": thm13_aggregate,
    "pmf.csv": jointlaw_aggregate,
}


def replay_archive(path) -> Dict[str, bool]:
    """Hash-check every file, then rebuild each known aggregate from the
    per-stream reports and byte-compare."""
    arc = RunArchive(path)
    checks: Dict[str, bool] = {"hashes": arc.check_hashes() == [],
                               "complete": arc.complete}
    for name, builder in sorted(AGGREGATORS.items()):
        if name in arc.manifest["files"]:
            checks[name] = replay_aggregates(arc, builder)[name]
    return checks


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_constants(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    pts = euclid_ball(args.range, dist.dim)
    gt = build_green_table(dist, pts, tol=cfg.green_tol)
    dc = derive_constants(gt, pts, cov=dist.cov)
    c_d = asymptotic_coefficient(dist.dim) / math.sqrt(dist.cov.detQ)

    fmt = args.format
    if fmt == "auto":
        out = getattr(args, "out", None) or ""
        fmt = "json" if out.endswith(".json") else "csv"

    if fmt == "json":
        payload = json_bytes({
            "model": dist.kind, "dim": dist.dim, "radius": float(args.range),
            "green_tol": cfg.green_tol, "G0": dc.G0, "gamma": dc.gamma,
            "lambda": dc.lam, "c_d": c_d,
            "sites": [
                {"x": list(x), "G": s.G, "gamma_x": s.gamma_x,
                 "q_x": s.q_x, "s_x": s.s_x, "m_x": s.m_x}
                for x, s in sorted(dc.sites.items())
            ],
        })
    else:
        head = [
            f"# model={dist.kind} dim={dist.dim} radius={args.range:g} "
            f"green_tol={cfg.green_tol:g}",
            f"# G0={dc.G0:.6g} gamma={dc.gamma:.6g} lambda={dc.lam:.6g} "
            f"c_d={c_d:.6g}",
        ]
        cols = [f"x{i + 1}" for i in range(dist.dim)] + \
            ["G", "gamma_x", "q_x", "s_x", "m_x"]
        rows = [tuple(x) + (s.G, s.gamma_x, s.q_x, s.s_x, s.m_x)
                for x, s in sorted(dc.sites.items())]
        payload = ("\n".join(head) + "\n").encode() + csv_bytes(cols, rows)
    _emit(args, payload)
    return 0


def cmd_green(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    pts = euclid_ball(args.range, dist.dim)
    gt = build_green_table(dist, pts, tol=cfg.green_tol,
                           use_cache=not args.no_cache)
    entries = [
        {"x": list(k), "value": e.value, "abs_error": e.abs_error,
         "method": e.method}
        for k, e in sorted(gt.entries.items())
    ]
    payload = json_bytes({
        "model": dist.kind, "dim": dist.dim, "dist_id": dist.content_hash,
        "tol": cfg.green_tol, "radius": float(args.range),
        "symmetric_reduce": gt.symmetric_reduce,
        "n_entries": len(entries), "entries": entries,
    })
    _emit(args, payload)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    outdir = _resolve_out(args, cfg)
    payloads = [
        (dist, cfg.steps, cfg.horizon_factor, cfg.seed, r, args.top,
         args.backend)
        for r in range(cfg.seeds)
    ]
    reports = list(zip(range(cfg.seeds), _pmap(_simulate_replica, payloads)))
    path = _write_archive(outdir, cfg, reports, simulate_aggregate(reports))
    print(f"archive: {path} ({cfg.seeds} streams, n={cfg.steps}, "
          f"H={max(cfg.steps, round(cfg.steps * cfg.horizon_factor))})")
    return 0


def cmd_heavy_scan(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    outdir = _resolve_out(args, cfg)
    ball = enumerate_ball(cfg.radius, dist.cov)
    gt = build_green_table(dist, ball.points, tol=cfg.green_tol)
    constants = derive_constants(gt, ball.points, cov=dist.cov)
    payloads = [
        (dist, cfg.steps, cfg.horizon_factor, cfg.seed, r,
         cfg.delta, cfg.radius, cfg.eps, constants, ball)
        for r in range(cfg.seeds)
    ]
    reports = list(zip(range(cfg.seeds), _pmap(_heavy_replica, payloads)))
    path = _write_archive(outdir, cfg, reports, heavy_scan_aggregate(reports))
    print(f"archive: {path} ({cfg.seeds} streams)")
    return 0


def cmd_coverage(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    outdir = _resolve_out(args, cfg)
    origin = (0,) * dist.dim
    gt = build_green_table(dist, [origin], tol=cfg.green_tol)
    dc = derive_constants(gt, [origin])
    payloads = [
        (dist, cfg.steps, cfg.horizon_factor, cfg.seed, r, cfg.delta, dc.lam)
        for r in range(cfg.seeds)
    ]
    reports = list(zip(range(cfg.seeds), _pmap(_coverage_replica, payloads)))
    path = _write_archive(outdir, cfg, reports, coverage_aggregate(reports))
    n_all = sum(rep["all_covered"] for _, rep in reports)
    print(f"archive: {path} ({cfg.seeds} streams, "
          f"{n_all} with every center's first shell covered)")
    return 0


def cmd_jointlaw(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    outdir = _resolve_out(args, cfg)
    x = _parse_site(cfg.site, dist.dim)
    origin = (0,) * dist.dim
    gt = build_green_table(dist, [origin, x], tol=cfg.green_tol)
    dc = derive_constants(gt, [x], cov=dist.cov)
    site = site_pack(dc, x)
    law = joint_pmf_oracle(site, K=cfg.kmax, J=cfg.jmax, x=x)
    rep = {
        "command": "jointlaw",
        "seed": 0,
        "x": list(x),
        "kmax": cfg.kmax,
        "jmax": cfg.jmax,
        "gamma": dc.gamma,
        "gamma_x": site.gamma_x,
        "q_x": site.q_x,
        "s_x": site.s_x,
        "m_x": site.m_x,
        "high_k_mass": law.high_k_mass,
        "row_tails": [float(t) for t in law.row_tail],
        "total_mass": law.total_mass(),
        "rows": [[k, j, float(law.pmf[k, j])]
                 for k in range(cfg.kmax + 1) for j in range(cfg.jmax + 1)],
    }
    reports = [(0, rep)]
    path = _write_archive(outdir, cfg, reports, jointlaw_aggregate(reports))
    print(f"archive: {path} (x={cfg.site}, k<={cfg.kmax}, j<={cfg.jmax}, "
          f"mass={rep['total_mass']:.12f})")
    return 0


def cmd_thm13(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    outdir = _resolve_out(args, cfg)
    origin = (0,) * dist.dim
    gt = build_green_table(dist, [origin], tol=cfg.green_tol)
    dc = derive_constants(gt, [origin], cov=dist.cov)
    payloads = [
        (dist, cfg.steps, cfg.horizon_factor, cfg.seed, r, cfg.c, cfg.eps, dc)
        for r in range(cfg.seeds)
    ]
    reports = list(zip(range(cfg.seeds), _pmap(_thm13_replica, payloads)))
    path = _write_archive(outdir, cfg, reports, thm13_aggregate(reports))
    nonempty = sum(rep["n_hits"] > 0 for _, rep in reports)
    print(f"archive: {path} ({cfg.seeds} streams, {nonempty} with hits)")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _effective_config(args)
    dist = _dist_for(cfg)
    x = _parse_site(cfg.site, dist.dim)
    origin = (0,) * dist.dim
    gt = build_green_table(dist, [origin, x], tol=cfg.green_tol)
    dc = derive_constants(gt, [x])
    sc = dc.site(x)
    est = estimate_hitting(dist, x, replicas=cfg.seeds, n=cfg.steps,
                           seed=cfg.seed)
    exact = {"q": sc.q_x, "s": sc.s_x, "never": 1.0 - sc.q_x - sc.s_x}
    z = {}
    for key in ("q", "s", "never"):
        se = est[f"se_{key}"]
        z[key] = (est[key] - exact[key]) / se if se > 0 else math.nan
    payload = json_bytes({
        "command": "estimate", "x": list(x), "model": dist.kind,
        "dim": dist.dim, "replicas": cfg.seeds, "horizon": cfg.steps,
        "base_seed": cfg.seed,
        "empirical": {k: est[k] for k in
                      ("q", "s", "never", "se_q", "se_s", "se_never")},
        "exact": exact,
        "z_scores": z,
    })
    _emit(args, payload)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    if args.archive:
        checks = replay_archive(args.archive)
        for name, ok in sorted(checks.items()):
            print(f"{'PASS' if ok else 'FAIL'} archive:{name}")
        bad = [n for n, ok in checks.items() if not ok]
        print(f"{len(checks) - len(bad)}/{len(checks)} archive checks passed")
        return 1 if bad else 0

    from . import verifysuite

    results = verifysuite.run_suite(args.level)
    for r in results:
        print(r.render())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed "
          f"at level {args.level}")
    if args.out:
        report = [
            {"name": r.name, "passed": r.passed, "measured": r.measured,
             "bound": r.bound, "detail": r.detail}
            for r in results
        ]
        Path(args.out).write_bytes(json_bytes(
            {"level": args.level, "n_failed": n_fail, "checks": report}))
    return 1 if n_fail else 0


def cmd_bench(args: argparse.Namespace) -> int:
    from . import bench

    res = bench.compare_backends(steps=args.steps, dim=args.dim,
                                 seed=args.seed)
    print(bench.render(res))
    return 0 if res["fields_match"] else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="base config file (flags override)")
    p.add_argument("--model", help="'simple' or a model spec file")
    p.add_argument("--dim", type=int, help="lattice dimension (>= 3)")
    p.add_argument("--green-tol", dest="green_tol", type=float,
                   help="absolute tolerance for Green values")


def _add_mc_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=_int_arg, help="path length n")
    p.add_argument("--horizon-factor", dest="horizon_factor", type=float,
                   help="H = round(n * factor), >= 1")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--replicas", "--seeds", dest="seeds", type=_int_arg,
                   help="number of replica streams")
    p.add_argument("--out", help="archive directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="heavypoints",
        description="Transient lattice walks: exact Green/local-time "
                    "engines and Monte Carlo heavy-point experiments.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", metavar="command")

    p = sub.add_parser("constants", help="per-site constants table")
    _add_model_flags(p)
    p.add_argument("--range", type=float, default=1.0,
                   help="Euclidean site radius (default 1)")
    p.add_argument("--format", choices=("auto", "csv", "json"),
                   default="auto")
    p.add_argument("--out", help="output file ('-' or absent: stdout)")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("green", help="build/extend the Green table")
    _add_model_flags(p)
    p.add_argument("--range", type=float, default=3.0,
                   help="Euclidean site radius (default 3)")
    p.add_argument("--no-cache", action="store_true",
                   help="bypass the on-disk cache")
    p.add_argument("--out", help="output JSON ('-' or absent: stdout)")
    p.set_defaults(func=cmd_green)

    p = sub.add_parser("simulate", help="replica walks with local-time "
                                        "reports")
    _add_model_flags(p)
    _add_mc_flags(p)
    p.add_argument("--top", type=int, default=10,
                   help="top-k sites in each report")
    p.add_argument("--backend", choices=("compiled", "python"),
                   help="force a kernel backend")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("heavy-scan", help="heavy-site sets and profile "
                                          "deviations per stream")
    _add_model_flags(p)
    _add_mc_flags(p)
    p.add_argument("--delta", type=float, help="threshold slack in k_n")
    p.add_argument("--radius", type=float, help="profile ball radius r")
    p.add_argument("--eps", type=float, help="smallness margin")
    p.set_defaults(func=cmd_heavy_scan)

    p = sub.add_parser("coverage", help="coverage radii at heavy-index "
                                        "sites")
    _add_model_flags(p)
    _add_mc_flags(p)
    p.add_argument("--delta", type=float, help="threshold slack in k_n")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("jointlaw", help="exact joint law of visits to 0 "
                                        "and x")
    _add_model_flags(p)
    p.add_argument("--x", dest="site", help="site, e.g. '1,0,0'")
    p.add_argument("--kmax", type=_int_arg, help="origin-visit truncation")
    p.add_argument("--jmax", type=_int_arg, help="x-visit truncation")
    p.add_argument("--out", help="archive directory")
    p.set_defaults(func=cmd_jointlaw)

    p = sub.add_parser("thm13", help="scan for heavy sites with an "
                                     "unvisited companion")
    _add_model_flags(p)
    _add_mc_flags(p)
    p.add_argument("--c", dest="c", type=float, help="offset scale")
    p.add_argument("--eps", type=float, help="threshold exponent margin")
    p.set_defaults(func=cmd_thm13)

    p = sub.add_parser("estimate", help="Monte Carlo first-passage race "
                                        "vs exact constants")
    _add_model_flags(p)
    p.add_argument("--x", dest="site", help="target site, e.g. '1,0,0'")
    p.add_argument("--replicas", "--seeds", dest="seeds", type=_int_arg,
                   help="number of fresh walks")
    p.add_argument("--steps", type=_int_arg, help="race horizon per walk")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--out", help="output JSON ('-' or absent: stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("verify", help="run invariant checks or replay an "
                                      "archive")
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.add_argument("--archive", help="replay this archive instead")
    p.add_argument("--out", help="write a JSON report here too")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="compare kernel backends")
    p.add_argument("--steps", type=_int_arg, default=200000)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
