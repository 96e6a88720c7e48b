"""Backend micro-benchmark: the compiled kernel and the numpy fallback
run the same stream and must produce identical local-time fields; the
interesting number is the step throughput gap."""

from __future__ import annotations

from time import perf_counter
from typing import Dict

import numpy as np

from . import backend
from .lattice import build_distribution
from .walk import simulate


def _one(dist, steps: int, seed: int, force: str) -> Dict:
    t0 = perf_counter()
    run, field_n, _ = simulate(dist, steps, seed, 1.0, backend_force=force)
    dt = perf_counter() - t0
    return {
        "backend": force,
        "seconds": dt,
        "steps_per_s": steps / dt if dt > 0 else float("inf"),
        "keys": field_n.keys,
        "counts": field_n.counts,
        "end": run.end,
    }


def compare_backends(steps: int = 200000, dim: int = 3,
                     seed: int = 0) -> Dict:
    dist = build_distribution(dim, "simple")
    py = _one(dist, steps, seed, "python")
    out = {"steps": steps, "dim": dim, "seed": seed, "python": py,
           "compiled": None, "fields_match": True}
    if backend.compiled_available():
        cc = _one(dist, steps, seed, "compiled")
        out["compiled"] = cc
        out["fields_match"] = (
            np.array_equal(py["keys"], cc["keys"])
            and np.array_equal(py["counts"], cc["counts"])
            and py["end"] == cc["end"]
        )
        out["speedup"] = cc["steps_per_s"] / py["steps_per_s"]
    return out


def render(res: Dict) -> str:
    lines = [f"bench: d={res['dim']} n={res['steps']} seed={res['seed']}"]
    for name in ("python", "compiled"):
        r = res.get(name)
        if r is None:
            lines.append(f"  {name:9s} not built")
            continue
        lines.append(f"  {name:9s} {r['seconds']:8.3f} s  "
                     f"{r['steps_per_s']:12.3e} steps/s")
    if res.get("compiled"):
        ok = "identical" if res["fields_match"] else "MISMATCH"
        lines.append(f"  fields: {ok}, speedup x{res.get('speedup', 0):.1f}")
    return "\n".join(lines)
