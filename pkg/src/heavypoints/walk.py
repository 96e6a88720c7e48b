"""Path simulation with sparse local-time tracking.

A run draws steps from a `StepDistribution` via a Vose alias table (one
uniform per step, shared sampling rule across backends) and counts site
visits in an open-addressing hash table keyed by packed coordinates.
`simulate` reports the local-time field both at step n and at an
extended horizon H = horizon_factor * n; the horizon stands in for the
infinite-time quantities, with the bias controlled by transience and
monitored by the truncation guards in the test suite.

Replica estimators (`sample_return_counts`, `sample_excursions`,
`estimate_hitting`) give replica r the counter-based stream (seed, r),
so shards are independent and results do not depend on worker count or
merge order.  A single path is inherently sequential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import _packing, backend
from .errors import MemoryCap, OriginNotAllowed, PackingRange
from .lattice import StepDistribution

# hash-table slots (16 B each); one doubling past this raises MemoryCap
_TABLE_CAP = 1 << 27
# retained-path rows; paths are off by default and never required at 1e8
_PATH_CAP = (1 << 26) + 1
_Z_CAP0 = 4096
# kernels keep coordinates in a fixed int64[16] scratch array
_DIM_CAP = 16


def _next_pow2(x: int) -> int:
    return 1 << max(1, int(x) - 1).bit_length()


def _initial_capacity(horizon: int) -> int:
    # distinct sites <= horizon; start with ~1.1x slots so the common
    # transient-law case (~0.66 * H distinct for the simple d=3 walk)
    # stays under the 0.7 load threshold without a retry
    want = _next_pow2(max(4096, horizon + horizon // 8))
    return min(want, _TABLE_CAP)


def _check_target(x: Sequence[int], dim: int) -> Tuple[int, ...]:
    tgt = tuple(int(c) for c in x)
    if len(tgt) != dim:
        raise ValueError(f"target has {len(tgt)} coordinates, expected {dim}")
    if not any(tgt):
        raise OriginNotAllowed("target site must differ from the origin")
    return tgt


@dataclass(frozen=True)
class LocalTimeField:
    """Sparse visit counts: xi(x, n) = #{1 <= k <= n : S_k = x}.

    S_0 is not counted, so the counts over all sites sum to the number
    of recorded steps.  Keys are packed coordinates sorted ascending;
    the packing biases each axis into a non-negative field with axis 0
    most significant, so key order equals lexicographic site order.
    """

    dim: int
    keys: np.ndarray
    counts: np.ndarray
    total: int

    @property
    def n_sites(self) -> int:
        return int(self.keys.shape[0])

    def get(self, x: Sequence[int]) -> int:
        pt = tuple(int(c) for c in x)
        if len(pt) != self.dim:
            raise ValueError(f"site has {len(pt)} coordinates, expected {self.dim}")
        if not _packing.in_pack_range(np.asarray(pt, dtype=np.int64), self.dim):
            return 0
        key = _packing.pack_point(pt, self.dim)
        pos = int(np.searchsorted(self.keys, key))
        if pos < self.keys.shape[0] and int(self.keys[pos]) == key:
            return int(self.counts[pos])
        return 0

    def sites(self) -> np.ndarray:
        """All visited sites as an (m, dim) array in lexicographic order."""
        return _packing.unpack_keys(self.keys, self.dim)

    def lookup_keys(self, keys: np.ndarray) -> np.ndarray:
        """Counts for packed keys (0 where absent)."""
        k = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self.keys, k)
        pos_c = np.minimum(pos, max(self.keys.shape[0] - 1, 0))
        if self.keys.shape[0] == 0:
            return np.zeros(k.shape[0], dtype=np.int64)
        found = self.keys[pos_c] == k
        out = np.zeros(k.shape[0], dtype=np.int64)
        out[found] = self.counts[pos_c[found]]
        return out


def _make_field(dim: int, keys: np.ndarray, counts: np.ndarray,
                expected_total: int) -> LocalTimeField:
    keys = np.asarray(keys, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    order = np.argsort(keys)
    keys = np.ascontiguousarray(keys[order])
    counts = np.ascontiguousarray(counts[order])
    total = int(counts.sum())
    if total != expected_total:
        raise RuntimeError(
            f"local-time mass mismatch: {total} counted, {expected_total} stepped")
    return LocalTimeField(dim=dim, keys=keys, counts=counts, total=total)


def local_time(field: LocalTimeField, x: Sequence[int]) -> int:
    return field.get(x)


def max_local_time(field: LocalTimeField) -> Tuple[int, np.ndarray]:
    """(max count, complete argmax set in lexicographic order)."""
    if field.keys.shape[0] == 0:
        return 0, np.empty((0, field.dim), dtype=np.int64)
    best = int(field.counts.max())
    mask = field.counts == best
    return best, _packing.unpack_keys(field.keys[mask], field.dim)


def top_sites(field: LocalTimeField, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Heaviest k sites as (coords, counts), count descending then
    lexicographic; deterministic under ties."""
    if k <= 0:
        return np.empty((0, field.dim), dtype=np.int64), np.empty(0, dtype=np.int64)
    order = np.lexsort((field.keys, -field.counts))[:k]
    return _packing.unpack_keys(field.keys[order], field.dim), field.counts[order].copy()


def merge_fields(fields: Sequence[LocalTimeField]) -> LocalTimeField:
    """Sum replica shards; totals are conserved exactly (int64)."""
    if not fields:
        raise ValueError("nothing to merge")
    dim = fields[0].dim
    for f in fields[1:]:
        if f.dim != dim:
            raise ValueError("cannot merge fields of different dimension")
    all_keys = np.concatenate([f.keys for f in fields])
    all_counts = np.concatenate([f.counts for f in fields])
    uniq, inv = np.unique(all_keys, return_inverse=True)
    sums = np.zeros(uniq.shape[0], dtype=np.int64)
    np.add.at(sums, inv, all_counts)
    return LocalTimeField(dim=dim, keys=uniq, counts=sums, total=int(sums.sum()))


@dataclass(frozen=True)
class ExcursionRecord:
    """Visits to one target per completed excursion from the origin.

    counts[i] is the number of visits to `target` strictly between the
    (i-1)-th and i-th return to 0 (returns at return_times, absolute
    step indices).  open_count covers the segment after the last return
    up to the horizon; it is kept separate because that excursion is
    censored rather than completed.
    """

    target: Tuple[int, ...]
    horizon: int
    return_times: np.ndarray
    counts: np.ndarray
    open_count: int

    @property
    def n_excursions(self) -> int:
        return int(self.counts.shape[0])


@dataclass(frozen=True)
class WalkRun:
    """One simulated path: provenance plus its local-time fields.

    (dist_id, seed, stream, n, horizon) determine every sample exactly,
    independent of backend.  `path`, when retained, holds S_0..S_n as
    int32 rows; `excursions` is set when the target was declared before
    the run.
    """

    dist_id: str
    dim: int
    seed: int
    stream: int
    n: int
    horizon: int
    end: Tuple[int, ...]
    field_n: LocalTimeField
    field_H: LocalTimeField
    path: Optional[np.ndarray] = None
    excursions: Optional[ExcursionRecord] = None


def simulate(dist: StepDistribution, n: int, seed: int,
             horizon_factor: float = 10, *, stream: int = 0,
             retain_path: bool = False,
             excursion_target: Optional[Sequence[int]] = None,
             backend_force: Optional[str] = None):
    """Run one walk of n steps plus horizon tail.

    Returns (WalkRun, field at n, field at H) with H = round(n * factor).
    Sampling draws one uniform per step from the counter-based stream
    (seed, stream); rerunning with identical arguments is bit-identical
    on either backend.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    factor = float(horizon_factor)
    if not factor >= 1:
        raise ValueError("horizon_factor must be >= 1")
    H = max(n, int(round(n * factor)))
    d = dist.dim
    if d > _DIM_CAP:
        raise ValueError(f"kernels support dim <= {_DIM_CAP}")

    kern = backend.get_kernels(backend_force)
    cut, alt = backend.build_alias(dist.probs_array())
    steps = np.ascontiguousarray(dist.points_array().reshape(-1), dtype=np.int64)
    bits = _packing.key_bits(d)

    target_key = np.int64(-1)
    tgt: Optional[Tuple[int, ...]] = None
    if excursion_target is not None:
        tgt = _check_target(excursion_target, d)
        try:
            target_key = np.int64(_packing.pack_point(tgt, d))
        except ValueError as exc:
            raise PackingRange(str(exc)) from exc

    path_obj = None
    if retain_path:
        if n + 1 > _PATH_CAP:
            raise MemoryCap(
                f"path retention caps at {_PATH_CAP - 1} steps; rerun without it")
        path_obj = np.zeros((n + 1, d), dtype=np.int32)

    snap_n = n if H > n else -1
    capacity = _initial_capacity(H)
    z_cap = _Z_CAP0
    while True:
        bg = backend.make_bitgen(seed, stream)
        try:
            out = kern.run_walk(bg, cut, alt, steps, d, snap_n, H, bits,
                                capacity, target_key, z_cap, path_obj)
        except MemoryError as exc:
            raise MemoryCap(str(exc)) from exc
        status = out["status"]
        if status == backend.STATUS_OK:
            break
        if status == backend.STATUS_TABLE_LOAD:
            if capacity >= _TABLE_CAP:
                raise MemoryCap(
                    f"local-time table would exceed {_TABLE_CAP} slots")
            capacity *= 2
        elif status == backend.STATUS_EXC_OVERFLOW:
            z_cap *= 8
        elif status == backend.STATUS_PACK_RANGE:
            half = _packing.half_range(d)
            raise PackingRange(
                f"walk left the packable box |x_i| < {half} within {H} steps")
        else:
            raise RuntimeError(f"unknown kernel status {status}")

    field_H = _make_field(d, out["keys_H"], out["counts_H"], H)
    field_n = field_H if snap_n < 0 else _make_field(
        d, out["keys_n"], out["counts_n"], n)

    exc_rec = None
    if tgt is not None:
        exc_rec = ExcursionRecord(
            target=tgt, horizon=H,
            return_times=np.asarray(out["ret_times"], dtype=np.int64),
            counts=np.asarray(out["z_counts"], dtype=np.int64),
            open_count=int(out["z_open"]))

    run = WalkRun(dist_id=dist.content_hash, dim=d, seed=int(seed),
                  stream=int(stream), n=n, horizon=H,
                  end=tuple(int(c) for c in out["end"]),
                  field_n=field_n, field_H=field_H,
                  path=path_obj, excursions=exc_rec)
    return run, field_n, field_H


def eta(run: WalkRun, n: Optional[int] = None) -> int:
    """max_{0 <= j <= n} xi(S_j, H), the horizon-truncated eta(n).

    Uses the fact that {S_j : j <= n} is exactly the support of the
    n-field plus the origin, so no path is needed at n = run.n.  For
    n < run.n the path must have been retained.  H > n is required;
    xi(., H) only approximates xi(., infinity), see the horizon caveat
    in `simulate`.
    """
    if n is None:
        n = run.n
    n = int(n)
    if run.horizon <= n:
        raise ValueError("eta needs horizon H > n")
    if n == run.n:
        site_keys = np.concatenate(
            [run.field_n.keys, [_packing.origin_key(run.dim)]])
    elif run.path is not None and 0 <= n <= run.n:
        packed = _packing.pack_coords(
            np.asarray(run.path[:n + 1], dtype=np.int64), run.dim)
        site_keys = np.unique(packed)
    else:
        raise ValueError("eta at n < run.n requires a retained path")
    vals = run.field_H.lookup_keys(site_keys)
    return int(vals.max(initial=0))


def excursion_decompose(run: WalkRun, x: Sequence[int]) -> ExcursionRecord:
    """Per-excursion visit counts to x, plus the censored open segment.

    Served from the run's live record when x was declared at simulate()
    time; otherwise replayed from the retained path, which covers steps
    0..n and therefore requires H == n.
    """
    tgt = _check_target(x, run.dim)
    if run.excursions is not None and run.excursions.target == tgt:
        return run.excursions
    if run.path is None:
        raise ValueError(
            "target was not declared before the run and no path was retained")
    if run.horizon != run.n:
        raise ValueError(
            "retained path stops at n; declare the target at simulate() "
            "time to decompose over H > n")
    coords = np.asarray(run.path[1:], dtype=np.int64)
    zt = np.flatnonzero(~coords.any(axis=1)).astype(np.int64) + 1
    tt = np.flatnonzero(
        (coords == np.asarray(tgt, dtype=np.int64)).all(axis=1)
    ).astype(np.int64) + 1
    cum = np.searchsorted(tt, zt, side="right")
    counts = np.diff(cum, prepend=0).astype(np.int64)
    open_count = int(tt.size - (cum[-1] if zt.size else 0))
    return ExcursionRecord(target=tgt, horizon=run.horizon,
                           return_times=zt, counts=counts,
                           open_count=open_count)


def count_returns(dist: StepDistribution, horizon: int, seed: int,
                  stream: int = 0,
                  backend_force: Optional[str] = None) -> Tuple[int, int]:
    """(number of returns to 0 within horizon, last return step or -1)."""
    horizon = int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    kern = backend.get_kernels(backend_force)
    cut, alt = backend.build_alias(dist.probs_array())
    steps = np.ascontiguousarray(dist.points_array().reshape(-1), dtype=np.int64)
    bg = backend.make_bitgen(seed, stream)
    nret, last = kern.run_returns(bg, cut, alt, steps, dist.dim, horizon)
    return int(nret), int(last)


def sample_return_counts(dist: StepDistribution, replicas: int, horizon: int,
                         seed: int, backend_force: Optional[str] = None
                         ) -> Tuple[np.ndarray, np.ndarray]:
    """xi(0, H) across replicas: (counts, last return steps), replica r
    on stream (seed, r).  The last-return column feeds the truncation
    guard (discard runs returning within the final H/10)."""
    replicas = int(replicas)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    horizon = int(horizon)
    kern = backend.get_kernels(backend_force)
    cut, alt = backend.build_alias(dist.probs_array())
    steps = np.ascontiguousarray(dist.points_array().reshape(-1), dtype=np.int64)
    counts = np.empty(replicas, dtype=np.int64)
    lasts = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        bg = backend.make_bitgen(seed, r)
        nret, last = kern.run_returns(bg, cut, alt, steps, dist.dim, horizon)
        counts[r] = nret
        lasts[r] = last
    return counts, lasts


@dataclass(frozen=True)
class ExcursionSample:
    """Pooled completed-excursion counts over independent replicas.

    counts holds every completed excursion's visit total to `target`,
    concatenated in replica order; open segments (censored by the
    horizon) are excluded from counts and only tallied in open_visits.
    """

    target: Tuple[int, ...]
    replicas: int
    horizon: int
    counts: np.ndarray
    open_visits: int

    def summary(self) -> Dict[str, float]:
        """Empirical mean of Z and P(Z=0 | completed), with standard
        errors estimated from the sample itself."""
        z = self.counts
        m = int(z.shape[0])
        if m == 0:
            return {"n_excursions": 0, "mean_z": math.nan, "se_mean": math.nan,
                    "p_zero": math.nan, "se_pzero": math.nan}
        mean = float(z.mean())
        sd = float(z.std(ddof=1)) if m > 1 else math.nan
        p0 = float(np.count_nonzero(z == 0) / m)
        return {
            "n_excursions": m,
            "mean_z": mean,
            "se_mean": sd / math.sqrt(m) if m > 1 else math.nan,
            "p_zero": p0,
            "se_pzero": math.sqrt(p0 * (1.0 - p0) / m),
        }


def sample_excursions(dist: StepDistribution, x: Sequence[int],
                      replicas: int, horizon: int, seed: int,
                      backend_force: Optional[str] = None) -> ExcursionSample:
    """Harvest completed excursions from `replicas` independent walks,
    replica r on stream (seed, r)."""
    replicas = int(replicas)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    horizon = int(horizon)
    tgt = _check_target(x, dist.dim)
    kern = backend.get_kernels(backend_force)
    cut, alt = backend.build_alias(dist.probs_array())
    steps = np.ascontiguousarray(dist.points_array().reshape(-1), dtype=np.int64)
    tarr = np.asarray(tgt, dtype=np.int64)
    parts = []
    open_visits = 0
    for r in range(replicas):
        z_cap = _Z_CAP0
        while True:
            bg = backend.make_bitgen(seed, r)
            status, z_counts, z_open, _last = kern.run_excursions(
                bg, cut, alt, steps, dist.dim, horizon, tarr, z_cap)
            if status == backend.STATUS_EXC_OVERFLOW:
                z_cap *= 8
                continue
            break
        parts.append(np.asarray(z_counts, dtype=np.int64))
        open_visits += int(z_open)
    pooled = (np.concatenate(parts) if parts
              else np.empty(0, dtype=np.int64))
    return ExcursionSample(target=tgt, replicas=replicas, horizon=horizon,
                           counts=pooled, open_visits=open_visits)


def estimate_hitting(dist: StepDistribution, x: Sequence[int],
                     replicas: int, n: int, seed: int = 0,
                     backend_force: Optional[str] = None) -> Dict[str, float]:
    """Fresh-walk frequencies of the first-passage race from the origin.

    q: return to 0 before hitting x and before n steps; s: hit x first;
    never: neither within n.  The three frequencies partition the
    replica set exactly; standard errors are binomial.  q and s carry
    the O(n^(1-d/2)) horizon bias of the truncated race.
    """
    replicas = int(replicas)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    tgt = _check_target(x, dist.dim)
    kern = backend.get_kernels(backend_force)
    cut, alt = backend.build_alias(dist.probs_array())
    steps = np.ascontiguousarray(dist.points_array().reshape(-1), dtype=np.int64)
    tarr = np.asarray(tgt, dtype=np.int64)
    tallies = [0, 0, 0]
    for r in range(replicas):
        bg = backend.make_bitgen(seed, r)
        outcome, _steps_taken = kern.run_hitting(
            bg, cut, alt, steps, dist.dim, n, tarr)
        tallies[outcome] += 1
    out: Dict[str, float] = {}
    for name, cnt in zip(("q", "s", "never"), tallies):
        p = cnt / replicas
        out[name] = p
        out["se_" + name] = math.sqrt(p * (1.0 - p) / replicas)
    out["replicas"] = replicas
    out["horizon"] = n
    return out
