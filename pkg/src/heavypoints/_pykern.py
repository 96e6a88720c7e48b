"""Pure-numpy fallback kernels.

Mirrors the compiled module's entry points and, crucially, its random
stream consumption: one uniform per step, alias index from the integer
part of u*K, acceptance coin from the fractional part.  Because every
kernel call owns a fresh stream, the fallback may draw uniforms in
chunks and discard leftovers without breaking reproducibility; results
for a given (seed, stream) are bit-identical to the compiled kernels.
"""

import numpy as np

from ._packing import key_bits, origin_key, pack_coords

STATUS_OK = 0
STATUS_TABLE_LOAD = 1
STATUS_PACK_RANGE = 2
STATUS_EXC_OVERFLOW = 3

_CHUNK = 1 << 20
# fallback accumulates packed step history; cap it to stay in memory
_MAX_STEPS = 1 << 26


def _draw(gen, m, cut, alt):
    K = cut.shape[0]
    u = gen.random(m)
    v = u * K
    j = v.astype(np.int64)
    np.minimum(j, K - 1, out=j)
    f = v - j
    return np.where(f < cut[j], j, alt[j])


def run_walk(bitgen, cut, alt, steps, d, snap_n, H, bits, capacity,
             target_key, z_cap, path_obj):
    if H > _MAX_STEPS:
        raise MemoryError(
            f"python backend caps walks at {_MAX_STEPS} steps; "
            "build the compiled extension for longer runs")
    gen = np.random.Generator(bitgen)
    steps2 = steps.reshape(-1, d)
    half = 1 << (bits - 1)
    okey = origin_key(d)
    want_exc = target_key != -1

    packed_parts = []
    zeros_abs = []
    targets_abs = []
    cur = np.zeros(d, dtype=np.int64)
    done = 0
    keys_n = counts_n = None
    if path_obj is not None:
        path_obj[0, :] = 0

    boundaries = [snap_n, H] if snap_n >= 0 else [H]
    status = STATUS_OK
    for bound in boundaries:
        while done < bound and status == STATUS_OK:
            m = min(_CHUNK, bound - done)
            idx = _draw(gen, m, cut, alt)
            disp = steps2[idx]
            coords = disp.cumsum(axis=0)
            coords += cur
            if np.abs(coords).max(initial=0) >= half:
                status = STATUS_PACK_RANGE
                break
            if path_obj is not None and done < path_obj.shape[0] - 1:
                rows = min(m, path_obj.shape[0] - 1 - done)
                path_obj[done + 1:done + 1 + rows, :] = coords[:rows]
            packed = pack_coords(coords, d)
            packed_parts.append(packed)
            if want_exc:
                z = np.flatnonzero(packed == okey)
                t = np.flatnonzero(packed == target_key)
                if z.size:
                    zeros_abs.append(z + done + 1)
                if t.size:
                    targets_abs.append(t + done + 1)
            cur = coords[-1].copy()
            done += m
        if status != STATUS_OK:
            break
        if snap_n >= 0 and done == snap_n and keys_n is None:
            allp = (np.concatenate(packed_parts) if packed_parts
                    else np.empty(0, dtype=np.int64))
            keys_n, counts_n = np.unique(allp, return_counts=True)
            counts_n = counts_n.astype(np.int64)

    out = {"status": status, "keys_n": keys_n, "counts_n": counts_n,
           "keys_H": None, "counts_H": None, "end": cur, "used": 0}
    if status != STATUS_OK:
        return out

    allp = (np.concatenate(packed_parts) if packed_parts
            else np.empty(0, dtype=np.int64))
    keys_H, counts_H = np.unique(allp, return_counts=True)
    out["keys_H"] = keys_H
    out["counts_H"] = counts_H.astype(np.int64)
    out["used"] = int(keys_H.size)

    if want_exc:
        zt = (np.concatenate(zeros_abs) if zeros_abs
              else np.empty(0, dtype=np.int64))
        tt = (np.concatenate(targets_abs) if targets_abs
              else np.empty(0, dtype=np.int64))
        cum = np.searchsorted(tt, zt, side="right")
        z_counts = np.diff(cum, prepend=0).astype(np.int64)
        out["z_counts"] = z_counts
        out["ret_times"] = zt
        out["z_open"] = int(tt.size - (cum[-1] if zt.size else 0))
        out["last_ret"] = int(zt[-1]) if zt.size else -1
    return out


def run_returns(bitgen, cut, alt, steps, d, H):
    gen = np.random.Generator(bitgen)
    steps2 = steps.reshape(-1, d)
    nret = 0
    last = -1
    cur = np.zeros(d, dtype=np.int64)
    done = 0
    while done < H:
        m = min(_CHUNK, H - done)
        idx = _draw(gen, m, cut, alt)
        coords = steps2[idx].cumsum(axis=0)
        coords += cur
        zero = np.flatnonzero(~coords.any(axis=1))
        nret += int(zero.size)
        if zero.size:
            last = done + 1 + int(zero[-1])
        cur = coords[-1].copy()
        done += m
    return nret, last


def run_excursions(bitgen, cut, alt, steps, d, H, target, z_cap):
    gen = np.random.Generator(bitgen)
    steps2 = steps.reshape(-1, d)
    tgt = np.asarray(target, dtype=np.int64)
    cur = np.zeros(d, dtype=np.int64)
    done = 0
    zeros_abs = []
    targets_abs = []
    while done < H:
        m = min(_CHUNK, H - done)
        idx = _draw(gen, m, cut, alt)
        coords = steps2[idx].cumsum(axis=0)
        coords += cur
        z = np.flatnonzero(~coords.any(axis=1))
        t = np.flatnonzero((coords == tgt).all(axis=1))
        if z.size:
            zeros_abs.append(z + done + 1)
        if t.size:
            targets_abs.append(t + done + 1)
        cur = coords[-1].copy()
        done += m
    zt = (np.concatenate(zeros_abs) if zeros_abs
          else np.empty(0, dtype=np.int64))
    tt = (np.concatenate(targets_abs) if targets_abs
          else np.empty(0, dtype=np.int64))
    cum = np.searchsorted(tt, zt, side="right")
    z_counts = np.diff(cum, prepend=0).astype(np.int64)
    z_open = int(tt.size - (cum[-1] if zt.size else 0))
    last = int(zt[-1]) if zt.size else -1
    return STATUS_OK, z_counts, z_open, last


def run_hitting(bitgen, cut, alt, steps, d, nlim, target):
    gen = np.random.Generator(bitgen)
    steps2 = steps.reshape(-1, d)
    tgt = np.asarray(target, dtype=np.int64)
    cur = np.zeros(d, dtype=np.int64)
    done = 0
    chunk = 512
    while done < nlim:
        m = min(chunk, nlim - done)
        idx = _draw(gen, m, cut, alt)
        coords = steps2[idx].cumsum(axis=0)
        coords += cur
        zero = np.flatnonzero(~coords.any(axis=1))
        hit = np.flatnonzero((coords == tgt).all(axis=1))
        z0 = int(zero[0]) if zero.size else m
        h0 = int(hit[0]) if hit.size else m
        if z0 < m or h0 < m:
            if z0 <= h0:
                return 0, done + z0 + 1
            return 1, done + h0 + 1
        cur = coords[-1].copy()
        done += m
        chunk = min(chunk * 2, _CHUNK)
    return 2, int(nlim)


def dp_sweep(out, src, nbr, w):
    # accumulate in the same neighbor order as the compiled kernel so
    # float rounding matches bit for bit
    np.multiply(src[nbr[:, 0]], w[0], out=out)
    for j in range(1, nbr.shape[1]):
        out += w[j] * src[nbr[:, j]]
