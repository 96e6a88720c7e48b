# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for walk simulation and convolution sweeps.

Every sampling kernel consumes exactly one standard uniform per step
from the supplied BitGenerator, via the alias method with the
fractional part of u*K as the acceptance coin.  The pure-python
backend implements the same consumption rule, so identical streams
give identical paths.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport calloc, free
from numpy.random cimport bitgen_t

cnp.import_array()

cdef enum:
    _OK = 0
    _TABLE_LOAD = 1
    _PACK_RANGE = 2
    _EXC_OVERFLOW = 3

STATUS_OK = _OK
STATUS_TABLE_LOAD = _TABLE_LOAD
STATUS_PACK_RANGE = _PACK_RANGE
STATUS_EXC_OVERFLOW = _EXC_OVERFLOW


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z += <uint64_t>0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline bitgen_t* _rng_state(object bitgen) except NULL:
    return <bitgen_t*> PyCapsule_GetPointer(bitgen.capsule, "BitGenerator")


def run_walk(object bitgen,
             double[::1] cut, int64_t[::1] alt, int64_t[::1] steps,
             int d, int64_t snap_n, int64_t H, int bits, int64_t capacity,
             int64_t target_key, int64_t z_cap, object path_obj):
    """Simulate H steps with live sparse local-time counting.

    snap_n >= 0 requests a snapshot of the field after step snap_n;
    snap_n == -1 skips it (caller reuses the final field).  target_key
    != -1 additionally records per-excursion visit counts to that
    packed site and the return times to the origin.  path_obj, when not
    None, is an int32 (snap_n+1, d) array receiving S_0..S_snap_n.

    Returns a dict with status, the compacted (unsorted) key/count
    arrays at the snapshot and at H, excursion arrays, and counters.
    """
    cdef bitgen_t* rng = _rng_state(bitgen)
    cdef int K = cut.shape[0]
    cdef uint64_t mask = <uint64_t>(capacity - 1)
    cdef int64_t* tkeys = <int64_t*> calloc(capacity, sizeof(int64_t))
    cdef int64_t* tcnts = <int64_t*> calloc(capacity, sizeof(int64_t))
    if tkeys == NULL or tcnts == NULL:
        if tkeys != NULL:
            free(tkeys)
        if tcnts != NULL:
            free(tcnts)
        raise MemoryError("walk table allocation failed")

    cdef int64_t coords[16]
    cdef int ax
    for ax in range(d):
        coords[ax] = 0
    cdef int64_t HALF = (<int64_t>1) << (bits - 1)
    cdef int64_t origin_key = 0
    for ax in range(d):
        origin_key = (origin_key << bits) | HALF

    cdef bint want_path = path_obj is not None
    cdef int32_t[:, ::1] path = path_obj if want_path else None

    cdef bint want_exc = target_key != -1
    cdef int64_t[::1] z_counts = None
    cdef int64_t[::1] ret_times = None
    znp = rnp = None
    if want_exc:
        znp = np.empty(z_cap, dtype=np.int64)
        rnp = np.empty(z_cap, dtype=np.int64)
        z_counts = znp
        ret_times = rnp

    cdef int64_t phase1 = snap_n if snap_n >= 0 else H
    cdef int64_t k = 0, used = 0, nret = 0, cur_z = 0, last_ret = -1
    cdef int status = 0
    cdef int64_t j, idx, base, c, key, kk
    cdef double u, v, f
    cdef uint64_t h
    cdef int bad

    with nogil:
        for k in range(1, phase1 + 1):
            u = rng.next_double(rng.state)
            v = u * K
            j = <int64_t>v
            if j >= K:
                j = K - 1
            f = v - j
            idx = j if f < cut[j] else alt[j]
            base = idx * d
            bad = 0
            key = 0
            for ax in range(d):
                c = coords[ax] + steps[base + ax]
                coords[ax] = c
                if c <= -HALF or c >= HALF:
                    bad = 1
                key = (key << bits) | (c + HALF)
            if bad:
                status = _PACK_RANGE
                break
            if want_path:
                for ax in range(d):
                    path[k, ax] = <int32_t>coords[ax]
            h = _mix64(<uint64_t>key) & mask
            while True:
                if tkeys[h] == key:
                    tcnts[h] += 1
                    break
                if tkeys[h] == 0:
                    tkeys[h] = key
                    tcnts[h] = 1
                    used += 1
                    break
                h = (h + 1) & mask
            if 10 * used > 7 * capacity:
                status = _TABLE_LOAD
                break
            if want_exc:
                if key == target_key:
                    cur_z += 1
                if key == origin_key:
                    if nret >= z_cap:
                        status = _EXC_OVERFLOW
                        break
                    z_counts[nret] = cur_z
                    ret_times[nret] = k
                    nret += 1
                    cur_z = 0
                    last_ret = k

    keys_n = counts_n = None
    cdef int64_t[::1] kn
    cdef int64_t[::1] cn
    cdef int64_t pos = 0
    cdef int64_t slot
    cdef int64_t used_n = used
    if status == 0 and snap_n >= 0:
        keys_n = np.empty(used_n, dtype=np.int64)
        counts_n = np.empty(used_n, dtype=np.int64)
        kn = keys_n
        cn = counts_n
        with nogil:
            pos = 0
            for slot in range(capacity):
                if tkeys[slot] != 0:
                    kn[pos] = tkeys[slot]
                    cn[pos] = tcnts[slot]
                    pos += 1

    if status == 0 and snap_n >= 0 and H > snap_n:
        with nogil:
            for k in range(snap_n + 1, H + 1):
                u = rng.next_double(rng.state)
                v = u * K
                j = <int64_t>v
                if j >= K:
                    j = K - 1
                f = v - j
                idx = j if f < cut[j] else alt[j]
                base = idx * d
                bad = 0
                key = 0
                for ax in range(d):
                    c = coords[ax] + steps[base + ax]
                    coords[ax] = c
                    if c <= -HALF or c >= HALF:
                        bad = 1
                    key = (key << bits) | (c + HALF)
                if bad:
                    status = _PACK_RANGE
                    break
                h = _mix64(<uint64_t>key) & mask
                while True:
                    if tkeys[h] == key:
                        tcnts[h] += 1
                        break
                    if tkeys[h] == 0:
                        tkeys[h] = key
                        tcnts[h] = 1
                        used += 1
                        break
                    h = (h + 1) & mask
                if 10 * used > 7 * capacity:
                    status = _TABLE_LOAD
                    break
                if want_exc:
                    if key == target_key:
                        cur_z += 1
                    if key == origin_key:
                        if nret >= z_cap:
                            status = _EXC_OVERFLOW
                            break
                        z_counts[nret] = cur_z
                        ret_times[nret] = k
                        nret += 1
                        cur_z = 0
                        last_ret = k

    keys_H = counts_H = None
    cdef int64_t[::1] kh
    cdef int64_t[::1] ch
    if status == 0:
        keys_H = np.empty(used, dtype=np.int64)
        counts_H = np.empty(used, dtype=np.int64)
        kh = keys_H
        ch = counts_H
        with nogil:
            pos = 0
            for slot in range(capacity):
                if tkeys[slot] != 0:
                    kh[pos] = tkeys[slot]
                    ch[pos] = tcnts[slot]
                    pos += 1
    free(tkeys)
    free(tcnts)

    end = np.empty(d, dtype=np.int64)
    for ax in range(d):
        end[ax] = coords[ax]
    out = {
        "status": status,
        "keys_n": keys_n,
        "counts_n": counts_n,
        "keys_H": keys_H,
        "counts_H": counts_H,
        "end": end,
        "used": int(used),
    }
    if want_exc:
        out["z_counts"] = znp[:nret].copy()
        out["ret_times"] = rnp[:nret].copy()
        out["z_open"] = int(cur_z)
        out["last_ret"] = int(last_ret)
    return out


def run_returns(object bitgen, double[::1] cut, int64_t[::1] alt,
                int64_t[::1] steps, int d, int64_t H):
    """Count returns to the origin over H steps; no field is built.

    Returns (n_returns, last_return_step or -1).
    """
    cdef bitgen_t* rng = _rng_state(bitgen)
    cdef int K = cut.shape[0]
    cdef int64_t coords[16]
    cdef int ax
    for ax in range(d):
        coords[ax] = 0
    cdef int64_t k, j, idx, base, nret = 0, last = -1
    cdef double u, v, f
    cdef int zero
    with nogil:
        for k in range(1, H + 1):
            u = rng.next_double(rng.state)
            v = u * K
            j = <int64_t>v
            if j >= K:
                j = K - 1
            f = v - j
            idx = j if f < cut[j] else alt[j]
            base = idx * d
            zero = 1
            for ax in range(d):
                coords[ax] += steps[base + ax]
                if coords[ax] != 0:
                    zero = 0
            if zero:
                nret += 1
                last = k
    return int(nret), int(last)


def run_excursions(object bitgen, double[::1] cut, int64_t[::1] alt,
                   int64_t[::1] steps, int d, int64_t H,
                   int64_t[::1] target, int64_t z_cap):
    """Track per-excursion visit counts to a fixed target site.

    Returns (status, z_counts array, z_open, last_return).
    """
    cdef bitgen_t* rng = _rng_state(bitgen)
    cdef int K = cut.shape[0]
    cdef int64_t coords[16]
    cdef int ax
    for ax in range(d):
        coords[ax] = 0
    znp = np.empty(z_cap, dtype=np.int64)
    cdef int64_t[::1] z_counts = znp
    cdef int64_t k, j, idx, base, nret = 0, cur_z = 0, last = -1
    cdef double u, v, f
    cdef int zero, hit
    cdef int status = 0
    with nogil:
        for k in range(1, H + 1):
            u = rng.next_double(rng.state)
            v = u * K
            j = <int64_t>v
            if j >= K:
                j = K - 1
            f = v - j
            idx = j if f < cut[j] else alt[j]
            base = idx * d
            zero = 1
            hit = 1
            for ax in range(d):
                coords[ax] += steps[base + ax]
                if coords[ax] != 0:
                    zero = 0
                if coords[ax] != target[ax]:
                    hit = 0
            if hit:
                cur_z += 1
            if zero:
                if nret >= z_cap:
                    status = _EXC_OVERFLOW
                    break
                z_counts[nret] = cur_z
                nret += 1
                cur_z = 0
                last = k
    return status, znp[:nret].copy(), int(cur_z), int(last)


def run_hitting(object bitgen, double[::1] cut, int64_t[::1] alt,
                int64_t[::1] steps, int d, int64_t nlim, int64_t[::1] target):
    """First-passage race: 0 if the walk returns to the origin first,
    1 if it hits the target first, 2 if neither within nlim steps.

    Returns (outcome, steps_taken).
    """
    cdef bitgen_t* rng = _rng_state(bitgen)
    cdef int K = cut.shape[0]
    cdef int64_t coords[16]
    cdef int ax
    for ax in range(d):
        coords[ax] = 0
    cdef int64_t k = 0, j, idx, base
    cdef double u, v, f
    cdef int zero, hit
    cdef int outcome = 2
    with nogil:
        for k in range(1, nlim + 1):
            u = rng.next_double(rng.state)
            v = u * K
            j = <int64_t>v
            if j >= K:
                j = K - 1
            f = v - j
            idx = j if f < cut[j] else alt[j]
            base = idx * d
            zero = 1
            hit = 1
            for ax in range(d):
                coords[ax] += steps[base + ax]
                if coords[ax] != 0:
                    zero = 0
                if coords[ax] != target[ax]:
                    hit = 0
            if zero:
                outcome = 0
                break
            if hit:
                outcome = 1
                break
    return outcome, int(k)


def dp_sweep(double[::1] out, double[::1] src, int32_t[:, ::1] nbr,
             double[::1] w):
    """out[i] = sum_j w[j] * src[nbr[i, j]].

    src carries one trailing sink cell (always zero) that out-of-box
    neighbor indices point at, so boundary mass leaks silently and the
    caller measures it as a total-mass deficit.
    """
    cdef Py_ssize_t N = out.shape[0]
    cdef Py_ssize_t K = nbr.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(N):
            acc = 0.0
            for j in range(K):
                acc += w[j] * src[nbr[i, j]]
            out[i] = acc
