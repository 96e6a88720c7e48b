"""Packed int64 keys for lattice points: bits = 63 // d per axis,
biased so the all-zero point never maps to key 0 (0 is the empty-slot
sentinel in the compiled hash table)."""

import numpy as np


def key_bits(dim: int) -> int:
    return 63 // dim


def half_range(dim: int) -> int:
    return 1 << (key_bits(dim) - 1)


def origin_key(dim: int) -> int:
    bits = key_bits(dim)
    half = 1 << (bits - 1)
    key = 0
    for _ in range(dim):
        key = (key << bits) | half
    return key


def pack_coords(coords: np.ndarray, dim: int) -> np.ndarray:
    """coords (m, d) int -> packed int64 keys; caller guards the range."""
    bits = key_bits(dim)
    half = 1 << (bits - 1)
    c = np.asarray(coords, dtype=np.int64)
    if c.ndim == 1:
        c = c[None, :]
    key = c[:, 0] + half
    for ax in range(1, dim):
        key = (key << bits) | (c[:, ax] + half)
    return key


def pack_point(point, dim: int) -> int:
    bits = key_bits(dim)
    half = 1 << (bits - 1)
    key = 0
    for ax in range(dim):
        c = int(point[ax])
        if c <= -half or c >= half:
            raise ValueError(f"coordinate {c} outside packable range")
        key = (key << bits) | (c + half)
    return key


def unpack_keys(keys: np.ndarray, dim: int) -> np.ndarray:
    """packed int64 keys (m,) -> coords (m, d) int64."""
    bits = key_bits(dim)
    half = 1 << (bits - 1)
    mask = (1 << bits) - 1
    k = np.asarray(keys, dtype=np.int64)
    out = np.empty((k.shape[0], dim), dtype=np.int64)
    for ax in range(dim - 1, -1, -1):
        out[:, ax] = (k & mask) - half
        k = k >> bits
    return out


def in_pack_range(coords: np.ndarray, dim: int) -> bool:
    half = half_range(dim)
    c = np.asarray(coords)
    return bool(c.size == 0 or (np.abs(c).max() < half))
