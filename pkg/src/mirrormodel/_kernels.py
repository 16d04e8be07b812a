"""Compiled stepping loops for bulk Monte Carlo work.

These mirror the pure-Python rules in ``environment``/``models``/``dynamics``
bit for bit (the test suite cross-checks them) but run without Python
overhead and release the GIL, so trial ranges can be farmed out to threads.

Integer codes: models 0 mirror, 1 manhattan_periodic, 2 manhattan_random,
3 rotating; headings 0 N, 1 E, 2 S, 3 W; cells 0 empty, 1 NE, 2 NW,
3 obstacle; outcomes 0 escaped, 1 periodic, 2 truncated.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .environment import (
    GOLDEN_GAMMA,
    TAG_ORIENTATION,
    TAG_PRESENCE,
    TAG_STREET_H,
    TAG_STREET_V,
    TAG_TRIAL,
)

MIRROR, MANHATTAN_PERIODIC, MANHATTAN_RANDOM, ROTATING = 0, 1, 2, 3
ESCAPED, PERIODIC, TRUNCATED = 0, 1, 2

_GAMMA = np.uint64(GOLDEN_GAMMA)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_TAG_PRESENCE = np.uint64(TAG_PRESENCE)
_TAG_ORIENTATION = np.uint64(TAG_ORIENTATION)
_TAG_STREET_H = np.uint64(TAG_STREET_H)
_TAG_STREET_V = np.uint64(TAG_STREET_V)
_TAG_TRIAL = np.uint64(TAG_TRIAL)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

_DX = np.array([0, 1, 0, -1], dtype=np.int64)
_DY = np.array([1, 0, -1, 0], dtype=np.int64)


@njit(cache=True, inline="always")
def fmix64(z):
    z = z ^ (z >> _S30)
    z = z * _C1
    z = z ^ (z >> _S27)
    z = z * _C2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _mix(v):
    return fmix64(np.uint64(v) + _GAMMA)


@njit(cache=True, inline="always")
def hash_point(seed, x, y, tag):
    my = _mix(y)
    return fmix64(seed ^ _mix(x) ^ ((my << _S32) | (my >> _S32)) ^ tag)


@njit(cache=True, inline="always")
def uniform(seed, x, y, tag):
    return float(hash_point(seed, x, y, tag) >> _S11) * _INV53


@njit(cache=True)
def trial_seed(master, i):
    return hash_point(np.uint64(master), i, 0, _TAG_TRIAL)


@njit(cache=True, inline="always")
def _key_y(y, circ):
    if circ == 0:
        return y
    y = y % circ
    if y > circ // 2:
        return y - circ
    return y


@njit(cache=True, inline="always")
def cell(model, p, q, seed, x, y, circ):
    ky = _key_y(y, circ)
    if uniform(seed, x, ky, _TAG_PRESENCE) >= p:
        return 0
    if model == MANHATTAN_PERIODIC or model == MANHATTAN_RANDOM:
        return 3
    if uniform(seed, x, ky, _TAG_ORIENTATION) < q:
        return 1
    return 2


@njit(cache=True, inline="always")
def street(model, seed, horizontal, index, circ):
    if model == MANHATTAN_PERIODIC:
        return 1 if index % 2 == 0 else -1
    if horizontal:
        u = uniform(seed, _key_y(index, circ), 0, _TAG_STREET_H)
    else:
        u = uniform(seed, index, 0, _TAG_STREET_V)
    return 1 if u < 0.5 else -1


@njit(cache=True, inline="always")
def reflect(m, d):
    if m == 1:
        return d ^ 1
    if m == 2:
        return 3 - d
    return d


@njit(cache=True)
def lane_heading(model, seed, horizontal, x, y, circ):
    if horizontal:
        return 1 if street(model, seed, True, y, circ) > 0 else 3
    return 0 if street(model, seed, False, x, circ) > 0 else 2


@njit(cache=True)
def trace_kernel(model, p, q, seed, circ, sx, sy, sd, strip, radius, max_steps, flips, ox, oy):
    """Returns (outcome, steps, x, y, heading, column0_crossings, returns_to_start).

    ``flips`` holds rotating-mirror parities at ``flips[x + ox, y + oy]`` and
    must cover every vertex the ray can reach before escaping.
    """
    seed = np.uint64(seed)
    if circ != 0:
        sy = sy % circ
    x = sx
    y = sy
    d = sd
    steps = 0
    crossings = 0
    returns = 0
    while True:
        if d == 1 and x == 0:
            crossings += 1
        elif d == 3 and x == 1:
            crossings += 1
        x += _DX[d]
        y += _DY[d]
        if circ != 0:
            if y < 0:
                y += circ
            elif y >= circ:
                y -= circ
        m = cell(model, p, q, seed, x, y, circ)
        if model == MIRROR:
            d = reflect(m, d)
        elif model == ROTATING:
            if m != 0:
                if flips[x + ox, y + oy]:
                    m = 3 - m
                flips[x + ox, y + oy] ^= 1
                d = reflect(m, d)
        elif m == 3:
            horizontal = d == 1 or d == 3
            d = lane_heading(model, seed, not horizontal, x, y, circ)
        steps += 1
        if strip:
            out = abs(x) > radius
        else:
            out = abs(x) > radius or abs(y) > radius
        if out:
            return ESCAPED, steps, x, y, d, crossings, returns
        if x == sx and y == sy and d == sd:
            if model != ROTATING:
                return PERIODIC, steps, x, y, d, crossings, returns
            returns += 1
        if steps >= max_steps:
            return TRUNCATED, steps, x, y, d, crossings, returns


@njit(cache=True)
def _start_heading(model, seed, heading, circ):
    if model == MANHATTAN_PERIODIC or model == MANHATTAN_RANDOM:
        return lane_heading(model, seed, True, 0, 0, circ)
    return heading


@njit(cache=True, nogil=True)
def escape_count_kernel(model, p, q, master, circ, n, heading, first, last, cap):
    """Trace trials ``first..last-1``; returns (escapes, truncated, total_steps)."""
    escapes = 0
    truncated = 0
    total = 0
    strip = circ != 0
    if model == ROTATING:
        w = 2 * n + 3
        ny = circ if strip else w
        flips = np.zeros((w, ny), dtype=np.uint8)
    else:
        flips = np.zeros((1, 1), dtype=np.uint8)
    off_y = 0 if strip else n + 1
    for i in range(first, last):
        seed = trial_seed(master, i)
        if model == ROTATING:
            flips[:, :] = 0
        d = _start_heading(model, seed, heading, circ)
        out, steps, _, _, _, _, _ = trace_kernel(
            model, p, q, seed, circ, 0, 0, d, strip, n, cap, flips, n + 1, off_y
        )
        total += steps
        if out == ESCAPED:
            escapes += 1
        elif out == TRUNCATED:
            truncated += 1
    return escapes, truncated, total
