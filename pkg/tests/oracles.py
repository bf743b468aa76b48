"""Independent brute-force oracles used to check the package's fast paths.

Everything here is deliberately written the slow, obvious way (string bit
twiddling, pure-python pixel loops, exact rationals) and shares no code with
the implementations under test.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.integrate import quad


def pack_records_oracle(records: list[tuple[int, int, int, int, int]]) -> bytes:
    """Bit-pack (class_code, q1..q4) records via a string of '0'/'1' chars."""
    bits = ""
    for cls, q1, q2, q3, q4 in records:
        bits += format(cls - 1, "02b")
        for q in (q1, q2, q3, q4):
            bits += format(q, "05b")
    if not bits:
        return b""
    while len(bits) % 8:
        bits += "0"
    return int(bits, 2).to_bytes(len(bits) // 8, "big")


def quantize_oracle(coord: float) -> int:
    level = 0
    while (level + 1) / 32 <= coord and level < 31:
        level += 1
    return level


def box_area_frac(box) -> Fraction:
    b1, b2, b3, b4 = (Fraction(c) for c in box.as_tuple())
    return (b3 - b1) * (b4 - b2)


def box_intersection_frac(a, b) -> Fraction:
    a1, a2, a3, a4 = (Fraction(c) for c in a.as_tuple())
    b1, b2, b3, b4 = (Fraction(c) for c in b.as_tuple())
    lo_x, hi_x = max(a1, b1), min(a3, b3)
    lo_y, hi_y = max(a2, b2), min(a4, b4)
    if hi_x <= lo_x or hi_y <= lo_y:
        return Fraction(0)
    return (hi_x - lo_x) * (hi_y - lo_y)


def semantic_change_oracle(current, last) -> Fraction:
    """Exact Eq-style accumulation over the union of track ids."""
    cur = {v.track_id: v for v in current.vehicles}
    old = {v.track_id: v for v in last.vehicles}
    total = Fraction(0)
    for tid in set(cur) | set(old):
        if tid not in cur or tid not in old:
            total += Fraction(1, 2)
            continue
        a = box_area_frac(cur[tid].box)
        b = box_area_frac(old[tid].box)
        i = box_intersection_frac(cur[tid].box, old[tid].box)
        if a + b - i == 0:
            continue
        total += (a + b - 2 * i) / (2 * (a + b - i))
    return total


def prediction_deviation_oracle(real, predicted) -> Fraction:
    """Pure-python per-pixel class counting."""
    h, w = real.grid.shape
    total = Fraction(0)
    for cls in (1, 2, 3, 4):
        n = n_other = inter = 0
        for y in range(h):
            for x in range(w):
                in_real = real.grid[y, x] == cls
                in_pred = predicted.grid[y, x] == cls
                n += in_real
                n_other += in_pred
                inter += in_real and in_pred
        if n + n_other == 0:
            continue
        total += Fraction(int(n) + int(n_other) - 2 * int(inter),
                          2 * (int(n) + int(n_other)))
    return total


def rasterize_oracle(scene, width: int, height: int) -> np.ndarray:
    """Per-pixel painting by scanning every cell against every box."""
    grid = np.zeros((height, width), dtype=np.uint8)
    for rec in scene.vehicles:
        x1 = min(int(np.floor(rec.box.b1 * width)), width - 1)
        y1 = min(int(np.floor(rec.box.b2 * height)), height - 1)
        x2 = min(max(int(np.ceil(rec.box.b3 * width)), x1 + 1), width)
        y2 = min(max(int(np.ceil(rec.box.b4 * height)), y1 + 1), height)
        for y in range(y1, y2):
            for x in range(x1, x2):
                grid[y, x] = int(rec.vehicle_class)
    return grid


def moment_quadrature(params, n: float) -> float:
    """E[g^n] by adaptive quadrature over the fading density."""
    from semsample.channel import pdf

    val, _ = quad(lambda g: g**n * pdf(params, g), 0.0, np.inf, limit=300)
    return val


def finite_difference_grads(params: list[np.ndarray], loss_fn, eps: float = 1e-6):
    """Central-difference gradient of a scalar loss over parameter arrays."""
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            step = eps * max(1.0, abs(orig))
            flat_p[i] = orig + step
            hi = loss_fn()
            flat_p[i] = orig - step
            lo = loss_fn()
            flat_p[i] = orig
            flat_g[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads
