"""Brute-force reference implementations used to check the real ones.

Everything here is written as plainly as possible (double loops, integer
arithmetic) and stays independent of the library code paths it verifies.
"""

from __future__ import annotations

import numpy as np


def crop_oracle(arr: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    out = np.zeros((h, w, arr.shape[2]), dtype=np.uint8)
    for row in range(h):
        for col in range(w):
            for ch in range(arr.shape[2]):
                out[row, col, ch] = arr[y + row, x + col, ch]
    return out


def flip_oracle(arr: np.ndarray) -> np.ndarray:
    h, w, c = arr.shape
    out = np.zeros_like(arr)
    for row in range(h):
        for col in range(w):
            out[row, col] = arr[row, w - 1 - col]
    return out


def _within_segment(px: int, py: int, a, b, radius: int) -> bool:
    """Exact integer point-to-segment distance predicate (d <= radius)."""
    x1, y1 = a
    x2, y2 = b
    abx, aby = x2 - x1, y2 - y1
    apx, apy = px - x1, py - y1
    len2 = abx * abx + aby * aby
    r2 = radius * radius
    if len2 == 0:
        return apx * apx + apy * apy <= r2
    t_num = apx * abx + apy * aby
    if t_num <= 0:
        return apx * apx + apy * apy <= r2
    if t_num >= len2:
        bpx, bpy = px - x2, py - y2
        return bpx * bpx + bpy * bpy <= r2
    ap2 = apx * apx + apy * apy
    return ap2 * len2 - t_num * t_num <= r2 * len2


def stroke_oracle(arr: np.ndarray, color, radius: int, points) -> np.ndarray:
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    out = arr.copy()
    h, w = arr.shape[:2]
    pts = list(points)
    if len(pts) == 1:
        pts = pts * 2
    segments = list(zip(pts, pts[1:]))
    for row in range(h):
        for col in range(w):
            if any(_within_segment(col, row, a, b, radius) for a, b in segments):
                out[row, col, 0] = color[0]
                out[row, col, 1] = color[1]
                out[row, col, 2] = color[2]
                if out.shape[2] == 4:
                    out[row, col, 3] = 255
    return out


def apply_edit_oracle(arr: np.ndarray, edit) -> np.ndarray:
    """Dispatch one EditOp through the brute-force implementations."""
    if edit.op == "crop":
        return crop_oracle(arr, edit.x, edit.y, edit.w, edit.h)
    if edit.op == "flip":
        return flip_oracle(arr)
    if edit.op == "stroke":
        return stroke_oracle(arr, edit.color, edit.radius, edit.points)
    raise AssertionError(f"unknown op {edit.op}")
