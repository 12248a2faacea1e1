"""Approximate barycentric spanners from approximate linear optimisation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .linalg import hyperplane_normal

DET_FLOOR = 1e-14


class SpannerError(RuntimeError):
    """Raised when the iteration cap is exceeded or the working matrix degenerates."""


@dataclass
class SpannerResult:
    policies: list
    witness_matrix: np.ndarray
    iterations_used: int
    oracle_calls: int
    swaps: int
    log_abs_det: list = field(default_factory=list)


def spanner_iteration_bound(d: int, eps: float, C: float = 2.0) -> int:
    """``d + ceil((d/2) log_C(100 d / eps^2))``."""
    return d + math.ceil(d / 2 * math.log(100 * d / eps**2, C))


def robust_spanner(
    lin_opt: Callable[[np.ndarray], Any],
    vec: Callable[[Any], np.ndarray],
    C: float,
    eps: float,
    d: int | None = None,
    max_iterations: int | None = None,
) -> SpannerResult:
    """Select ``d`` oracle outputs whose vectors form a ``(C, eps)``-approximate spanner.

    ``lin_opt(theta)`` returns an index ``z`` approximately maximising
    ``theta^T vec(z)`` for unit ``theta``. The replacement test compares
    ``theta^T w + eps`` against ``C |theta^T w_i|`` with ``theta`` the unit
    cofactor direction; multiplying through by the cofactor norm gives the
    determinant form, so the decisions coincide while avoiding underflow of
    large determinants of small vectors.
    """
    if C <= 1:
        raise ValueError("C must exceed 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if d is None or d < 1:
        raise ValueError("dimension d must be a positive integer")
    cap = spanner_iteration_bound(d, eps, C) + d if max_iterations is None else max_iterations
    W = np.eye(d)
    z: list = [None] * d
    calls = 0
    log_det: list[float] = []

    def query(theta):
        nonlocal calls
        zp = lin_opt(theta)
        wp = np.asarray(vec(zp), dtype=float)
        zm = lin_opt(-theta)
        wm = np.asarray(vec(zm), dtype=float)
        calls += 1
        return zp, wp, zm, wm

    for i in range(d):
        theta = hyperplane_normal(W, i)
        if theta is None:
            raise SpannerError(f"working matrix degenerate at initial column {i}")
        zp, wp, zm, wm = query(theta)
        if theta @ wp >= -(theta @ wm):
            W[:, i], z[i] = wp + eps * theta, zp
        else:
            W[:, i], z[i] = wm - eps * theta, zm
        log_det.append(float(np.linalg.slogdet(W)[1]))

    swaps = 0
    while True:
        swapped = False
        for i in range(d):
            theta = hyperplane_normal(W, i)
            if theta is None:
                continue
            zp, wp, zm, wm = query(theta)
            current = C * max(abs(float(theta @ W[:, i])), DET_FLOOR)
            if theta @ wp + eps >= current:
                W[:, i], z[i] = wp + eps * theta, zp
            elif -(theta @ wm) + eps >= current:
                W[:, i], z[i] = wm - eps * theta, zm
            else:
                continue
            swapped = True
            swaps += 1
            log_det.append(float(np.linalg.slogdet(W)[1]))
            break
        if not swapped:
            break
        if d + swaps > cap:
            raise SpannerError(f"exceeded iteration cap {cap}; the oracles look inconsistent")
    return SpannerResult(z, W, d + swaps, calls, swaps, log_det)
