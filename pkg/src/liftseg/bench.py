"""Timing harness for the spatial index against the brute-force scan."""

from __future__ import annotations

import time

import numpy as np

from . import geometry, oracle


def bench_index(n_points: int = 200_000, n_queries: int = 1_000,
                r: float = 0.1, seed: int = 0) -> dict:
    """Time grid-indexed vs. linear-scan radius queries on random points.

    Asserts that both strategies return identical index sets on every
    query, then reports wall times and the speedup ratio.
    """
    rng = np.random.default_rng(seed)
    points = rng.uniform(0.0, 1.0, size=(n_points, 3))
    centers = rng.uniform(0.0, 1.0, size=(n_queries, 3))

    t0 = time.perf_counter()
    index = geometry.build_index(points, cell_size=r)
    build_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid_results = [geometry.radius_query(index, c, r) for c in centers]
    grid_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    scan_results = [oracle.radius_scan_ref(points, c, r) for c in centers]
    scan_s = time.perf_counter() - t0

    mismatches = sum(1 for a, b in zip(grid_results, scan_results)
                     if not np.array_equal(a, b))
    if mismatches:
        raise AssertionError(f"{mismatches} queries differ between index and scan")

    return {
        "n_points": n_points,
        "n_queries": n_queries,
        "radius": r,
        "seed": seed,
        "build_seconds": build_s,
        "grid_seconds": grid_s,
        "scan_seconds": scan_s,
        "speedup": scan_s / grid_s if grid_s > 0 else float("inf"),
        "identical_results": True,
    }
