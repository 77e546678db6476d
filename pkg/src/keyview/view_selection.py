"""Camera selection: exact minimal scene coverage followed by a greedy
max-min ordering over optical-axis angles.

The coverage stage is unweighted set cover. Cameras and grid points are
packed into Python integers used as bitsets, dominated rows/columns are
pruned, and the reduced instance is solved by depth-first branch and bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleCoverageError, InputError, KTooSmallError
from .scene_geometry import DEFAULT_FAR, DEFAULT_NEAR, visibility_matrix

EXACT_THRESHOLD = 64
# max-min scores closer than this count as ties and go to the lowest index
TIE_TOL = 1e-12


@dataclass(frozen=True)
class CoverageSolution:
    selected: tuple
    optimal: bool

    @property
    def k_min(self) -> int:
        return len(self.selected)


@dataclass(frozen=True)
class ViewSchedule:
    order: tuple
    coverage_prefix_len: int

    def prefix(self, k: int) -> list:
        if k < self.coverage_prefix_len:
            raise KTooSmallError(k, self.coverage_prefix_len)
        if k > len(self.order):
            raise InputError(f"K={k} exceeds the number of cameras ({len(self.order)})")
        return list(self.order[:k])

    def to_json(self, k=None) -> str:
        payload = {"order": list(self.order), "k_min": self.coverage_prefix_len}
        if k is not None:
            payload["k"] = k
            payload["selected"] = self.prefix(k)
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "ViewSchedule":
        payload = json.loads(text)
        return cls(tuple(int(i) for i in payload["order"]), int(payload["k_min"]))


def _bits(indices) -> int:
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


def _iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def _reduce(cam_sets: list[int]):
    """Drop dominated points and cameras until a fixpoint.

    ``cam_sets[j]`` is the bitset of cameras seeing point j. Returns the
    surviving point sets and the surviving camera indices.
    """
    n_cams = max(s.bit_length() for s in cam_sets)
    alive = (1 << n_cams) - 1
    points = sorted(set(cam_sets), key=lambda s: (s.bit_count(), s))
    while True:
        points = sorted({s & alive for s in points}, key=lambda s: (s.bit_count(), s))
        # a point whose camera set contains another point's set is covered for free
        kept = []
        for s in points:
            if not any(k & s == k for k in kept):
                kept.append(s)
        points = kept
        cover = {c: 0 for c in _iter_bits(alive)}
        for j, s in enumerate(points):
            for c in _iter_bits(s):
                cover[c] |= 1 << j
        dropped = 0
        cams = sorted(cover)
        for a in cams:
            for b in cams:
                if a == b or (dropped >> b) & 1:
                    continue
                ca, cb = cover[a], cover[b]
                if ca & cb == ca and (ca != cb or b < a):
                    dropped |= 1 << a
                    break
        if not dropped:
            return points, cams
        alive &= ~dropped


def _greedy_cover(cover: dict[int, int], full: int) -> list[int]:
    chosen = []
    uncovered = full
    while uncovered:
        best = max(cover, key=lambda c: ((cover[c] & uncovered).bit_count(), -c))
        chosen.append(best)
        uncovered &= ~cover[best]
    return chosen


def _branch_and_bound(points: list[int], cover: dict[int, int], incumbent: list[int]) -> list[int]:
    best = list(incumbent)
    order = sorted(range(len(points)), key=lambda j: (points[j].bit_count(), j))

    def lower_bound(uncovered, avail):
        # points with pairwise disjoint camera sets each need their own camera
        used = 0
        disjoint = 0
        for j in order:
            if (uncovered >> j) & 1:
                s = points[j] & avail
                if not s & used:
                    used |= s
                    disjoint += 1
        widest = max((cover[c] & uncovered).bit_count() for c in _iter_bits(avail))
        by_size = -(-uncovered.bit_count() // widest) if widest else len(points) + 1
        return max(1, disjoint, by_size)

    def search(chosen, uncovered, avail):
        nonlocal best
        if not uncovered:
            if len(chosen) < len(best):
                best = list(chosen)
            return
        if len(chosen) + lower_bound(uncovered, avail) >= len(best):
            return
        pivot = min(
            (j for j in order if (uncovered >> j) & 1),
            key=lambda j: ((points[j] & avail).bit_count(), j),
        )
        options = list(_iter_bits(points[pivot] & avail))
        options.sort(key=lambda c: (-(cover[c] & uncovered).bit_count(), c))
        for c in options:
            chosen.append(c)
            search(chosen, uncovered & ~cover[c], avail)
            chosen.pop()
            # later branches never revisit a camera already explored here
            avail &= ~(1 << c)

    all_cams = _bits(cover)
    search([], (1 << len(points)) - 1, all_cams)
    return best


def min_coverage_set(vis, exact_threshold: int = EXACT_THRESHOLD) -> CoverageSolution:
    """Smallest camera subset that sees every grid point.

    Solved exactly when the reduced instance has at most ``exact_threshold``
    cameras, otherwise by the greedy approximation (``optimal=False``).
    """
    vis = np.asarray(vis, dtype=bool)
    if vis.ndim != 2 or vis.shape[0] == 0 or vis.shape[1] == 0:
        raise InputError(f"visibility matrix must be non-empty 2-D, got shape {vis.shape}")
    seen = vis.any(axis=0)
    if not seen.all():
        raise InfeasibleCoverageError(int(np.flatnonzero(~seen)[0]))

    cam_sets = [_bits(np.flatnonzero(col)) for col in vis.T]
    points, cams = _reduce(cam_sets)
    cover = {c: 0 for c in cams}
    for j, s in enumerate(points):
        for c in _iter_bits(s):
            cover[c] |= 1 << j
    full = (1 << len(points)) - 1
    chosen = _greedy_cover(cover, full)
    optimal = len(cams) <= exact_threshold
    if optimal:
        chosen = _branch_and_bound(points, cover, chosen)
    return CoverageSolution(tuple(sorted(chosen)), optimal)


def optical_axes(cams) -> np.ndarray:
    return np.stack([c.forward for c in cams])


def baseline_matrix(cams) -> np.ndarray:
    """Pairwise angles (radians) between camera optical axes.

    Accepts cameras or an ``(N, 3)`` array of axis vectors.
    """
    z = np.asarray(cams, dtype=np.float64) if isinstance(cams, np.ndarray) else optical_axes(cams)
    if len(z) < 2:
        raise InputError("baseline_matrix needs at least two cameras")
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    n = len(z)
    b = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    cos = np.einsum("ij,ij->i", z[iu[0]], z[iu[1]])
    b[iu] = np.arccos(np.clip(cos, -1.0, 1.0))
    b[(iu[1], iu[0])] = b[iu]
    return b


def greedy_schedule(baseline, initial) -> ViewSchedule:
    """Order all cameras, starting from ``initial``, by repeatedly taking the
    camera whose smallest angle to the already selected set is largest."""
    baseline = np.asarray(baseline, dtype=np.float64)
    start = list(initial.selected) if isinstance(initial, CoverageSolution) else [int(i) for i in initial]
    if not start:
        raise InputError("greedy_schedule needs a non-empty initial selection")
    n = len(baseline)
    selected = list(start)
    remaining = [i for i in range(n) if i not in set(selected)]
    if remaining:
        score = baseline[np.ix_(remaining, selected)].min(axis=1)
    while remaining:
        top = score.max()
        pick = int(np.flatnonzero(score >= top - TIE_TOL)[0])
        cam = remaining.pop(pick)
        selected.append(cam)
        score = np.delete(score, pick)
        if remaining:
            score = np.minimum(score, baseline[remaining, cam])
    return ViewSchedule(tuple(selected), len(start))


def schedule_views(cams, grid, t_near=DEFAULT_NEAR, t_far=DEFAULT_FAR,
                   exact_threshold=EXACT_THRESHOLD):
    """Full ranking of ``cams``: coverage set first, then the max-min order."""
    cams = list(cams)
    cover = min_coverage_set(visibility_matrix(cams, grid, t_near, t_far), exact_threshold)
    if len(cams) == 1:
        return ViewSchedule(cover.selected, cover.k_min), cover
    return greedy_schedule(baseline_matrix(cams), cover), cover


def select_views(cams, grid, k: int, **kwargs) -> list:
    cams = list(cams)
    if k > len(cams):
        raise InputError(f"K={k} exceeds the number of cameras ({len(cams)})")
    schedule, _ = schedule_views(cams, grid, **kwargs)
    return schedule.prefix(k)
