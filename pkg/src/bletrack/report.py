"""Aggregate visitor analytics over a grouped device store.

New-visitor counting (first-ever appearance inside a window), per-zone
visit counts from dwell time, binned visitor-flow reports with a vendor
split, device-to-person clustering, and trajectory similarity via the
discrete Frechet distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .locate import LocalizeParams, NodePose, localize_all, track_device
from .store import DeviceStore


@dataclass(frozen=True)
class Zone:
    name: str
    vertices: tuple[tuple[float, float], ...]

    def contains(self, x: float, y: float) -> bool:
        return point_in_polygon((x, y), self.vertices)


def point_in_polygon(point: tuple[float, float], vertices: tuple[tuple[float, float], ...]) -> bool:
    """Even-odd ray casting; boundary points count as inside."""
    x, y = point
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if min(y1, y2) <= y <= max(y1, y2) and min(x1, x2) <= x <= max(x1, x2):
            cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
            if abs(cross) < 1e-12:
                return True
        if (y1 > y) != (y2 > y):
            x_int = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_int:
                inside = not inside
    return inside


def load_zones(path: str | Path) -> list[Zone]:
    """One zone per line: ``name: x1,y1 x2,y2 x3,y3 ...``"""
    zones = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, rest = line.partition(":")
        verts = tuple(tuple(float(c) for c in p.split(",")) for p in rest.split())
        if len(verts) < 3:
            raise ValueError(f"zone {name!r} needs at least three vertices")
        zones.append(Zone(name.strip(), verts))
    return zones


def count_new_visitors(
    store: DeviceStore,
    window: tuple[int, int],
    zone: Zone | None = None,
    poses: list[NodePose] | None = None,
    area: tuple[float, float] | None = None,
) -> tuple[int, list[int]]:
    """Devices whose first-ever appearance falls inside the window;
    returning devices (seen before the window) are excluded.  With a zone,
    only devices localized inside it count (requires poses)."""
    t0, t1 = window
    first = store.first_seen()
    fresh = sorted(did for did, ts in first.items() if t0 <= ts < t1)
    if zone is not None:
        if poses is None:
            raise ValueError("zone filtering needs node poses")
        fixes, _ = localize_all(store, window, poses, LocalizeParams(area=area))
        inside = {fx.device_id for fx in fixes if zone.contains(*fx.position)}
        fresh = [did for did in fresh if did in inside]
    return len(fresh), fresh


def zone_popularity(
    store: DeviceStore,
    window: tuple[int, int],
    zones: list[Zone],
    dwell_min_s: float = 60.0,
    poses: list[NodePose] | None = None,
    area: tuple[float, float] | None = None,
    step_s: float = 2.0,
) -> dict[str, int]:
    """Visit counts per zone: a visit is one device dwelling inside the
    zone for at least `dwell_min_s` of continuous trajectory time; each
    device counts once per zone."""
    if poses is None:
        raise ValueError("zone popularity needs node poses")
    counts = {z.name: 0 for z in zones}
    lp = LocalizeParams(area=area)
    for did in sorted(store.devices):
        recs = store.devices[did].packets
        if not recs:
            continue
        a = max(window[0], recs[0].ts_us)
        b = min(window[1], recs[-1].ts_us + 1)
        if b <= a:
            continue
        traj = track_device(store, did, (a, b), poses, step_s=step_s, params=lp)
        if not traj.points:
            continue
        for zone in zones:
            if _max_dwell_s(traj.points, zone) >= dwell_min_s:
                counts[zone.name] += 1
    return counts


def _max_dwell_s(points: list[tuple[int, float, float, float]], zone: Zone) -> float:
    """Longest continuous run of trajectory time inside the zone."""
    best = 0.0
    run_start: int | None = None
    prev_ts = None
    for ts, x, y, _ in points:
        if zone.contains(x, y):
            if run_start is None:
                run_start = ts
            prev_ts = ts
        else:
            if run_start is not None and prev_ts is not None:
                best = max(best, (prev_ts - run_start) / 1e6)
            run_start = None
    if run_start is not None and prev_ts is not None:
        best = max(best, (prev_ts - run_start) / 1e6)
    return best


@dataclass
class Report:
    bin_starts_us: list[int]
    new_visitors: list[int]
    apple: list[int]
    android: list[int]

    def total_new(self) -> int:
        return sum(self.new_visitors)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_start", "new_visitors", "apple", "android"])
            for row in zip(self.bin_starts_us, self.new_visitors, self.apple, self.android):
                w.writerow(row)


def visitor_flow(store: DeviceStore, window: tuple[int, int], bin_minutes: float) -> Report:
    """Per-bin new-visitor counts with an Apple/Android split."""
    if bin_minutes <= 0:
        raise ValueError("bin size must be positive")
    t0, t1 = window
    step = int(bin_minutes * 60e6)
    first = store.first_seen()
    starts = list(range(t0, t1, step))
    new_counts = [0] * len(starts)
    apple = [0] * len(starts)
    android = [0] * len(starts)
    for did, ts in first.items():
        if not t0 <= ts < t1:
            continue
        k = (ts - t0) // step
        new_counts[k] += 1
        vendor = store.devices[did].fixed.vendor
        if vendor == "Apple":
            apple[k] += 1
        elif vendor == "Android":
            android[k] += 1
    return Report(starts, new_counts, apple, android)


def cluster_people(
    positions_by_device: dict[int, np.ndarray],
    same_person_dist_m: float = 0.5,
) -> list[set[int]]:
    """Group devices whose median pairwise distance over a window stays
    below the carried-together threshold (one person, several devices)."""
    ids = sorted(positions_by_device)
    parent = {d: d for d in ids}

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            pa, pb = positions_by_device[a], positions_by_device[b]
            n = min(len(pa), len(pb))
            if n == 0:
                continue
            d = np.hypot(pa[:n, 0] - pb[:n, 0], pa[:n, 1] - pb[:n, 1])
            if float(np.median(d)) < same_person_dist_m:
                parent[find(a)] = find(b)
    groups: dict[int, set[int]] = {}
    for d in ids:
        groups.setdefault(find(d), set()).add(d)
    return sorted(groups.values(), key=lambda s: min(s))


def frechet_distance(path_a: np.ndarray, path_b: np.ndarray) -> float:
    """Discrete Frechet distance between two polylines, O(n*m)."""
    a = np.asarray(path_a, dtype=float)
    b = np.asarray(path_b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("paths must be nonempty (n, 2) arrays")
    n, m = a.shape[0], b.shape[0]
    dist = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    ca = np.full((n, m), np.inf)
    ca[0, 0] = dist[0, 0]
    for i in range(1, n):
        ca[i, 0] = max(ca[i - 1, 0], dist[i, 0])
    for j in range(1, m):
        ca[0, j] = max(ca[0, j - 1], dist[0, j])
    for i in range(1, n):
        for j in range(1, m):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), dist[i, j])
    return float(ca[n - 1, m - 1])
