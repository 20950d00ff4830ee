from __future__ import annotations

import numpy as np
import pytest

from bletrack.frames import DeviceFact, Vendor
from bletrack.locate import NodePose, world_bearing
from bletrack.report import (
    Report,
    Zone,
    cluster_people,
    count_new_visitors,
    frechet_distance,
    load_zones,
    point_in_polygon,
    visitor_flow,
    zone_popularity,
)
from bletrack.store import DeviceStore, NodeFeatures, PacketRecord

POSES = [NodePose((0.2, 0.2), 45.0), NodePose((15.8, 0.2), 315.0),
         NodePose((0.2, 11.8), 135.0), NodePose((15.8, 11.8), 225.0)]
AREA = (16.0, 12.0)


def add_device(st, first_ts_us, duration_us, path, vendor=Vendor.APPLE, model="iPhone",
               rate_us=400_000, addr=None, rng=None):
    """Stationary or waypoint device emitting clean features along `path`."""
    rng = rng or np.random.default_rng(abs(hash((first_ts_us, model))) % 2**32)
    dev = st.new_device(DeviceFact(vendor=vendor, model=model))
    addr = addr if addr is not None else int(rng.integers(1, 1 << 48))
    path = np.asarray(path, dtype=float)
    n = max(2, int(duration_us // rate_us))
    ts = first_ts_us + np.arange(n) * rate_us
    if len(path) == 1:
        pos = np.repeat(path, n, axis=0)
    else:
        seg = np.linspace(0, 1, n)
        cum = np.linspace(0, 1, len(path))
        pos = np.stack([np.interp(seg, cum, path[:, 0]), np.interp(seg, cum, path[:, 1])], axis=1)
    for t, p in zip(ts, pos):
        feats = []
        for pose in POSES:
            b = world_bearing(pose.position, tuple(p))
            rel = (b - pose.boresight_deg + 180) % 360 - 180
            feats.append(NodeFeatures(-50.0, 1000.0, rel + float(rng.normal(0, 1.0))))
        st.insert(dev.device_id, PacketRecord(int(t), addr, 37, tuple(feats),
                                              DeviceFact(vendor=vendor, model=model)))
    return dev.device_id


class TestPolygon:
    def test_inside_outside(self):
        square = ((0, 0), (4, 0), (4, 4), (0, 4))
        assert point_in_polygon((2, 2), square)
        assert not point_in_polygon((5, 2), square)
        assert point_in_polygon((0, 2), square)  # boundary

    def test_load_zones(self, tmp_path):
        p = tmp_path / "zones.txt"
        p.write_text("HOMESTYLE: 0,0 4,0 4,4 0,4\nCIAO: 6,0 10,0 10,4 6,4\n")
        zones = load_zones(p)
        assert [z.name for z in zones] == ["HOMESTYLE", "CIAO"]
        assert zones[0].contains(1, 1)


class TestNewVisitors:
    def test_sixteen_new_three_returning(self):
        st = DeviceStore(node_count=4)
        rng = np.random.default_rng(1)
        window = (600_000_000, 1_200_000_000)  # minute 10..20
        # three returning devices appear well before the window and again inside
        for k in range(3):
            add_device(st, 1_000_000 + k * 7_000, 1_150_000_000, [(2.0 + k, 2.0)], rng=rng)
        # sixteen new devices first appear inside the window
        for k in range(16):
            add_device(st, window[0] + 5_000_000 + k * 30_000_000, 60_000_000,
                       [(1.0 + (k % 8), 3.0 + k // 8)], rng=rng)
        n, fresh = count_new_visitors(st, window)
        assert n == 16
        assert len(fresh) == 16

    def test_empty_window_zero(self):
        st = DeviceStore(node_count=4)
        add_device(st, 1_000, 10_000_000, [(1.0, 1.0)])
        assert count_new_visitors(st, (900_000_000, 910_000_000))[0] == 0

    def test_rotating_device_counted_once(self):
        # same physical device under one store id with several addresses
        st = DeviceStore(node_count=4)
        dev = st.new_device(DeviceFact(vendor=Vendor.APPLE))
        for k, addr in enumerate((0xA1, 0xA2, 0xA3)):
            for j in range(5):
                t = 10_000_000 + k * 3_000_000 + j * 400_000
                feats = tuple(NodeFeatures(-50.0, 0.0, 10.0) for _ in POSES)
                st.insert(dev.device_id, PacketRecord(t, addr, 37, feats, DeviceFact(vendor=Vendor.APPLE)))
        n, _ = count_new_visitors(st, (0, 60_000_000))
        assert n == 1


class TestZonePopularity:
    def _station_zones(self):
        return [
            Zone("HOMESTYLE", ((1.0, 1.0), (4.0, 1.0), (4.0, 4.0), (1.0, 4.0))),
            Zone("CIAO", ((6.0, 1.0), (9.0, 1.0), (9.0, 4.0), (6.0, 4.0))),
        ]

    def test_planted_visits_recovered(self):
        st = DeviceStore(node_count=4)
        rng = np.random.default_rng(5)
        zones = self._station_zones()
        # 3 devices dwell in HOMESTYLE, 2 in CIAO, 1 passes by too briefly
        for k in range(3):
            add_device(st, 1_000_000 + k * 100_000, 120_000_000, [(2.5, 2.5)], rng=rng)
        for k in range(2):
            add_device(st, 2_000_000 + k * 100_000, 120_000_000, [(7.5, 2.5)], rng=rng)
        add_device(st, 3_000_000, 20_000_000, [(12.0, 8.0)], rng=rng)
        counts = zone_popularity(st, (0, 200_000_000), zones, dwell_min_s=60.0,
                                 poses=POSES, area=AREA)
        assert counts == {"HOMESTYLE": 3, "CIAO": 2}

    def test_skirting_boundary_not_counted(self):
        st = DeviceStore(node_count=4)
        zones = self._station_zones()
        # crosses HOMESTYLE quickly: inside for ~12 s only
        add_device(st, 1_000_000, 120_000_000, [(2.5, -0.0 + 0.5), (2.5, 10.0)],
                   rng=np.random.default_rng(9))
        counts = zone_popularity(st, (0, 200_000_000), zones, dwell_min_s=60.0,
                                 poses=POSES, area=AREA)
        assert counts == {"HOMESTYLE": 0, "CIAO": 0}

    def test_no_devices_all_zeros(self):
        st = DeviceStore(node_count=4)
        counts = zone_popularity(st, (0, 1_000_000), self._station_zones(),
                                 poses=POSES, area=AREA)
        assert set(counts.values()) == {0}


class TestVisitorFlow:
    def test_conservation_and_vendor_split(self):
        st = DeviceStore(node_count=4)
        rng = np.random.default_rng(11)
        for k in range(6):
            add_device(st, k * 120_000_000 + 1_000, 30_000_000, [(2.0, 2.0 + k)],
                       vendor=Vendor.APPLE, model="iPhone", rng=rng)
        for k in range(3):
            add_device(st, k * 240_000_000 + 2_000, 30_000_000, [(9.0, 2.0 + k)],
                       vendor=Vendor.ANDROID, model="Pixel 8", rng=rng)
        flow = visitor_flow(st, (0, 720_000_000), bin_minutes=2.0)
        assert flow.total_new() == 9
        n, _ = count_new_visitors(st, (0, 720_000_000))
        assert flow.total_new() == n
        assert sum(flow.apple) == 6 and sum(flow.android) == 3

    def test_all_apple_fixture_android_zero(self):
        st = DeviceStore(node_count=4)
        rng = np.random.default_rng(12)
        for k in range(4):
            add_device(st, k * 60_000_000 + 1_000, 20_000_000, [(3.0, 3.0 + k)], rng=rng)
        flow = visitor_flow(st, (0, 300_000_000), bin_minutes=1.0)
        assert all(v == 0 for v in flow.android)
        assert sum(flow.apple) == 4

    def test_meal_peaks(self):
        st = DeviceStore(node_count=4)
        rng = np.random.default_rng(13)
        # burst of arrivals in bins 2 and 7 of ten 1-min bins
        arrivals = [125, 130, 135, 140, 430, 435, 440, 445, 450, 40, 300]
        for k, t_s in enumerate(arrivals):
            add_device(st, int(t_s * 1e6) + k, 20_000_000, [(2.0 + k % 5, 5.0)], rng=rng)
        flow = visitor_flow(st, (0, 600_000_000), bin_minutes=1.0)
        order = np.argsort(flow.new_visitors)[::-1]
        assert set(order[:2]) == {2, 7}

    def test_csv_schema(self, tmp_path):
        flow = Report([0, 60_000_000], [2, 1], [1, 1], [1, 0])
        p = tmp_path / "flow.csv"
        flow.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "bin_start,new_visitors,apple,android"
        assert lines[1] == "0,2,1,1"


class TestFrechet:
    def test_identical_paths_zero(self):
        a = np.array([[0, 0], [1, 0], [2, 0]])
        assert frechet_distance(a, a) == 0.0

    def test_parallel_offset(self):
        a = np.array([[0, 0], [1, 0], [2, 0]])
        b = a + [0, 0.5]
        assert frechet_distance(a, b) == pytest.approx(0.5)

    def test_known_worst_point(self):
        # b's middle vertex must couple with an endpoint of a, giving
        # hypot(2.5, 3) for either choice
        a = np.array([[0, 0], [5, 0]])
        b = np.array([[0, 1], [2.5, 3.0], [5, 1]])
        assert frechet_distance(a, b) == pytest.approx(np.hypot(2.5, 3.0))


class TestClusterPeople:
    def test_close_devices_one_person(self):
        rng = np.random.default_rng(21)
        base = rng.uniform(0, 10, size=(30, 2))
        positions = {
            1: base + rng.normal(0, 0.05, (30, 2)),
            2: base + rng.normal(0, 0.05, (30, 2)),
            3: base + np.array([5.0, 0.0]),
        }
        groups = cluster_people(positions)
        assert {1, 2} in groups and {3} in groups
