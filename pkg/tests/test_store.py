from __future__ import annotations

import numpy as np
import pytest

from bletrack.frames import DeviceFact, Vendor
from bletrack.store import (
    DeviceStore,
    FixedFeatures,
    NodeFeatures,
    OutOfOrder,
    PacketRecord,
    SchemaMismatch,
    UnknownDevice,
    read_packets_jsonl,
    write_packets_jsonl,
)


def mk_record(ts, addr=0xABCDEF, vendor=Vendor.APPLE, n_nodes=2, rss=-50.0, status=None):
    phy = tuple(NodeFeatures(rss=rss, cfo=1000.0, aoa=10.0) for _ in range(n_nodes))
    return PacketRecord(ts, addr, 37, phy, DeviceFact(vendor=vendor, status=status))


class TestInsertQuery:
    def test_insert_then_query_returns_last(self):
        st = DeviceStore(node_count=2)
        dev = st.new_device()
        st.insert(dev.device_id, mk_record(100))
        st.insert(dev.device_id, mk_record(200))
        recs = st.query_window(0, 1000)[dev.device_id]
        assert recs[-1].ts_us == 200

    def test_all_null_status_keeps_latest(self):
        st = DeviceStore(node_count=2)
        dev = st.new_device()
        st.insert(dev.device_id, mk_record(1, status="Screen On"))
        st.insert(dev.device_id, mk_record(2, status=None))
        assert dev.latest_status == "Screen On"

    def test_out_of_order_rejected(self):
        st = DeviceStore(node_count=2)
        dev = st.new_device()
        st.insert(dev.device_id, mk_record(100))
        with pytest.raises(OutOfOrder):
            st.insert(dev.device_id, mk_record(100))

    def test_unknown_device(self):
        st = DeviceStore(node_count=2)
        with pytest.raises(UnknownDevice):
            st.insert(99, mk_record(1))

    def test_window_partition(self):
        rng = np.random.default_rng(1)
        st = DeviceStore(node_count=2)
        d0, d1 = st.new_device(), st.new_device()
        ts0 = np.sort(rng.choice(np.arange(1, 100000), size=300, replace=False))
        for i, t in enumerate(ts0):
            st.insert((d0 if i % 2 else d1).device_id, mk_record(int(t), addr=0x100 + i % 2))
        full = st.query_window(0, 200000)
        assert sum(len(v) for v in full.values()) == 300
        mid = 50000
        left = st.query_window(0, mid)
        right = st.query_window(mid, 200000)
        assert sum(len(v) for v in left.values()) + sum(len(v) for v in right.values()) == 300
        assert st.query_window(5, 5) == {}

    def test_counting_oracle_over_windows(self):
        # inserts at known times: any window count equals the planted count
        st = DeviceStore(node_count=1)
        dev = st.new_device()
        times = list(range(0, 60_000_000, 60_000))  # one per 60 ms for 1 min
        for t in times:
            st.insert(dev.device_id, mk_record(t, n_nodes=1))
        t0, t1 = 10_000_000, 11_000_000
        expected = sum(1 for t in times if t0 <= t < t1)
        got = sum(len(v) for v in st.query_window(t0, t1).values())
        assert got == expected


class TestPersistence:
    def _populated(self, n_dev=10, n_rec=40):
        rng = np.random.default_rng(7)
        st = DeviceStore(node_count=2)
        for i in range(n_dev):
            dev = st.new_device(DeviceFact(vendor=Vendor.ANDROID, model="Pixel 8"))
            dev.tau_fix = float(rng.normal(0, 3))
            t = 0
            for _ in range(n_rec):
                t += int(rng.integers(1, 10000))
                st.insert(dev.device_id, mk_record(t, addr=0x1000 + i, vendor=Vendor.ANDROID))
        return st

    def test_empty_round_trip(self, tmp_path):
        st = DeviceStore(node_count=3)
        p = tmp_path / "s.jsonl"
        st.persist(p)
        st2 = DeviceStore.load(p)
        assert len(st2) == 0 and st2.node_count == 3

    def test_round_trip_byte_identical(self, tmp_path):
        st = self._populated()
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        st.persist(p1)
        st2 = DeviceStore.load(p1)
        st2.persist(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert st2.total_records == st.total_records
        for did, dev in st.devices.items():
            assert st2.devices[did].tau_fix == dev.tau_fix
            assert st2.devices[did].packets == dev.packets
            assert st2.devices[did].addresses == dev.addresses

    def test_corrupt_version_header(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"schema": 999, "node_count": 2}\n')
        with pytest.raises(SchemaMismatch):
            DeviceStore.load(p)

    def test_packet_jsonl_round_trip(self, tmp_path):
        recs = [mk_record(t) for t in (5, 10, 20)]
        p = tmp_path / "pkts.jsonl"
        write_packets_jsonl(p, recs, node_count=2)
        got, n = read_packets_jsonl(p)
        assert n == 2 and got == recs


class TestFixedFeatures:
    def test_null_matches_anything(self):
        fx = FixedFeatures()
        assert fx.compatible(DeviceFact(vendor=Vendor.SONY, model="Sony WH-1000XM5"))

    def test_vendor_mismatch_excludes(self):
        fx = FixedFeatures(vendor="Apple")
        assert not fx.compatible(DeviceFact(vendor=Vendor.ANDROID))

    def test_model_null_on_packet_matches(self):
        fx = FixedFeatures(vendor="Apple", model="iPhone")
        assert fx.compatible(DeviceFact(vendor=Vendor.APPLE, model=None))
        assert not fx.compatible(DeviceFact(vendor=Vendor.APPLE, model="MacBook Pro"))
