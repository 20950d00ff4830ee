"""Per-device packet database: insertion, windowed queries, persistence.

One DeviceEntry per grouped device holds its fixed features, advertising
address epochs, the time-ordered packet history and the running lattice
offset estimate.  Persistence is JSON Lines with a version header so a
store round-trips byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .frames import DeviceFact, Vendor

SCHEMA_VERSION = 1


class OutOfOrder(ValueError):
    """Record timestamp does not advance the device's packet history."""


class UnknownDevice(KeyError):
    pass


class AmbiguousAddress(RuntimeError):
    """Same address active under two devices: store corruption signal."""


class IoFailure(OSError):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class NodeFeatures:
    """Physical features measured by one sniffing node; nulls permitted."""

    rss: float | None
    cfo: float | None
    aoa: float | None


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts_us: int
    adv_address: int
    channel: int
    phy: tuple[NodeFeatures, ...]
    facts: DeviceFact

    def any_feature(self) -> bool:
        return any(f.rss is not None or f.cfo is not None or f.aoa is not None for f in self.phy)


@dataclass(frozen=True)
class FixedFeatures:
    """Features that never change for a device; null matches anything."""

    vendor: str | None = None
    model: str | None = None
    color: str | None = None

    def compatible(self, facts: DeviceFact) -> bool:
        # Vendor.OTHER is the unclassifiable default, not an observation,
        # so it constrains nothing on either side.
        if (
            self.vendor is not None
            and self.vendor != Vendor.OTHER.value
            and facts.vendor is not Vendor.OTHER
            and facts.vendor.value != self.vendor
        ):
            return False
        if self.model is not None and facts.model is not None and facts.model != self.model:
            return False
        if self.color is not None and facts.color is not None and facts.color != self.color:
            return False
        return True


@dataclass
class DeviceEntry:
    device_id: int
    fixed: FixedFeatures = field(default_factory=FixedFeatures)
    addresses: dict[int, list[int]] = field(default_factory=dict)  # addr -> [first_seen, last_seen]
    packets: list[PacketRecord] = field(default_factory=list)
    tau_fix: float | None = None
    lattice_phase: float | None = None  # running 625 µs emission-lattice phase
    latest_status: str | None = None
    latest_activity: str | None = None

    @property
    def latest(self) -> PacketRecord | None:
        return self.packets[-1] if self.packets else None

    def learn_fixed(self, facts: DeviceFact) -> None:
        """Fill fixed features from decoded facts; set once, never overwrite.
        An unclassifiable vendor stays unlearned."""
        vendor = self.fixed.vendor
        if vendor is None and facts.vendor is not Vendor.OTHER:
            vendor = facts.vendor.value
        model = self.fixed.model if self.fixed.model is not None else facts.model
        color = self.fixed.color if self.fixed.color is not None else facts.color
        self.fixed = FixedFeatures(vendor, model, color)


class DeviceStore:
    """In-memory device database with an O(1) address index."""

    def __init__(self, node_count: int):
        if node_count < 1:
            raise ValueError("need at least one sniffing node")
        self.node_count = node_count
        self.devices: dict[int, DeviceEntry] = {}
        self.addr_index: dict[int, int] = {}
        # addresses ever claimed by more than one device; grouping decides
        # whether the overlap is live (AmbiguousAddress) or an expired reuse
        self.addr_claims: dict[int, set[int]] = {}
        self._next_id = 0
        self.total_records = 0

    def __len__(self) -> int:
        return len(self.devices)

    def new_device(self, facts: DeviceFact | None = None) -> DeviceEntry:
        dev = DeviceEntry(device_id=self._next_id)
        self._next_id += 1
        if facts is not None:
            dev.learn_fixed(facts)
        self.devices[dev.device_id] = dev
        return dev

    def insert(self, device_id: int, record: PacketRecord) -> None:
        dev = self.devices.get(device_id)
        if dev is None:
            raise UnknownDevice(device_id)
        if len(record.phy) != self.node_count:
            raise ValueError("phy feature list length does not match node count")
        last = dev.latest
        if last is not None and record.ts_us <= last.ts_us:
            raise OutOfOrder(f"timestamp {record.ts_us} does not advance device {device_id}")
        holder = self.addr_index.get(record.adv_address)
        if holder is not None and holder != device_id:
            self.addr_claims.setdefault(record.adv_address, {holder}).add(device_id)
        dev.packets.append(record)
        epoch = dev.addresses.get(record.adv_address)
        if epoch is None:
            dev.addresses[record.adv_address] = [record.ts_us, record.ts_us]
        else:
            epoch[1] = record.ts_us
        self.addr_index[record.adv_address] = device_id
        dev.learn_fixed(record.facts)
        if record.facts.status is not None:
            dev.latest_status = record.facts.status
        if record.facts.activity is not None:
            dev.latest_activity = record.facts.activity
        self.total_records += 1

    def query_window(self, t0: int, t1: int) -> dict[int, list[PacketRecord]]:
        """Records with t0 <= ts < t1, grouped per device, each time-ordered."""
        from bisect import bisect_left

        if t0 > t1:
            raise ValueError("t0 must not exceed t1")
        out: dict[int, list[PacketRecord]] = {}
        for did in sorted(self.devices):
            packets = self.devices[did].packets
            ts = [r.ts_us for r in packets]
            lo, hi = bisect_left(ts, t0), bisect_left(ts, t1)
            if hi > lo:
                out[did] = packets[lo:hi]
        return out

    def time_extent(self) -> tuple[int, int] | None:
        """(min, max) timestamp over all records, or None when empty."""
        lo, hi = None, None
        for dev in self.devices.values():
            if dev.packets:
                a, b = dev.packets[0].ts_us, dev.packets[-1].ts_us
                lo = a if lo is None else min(lo, a)
                hi = b if hi is None else max(hi, b)
        if lo is None:
            return None
        return lo, hi

    def first_seen(self) -> dict[int, int]:
        return {did: d.packets[0].ts_us for did, d in self.devices.items() if d.packets}

    # --- persistence ---

    def persist(self, path: str | Path) -> None:
        try:
            with open(path, "w") as fh:
                fh.write(json.dumps({"schema": SCHEMA_VERSION, "node_count": self.node_count}) + "\n")
                for did in sorted(self.devices):
                    dev = self.devices[did]
                    meta = {
                        "device_id": did,
                        "fixed": {"vendor": dev.fixed.vendor, "model": dev.fixed.model, "color": dev.fixed.color},
                        "tau_fix": dev.tau_fix,
                        "lattice_phase": dev.lattice_phase,
                        "addresses": [
                            [f"{a:012x}", e[0], e[1]] for a, e in sorted(dev.addresses.items())
                        ],
                        "latest_status": dev.latest_status,
                        "latest_activity": dev.latest_activity,
                    }
                    fh.write(json.dumps(meta) + "\n")
                for rec, did in sorted(
                    ((r, did) for did in self.devices for r in self.devices[did].packets),
                    key=lambda t: (t[0].ts_us, t[1]),
                ):
                    fh.write(json.dumps(record_to_json(rec, did)) + "\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "DeviceStore":
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        if not lines:
            raise SchemaMismatch("empty store file")
        header = json.loads(lines[0])
        if header.get("schema") != SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported store schema: {header.get('schema')!r}")
        store = cls(node_count=int(header["node_count"]))
        max_id = -1
        for line in lines[1:]:
            obj = json.loads(line)
            if "ts_us" in obj:
                rec, did = record_from_json(obj)
                store.devices[did].packets.append(rec)
                store.addr_index[rec.adv_address] = did
                store.total_records += 1
            else:
                did = int(obj["device_id"])
                dev = DeviceEntry(
                    device_id=did,
                    fixed=FixedFeatures(**obj["fixed"]),
                    tau_fix=obj["tau_fix"],
                    lattice_phase=obj.get("lattice_phase"),
                    latest_status=obj["latest_status"],
                    latest_activity=obj["latest_activity"],
                )
                dev.addresses = {int(a, 16): [int(e0), int(e1)] for a, e0, e1 in obj["addresses"]}
                store.devices[did] = dev
                max_id = max(max_id, did)
        store._next_id = max_id + 1
        return store


def record_to_json(rec: PacketRecord, device_id: int) -> dict:
    """External JSONL record schema; nulls explicit."""
    return {
        "ts_us": rec.ts_us,
        "device_id": device_id,
        "addr": f"{rec.adv_address:012x}",
        "channel": rec.channel,
        "phy": [
            {"node": i, "rss": f.rss, "cfo": f.cfo, "aoa": f.aoa} for i, f in enumerate(rec.phy)
        ],
        "facts": {
            "vendor": rec.facts.vendor.value,
            "model": rec.facts.model,
            "status": rec.facts.status,
            "activity": rec.facts.activity,
            "color": rec.facts.color,
        },
    }


def record_from_json(obj: dict) -> tuple[PacketRecord, int]:
    phy = tuple(
        NodeFeatures(rss=p["rss"], cfo=p["cfo"], aoa=p["aoa"])
        for p in sorted(obj["phy"], key=lambda p: p["node"])
    )
    facts = DeviceFact(
        vendor=Vendor(obj["facts"]["vendor"]),
        model=obj["facts"]["model"],
        status=obj["facts"]["status"],
        activity=obj["facts"]["activity"],
        color=obj["facts"]["color"],
    )
    rec = PacketRecord(
        ts_us=int(obj["ts_us"]),
        adv_address=int(obj["addr"], 16),
        channel=int(obj["channel"]),
        phy=phy,
        facts=facts,
    )
    return rec, int(obj["device_id"])


def write_packets_jsonl(path: str | Path, records: list[PacketRecord], node_count: int) -> None:
    """Ungrouped packet stream (device_id -1): the dsp->grouping interchange."""
    try:
        with open(path, "w") as fh:
            fh.write(json.dumps({"schema": SCHEMA_VERSION, "node_count": node_count}) + "\n")
            for rec in records:
                fh.write(json.dumps(record_to_json(rec, -1)) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_packets_jsonl(path: str | Path) -> tuple[list[PacketRecord], int]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if not lines:
        raise SchemaMismatch("empty packet file")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported packet schema: {header.get('schema')!r}")
    records = [record_from_json(json.loads(line))[0] for line in lines[1:]]
    return records, int(header["node_count"])
