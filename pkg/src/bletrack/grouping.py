"""Packet grouping: assign each packet to a device despite address rotation.

Three sequential steps per packet: exact advertising-address recall within
its validity epoch, fixed-feature candidate filtering, and a weighted
dissimilarity score over the 625 µs time residual and the AoA/CFO/RSS
deltas against each candidate's latest packet.  Lowest score wins and is
accepted below a cutoff; otherwise a new device is created.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .store import AmbiguousAddress, DeviceEntry, DeviceStore, PacketRecord

SLOT_US = 625


class NoHistory(RuntimeError):
    """Candidate device has an empty packet list: store corruption signal."""


@dataclass(frozen=True)
class GroupingParams:
    w_ts: float = 0.5
    w_aoa: float = 0.2
    w_cfo: float = 0.2
    w_rss: float = 0.1
    ts_thre_us: float = 10.0
    aoa_thre_deg: float = 15.0
    cfo_thre_hz: float = 2000.0
    rss_thre_db: float = 10.0
    s_thre: float = 1.0
    addr_expiry_us: int = 20 * 60 * 1_000_000  # rotation ~15 min plus margin
    tau_ema_alpha: float = 0.1
    max_time_gap_us: int = 10_000_000  # clock-drift guard: skip time term beyond
    # emission-lattice compatibility gate: a candidate whose 625 µs lattice
    # phase differs from the packet's by more than this cannot be the same
    # transmitter (the timing law is physical, not a soft feature)
    lattice_tol_us: float = 9.0

    def __post_init__(self) -> None:
        weights = (self.w_ts, self.w_aoa, self.w_cfo, self.w_rss)
        if any(w < 0 for w in weights):
            raise ValueError("weights must be nonnegative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        for thr in (self.ts_thre_us, self.aoa_thre_deg, self.cfo_thre_hz, self.rss_thre_db):
            if thr <= 0:
                raise ValueError("thresholds must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "GroupingParams":
        """Flat key=value text; unknown keys rejected."""
        kwargs: dict[str, float | int] = {}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"unknown grouping parameter {key!r}")
            typ = cls.__dataclass_fields__[key].type
            kwargs[key] = int(value) if typ == "int" else float(value)
        return cls(**kwargs)

    def time_only(self) -> "GroupingParams":
        return replace(self, w_ts=1.0, w_aoa=0.0, w_cfo=0.0, w_rss=0.0)


def time_residual(t_us: int, t_prev_us: int) -> int:
    """Nearest-multiple-of-625µs residual of the gap |t - t_prev|,
    in [-312, +312] for integer µs timestamps."""
    gap = abs(int(t_us) - int(t_prev_us))
    q = (gap + SLOT_US // 2) // SLOT_US
    return gap - q * SLOT_US


def circular_delta(phase_a: float, phase_b: float) -> float:
    """Signed slot-circular difference a - b in (-312.5, 312.5]."""
    return (phase_a - phase_b + SLOT_US / 2) % SLOT_US - SLOT_US / 2


def lattice_compatible(dev: DeviceEntry, packet: PacketRecord, params: GroupingParams) -> bool:
    """Whether the packet's lattice phase can belong to the device."""
    if dev.lattice_phase is None or not np.isfinite(params.lattice_tol_us):
        return True
    return abs(circular_delta(packet.ts_us % SLOT_US, dev.lattice_phase)) <= params.lattice_tol_us


def match_address(packet: PacketRecord, store: DeviceStore, params: GroupingParams) -> int | None:
    """Step I: exact address recall within the validity epoch.

    An address claimed by several devices (possible after a microsecond
    collision forced a packet elsewhere) resolves to the most recently
    active epoch; an exact tie is unresolvable store corruption.
    """
    claimants = store.addr_claims.get(packet.adv_address)
    if claimants:
        live = sorted(
            (tuple(store.devices[did].addresses[packet.adv_address]), did)
            for did in claimants
            if packet.ts_us - store.devices[did].addresses[packet.adv_address][1] <= params.addr_expiry_us
        )
        if not live:
            return None
        if len(live) > 1 and live[-1][0][::-1] == live[-2][0][::-1]:
            raise AmbiguousAddress(
                f"address {packet.adv_address:012x} equally live under devices "
                f"{live[-1][1]} and {live[-2][1]}"
            )
        return max(live, key=lambda t: (t[0][1], t[0][0]))[1]
    did = store.addr_index.get(packet.adv_address)
    if did is None:
        return None
    epoch = store.devices[did].addresses.get(packet.adv_address)
    if epoch is None or packet.ts_us - epoch[1] > params.addr_expiry_us:
        return None
    return did


def filter_fixed(packet: PacketRecord, store: DeviceStore) -> list[DeviceEntry]:
    """Step II: keep devices whose fixed features are compatible with the
    packet's decoded facts (null matches anything)."""
    return [dev for dev in store.devices.values() if dev.fixed.compatible(packet.facts)]


def score_candidates(
    packet: PacketRecord,
    candidates: list[DeviceEntry],
    params: GroupingParams,
    store: DeviceStore,
) -> list[tuple[int, float]]:
    """Step III: weighted dissimilarity against each candidate's latest
    packet; lower is more similar.

    Feature deltas are absolute values averaged over the nodes where both
    packets carry the feature; terms with no usable nodes are dropped and
    the remaining weights renormalized.
    """
    scores: list[tuple[int, float]] = []
    for dev in candidates:
        prev = dev.latest
        if prev is None:
            raise NoHistory(f"device {dev.device_id} has no packets")
        if prev.ts_us >= packet.ts_us:
            # one radio cannot emit twice in the same microsecond
            scores.append((dev.device_id, float("inf")))
            continue
        total = 0.0
        wsum = 0.0

        gap = abs(packet.ts_us - prev.ts_us)
        if params.w_ts > 0 and gap <= params.max_time_gap_us:
            residual = time_residual(packet.ts_us, prev.ts_us)
            tau = dev.tau_fix if dev.tau_fix is not None else 0.0
            total += params.w_ts * abs(residual - tau) / params.ts_thre_us
            wsum += params.w_ts

        for weight, attr, thre in (
            (params.w_aoa, "aoa", params.aoa_thre_deg),
            (params.w_cfo, "cfo", params.cfo_thre_hz),
            (params.w_rss, "rss", params.rss_thre_db),
        ):
            if weight <= 0:
                continue
            deltas = [
                abs(getattr(a, attr) - getattr(b, attr))
                for a, b in zip(packet.phy, prev.phy)
                if getattr(a, attr) is not None and getattr(b, attr) is not None
            ]
            if deltas:
                total += weight * (sum(deltas) / len(deltas)) / thre
                wsum += weight
        score = total / wsum if wsum > 0 else float("inf")
        scores.append((dev.device_id, score))
    return scores


def ingest(packet: PacketRecord, store: DeviceStore, params: GroupingParams) -> tuple[int, bool]:
    """Run Steps I-III for one packet and insert it; returns (device id,
    created flag).  Packets must arrive in timestamp order."""
    if not packet.any_feature():
        raise ValueError("packet carries no physical features")

    did = match_address(packet, store, params)
    if did is not None:
        latest = store.devices[did].latest
        if latest is None or latest.ts_us < packet.ts_us:
            _insert_and_update(store, did, packet, params)
            return did, False
        # same address but a non-advancing timestamp: one radio cannot emit
        # twice in a microsecond, so fall through to feature matching

    candidates = [
        d for d in filter_fixed(packet, store) if lattice_compatible(d, packet, params)
    ]
    if candidates:
        scores = score_candidates(packet, candidates, params, store)
        best_id, best_score = min(scores, key=lambda t: (t[1], t[0]))
        if best_score <= params.s_thre:
            _insert_and_update(store, best_id, packet, params)
            return best_id, False

    dev = store.new_device(packet.facts)
    store.insert(dev.device_id, packet)
    return dev.device_id, True


def _insert_and_update(store: DeviceStore, device_id: int, packet: PacketRecord, params: GroupingParams) -> None:
    dev = store.devices[device_id]
    prev = dev.latest
    store.insert(device_id, packet)
    phase = packet.ts_us % SLOT_US
    if dev.lattice_phase is None:
        dev.lattice_phase = float(phase)
    else:
        a = params.tau_ema_alpha
        dev.lattice_phase = (dev.lattice_phase + a * circular_delta(phase, dev.lattice_phase)) % SLOT_US
    if prev is None:
        return
    if abs(packet.ts_us - prev.ts_us) > params.max_time_gap_us:
        return
    residual = float(time_residual(packet.ts_us, prev.ts_us))
    if dev.tau_fix is None:
        dev.tau_fix = residual  # second packet pins the initial estimate
    else:
        a = params.tau_ema_alpha
        dev.tau_fix = (1.0 - a) * dev.tau_fix + a * residual


def ingest_stream(
    records: list[PacketRecord], store: DeviceStore, params: GroupingParams
) -> list[tuple[int, bool]]:
    """Ingest a time-sorted packet stream; ties broken by address for
    deterministic replay."""
    out = []
    for rec in sorted(records, key=lambda r: (r.ts_us, r.adv_address)):
        out.append(ingest(rec, store, params))
    return out
