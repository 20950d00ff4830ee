"""Ground-truth scenario generator.

Devices emit advertisement packets on a 625 µs lattice at their own fixed
lattice phase plus a small one-sided integer jitter, rotate each adv
type's address on its own schedule, move along waypoint trajectories, and
carry vendor-faithful payloads.  Per-node features are produced either
directly (fast feature path) or as multi-antenna baseband I/Q (signal
path) so the whole pipeline can be tested against known labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import dsp
from .frames import AcmMessage, AdvFrame, DeviceFact, Vendor, android_frame, apple_frame, decode_facts
from .locate import NodePose, world_bearing
from .store import NodeFeatures, PacketRecord

SLOT_US = 625
ADV_CHANNELS = (37, 38, 39)
APPLE_EPSILON_US = 6
ANDROID_EPSILON_US = 9


class InvalidScenario(ValueError):
    pass


@dataclass(frozen=True)
class NoiseProfile:
    pathloss_exp: float = 2.0
    shadowing_db: float = 2.0
    tx_power_dbm: float = -40.0  # received power at 1 m
    detect_radius_m: float = 20.0
    aoa_sigma_base: float = 2.2
    aoa_sigma_per_m: float = 0.26
    aoa_sigma_per_mps: float = 0.5
    cfo_noise_hz: float = 150.0
    rss_noise_db: float = 0.5


# per scenario class, ordered so localization error follows apartment < lab < mall
NOISE_PROFILES = {
    "apartment": NoiseProfile(pathloss_exp=2.0, shadowing_db=2.0, aoa_sigma_base=2.2, aoa_sigma_per_m=0.26),
    "lab": NoiseProfile(pathloss_exp=2.5, shadowing_db=3.0, aoa_sigma_base=2.5, aoa_sigma_per_m=0.28),
    "mall": NoiseProfile(pathloss_exp=3.0, shadowing_db=4.0, aoa_sigma_base=2.8, aoa_sigma_per_m=0.30),
    # open hall: line of sight to a wall-mounted node ring
    "hall": NoiseProfile(pathloss_exp=2.2, shadowing_db=2.0, aoa_sigma_base=2.2, aoa_sigma_per_m=0.12),
}


@dataclass(frozen=True)
class DeviceSpec:
    model: str
    states: tuple[tuple[float, float, str], ...] = ((0.0, float("inf"), "idle"),)
    waypoints: tuple[tuple[float, float], ...] = ((1.0, 1.0),)
    speed_mps: float = 0.0
    activity: str | None = None
    rotation_period_s: float = 900.0
    tau_fix_us: int | None = None  # drawn when None
    cfo_hz: float | None = None
    rate_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.model not in MODEL_PROFILES:
            raise InvalidScenario(f"unknown device model {self.model!r}")
        if self.speed_mps < 0:
            raise InvalidScenario("speed must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    name: str
    area: tuple[float, float]
    nodes: tuple[NodePose, ...]
    devices: tuple[DeviceSpec, ...]
    duration_s: float
    seed: int
    noise: NoiseProfile = field(default_factory=NoiseProfile)

    def __post_init__(self) -> None:
        w, h = self.area
        if w <= 0 or h <= 0:
            raise InvalidScenario("area must be positive")
        for node in self.nodes:
            x, y = node.position
            if not (0 <= x <= w and 0 <= y <= h):
                raise InvalidScenario("node outside area")
        for dev in self.devices:
            for x, y in dev.waypoints:
                if not (0 <= x <= w and 0 <= y <= h):
                    raise InvalidScenario("device waypoint outside area")
        if self.duration_s <= 0:
            raise InvalidScenario("duration must be positive")


# --- vendor/model behavior profiles ---
# Rates are packets per minute per adv type and device state.

MODEL_PROFILES: dict[str, dict] = {
    "iPhone": {
        "vendor": Vendor.APPLE,
        "epsilon_us": APPLE_EPSILON_US,
        "rates": {
            "acm:10": {"active": 170.0, "idle": 150.0, "off": 0.0},
            "acm:0c": {"active": 90.0, "idle": 80.0, "off": 0.0},
            "acm:0f": {"active": 70.0, "idle": 60.0, "off": 0.0},
            "acm:12": {"active": 0.0, "idle": 0.0, "off": 50.0},
        },
    },
    "AirPods Pro": {
        "vendor": Vendor.APPLE,
        "epsilon_us": APPLE_EPSILON_US,
        "rates": {"acm:07": {"active": 330.0, "idle": 290.0, "off": 0.0}},
    },
    "MacBook Pro": {
        "vendor": Vendor.APPLE,
        "epsilon_us": APPLE_EPSILON_US,
        "rates": {
            "acm:09": {"active": 190.0, "idle": 160.0, "off": 0.0},
            "acm:0c": {"active": 140.0, "idle": 130.0, "off": 0.0},
        },
    },
    "Apple Watch": {
        "vendor": Vendor.APPLE,
        "epsilon_us": APPLE_EPSILON_US,
        "rates": {"acm:0b": {"active": 330.0, "idle": 290.0, "off": 0.0}},
    },
    "Samsung Galaxy S23": {
        "vendor": Vendor.ANDROID,
        "epsilon_us": ANDROID_EPSILON_US,
        "company_id": 0x0075,
        "model_code": b"\x01\x01",
        "rates": {
            "mfr": {"active": 150.0, "idle": 70.0, "off": 0.0},
            "uuid": {"active": 130.0, "idle": 60.0, "off": 0.0},
        },
    },
    "Xiaomi 11 Lite": {
        "vendor": Vendor.ANDROID,
        "epsilon_us": ANDROID_EPSILON_US,
        "company_id": 0x038F,
        "model_code": b"\x02\x01",
        "rates": {
            "mfr": {"active": 150.0, "idle": 70.0, "off": 0.0},
            "uuid": {"active": 130.0, "idle": 60.0, "off": 0.0},
        },
    },
    "Pixel 8": {
        "vendor": Vendor.ANDROID,
        "epsilon_us": ANDROID_EPSILON_US,
        "company_id": 0x00E0,
        "model_code": b"\x02\x02",
        "rates": {
            "mfr": {"active": 160.0, "idle": 75.0, "off": 0.0},
            "uuid": {"active": 120.0, "idle": 55.0, "off": 0.0},
        },
    },
    "Sony WH-1000XM5": {
        "vendor": Vendor.SONY,
        "epsilon_us": ANDROID_EPSILON_US,
        "company_id": 0x012D,
        "model_code": b"\x03\x01",
        "rates": {"mfr": {"active": 207.0, "idle": 207.0, "off": 0.0}},
    },
    "Surface Laptop": {
        "vendor": Vendor.MICROSOFT,
        "epsilon_us": ANDROID_EPSILON_US,
        "company_id": 0x0006,
        "model_code": b"\x04\x01",
        "rates": {"mfr": {"active": 846.0, "idle": 846.0, "off": 0.0}},
    },
}

_ACTIVITY_CODES = {
    "Answered Phone Call": {0x0F: b"\x0f", 0x10: b"\x13"},
    "Watching Video": {0x0F: b"\x20", 0x10: b"\x11"},
    "Listening to Music": {0x0F: b"\x21", 0x10: b"\x12"},
}

_MODEL_ACM_CONTENT = {
    "iPhone": (0x0F, b"\x02"),
    "AirPods Pro": (0x07, b"\x20\x0e"),
    "MacBook Pro": (0x09, b"\x01"),
    "Apple Watch": (0x0B, b"\x01"),
}


def _build_acms(model: str, acm_type: int, state: str, activity: str | None) -> list[AcmMessage]:
    """Continuity messages one emission of this adv type carries."""
    msgs: list[AcmMessage] = []
    model_map = _MODEL_ACM_CONTENT.get(model)
    if model_map is not None and model_map[0] == acm_type:
        msgs.append(AcmMessage(acm_type, model_map[1]))
    if acm_type == 0x07 and state == "active":
        msgs.append(AcmMessage(0x07, b"\x2b"))
    if acm_type == 0x10:
        msgs.append(AcmMessage(0x10, b"\x01" if state == "active" else b"\x02"))
    if state == "active" and activity is not None:
        code = _ACTIVITY_CODES.get(activity, {}).get(acm_type)
        if code is not None:
            msgs.append(AcmMessage(acm_type, code))
    if not msgs:
        msgs.append(AcmMessage(acm_type, b"\x00"))  # opaque content, vendor-only fact
    return msgs


def build_frame(model: str, type_key: str, address: int, channel: int, state: str, activity: str | None) -> AdvFrame:
    prof = MODEL_PROFILES[model]
    if type_key.startswith("acm:"):
        acm_type = int(type_key.split(":")[1], 16)
        return apple_frame(address, channel, _build_acms(model, acm_type, state, activity))
    if type_key == "mfr":
        return android_frame(address, channel, company_id=prof["company_id"], manufacturer=prof["model_code"])
    if type_key == "uuid":
        return android_frame(address, channel, service_uuid=0xFE2C, service_data=b"\x00")
    raise InvalidScenario(f"unknown adv type key {type_key!r}")


@dataclass
class DeviceTruth:
    device_id: int
    model: str
    vendor: Vendor
    tau_fix_us: int
    epsilon_bound_us: int
    cfo_hz: float
    pair_tau_fix_us: float = 0.0  # fixed offset in the pair-residual domain


@dataclass
class GroundTruth:
    """One entry per emitted packet, aligned with the generated stream."""

    device_ids: np.ndarray
    ts_us: np.ndarray
    addresses: np.ndarray
    positions: np.ndarray  # (K, 2)
    bearings: np.ndarray  # (K, N) true world bearing, nan when out of range
    distances: np.ndarray  # (K, N)
    speeds: np.ndarray  # (K,)
    type_keys: list[str]
    states: list[str]
    devices: list[DeviceTruth]

    def join_index(self) -> dict[tuple[int, int], int]:
        """(ts_us, address) -> packet index; the label join is total."""
        return {
            (int(t), int(a)): i
            for i, (t, a) in enumerate(zip(self.ts_us, self.addresses))
        }

    def true_device_of(self) -> dict[tuple[int, int], int]:
        return {
            (int(t), int(a)): int(d)
            for t, a, d in zip(self.ts_us, self.addresses, self.device_ids)
        }


def _state_at(states: tuple[tuple[float, float, str], ...], t_s: float) -> str:
    for t0, t1, s in states:
        if t0 <= t_s < t1:
            return s
    return "off"


def _emission_slots(rng: np.random.Generator, rate_per_min: float, slot0: int, slot1: int) -> np.ndarray:
    """Slot indices of a thinned lattice renewal process on [slot0, slot1)."""
    n_slots = slot1 - slot0
    if n_slots <= 0 or rate_per_min <= 0:
        return np.empty(0, dtype=np.int64)
    p = min(1.0, rate_per_min / (60e6 / SLOT_US))
    expect = n_slots * p
    margin = int(expect + 6 * np.sqrt(expect + 1) + 8)
    gaps = rng.geometric(p, size=margin)
    slots = slot0 - 1 + np.cumsum(gaps)
    return slots[slots < slot1]


def _positions_at(spec: DeviceSpec, ts_us: np.ndarray) -> np.ndarray:
    pts = np.asarray(spec.waypoints, dtype=float)
    if len(pts) == 1 or spec.speed_mps == 0:
        return np.repeat(pts[:1], len(ts_us), axis=0)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    t_s = ts_us / 1e6
    dist = np.minimum(t_s * spec.speed_mps, cum[-1])
    x = np.interp(dist, cum, pts[:, 0])
    y = np.interp(dist, cum, pts[:, 1])
    return np.stack([x, y], axis=1)


def propagate(
    positions: np.ndarray,
    speeds: np.ndarray,
    pose: NodePose,
    noise: NoiseProfile,
    device_cfo: float,
    node_cfo_offset: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized channel model for one node.

    Returns (rss, cfo, aoa, bearing, distance) arrays; out-of-range
    entries are nan.  AoA is the array-relative angle the two-element
    array would report (front/back mirrored), with noise growing with
    distance and device speed.
    """
    delta = positions - np.asarray(pose.position)
    dist = np.hypot(delta[:, 0], delta[:, 1])
    dist = np.maximum(dist, 0.1)
    bearing = np.rad2deg(np.arctan2(delta[:, 0], delta[:, 1])) % 360.0

    rss = (
        noise.tx_power_dbm
        - 10.0 * noise.pathloss_exp * np.log10(dist)
        + rng.normal(0.0, noise.shadowing_db, dist.size)
        + rng.normal(0.0, noise.rss_noise_db, dist.size)
    )

    rel = (bearing - pose.boresight_deg + 180.0) % 360.0 - 180.0
    mirrored = np.where(rel > 90.0, 180.0 - rel, np.where(rel < -90.0, -180.0 - rel, rel))
    sigma = noise.aoa_sigma_base + noise.aoa_sigma_per_m * dist + noise.aoa_sigma_per_mps * speeds
    aoa = np.clip(mirrored + rng.normal(0.0, 1.0, dist.size) * sigma, -90.0, 90.0)

    cfo = device_cfo - node_cfo_offset + rng.normal(0.0, noise.cfo_noise_hz, dist.size)

    in_range = dist <= noise.detect_radius_m
    nanify = lambda arr: np.where(in_range, arr, np.nan)
    return nanify(rss), nanify(cfo), nanify(aoa), nanify(bearing), nanify(dist)


def generate(scenario: Scenario) -> tuple[list[PacketRecord], GroundTruth]:
    """Emit the full packet stream with one ground-truth entry per packet."""
    root = np.random.SeedSequence(scenario.seed)
    seeds = root.spawn(len(scenario.devices) + 2)
    scen_rng = np.random.default_rng(seeds[0])
    chan_rng = np.random.default_rng(seeds[1])

    apple_cfo_mean = float(scen_rng.uniform(-30e3, 30e3))
    node_cfo_offsets = scen_rng.uniform(-20e3, 20e3, size=len(scenario.nodes))
    duration_us = int(scenario.duration_s * 1e6)
    used_addresses: set[int] = set()

    all_parts: list[tuple[np.ndarray, np.ndarray, list[str], list[str], np.ndarray, np.ndarray, np.ndarray, int]] = []
    device_truths: list[DeviceTruth] = []

    for dev_idx, spec in enumerate(scenario.devices):
        rng = np.random.default_rng(seeds[dev_idx + 2])
        prof = MODEL_PROFILES[spec.model]
        tau = spec.tau_fix_us if spec.tau_fix_us is not None else int(rng.integers(0, SLOT_US))
        eps_bound = prof["epsilon_us"]
        if spec.cfo_hz is not None:
            cfo = spec.cfo_hz
        elif prof["vendor"] is Vendor.APPLE:
            cfo = float(apple_cfo_mean + rng.normal(0, 5e3))
        else:
            cfo = float(rng.uniform(-50e3, 50e3))
        device_truths.append(
            DeviceTruth(dev_idx, spec.model, prof["vendor"], tau, eps_bound, cfo)
        )

        ts_list: list[np.ndarray] = []
        keys: list[str] = []
        states: list[str] = []
        addr_list: list[np.ndarray] = []
        for type_key, state_rates in prof["rates"].items():
            # address epochs for this adv type
            epochs = [0.0]
            while epochs[-1] < scenario.duration_s:
                epochs.append(epochs[-1] + spec.rotation_period_s * float(rng.uniform(0.9, 1.1)))
            epoch_addrs = []
            for _ in range(len(epochs)):
                addr = int(rng.integers(0, 1 << 48))
                while addr in used_addresses:
                    addr = int(rng.integers(0, 1 << 48))
                used_addresses.add(addr)
                epoch_addrs.append(addr)
            epoch_addrs = np.array(epoch_addrs, dtype=np.uint64)
            epoch_bounds_us = np.array(epochs[1:], dtype=np.int64) * 1_000_000

            for t0_s, t1_s, state in spec.states:
                seg0 = max(0.0, t0_s)
                seg1 = min(scenario.duration_s, t1_s)
                if seg1 <= seg0:
                    continue
                rate = state_rates.get(state, 0.0) * spec.rate_scale
                slot0 = int(np.ceil(seg0 * 1e6 / SLOT_US))
                slot1 = int(seg1 * 1e6 / SLOT_US)
                slots = _emission_slots(rng, rate, slot0, slot1)
                if slots.size == 0:
                    continue
                eps = rng.integers(0, eps_bound + 1, size=slots.size)
                ts = slots * SLOT_US + tau + eps
                ts = ts[ts < duration_us]
                ts_list.append(ts)
                keys.extend([type_key] * ts.size)
                states.extend([state] * ts.size)
                addr_list.append(epoch_addrs[np.searchsorted(epoch_bounds_us, ts, side="right")])

        if not ts_list:
            continue
        ts_all = np.concatenate(ts_list)
        addrs_all = np.concatenate(addr_list)
        order = np.argsort(ts_all, kind="stable")
        ts_all = ts_all[order]
        addrs_all = addrs_all[order]
        keys = [keys[i] for i in order]
        states = [states[i] for i in order]
        # same-device same-µs collisions would break per-device ordering
        uniq = np.ones(ts_all.size, dtype=bool)
        uniq[1:] = np.diff(ts_all) > 0
        ts_all, addrs_all = ts_all[uniq], addrs_all[uniq]
        keys = [k for k, u in zip(keys, uniq) if u]
        states = [s for s, u in zip(states, uniq) if u]

        positions = _positions_at(spec, ts_all)
        speeds = np.full(ts_all.size, spec.speed_mps if len(spec.waypoints) > 1 else 0.0)
        all_parts.append((ts_all, addrs_all, keys, states, positions, speeds, None, dev_idx))

    # propagate per device per node, then merge and sort globally
    records: list[PacketRecord] = []
    gt_rows: list[tuple] = []
    n_nodes = len(scenario.nodes)
    for ts_all, addrs_all, keys, states, positions, speeds, _, dev_idx in all_parts:
        spec = scenario.devices[dev_idx]
        truth = device_truths[dev_idx]
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(scenario.seed, dev_idx, 0xFEED)))
        per_node = [
            propagate(positions, speeds, pose, scenario.noise, truth.cfo_hz, node_cfo_offsets[i], rng)
            for i, pose in enumerate(scenario.nodes)
        ]
        channels = chan_rng.choice(ADV_CHANNELS, size=ts_all.size)
        facts_cache: dict[tuple[str, str], DeviceFact] = {}
        for i in range(ts_all.size):
            key, state = keys[i], states[i]
            fact = facts_cache.get((key, state))
            if fact is None:
                frame = build_frame(spec.model, key, int(addrs_all[i]), int(channels[i]), state, spec.activity)
                fact = decode_facts(frame)
                facts_cache[(key, state)] = fact
            phy = tuple(
                NodeFeatures(
                    rss=None if np.isnan(per_node[n][0][i]) else float(per_node[n][0][i]),
                    cfo=None if np.isnan(per_node[n][1][i]) else float(per_node[n][1][i]),
                    aoa=None if np.isnan(per_node[n][2][i]) else float(per_node[n][2][i]),
                )
                for n in range(n_nodes)
            )
            records.append(PacketRecord(int(ts_all[i]), int(addrs_all[i]), int(channels[i]), phy, fact))
            gt_rows.append(
                (
                    dev_idx,
                    int(ts_all[i]),
                    int(addrs_all[i]),
                    positions[i],
                    np.array([per_node[n][3][i] for n in range(n_nodes)]),
                    np.array([per_node[n][4][i] for n in range(n_nodes)]),
                    float(speeds[i]),
                    key,
                    state,
                )
            )

    order = sorted(range(len(records)), key=lambda i: (records[i].ts_us, records[i].adv_address))
    records = [records[i] for i in order]
    gt_rows = [gt_rows[i] for i in order]
    truth = GroundTruth(
        device_ids=np.array([r[0] for r in gt_rows], dtype=np.int64),
        ts_us=np.array([r[1] for r in gt_rows], dtype=np.int64),
        addresses=np.array([r[2] for r in gt_rows], dtype=np.uint64),
        positions=np.array([r[3] for r in gt_rows]) if gt_rows else np.zeros((0, 2)),
        bearings=np.array([r[4] for r in gt_rows]) if gt_rows else np.zeros((0, n_nodes)),
        distances=np.array([r[5] for r in gt_rows]) if gt_rows else np.zeros((0, n_nodes)),
        speeds=np.array([r[6] for r in gt_rows]),
        type_keys=[r[7] for r in gt_rows],
        states=[r[8] for r in gt_rows],
        devices=device_truths,
    )
    return records, truth


# --- signal-level path ---

@dataclass(frozen=True)
class Emission:
    frame: AdvFrame
    cfo_hz: float
    bearings_deg: np.ndarray  # true world bearing per node (nan out of range)
    rss_dbm: np.ndarray  # propagated rss per node (nan out of range)


def emission_at(scenario: Scenario, records: list[PacketRecord], truth: GroundTruth, index: int) -> Emission:
    rec = records[index]
    dev = truth.devices[int(truth.device_ids[index])]
    spec = scenario.devices[dev.device_id]
    frame = build_frame(
        spec.model, truth.type_keys[index], rec.adv_address, rec.channel, truth.states[index], spec.activity
    )
    rss = np.array([f.rss if f.rss is not None else np.nan for f in rec.phy])
    return Emission(frame, dev.cfo_hz, truth.bearings[index], rss)


def render_iq(
    emission: Emission,
    poses: list[NodePose],
    config: dsp.SteeringConfig,
    rng: np.random.Generator,
    sps: int = 8,
    noise_floor_dbm: float = -95.0,
    phase0: float | None = None,
) -> list[dsp.IqFrame | None]:
    """Multi-antenna baseband for each node; None beyond detection range.

    Antenna m of a node sees the plane wave with phase shift
    e^{j*delta*sin(theta)*m} for the true array-relative angle theta; CFO
    and AWGN at the propagated SNR are applied on top.
    """
    from .frames import frame_to_air_bits

    bits = frame_to_air_bits(emission.frame)
    ph0 = float(rng.uniform(0, 2 * np.pi)) if phase0 is None else phase0
    base = dsp.gfsk_modulate(
        bits,
        sps=sps,
        cfo=emission.cfo_hz,
        center_freq=dsp.ble_channel_center(emission.frame.channel),
        phase0=ph0,
    )
    out: list[dsp.IqFrame | None] = []
    for node_idx, pose in enumerate(poses):
        bearing = emission.bearings_deg[node_idx]
        if np.isnan(bearing):
            out.append(None)
            continue
        rel = (bearing - pose.boresight_deg + 180.0) % 360.0 - 180.0
        if rel > 90.0:
            rel = 180.0 - rel
        elif rel < -90.0:
            rel = -180.0 - rel
        steer = config.steering(np.array([rel]))[:, 0]
        samples = steer[:, np.newaxis] * base.samples[0][np.newaxis, :]
        frame = dsp.IqFrame(samples, base.sample_rate, base.center_freq, base.start_time)
        snr_db = float(emission.rss_dbm[node_idx]) - noise_floor_dbm
        out.append(dsp.awgn(frame, snr_db, rng))
    return out


def render_node_capture(
    scenario: Scenario,
    records: list[PacketRecord],
    truth: GroundTruth,
    node_idx: int,
    channel: int = 37,
    duration_ms: float = 1000.0,
    config: dsp.SteeringConfig | None = None,
    noise_floor_dbm: float = -95.0,
) -> dsp.IqFrame:
    """One node's continuous multi-antenna channel capture.

    Packets on the chosen channel are rendered at their emission times on
    a noise floor whose level sets the per-packet SNR via the propagated
    RSS (dBm treated as dB full scale).
    """
    cfg = config or dsp.SteeringConfig(center_freq=dsp.ble_channel_center(channel))
    fs = 2e6
    n = int(duration_ms * 1e-3 * fs)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(scenario.seed, node_idx, 0x19)))
    sigma = np.sqrt(10 ** (noise_floor_dbm / 10.0) / 2.0)
    x = sigma * (rng.standard_normal((cfg.antennas, n)) + 1j * rng.standard_normal((cfg.antennas, n)))
    pose = scenario.nodes[node_idx]
    for i, rec in enumerate(records):
        if rec.channel != channel or rec.ts_us * 1e-3 >= duration_ms:
            continue
        feats = rec.phy[node_idx]
        if feats.rss is None:
            continue
        em = emission_at(scenario, records, truth, i)
        bits = _frame_bits(em.frame)
        bearing = em.bearings_deg[node_idx]
        rel = (bearing - pose.boresight_deg + 180.0) % 360.0 - 180.0
        if rel > 90.0:
            rel = 180.0 - rel
        elif rel < -90.0:
            rel = -180.0 - rel
        amp = 10 ** (feats.rss / 20.0)
        base = dsp.gfsk_modulate(
            bits, sps=2, cfo=em.cfo_hz, amplitude=amp,
            center_freq=cfg.center_freq, phase0=float(rng.uniform(0, 2 * np.pi)),
        )
        steer = cfg.steering(np.array([rel]))[:, 0]
        i0 = int(rec.ts_us * fs / 1e6)
        i1 = min(n, i0 + base.n_samples)
        if i1 <= i0:
            continue
        x[:, i0:i1] += steer[:, np.newaxis] * base.samples[0][np.newaxis, : i1 - i0]
    return dsp.IqFrame(x, fs, cfg.center_freq, 0.0)


def _frame_bits(frame: AdvFrame) -> np.ndarray:
    from .frames import frame_to_air_bits

    return frame_to_air_bits(frame)


# --- scenario file IO and builders ---

def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise InvalidScenario(f"unparseable scenario file: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidScenario("scenario file must hold a mapping")
    try:
        noise_raw = raw.get("noise", {})
        if isinstance(noise_raw, str):
            noise = NOISE_PROFILES[noise_raw]
        else:
            noise = NoiseProfile(**noise_raw)
        nodes = tuple(
            NodePose(tuple(n["position"]), float(n["boresight_deg"])) for n in raw["nodes"]
        )
        devices: list[DeviceSpec] = []
        for d in raw["devices"]:
            d = dict(d)
            count = int(d.pop("count", 1))
            states = d.pop("states", None)
            state = d.pop("state", None)
            if states is not None:
                d["states"] = tuple((float(a), float(b), s) for a, b, s in states)
            elif state is not None:
                d["states"] = ((0.0, float("inf"), state),)
            if "waypoints" in d:
                d["waypoints"] = tuple(tuple(map(float, p)) for p in d["waypoints"])
            for _ in range(count):
                devices.append(DeviceSpec(**d))
        return Scenario(
            name=str(raw["name"]),
            area=tuple(map(float, raw["area"])),
            nodes=nodes,
            devices=tuple(devices),
            duration_s=float(raw["duration_s"]),
            seed=int(raw["seed"]),
            noise=noise,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidScenario(f"bad scenario file: {exc}") from exc


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    doc = {
        "name": scenario.name,
        "area": list(scenario.area),
        "seed": scenario.seed,
        "duration_s": scenario.duration_s,
        "noise": {k: getattr(scenario.noise, k) for k in NoiseProfile.__dataclass_fields__},
        "nodes": [
            {"position": list(n.position), "boresight_deg": n.boresight_deg} for n in scenario.nodes
        ],
        "devices": [
            {
                "model": d.model,
                "states": [[a if a != float("inf") else 1e12, b if b != float("inf") else 1e12, s] for a, b, s in d.states],
                "waypoints": [list(p) for p in d.waypoints],
                "speed_mps": d.speed_mps,
                "activity": d.activity,
                "rotation_period_s": d.rotation_period_s,
            }
            for d in scenario.devices
        ],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def corner_nodes(area: tuple[float, float], inset: float = 0.2) -> tuple[NodePose, ...]:
    """Four nodes at the corners, boresights toward the area center."""
    w, h = area
    corners = [(inset, inset), (w - inset, inset), (inset, h - inset), (w - inset, h - inset)]
    center = (w / 2.0, h / 2.0)
    return tuple(NodePose(c, world_bearing(c, center)) for c in corners)


def wall_nodes(area: tuple[float, float], per_wall: int = 3, inset: float = 0.2) -> tuple[NodePose, ...]:
    """Nodes along both long walls, boresights facing straight across."""
    w, h = area
    xs = [w * (i + 0.5) / per_wall for i in range(per_wall)]
    south = [NodePose((x, inset), 0.0) for x in xs]  # boresight north
    north = [NodePose((x, h - inset), 180.0) for x in xs]
    return tuple(south + north)


def mixed_fleet(
    n_apple: int,
    n_android: int,
    area: tuple[float, float],
    seed: int,
    state: str = "idle",
    speed_mps: float = 0.0,
    rotation_period_s: float = 900.0,
    min_separation: float = 0.0,
) -> tuple[DeviceSpec, ...]:
    """Vendor-faithful device mix placed uniformly in the area, optionally
    with a minimum pairwise spacing (people keep some distance)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xF1EE7)))
    apple_models = ["iPhone", "AirPods Pro", "MacBook Pro", "Apple Watch"]
    android_models = ["Samsung Galaxy S23", "Xiaomi 11 Lite", "Pixel 8"]
    w, h = area
    placed: list[tuple[float, float]] = []

    def draw_point() -> tuple[float, float]:
        for _ in range(4000):
            p = (float(rng.uniform(0.3, w - 0.3)), float(rng.uniform(0.3, h - 0.3)))
            if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= min_separation**2 for q in placed):
                placed.append(p)
                return p
        raise InvalidScenario("cannot place devices at the requested separation")

    specs = []
    for i in range(n_apple + n_android):
        model = apple_models[i % 4] if i < n_apple else android_models[i % 3]
        pos = draw_point()
        if speed_mps > 0:
            dest = (float(rng.uniform(0.3, w - 0.3)), float(rng.uniform(0.3, h - 0.3)))
            waypoints: tuple[tuple[float, float], ...] = (pos, dest)
        else:
            waypoints = (pos,)
        specs.append(
            DeviceSpec(
                model=model,
                states=((0.0, float("inf"), state),),
                waypoints=waypoints,
                speed_mps=speed_mps,
                rotation_period_s=rotation_period_s,
            )
        )
    return tuple(specs)


def standard_scenario(
    kind: str,
    n_apple: int = 25,
    n_android: int = 25,
    duration_s: float = 120.0,
    seed: int = 7,
    rotation_period_s: float = 900.0,
    speed_mps: float = 0.0,
    min_separation: float | None = None,
) -> Scenario:
    areas = {"apartment": (6.5, 9.5), "lab": (8.5, 8.8), "mall": (20.0, 10.0), "hall": (32.0, 16.0)}
    if kind not in areas:
        raise InvalidScenario(f"unknown standard scenario {kind!r}")
    area = areas[kind]
    if min_separation is None:
        min_separation = 2.5 if kind == "hall" else 0.0
    nodes = wall_nodes(area, 3) if kind == "hall" else corner_nodes(area)
    return Scenario(
        name=kind,
        area=area,
        nodes=nodes,
        devices=mixed_fleet(
            n_apple, n_android, area, seed,
            rotation_period_s=rotation_period_s, speed_mps=speed_mps, min_separation=min_separation,
        ),
        duration_s=duration_s,
        seed=seed,
        noise=NOISE_PROFILES[kind],
    )
