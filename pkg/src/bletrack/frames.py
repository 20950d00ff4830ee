"""BLE advertisement frame codec and vendor payload decoding.

Covers the on-air adv PDU layout (header, 6-byte advertising address,
AD structures), Apple continuity messages (type/content TLVs inside the
0x004C manufacturer record), Android manufacturer/service-UUID payloads,
and the bit-level air framing (preamble, access address, whitening,
CRC-24) used by the DSP loopback path.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

ADV_CHANNELS = (37, 38, 39)
ADV_ACCESS_ADDRESS = 0x8E89BED6
APPLE_COMPANY_ID = 0x004C

# Manufacturer company identifiers seen in adv payloads.
SONY_COMPANY_IDS = frozenset({0x012D, 0x0057})
MICROSOFT_COMPANY_IDS = frozenset({0x0006})
ANDROID_COMPANY_IDS = frozenset({0x0075, 0x00E0, 0x038F, 0x0201})  # Samsung, Google, Xiaomi, OnePlus
GOOGLE_SERVICE_UUIDS = frozenset({0xFE2C, 0xFEAA})

# The ten continuity message types observed in adv payloads.
ACM_TYPES = frozenset({0x05, 0x07, 0x08, 0x09, 0x0A, 0x0B, 0x0C, 0x0F, 0x10, 0x12})
ACM_TYPE_NAMES = {
    0x05: "AirDrop",
    0x07: "Proximity Pairing",
    0x08: "Hey Siri",
    0x09: "AirPlay Target",
    0x0A: "AirPlay Source",
    0x0B: "Magic Switch",
    0x0C: "Handoff",
    0x0F: "Nearby Action",
    0x10: "Nearby Info",
    0x12: "Find My",
}

AD_MANUFACTURER = 0xFF
AD_SERVICE_DATA_16 = 0x16

MAX_PDU_PAYLOAD = 255


class MalformedFrame(ValueError):
    """Byte stream is not a valid adv PDU (length or header violation)."""


class FieldOverflow(ValueError):
    """A frame field exceeds its on-air width."""


class Vendor(Enum):
    APPLE = "Apple"
    ANDROID = "Android"
    SONY = "Sony"
    MICROSOFT = "Microsoft"
    OTHER = "Other"


@dataclass(frozen=True)
class DeviceFact:
    """Semantic facts decoded from one adv payload; all but vendor optional."""

    vendor: Vendor
    model: str | None = None
    status: str | None = None
    activity: str | None = None
    color: str | None = None

    def merge(self, other: "DeviceFact") -> "DeviceFact":
        """Fill this fact's null fields from `other` (non-null wins, first wins)."""
        return DeviceFact(
            vendor=self.vendor,
            model=self.model if self.model is not None else other.model,
            status=self.status if self.status is not None else other.status,
            activity=self.activity if self.activity is not None else other.activity,
            color=self.color if self.color is not None else other.color,
        )


@dataclass(frozen=True)
class AcmMessage:
    """One continuity TLV: type byte plus raw content bytes."""

    acm_type: int
    content: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.acm_type <= 0xFF:
            raise FieldOverflow("acm_type must be one octet")
        if len(self.content) > 0xFD:
            raise FieldOverflow("acm content too long for one AD structure")


@dataclass(frozen=True)
class AdRecord:
    """One AD structure: type octet plus value bytes (length is implicit)."""

    ad_type: int
    data: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.ad_type <= 0xFF:
            raise FieldOverflow("ad_type must be one octet")
        if len(self.data) > 0xFE:
            raise FieldOverflow("AD structure value too long")


@dataclass(frozen=True)
class AndroidPayload:
    company_id: int | None
    manufacturer: bytes | None
    service_uuid: int | None
    service_data: bytes | None


@dataclass(frozen=True)
class AdvFrame:
    """Decoded adv PDU.

    `records` preserves the AD structures in on-air order and `trailing`
    keeps any unparseable leftover bytes, so encode(decode(x)) == x holds
    bit-exactly for every valid PDU.
    """

    adv_address: int
    channel: int
    records: tuple[AdRecord, ...] = ()
    trailing: bytes = b""
    header_flags: int = 0x40  # ADV_IND, random (TxAdd) address

    def __post_init__(self) -> None:
        if not 0 <= self.adv_address < (1 << 48):
            raise FieldOverflow("adv_address must fit 6 bytes")
        if self.channel not in ADV_CHANNELS:
            raise MalformedFrame(f"channel {self.channel} not an advertising channel")

    @property
    def company_id(self) -> int | None:
        md = self.manufacturer_data
        return md[0] if md is not None else None

    @property
    def manufacturer_data(self) -> tuple[int, bytes] | None:
        for rec in self.records:
            if rec.ad_type == AD_MANUFACTURER and len(rec.data) >= 2:
                return int.from_bytes(rec.data[:2], "little"), rec.data[2:]
        return None

    @property
    def acms(self) -> tuple[AcmMessage, ...]:
        if self.company_id != APPLE_COMPANY_ID:
            return ()
        for rec in self.records:
            if rec.ad_type == AD_MANUFACTURER and len(rec.data) >= 2:
                return _parse_acms(rec.data[2:])
        return ()

    @property
    def android_payload(self) -> AndroidPayload | None:
        company = None
        mfr = None
        uuid = None
        svc = None
        for rec in self.records:
            if rec.ad_type == AD_MANUFACTURER and len(rec.data) >= 2:
                cid = int.from_bytes(rec.data[:2], "little")
                if cid in ANDROID_COMPANY_IDS:
                    company, mfr = cid, rec.data[2:]
            elif rec.ad_type == AD_SERVICE_DATA_16 and len(rec.data) >= 2:
                u = int.from_bytes(rec.data[:2], "little")
                if u in GOOGLE_SERVICE_UUIDS:
                    uuid, svc = u, rec.data[2:]
        if company is None and uuid is None:
            return None
        return AndroidPayload(company, mfr, uuid, svc)

    @property
    def raw(self) -> bytes:
        return encode_adv(self)


def _parse_acms(data: bytes) -> tuple[AcmMessage, ...]:
    out: list[AcmMessage] = []
    i = 0
    while i + 2 <= len(data):
        t, ln = data[i], data[i + 1]
        if i + 2 + ln > len(data):
            return ()  # garbled TLV run: expose nothing rather than guess
        out.append(AcmMessage(t, bytes(data[i + 2 : i + 2 + ln])))
        i += 2 + ln
    if i != len(data):
        return ()
    return tuple(out)


def decode_adv(data: bytes, channel: int) -> AdvFrame:
    """Decode an adv PDU byte stream received on `channel`.

    Raises MalformedFrame on header/length violations; AD structures that
    do not parse are preserved opaquely so the frame re-encodes bit-exactly.
    """
    if channel not in ADV_CHANNELS:
        raise MalformedFrame(f"channel {channel} not an advertising channel")
    if len(data) < 8:
        raise MalformedFrame("PDU shorter than header + advertising address")
    payload_len = data[1]
    if payload_len > MAX_PDU_PAYLOAD:
        raise MalformedFrame("payload length exceeds PDU bound")
    if len(data) != 2 + payload_len:
        raise MalformedFrame("length octet does not match PDU size")
    if payload_len < 6:
        raise MalformedFrame("payload too short for advertising address")
    adv_address = int.from_bytes(data[2:8], "little")
    records: list[AdRecord] = []
    body = data[8:]
    i = 0
    trailing = b""
    while i < len(body):
        ln = body[i]
        if ln == 0 or i + 1 + ln > len(body):
            trailing = bytes(body[i:])
            break
        records.append(AdRecord(body[i + 1], bytes(body[i + 2 : i + 1 + ln])))
        i += 1 + ln
    return AdvFrame(
        adv_address=adv_address,
        channel=channel,
        records=tuple(records),
        trailing=trailing,
        header_flags=data[0],
    )


def encode_adv(frame: AdvFrame) -> bytes:
    """Encode a frame to adv PDU bytes; inverse of decode_adv."""
    body = bytearray()
    for rec in frame.records:
        body.append(len(rec.data) + 1)
        body.append(rec.ad_type)
        body.extend(rec.data)
    body.extend(frame.trailing)
    payload_len = 6 + len(body)
    if payload_len > MAX_PDU_PAYLOAD:
        raise FieldOverflow("payload exceeds 255 bytes")
    out = bytearray([frame.header_flags & 0xFF, payload_len])
    out.extend(frame.adv_address.to_bytes(6, "little"))
    out.extend(body)
    return bytes(out)


def classify_vendor(frame: AdvFrame) -> Vendor:
    cid = frame.company_id
    if cid == APPLE_COMPANY_ID:
        return Vendor.APPLE
    if cid in SONY_COMPANY_IDS:
        return Vendor.SONY
    if cid in MICROSOFT_COMPANY_IDS:
        return Vendor.MICROSOFT
    if frame.android_payload is not None:
        return Vendor.ANDROID
    return Vendor.OTHER


# --- frame builders used by the simulator and tests ---

def apple_frame(adv_address: int, channel: int, acms: list[AcmMessage] | tuple[AcmMessage, ...]) -> AdvFrame:
    if not acms:
        raise FieldOverflow("an Apple frame carries at least one continuity message")
    data = bytearray(APPLE_COMPANY_ID.to_bytes(2, "little"))
    for acm in acms:
        data.append(acm.acm_type)
        data.append(len(acm.content))
        data.extend(acm.content)
    return AdvFrame(adv_address, channel, (AdRecord(AD_MANUFACTURER, bytes(data)),))


def android_frame(
    adv_address: int,
    channel: int,
    company_id: int | None = None,
    manufacturer: bytes = b"",
    service_uuid: int | None = None,
    service_data: bytes = b"",
) -> AdvFrame:
    records: list[AdRecord] = []
    if company_id is not None:
        records.append(AdRecord(AD_MANUFACTURER, company_id.to_bytes(2, "little") + manufacturer))
    if service_uuid is not None:
        records.append(AdRecord(AD_SERVICE_DATA_16, service_uuid.to_bytes(2, "little") + service_data))
    if not records:
        raise FieldOverflow("android frame needs a manufacturer or service record")
    return AdvFrame(adv_address, channel, tuple(records))


# --- ACM / payload fact registry ---

class AcmRegistry:
    """Content-to-fact lookup table loaded from a versioned text file.

    One record per line: ``vendor, acm_type(hex), content(hex), model,
    status, activity, color`` with empty string meaning null.  Apple rows
    key on (acm_type, content); Android rows leave acm_type empty and key
    on the model UUID bytes carried in the manufacturer record.
    """

    def __init__(self) -> None:
        self.version: int = 0
        self._apple: dict[tuple[int, bytes], DeviceFact] = {}
        self._by_model_code: dict[tuple[Vendor, bytes], DeviceFact] = {}

    @classmethod
    def from_path(cls, path: str | Path) -> "AcmRegistry":
        reg = cls()
        reg.load(Path(path).read_text())
        return reg

    @classmethod
    def default(cls) -> "AcmRegistry":
        text = importlib.resources.files("bletrack.data").joinpath("acm_registry.txt").read_text()
        reg = cls()
        reg.load(text)
        return reg

    def load(self, text: str) -> None:
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("# version:"):
                self.version = int(line.split(":", 1)[1])
                continue
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 7:
                raise ValueError(f"registry line needs 7 fields: {line!r}")
            vendor_s, type_s, content_s, model, status, activity, color = parts
            vendor = Vendor(vendor_s)
            fact = DeviceFact(
                vendor=vendor,
                model=model or None,
                status=status or None,
                activity=activity or None,
                color=color or None,
            )
            content = bytes.fromhex(content_s.zfill(len(content_s) + len(content_s) % 2))
            if vendor is Vendor.APPLE:
                if not type_s:
                    raise ValueError(f"apple registry row missing acm type: {line!r}")
                acm_type = int(type_s, 16)
                if acm_type not in ACM_TYPES:
                    raise ValueError(f"acm type 0x{acm_type:02x} outside the observed set")
                self._apple[(acm_type, content)] = fact
            else:
                self._by_model_code[(vendor, content)] = fact

    def lookup_acm(self, acm_type: int, content: bytes) -> DeviceFact | None:
        return self._apple.get((acm_type, content))

    def lookup_model_code(self, vendor: Vendor, model_code: bytes) -> DeviceFact | None:
        return self._by_model_code.get((vendor, model_code))

    def known_strings(self) -> set[str]:
        vals: set[str] = set()
        for fact in list(self._apple.values()) + list(self._by_model_code.values()):
            for v in (fact.model, fact.status, fact.activity, fact.color):
                if v is not None:
                    vals.add(v)
        return vals


_default_registry: AcmRegistry | None = None


def default_registry() -> AcmRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = AcmRegistry.default()
    return _default_registry


def decode_acm(acm: AcmMessage, registry: AcmRegistry | None = None) -> DeviceFact:
    """Decode one continuity message; unknown (type, content) pairs yield
    a fact with only vendor set, never an error."""
    reg = registry or default_registry()
    fact = reg.lookup_acm(acm.acm_type, acm.content)
    if fact is None:
        return DeviceFact(vendor=Vendor.APPLE)
    return fact


def decode_facts(frame: AdvFrame, registry: AcmRegistry | None = None) -> DeviceFact:
    """Merge every payload-derived fact of a frame into one DeviceFact."""
    reg = registry or default_registry()
    vendor = classify_vendor(frame)
    fact = DeviceFact(vendor=vendor)
    if vendor is Vendor.APPLE:
        for acm in frame.acms:
            fact = fact.merge(decode_acm(acm, reg))
    elif vendor is not Vendor.OTHER:
        md = frame.manufacturer_data
        if md is not None and len(md[1]) >= 2:
            hit = reg.lookup_model_code(vendor, md[1][:2])
            if hit is not None:
                fact = fact.merge(hit)
    return fact


# --- bit-level air framing (preamble + access address + whitened PDU + CRC) ---

CRC24_POLY = 0x00065B
CRC24_INIT = 0x555555


def bytes_to_bits(data: bytes) -> np.ndarray:
    """LSB-first bit expansion, one byte after another (BLE air order)."""
    arr = np.frombuffer(data, dtype=np.uint8)
    return np.unpackbits(arr, bitorder="little").astype(np.int8)


def bits_to_bytes(bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) % 8:
        bits = np.concatenate([bits, np.zeros(8 - len(bits) % 8, dtype=np.uint8)])
    return np.packbits(bits, bitorder="little").tobytes()


def crc24(data: bytes) -> bytes:
    """BLE CRC-24 over PDU bytes, LSB-first, init 0x555555; returned in
    air order (LSB of the register first)."""
    reg = CRC24_INIT
    for byte in data:
        for k in range(8):
            bit = (byte >> k) & 1
            msb = (reg >> 23) & 1
            reg = (reg << 1) & 0xFFFFFF
            if msb ^ bit:
                reg ^= CRC24_POLY
    # register holds CRC with x^23 coefficient as MSB; transmit MSB first
    out_bits = [(reg >> (23 - i)) & 1 for i in range(24)]
    by = bytearray()
    for i in range(0, 24, 8):
        b = 0
        for j in range(8):
            b |= out_bits[i + j] << j
        by.append(b)
    return bytes(by)


def whitening_sequence(channel: int, n: int) -> np.ndarray:
    """Whitening bit stream for a channel: LFSR x^7 + x^4 + 1 seeded with
    bit6 = 1 and bits5..0 = channel index."""
    state = [1] + [(channel >> (5 - i)) & 1 for i in range(6)]
    out = np.empty(n, dtype=np.int8)
    for i in range(n):
        out[i] = state[6]
        fb = state[6]
        state = [fb] + state[0:3] + [state[3] ^ fb] + state[4:6]
    return out


PREAMBLE_BITS = np.array([0, 1] * 4, dtype=np.int8)
ACCESS_ADDRESS_BITS = bytes_to_bits(ADV_ACCESS_ADDRESS.to_bytes(4, "little"))


def frame_to_air_bits(frame: AdvFrame) -> np.ndarray:
    """Full on-air bit sequence: preamble, access address, whitened PDU+CRC."""
    pdu = encode_adv(frame)
    body = bytes_to_bits(pdu + crc24(pdu))
    white = whitening_sequence(frame.channel, len(body))
    return np.concatenate([PREAMBLE_BITS, ACCESS_ADDRESS_BITS, body ^ white])


def air_bits_to_frame(bits: np.ndarray, channel: int) -> tuple[AdvFrame, bool]:
    """Parse on-air bits back into a frame.

    `bits` must start at the preamble (the demodulator aligns to it); the
    access address is located exactly, the PDU length octet bounds the
    payload, and the CRC check result is returned alongside.
    """
    bits = np.asarray(bits, dtype=np.int8)
    aa_pos = _find_pattern(bits, ACCESS_ADDRESS_BITS)
    if aa_pos < 0:
        raise MalformedFrame("access address not present in bit stream")
    body = bits[aa_pos + 32 :]
    if len(body) < 16:
        raise MalformedFrame("bit stream truncated before PDU header")
    white = whitening_sequence(channel, len(body))
    clear = body ^ white
    header = bits_to_bytes(clear[:16])
    pdu_len = 2 + header[1]
    total = pdu_len + 3
    if len(clear) < total * 8:
        raise MalformedFrame("bit stream truncated inside PDU")
    blob = bits_to_bytes(clear[: total * 8])
    pdu, crc_rx = blob[:pdu_len], blob[pdu_len:total]
    frame = decode_adv(pdu, channel)
    return frame, crc24(pdu) == crc_rx


def _find_pattern(bits: np.ndarray, pattern: np.ndarray) -> int:
    n, m = len(bits), len(pattern)
    if n < m:
        return -1
    windows = np.lib.stride_tricks.sliding_window_view(bits, m)
    hits = np.nonzero((windows == pattern).all(axis=1))[0]
    return int(hits[0]) if len(hits) else -1
