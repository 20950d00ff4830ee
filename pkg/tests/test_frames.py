from __future__ import annotations

import numpy as np
import pytest

from bletrack import frames
from bletrack.frames import (
    AcmMessage,
    AdvFrame,
    DeviceFact,
    MalformedFrame,
    Vendor,
    air_bits_to_frame,
    classify_vendor,
    decode_acm,
    decode_adv,
    decode_facts,
    default_registry,
    encode_adv,
    frame_to_air_bits,
)

from conftest import random_adv_frame


class TestCodec:
    def test_minimal_frame_is_header_plus_address(self):
        f = AdvFrame(adv_address=0x112233445566, channel=37)
        raw = encode_adv(f)
        assert len(raw) == 8
        assert raw[1] == 6
        assert raw[2:8] == (0x112233445566).to_bytes(6, "little")

    def test_apple_frame_carries_company_id_bytes(self):
        f = frames.apple_frame(1, 38, [AcmMessage(0x10, b"\x01")])
        raw = encode_adv(f)
        assert b"\x4c\x00" in raw
        assert decode_adv(raw, 38).company_id == 0x004C

    def test_company_id_apple_classifies_apple(self):
        f = frames.apple_frame(7, 37, [AcmMessage(0x0C, b"\x00")])
        assert classify_vendor(decode_adv(encode_adv(f), 37)) is Vendor.APPLE

    def test_google_uuid_classifies_android(self):
        f = frames.android_frame(9, 39, service_uuid=0xFE2C, service_data=b"\x01")
        assert classify_vendor(f) is Vendor.ANDROID

    def test_neither_payload_classifies_other(self):
        f = AdvFrame(adv_address=5, channel=37)
        assert classify_vendor(f) is Vendor.OTHER

    def test_round_trip_identity_1000_random_frames(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            f = random_adv_frame(rng)
            raw = encode_adv(f)
            g = decode_adv(raw, f.channel)
            assert g == f
            assert encode_adv(g) == raw

    def test_decode_rejects_short_pdu(self):
        with pytest.raises(MalformedFrame):
            decode_adv(b"\x40\x05\x01\x02\x03\x04\x05", 37)

    def test_decode_rejects_length_mismatch(self):
        f = frames.apple_frame(1, 37, [AcmMessage(0x10, b"\x01")])
        raw = bytearray(encode_adv(f))
        raw[1] += 3
        with pytest.raises(MalformedFrame):
            decode_adv(bytes(raw), 37)

    def test_decode_rejects_bad_channel(self):
        f = AdvFrame(adv_address=5, channel=37)
        with pytest.raises(MalformedFrame):
            decode_adv(encode_adv(f), 11)

    def test_garbled_ad_bytes_preserved_in_raw(self):
        # a zero length octet cannot start a valid AD structure
        raw = b"\x40\x09" + (123).to_bytes(6, "little") + b"\x00\xaa\xbb"
        f = decode_adv(raw, 37)
        assert f.trailing == b"\x00\xaa\xbb"
        assert f.raw == raw

    def test_encode_overflow(self):
        with pytest.raises(frames.FieldOverflow):
            AdvFrame(adv_address=1 << 48, channel=37)


class TestAcmRegistry:
    # the four field-observed mappings
    @pytest.mark.parametrize(
        "acm_type,content,field,value",
        [
            (0x07, b"\x20\x0e", "model", "AirPods Pro"),
            (0x07, b"\x2b", "status", "Both AirPods in Ear"),
            (0x0F, b"\x0f", "activity", "Answered Phone Call"),
            (0x0F, b"\x02", "model", "iPhone"),
        ],
    )
    def test_observed_mappings(self, acm_type, content, field, value):
        fact = decode_acm(AcmMessage(acm_type, content))
        assert getattr(fact, field) == value
        assert fact.vendor is Vendor.APPLE

    def test_unknown_content_yields_vendor_only_fact(self):
        fact = decode_acm(AcmMessage(0x12, b"\xde\xad"))
        assert fact == DeviceFact(vendor=Vendor.APPLE)

    def test_registry_rejects_types_outside_observed_set(self):
        reg = frames.AcmRegistry()
        with pytest.raises(ValueError):
            reg.load("Apple, 03, 01, AirPrint Thing, , ,")

    def test_color_column_reserved_but_unpopulated(self):
        reg = default_registry()
        assert all(f.color is None for f in reg._apple.values())

    def test_android_model_from_manufacturer_code(self):
        f = frames.android_frame(3, 37, company_id=0x0075, manufacturer=b"\x01\x01\x99")
        fact = decode_facts(f)
        assert fact.vendor is Vendor.ANDROID
        assert fact.model == "Samsung Galaxy S23"

    def test_facts_merge_across_acms(self):
        f = frames.apple_frame(3, 37, [AcmMessage(0x07, b"\x20\x0e"), AcmMessage(0x07, b"\x2b")])
        fact = decode_facts(f)
        assert fact.model == "AirPods Pro"
        assert fact.status == "Both AirPods in Ear"

    def test_version_header_parsed(self):
        assert default_registry().version == 1


class TestAirBits:
    def test_round_trip_with_crc(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            f = random_adv_frame(rng)
            bits = frame_to_air_bits(f)
            g, crc_ok = air_bits_to_frame(bits, f.channel)
            assert crc_ok
            assert g == f

    def test_bit_flip_breaks_crc(self):
        f = frames.apple_frame(1, 37, [AcmMessage(0x10, b"\x01")])
        bits = frame_to_air_bits(f)
        bits[60] ^= 1  # inside the whitened PDU
        _, crc_ok = air_bits_to_frame(bits, 37)
        assert not crc_ok

    def test_whitening_differs_by_channel(self):
        a = frames.whitening_sequence(37, 64)
        b = frames.whitening_sequence(38, 64)
        assert (a != b).any()

    def test_air_bits_start_with_alternating_preamble(self):
        f = AdvFrame(adv_address=2, channel=39)
        bits = frame_to_air_bits(f)
        assert list(bits[:8]) == [0, 1, 0, 1, 0, 1, 0, 1]
