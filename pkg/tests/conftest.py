from __future__ import annotations

import numpy as np
import pytest

from bletrack import frames


def random_adv_frame(rng: np.random.Generator, max_payload: int = 120) -> frames.AdvFrame:
    """Draw a structurally valid adv frame (the round-trip oracle input)."""
    channel = int(rng.choice(frames.ADV_CHANNELS))
    address = int(rng.integers(0, 1 << 48))
    kind = rng.random()
    if kind < 0.45:
        n_acm = int(rng.integers(1, 4))
        acms = []
        for _ in range(n_acm):
            t = int(rng.choice(sorted(frames.ACM_TYPES)))
            content = rng.integers(0, 256, size=int(rng.integers(1, 12))).astype(np.uint8).tobytes()
            acms.append(frames.AcmMessage(t, content))
        return frames.apple_frame(address, channel, acms)
    if kind < 0.75:
        cid = int(rng.choice(sorted(frames.ANDROID_COMPANY_IDS)))
        mfr = rng.integers(0, 256, size=int(rng.integers(2, 10))).astype(np.uint8).tobytes()
        if rng.random() < 0.5:
            uuid = int(rng.choice(sorted(frames.GOOGLE_SERVICE_UUIDS)))
            svc = rng.integers(0, 256, size=int(rng.integers(0, 6))).astype(np.uint8).tobytes()
            return frames.android_frame(address, channel, cid, mfr, uuid, svc)
        return frames.android_frame(address, channel, cid, mfr)
    # arbitrary AD records, possibly none, possibly with opaque trailing bytes
    records = []
    budget = int(rng.integers(0, max_payload))
    while budget > 2:
        ln = int(rng.integers(0, min(budget - 2, 20)))
        records.append(
            frames.AdRecord(int(rng.integers(0, 256)), rng.integers(0, 256, size=ln).astype(np.uint8).tobytes())
        )
        budget -= ln + 2
    trailing = b""
    if rng.random() < 0.3:
        trailing = bytes([0]) + rng.integers(0, 256, size=int(rng.integers(0, 4))).astype(np.uint8).tobytes()
    return frames.AdvFrame(address, channel, tuple(records), trailing)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0xB1E)
