"""Passive BLE advertisement device tracking.

Library layout mirrors the processing chain: `frames` (adv packet codec
and payload facts), `dsp` (GFSK baseband, channelizer, packet detection,
RSS/CFO/AoA extraction), `store` (per-device packet database), `grouping`
(address/feature packet grouping), `locate` (triangulation and tracking),
`simulate` (ground-truth scenario generator), `sft` (fine-tuning dataset
export) and `report` (aggregate visitor analytics).
"""

__version__ = "0.1.0"

from . import dsp, frames, grouping, locate, report, sft, simulate, store  # noqa: F401
