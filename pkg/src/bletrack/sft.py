"""Fine-tuning dataset exporter.

Turns grouped/localized windows into multi-turn prompt-response samples.
Templates are data: each turn is a pair of `str.format` strings whose
named slots are filled from the window context, so new templates can be
registered without touching the exporter.

Template grammar (see TEMPLATES):
  - scalar slots: scenario, area_x, area_y, n_nodes, n_devices,
    n_apple, n_android, n_stationary, n_moving, n_macbook, n_iphone,
    n_samsung, n_watching_video, n_phone_call, n_airpods
  - composed slots (pre-rendered lists): node_coords, packet_blocks,
    location_list, trajectory_lines
Coordinates render as fixed-point with two decimals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .locate import LocalizeParams, NodePose, localize_all, track_device
from .store import DeviceStore


class EmptyWindow(ValueError):
    """No localizable device in the requested window."""


@dataclass(frozen=True)
class Template:
    template_id: str
    turns: tuple[tuple[str, str], ...]  # (prompt_fmt, response_fmt)


LOCATION_TEMPLATE = Template(
    template_id="location_v1",
    turns=(
        (
            "We are in scenario {scenario}. Its area size is {area_x} meter by {area_y} meter. "
            "In this scenario, {n_nodes} Bluetooth sniffing nodes have been deployed at "
            "coordinates: {node_coords}. The coordinate axis's origin is located at the "
            "northwest corner. In this area, multiple individuals carry Bluetooth devices and "
            "engage in different activities. We have gathered the BLE Adv packets as follows: "
            "{packet_blocks}. Please calculate the most recent locations of these {n_devices} "
            "devices based on the above information.",
            "Certainly. Based on the information you provided, the {n_devices} devices are "
            "likely located at: {location_list}. Among these {n_devices} devices, {n_apple} "
            "devices are Apple devices and {n_android} devices are Android devices.",
        ),
        (
            "Please generate the trajectory of all the devices.",
            "Certainly. The trajectories of the {n_devices} devices are given as below.\n"
            "{trajectory_lines}",
        ),
        (
            "In this case, provide me with more details about these devices.",
            "Certainly. It appears that {n_stationary} devices are stationary, and {n_moving} "
            "devices are moving. {n_macbook} devices are MacBook Pro; {n_iphone} devices are "
            "iPhone; {n_samsung} devices are Samsung phones. {n_watching_video} Apple devices "
            "are watching video; {n_phone_call} Apple devices are on phone call; {n_airpods} "
            "Apple devices are with Airpods.",
        ),
    ),
)

TEMPLATES: dict[str, Template] = {LOCATION_TEMPLATE.template_id: LOCATION_TEMPLATE}


def register_template(template: Template) -> None:
    TEMPLATES[template.template_id] = template


@dataclass
class SftSample:
    turns: list[tuple[str, str]]
    metadata: dict = field(default_factory=dict)


def _fmt_xy(x: float, y: float) -> str:
    return f"({x:.2f}, {y:.2f})"


def _fmt_feature(v: float | None, nd: int = 1) -> str:
    return "NULL" if v is None else f"{v:.{nd}f}"


def _packet_block(device_label: int, recs, n_nodes: int) -> str:
    """Window-averaged per-node features in the database row layout."""
    aoas, rsss = [], []
    for n in range(n_nodes):
        a = [r.phy[n].aoa for r in recs if r.phy[n].aoa is not None]
        s = [r.phy[n].rss for r in recs if r.phy[n].rss is not None]
        aoas.append(float(np.mean(a)) if a else None)
        rsss.append(float(np.mean(s)) if s else None)
    aoa_s = ", ".join(_fmt_feature(a) for a in aoas)
    rss_s = ", ".join(_fmt_feature(s) for s in rsss)
    return f"{{dev_{device_label}, AoA: [{aoa_s}]; RSSI: [{rss_s}]}}"


def export_sft(
    store: DeviceStore,
    scenario_name: str,
    area: tuple[float, float],
    poses: list[NodePose],
    window: tuple[int, int],
    template_id: str = "location_v1",
    trajectory_step_s: float = 2.0,
) -> SftSample:
    """Instantiate one template over a window; raises EmptyWindow when no
    device can be localized."""
    template = TEMPLATES[template_id]
    lp = LocalizeParams(area=area)
    fixes, _ = localize_all(store, window, poses, lp)
    if not fixes:
        raise EmptyWindow(f"no localizable device in [{window[0]}, {window[1]})")
    fixes.sort(key=lambda f: f.device_id)
    grouped = store.query_window(*window)

    vendor_of = {did: store.devices[did].fixed.vendor for did in grouped}
    model_of = {did: store.devices[did].fixed.model for did in grouped}
    activity_of = {did: store.devices[did].latest_activity for did in grouped}

    trajectories = {
        fx.device_id: track_device(store, fx.device_id, window, poses, step_s=trajectory_step_s, params=lp)
        for fx in fixes
    }
    speeds = {
        did: (float(np.median([p[3] for p in tr.points])) if tr.points else 0.0)
        for did, tr in trajectories.items()
    }
    moving = {did for did, v in speeds.items() if v > 0.25}

    device_ids = [fx.device_id for fx in fixes]
    n_apple = sum(1 for d in device_ids if vendor_of.get(d) == "Apple")
    n_android = sum(1 for d in device_ids if vendor_of.get(d) == "Android")

    fix_by_id = {fx.device_id: fx for fx in fixes}
    traj_lines = []
    for i, did in enumerate(device_ids, start=1):
        pts = trajectories[did].points
        if pts:
            coords = ", ".join(_fmt_xy(x, y) for _, x, y, _ in pts)
        else:
            coords = _fmt_xy(*fix_by_id[did].position)
        traj_lines.append(f"Device {i}: {coords}")

    slots = {
        "scenario": scenario_name,
        "area_x": f"{area[0]:.2f}",
        "area_y": f"{area[1]:.2f}",
        "n_nodes": len(poses),
        "node_coords": ", ".join(_fmt_xy(*p.position) for p in poses),
        "packet_blocks": ", ".join(
            _packet_block(i, grouped[did], len(poses)) for i, did in enumerate(device_ids, start=1)
        ),
        "n_devices": len(device_ids),
        "location_list": ", ".join(_fmt_xy(*fx.position) for fx in fixes),
        "n_apple": n_apple,
        "n_android": n_android,
        "trajectory_lines": "\n".join(traj_lines),
        "n_stationary": len(device_ids) - len(moving & set(device_ids)),
        "n_moving": len(moving & set(device_ids)),
        "n_macbook": sum(1 for d in device_ids if model_of.get(d) == "MacBook Pro"),
        "n_iphone": sum(1 for d in device_ids if model_of.get(d) == "iPhone"),
        "n_samsung": sum(1 for d in device_ids if (model_of.get(d) or "").startswith("Samsung")),
        "n_watching_video": sum(
            1 for d in device_ids if vendor_of.get(d) == "Apple" and activity_of.get(d) == "Watching Video"
        ),
        "n_phone_call": sum(
            1 for d in device_ids if vendor_of.get(d) == "Apple" and activity_of.get(d) == "Answered Phone Call"
        ),
        "n_airpods": sum(1 for d in device_ids if "AirPods" in (model_of.get(d) or "")),
    }
    turns = [(p.format(**slots), r.format(**slots)) for p, r in template.turns]
    meta = {
        "scenario": scenario_name,
        "window_us": [int(window[0]), int(window[1])],
        "device_count": len(device_ids),
        "device_ids": device_ids,
        "vendor_counts": {"Apple": n_apple, "Android": n_android},
        "template_id": template_id,
    }
    return SftSample(turns=turns, metadata=meta)


_COORD_RE = re.compile(r"\((-?\d+\.\d{2}), (-?\d+\.\d{2})\)")
_PLACEHOLDER_RE = re.compile(r"\{[A-Za-z_][A-Za-z0-9_]*\}")


def parse_locations(response: str) -> list[tuple[float, float]]:
    """Inverse of the turn-1 location rendering."""
    head = response.split("Among these")[0]
    return [(float(x), float(y)) for x, y in _COORD_RE.findall(head)]


def unresolved_placeholders(sample: SftSample) -> list[str]:
    found = []
    for prompt, response in sample.turns:
        found.extend(_PLACEHOLDER_RE.findall(prompt))
        found.extend(_PLACEHOLDER_RE.findall(response))
    return found
