"""Command-line pipeline: simulate, ingest, group, localize, export-sft,
report, track.

Each command reads and writes the library's file formats (scenario YAML,
packet/store/fix JSON Lines, raw I/Q captures, zone polygons, CSV
reports) so the whole chain runs from a shell.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dsp, frames, report, sft, simulate
from .grouping import GroupingParams, ingest_stream
from .locate import LocalizeParams, localize_all, track_device
from .store import DeviceStore, NodeFeatures, PacketRecord, read_packets_jsonl, write_packets_jsonl


def _resolve_scenario(spec: str, seed: int | None) -> simulate.Scenario:
    if Path(spec).exists():
        scn = simulate.load_scenario(spec)
    else:
        try:
            scn = simulate.standard_scenario(spec, n_apple=4, n_android=3, duration_s=120.0, seed=seed or 7)
        except simulate.InvalidScenario:
            raise SystemExit(f"error: {spec!r} is neither a scenario file nor a builtin name")
    if seed is not None:
        scn = simulate.Scenario(
            name=scn.name, area=scn.area, nodes=scn.nodes, devices=scn.devices,
            duration_s=scn.duration_s, seed=seed, noise=scn.noise,
        )
    return scn


def _parse_window(spec: str, store: DeviceStore) -> tuple[int, int]:
    """'a:b' in µs, or a trailing duration like '10m' / '30s' / '2h'
    meaning the last span of the stored data, or 'full'."""
    extent = store.time_extent()
    if extent is None:
        raise SystemExit("error: store holds no records")
    lo, hi = extent
    if spec == "full":
        return lo, hi + 1
    if ":" in spec:
        a, b = spec.split(":", 1)
        return int(a), int(b)
    units = {"s": 1e6, "m": 60e6, "h": 3600e6}
    if spec[-1] in units:
        span = int(float(spec[:-1]) * units[spec[-1]])
        return max(lo, hi + 1 - span), hi + 1
    raise SystemExit(f"error: cannot parse window {spec!r}")


def cmd_simulate(args: argparse.Namespace) -> int:
    scn = _resolve_scenario(args.scenario, args.seed)
    records, truth = simulate.generate(scn)
    write_packets_jsonl(args.out, records, node_count=len(scn.nodes))
    print(f"wrote {len(records)} packets from {len(scn.devices)} devices to {args.out}")
    if args.truth:
        with open(args.truth, "w") as fh:
            fh.write(json.dumps({"schema": 1, "scenario": scn.name}) + "\n")
            for i in range(len(records)):
                fh.write(json.dumps({
                    "ts_us": int(truth.ts_us[i]),
                    "addr": f"{int(truth.addresses[i]):012x}",
                    "device": int(truth.device_ids[i]),
                    "x": round(float(truth.positions[i][0]), 6),
                    "y": round(float(truth.positions[i][1]), 6),
                }) + "\n")
        print(f"wrote ground truth to {args.truth}")
    if args.iq_dir:
        out_dir = Path(args.iq_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for node_idx in range(len(scn.nodes)):
            cap = simulate.render_node_capture(scn, records, truth, node_idx, duration_ms=args.iq_ms)
            path = out_dir / f"node{node_idx}.iq"
            dsp.write_iq(path, cap)
            print(f"wrote {path} ({cap.n_antennas} antennas, {cap.n_samples} samples)")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    per_node: list[list[tuple[int, bytes, float, float, float]]] = []
    for path in args.iq:
        capture = dsp.read_iq(path)
        per_node.append(_extract_node_packets(capture, args.threshold))
    merged = _merge_nodes(per_node)
    write_packets_jsonl(args.out, merged, node_count=len(args.iq))
    print(f"decoded {len(merged)} packets from {len(args.iq)} node capture(s) into {args.out}")
    return 0


def _extract_node_packets(capture: dsp.IqFrame, threshold_db: float):
    """Detect, demodulate and feature-extract every packet in one capture."""
    out = []
    if capture.sample_rate >= dsp.NUM_CHANNELS * dsp.CHANNEL_SPACING:
        streams = [s for s in dsp.channelize(capture)]
    else:
        streams = [capture]
    for stream in streams:
        channel = _channel_of(stream.center_freq)
        cfg = dsp.SteeringConfig(antennas=stream.n_antennas, center_freq=stream.center_freq)
        for ts, (i0, i1) in dsp.detect_packets(stream, threshold_db=threshold_db):
            span = stream.span(i0, i1)
            try:
                bits, cfo = dsp.demodulate(span)
                frame, crc_ok = frames.air_bits_to_frame(bits, channel)
            except (dsp.SyncFailure, frames.MalformedFrame):
                continue
            if not crc_ok:
                continue
            rss = dsp.estimate_rss(span)
            aoa = None
            if stream.n_antennas >= 2:
                aoa = dsp.estimate_aoa_music(span, cfg)[0]
            out.append((ts, frame.raw, channel, rss, cfo, aoa))
    out.sort(key=lambda t: t[0])
    return out


def _channel_of(center_freq: float) -> int:
    for ch in range(dsp.NUM_CHANNELS):
        if abs(dsp.ble_channel_center(ch) - center_freq) < 1e3:
            return ch
    return 37


def _merge_nodes(per_node) -> list[PacketRecord]:
    """Join per-node detections of the same transmission by frame bytes
    and near-identical timestamps."""
    n_nodes = len(per_node)
    merged: dict[tuple[int, bytes], list] = {}
    order: list[tuple[int, bytes]] = []
    for node_idx, dets in enumerate(per_node):
        for ts, raw, channel, rss, cfo, aoa in dets:
            key = None
            for dt in (0, -1, 1, -2, 2, -3, 3):
                cand = (ts + dt, raw)
                if cand in merged:
                    key = cand
                    break
            if key is None:
                key = (ts, raw)
                merged[key] = [None] * n_nodes + [channel]
                order.append(key)
            merged[key][node_idx] = (rss, cfo, aoa)
    records = []
    for ts, raw in order:
        row = merged[(ts, raw)]
        channel = row[-1]
        frame = frames.decode_adv(raw, channel)
        phy = tuple(
            NodeFeatures(*feat) if feat is not None else NodeFeatures(None, None, None)
            for feat in row[:-1]
        )
        records.append(
            PacketRecord(ts, frame.adv_address, channel, phy, frames.decode_facts(frame))
        )
    records.sort(key=lambda r: (r.ts_us, r.adv_address))
    return records


def cmd_group(args: argparse.Namespace) -> int:
    records, node_count = read_packets_jsonl(args.packets)
    params = GroupingParams.from_file(args.grouping_params) if args.grouping_params else GroupingParams()
    store = DeviceStore(node_count=node_count)
    out = ingest_stream(records, store, params)
    created = sum(1 for _, c in out if c)
    store.persist(args.out)
    print(f"grouped {len(records)} packets into {created} devices -> {args.out}")
    return 0


def cmd_localize(args: argparse.Namespace) -> int:
    store = DeviceStore.load(args.store)
    scn = _resolve_scenario(args.scenario, None)
    window = _parse_window(args.window, store)
    fixes, skipped = localize_all(store, window, list(scn.nodes), LocalizeParams(area=scn.area))
    with open(args.out, "w") as fh:
        for fx in fixes:
            fh.write(json.dumps({
                "ts_us": fx.ts_us,
                "device_id": fx.device_id,
                "x_m": round(fx.position[0], 6),
                "y_m": round(fx.position[1], 6),
                "cov": [round(float(v), 9) for v in np.asarray(fx.covariance).ravel()],
                "nodes_used": fx.nodes_used,
            }) + "\n")
    print(f"localized {len(fixes)} devices ({len(skipped)} skipped) -> {args.out}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("ts_us,device_id,x_m,y_m,nodes_used\n")
            for fx in fixes:
                fh.write(f"{fx.ts_us},{fx.device_id},{fx.position[0]:.4f},{fx.position[1]:.4f},{fx.nodes_used}\n")
    return 0


def cmd_export_sft(args: argparse.Namespace) -> int:
    store = DeviceStore.load(args.store)
    scn = _resolve_scenario(args.scenario, None)
    t0, t1 = _parse_window(args.window, store)
    step = (t1 - t0) // args.samples
    n_written = 0
    with open(args.out, "w") as fh:
        for k in range(args.samples):
            w = (t0 + k * step, t0 + (k + 1) * step)
            try:
                sample = sft.export_sft(
                    store, scn.name, scn.area, list(scn.nodes), w, template_id=args.template
                )
            except sft.EmptyWindow:
                continue
            fh.write(json.dumps({"turns": sample.turns, "metadata": sample.metadata}) + "\n")
            n_written += 1
    print(f"wrote {n_written} SFT sample(s) to {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    store = DeviceStore.load(args.store)
    window = _parse_window(args.window, store)
    n_new, fresh = report.count_new_visitors(store, window)
    print(f"new visitors: {n_new}")
    flow = report.visitor_flow(store, window, args.bin)
    if args.out:
        flow.to_csv(args.out)
        print(f"visitor flow ({len(flow.bin_starts_us)} bins) -> {args.out}")
    if args.zones:
        scn = _resolve_scenario(args.scenario, None) if args.scenario else None
        if scn is None:
            raise SystemExit("error: --zones needs --scenario for node poses")
        zones = report.load_zones(args.zones)
        counts = report.zone_popularity(
            store, window, zones, dwell_min_s=args.dwell, poses=list(scn.nodes), area=scn.area,
        )
        for name in sorted(counts, key=lambda n: -counts[n]):
            print(f"{name}: {counts[name]} individuals")
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    store = DeviceStore.load(args.store)
    scn = _resolve_scenario(args.scenario, None)
    window = _parse_window(args.window, store)
    traj = track_device(
        store, args.device, window, list(scn.nodes), step_s=args.step, params=LocalizeParams(area=scn.area)
    )
    if not traj.points:
        raise SystemExit(f"error: no trajectory for device {args.device} in the window")
    with open(args.out, "w") as fh:
        fh.write("ts_us,x_m,y_m,speed_mps\n")
        for ts, x, y, v in traj.points:
            fh.write(f"{ts},{x:.4f},{y:.4f},{v:.4f}\n")
    print(f"trajectory with {len(traj.points)} points -> {args.out}")
    if args.truth:
        true_pts = _truth_positions(args.truth, store, args.device)
        if len(true_pts) >= 1:
            d = report.frechet_distance(traj.positions(), np.asarray(true_pts))
            print(f"frechet distance vs ground truth: {d:.3f} m")
    return 0


def _truth_positions(path: str, store: DeviceStore, device_id: int) -> list[tuple[float, float]]:
    dev = store.devices.get(device_id)
    if dev is None:
        raise SystemExit(f"error: unknown device {device_id}")
    wanted = {(r.ts_us, r.adv_address) for r in dev.packets}
    pts = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            obj = json.loads(line)
            if (obj["ts_us"], int(obj["addr"], 16)) in wanted:
                pts.append((obj["x"], obj["y"]))
    return pts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bletrack", description="Passive BLE device tracking pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a labelled packet stream from a scenario")
    sp.add_argument("--scenario", required=True, help="scenario YAML path or builtin name")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True, help="packet JSONL output")
    sp.add_argument("--truth", default=None, help="ground-truth JSONL output")
    sp.add_argument("--iq-dir", default=None, help="also render per-node raw I/Q captures")
    sp.add_argument("--iq-ms", type=float, default=500.0, help="I/Q capture length (ms)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("ingest", help="decode raw I/Q captures into packet features")
    sp.add_argument("--iq", nargs="+", required=True, help="one capture file per sniffing node")
    sp.add_argument("--threshold", type=float, default=12.0, help="detection threshold (dB over noise)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("group", help="group a packet stream into devices")
    sp.add_argument("--packets", required=True)
    sp.add_argument("--grouping-params", default=None, help="key=value parameter file")
    sp.add_argument("--out", required=True, help="device store JSONL output")
    sp.set_defaults(func=cmd_group)

    sp = sub.add_parser("localize", help="triangulate devices over a window")
    sp.add_argument("--store", required=True)
    sp.add_argument("--scenario", required=True, help="provides node poses and area")
    sp.add_argument("--window", default="full", help="'a:b' µs, '10m' (last 10 min), or 'full'")
    sp.add_argument("--out", required=True, help="fix JSONL output")
    sp.add_argument("--csv", default=None, help="also write a CSV for plotting")
    sp.set_defaults(func=cmd_localize)

    sp = sub.add_parser("export-sft", help="emit fine-tuning prompt/response samples")
    sp.add_argument("--store", required=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--window", default="full")
    sp.add_argument("--template", default="location_v1")
    sp.add_argument("--samples", type=int, default=1, help="split the window into this many samples")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_sft)

    sp = sub.add_parser("report", help="visitor counts, flow and zone popularity")
    sp.add_argument("--store", required=True)
    sp.add_argument("--window", default="full")
    sp.add_argument("--bin", type=float, default=15.0, help="flow bin size (minutes)")
    sp.add_argument("--zones", default=None, help="zone polygon file")
    sp.add_argument("--dwell", type=float, default=60.0, help="zone dwell threshold (s)")
    sp.add_argument("--scenario", default=None, help="node poses for zone reports")
    sp.add_argument("--out", default=None, help="flow CSV output")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("track", help="trajectory CSV for one device, with optional truth overlay")
    sp.add_argument("--store", required=True)
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--device", type=int, required=True)
    sp.add_argument("--window", default="full")
    sp.add_argument("--step", type=float, default=2.0, help="localization step (s)")
    sp.add_argument("--truth", default=None, help="ground-truth JSONL for a Frechet comparison")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_track)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
