"""Baseband DSP for the sniffing node.

GFSK synthesis/demodulation at 1 Msym/s, a critically sampled polyphase
channelizer splitting a wideband capture into the 40 2-MHz channels,
energy-based packet detection with µs timestamps, and per-packet feature
extraction: RSS, carrier frequency offset, and MUSIC angle of arrival on
raw multi-antenna I/Q.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .frames import ACCESS_ADDRESS_BITS, PREAMBLE_BITS

SYMBOL_RATE = 1_000_000.0  # 1 Msym/s BLE LE 1M
CHANNEL_SPACING = 2_000_000.0
NUM_CHANNELS = 40
LIGHT_SPEED = 2.998e8
BLE_BAND_CENTER = 2.441e9  # center of the 2401-2481 MHz plan

MODULATION_INDEX = 0.5
GAUSS_BT = 0.5

_SYNC_BITS = np.concatenate([PREAMBLE_BITS, ACCESS_ADDRESS_BITS])


class BadParams(ValueError):
    """Non-positive rate or other invalid modulation parameter."""


class BadSpan(ValueError):
    """Wideband sample rate below (or incompatible with) the channel plan."""


class SyncFailure(ValueError):
    """Access-address correlation below threshold: no packet in the span."""


class DegenerateCovariance(ValueError):
    """Sample covariance has rank 0 (all-zero input)."""


@dataclass
class IqFrame:
    """Per-antenna complex baseband block: samples has shape (M, N_s)."""

    samples: np.ndarray
    sample_rate: float
    center_freq: float
    start_time: float = 0.0  # µs

    def __post_init__(self) -> None:
        self.samples = np.atleast_2d(np.asarray(self.samples))
        if self.sample_rate <= 0:
            raise BadParams("sample_rate must be positive")
        if self.samples.shape[1] < 1:
            raise BadParams("need at least one sample per antenna")

    @property
    def n_antennas(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def span(self, i0: int, i1: int) -> "IqFrame":
        """Sub-block [i0:i1) with start_time shifted accordingly."""
        return IqFrame(
            self.samples[:, i0:i1],
            self.sample_rate,
            self.center_freq,
            self.start_time + i0 / self.sample_rate * 1e6,
        )


# --- channel plan ---

def ble_channel_center(channel: int) -> float:
    """Absolute center frequency (Hz) of a BLE channel index 0..39."""
    if channel == 37:
        pos = 0
    elif channel == 38:
        pos = 12
    elif channel == 39:
        pos = 39
    elif 0 <= channel <= 10:
        pos = channel + 1
    elif 11 <= channel <= 36:
        pos = channel + 2
    else:
        raise BadParams(f"no BLE channel {channel}")
    return 2.402e9 + pos * CHANNEL_SPACING


_POSITION_TO_CHANNEL = [37] + list(range(0, 11)) + [38] + list(range(11, 37)) + [39]


# --- GFSK modulator ---

def _gauss_taps(bt: float, sps: int, span_symbols: int = 3) -> np.ndarray:
    # CCSDS-style Gaussian pulse, normalized so filtered NRZ peaks at +-1
    sigma = np.sqrt(np.log(2.0)) / (2.0 * np.pi * bt)
    t = np.arange(-span_symbols / 2, span_symbols / 2 + 1.0 / sps, 1.0 / sps)
    h = np.exp(-(t**2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))
    return h / h.sum()


def gfsk_modulate(
    bits: np.ndarray,
    sps: int = 8,
    bt: float = GAUSS_BT,
    mod_index: float = MODULATION_INDEX,
    cfo: float = 0.0,
    amplitude: float = 1.0,
    center_freq: float = 2.402e9,
    start_time: float = 0.0,
    phase0: float = 0.0,
) -> IqFrame:
    """Modulate a bit sequence to complex baseband.

    Output length is exactly len(bits)*sps; the Gaussian filter is edge
    padded with the first/last NRZ level.  `cfo` appears as a constant
    extra phase increment.
    """
    bits = np.asarray(bits)
    if bits.size == 0:
        raise BadParams("bits must be nonempty")
    if sps < 2:
        raise BadParams("need at least 2 samples per symbol")
    if amplitude <= 0:
        raise BadParams("amplitude must be positive")
    nrz = bits.astype(np.float64) * 2.0 - 1.0
    wave = np.repeat(nrz, sps)
    taps = _gauss_taps(bt, sps)
    pad = len(taps)
    wave = np.concatenate([np.full(pad, nrz[0]), wave, np.full(pad, nrz[-1])])
    filtered = np.convolve(wave, taps, mode="same")[pad : pad + bits.size * sps]
    fs = sps * SYMBOL_RATE
    phase = phase0 + np.cumsum(2.0 * np.pi * (mod_index / 2.0) * filtered / sps)
    phase = phase + 2.0 * np.pi * cfo / fs * np.arange(bits.size * sps)
    iq = amplitude * np.exp(1j * phase)
    return IqFrame(iq[np.newaxis, :], fs, center_freq, start_time)


# --- polyphase channelizer ---

def _prototype_filter(n_branches: int, taps_per_branch: int, atten_db: float = 70.0) -> np.ndarray:
    numtaps = n_branches * taps_per_branch
    beta = signal.kaiser_beta(atten_db)
    # cutoff at the channel half-width (1 MHz of the 2 MHz spacing)
    return signal.firwin(numtaps, 1.0 / n_branches, window=("kaiser", beta))


def channelize(wideband: IqFrame, taps_per_branch: int = 14) -> list[IqFrame]:
    """Split a wideband capture into the 40 BLE channels.

    Critically sampled DFT filter bank: fold the windowed input into
    n_branches phases and DFT across them.  The returned list is ordered
    by BLE channel index 0..39; each stream is at 2 MHz with its absolute
    center frequency set.  Requires sample_rate to be a multiple of 2 MHz
    and wide enough to span the 80 MHz plan.
    """
    fs = wideband.sample_rate
    n_branches = int(round(fs / CHANNEL_SPACING))
    if fs < NUM_CHANNELS * CHANNEL_SPACING or abs(fs - n_branches * CHANNEL_SPACING) > 1e-3:
        raise BadSpan("sample rate must be a multiple of 2 MHz covering the 40-channel plan")

    x = wideband.samples[0].astype(np.complex128)
    offsets = np.array(
        [ble_channel_center(_POSITION_TO_CHANNEL[p]) - wideband.center_freq for p in range(NUM_CHANNELS)]
    )
    if np.max(np.abs(offsets)) > fs / 2 + CHANNEL_SPACING / 2:
        raise BadSpan("capture center frequency leaves channels outside the span")

    # remove the common fractional offset so every channel lands on a DFT bin
    frac = offsets[0] - round(offsets[0] / CHANNEL_SPACING) * CHANNEL_SPACING
    if abs(frac) > 1e-3:
        n = np.arange(x.size)
        x = x * np.exp(-2j * np.pi * frac / fs * n)

    h = _prototype_filter(n_branches, taps_per_branch)
    L = h.size
    n_out = x.size // n_branches
    xp = np.concatenate([x, np.zeros(L, dtype=np.complex128)])
    # windows[m] = x[m*M : m*M + L] * h, folded into M phases then DFT'd
    idx = np.arange(L)[np.newaxis, :] + (np.arange(n_out) * n_branches)[:, np.newaxis]
    windows = xp[idx] * h
    folded = windows.reshape(n_out, taps_per_branch, n_branches).sum(axis=1)
    bins = np.fft.fft(folded, axis=1)  # bins[:, k] holds content near +k*fs/M

    group_delay_us = (L - 1) / 2.0 / fs * 1e6
    out: list[IqFrame] = [None] * NUM_CHANNELS  # type: ignore[list-item]
    for p in range(NUM_CHANNELS):
        ch = _POSITION_TO_CHANNEL[p]
        k = int(round((offsets[p] - frac) / CHANNEL_SPACING)) % n_branches
        out[ch] = IqFrame(
            bins[:, k][np.newaxis, :].copy(),
            CHANNEL_SPACING,
            ble_channel_center(ch),
            wideband.start_time + group_delay_us,
        )
    return out


# --- packet detection ---

def detect_packets(
    channel: IqFrame,
    threshold_db: float = 12.0,
    min_len_us: float = 80.0,
    confirm_sync: bool = True,
) -> list[tuple[int, tuple[int, int]]]:
    """Detect packets on one channel stream.

    Dual-threshold energy detector over a smoothed power envelope with the
    noise floor taken from the median power; candidates are confirmed by an
    access-address correlation pass.  Returns (start_time µs, (i0, i1))
    sorted by time, non-overlapping; start times have 1 µs resolution.
    """
    x = channel.samples[0]
    fs = channel.sample_rate
    p = np.abs(x) ** 2
    n = p.size
    if n < 64:
        return []
    noise = max(float(np.median(p)) / np.log(2.0), 1e-30)  # exponential median -> mean
    hi = noise * 10 ** (threshold_db / 10.0)
    lo = noise * 10 ** ((threshold_db - 6.0) / 10.0)

    w = max(4, int(8e-6 * fs))
    env = np.convolve(p, np.ones(w) / w, mode="same")
    if not (env > hi).any():
        return []

    # contiguous runs above the low threshold, kept if they cross the high one
    above = env > lo
    edges = np.diff(above.astype(np.int8))
    starts = list(np.nonzero(edges == 1)[0] + 1)
    ends = list(np.nonzero(edges == -1)[0] + 1)
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(n)

    # bridge short dips (GFSK envelope is flat; dips come from noise)
    gap = max(w, int(20e-6 * fs))
    merged: list[list[int]] = []
    for a, b in zip(starts, ends):
        if merged and a - merged[-1][1] < gap:
            merged[-1][1] = b
        else:
            merged.append([a, b])

    min_len = int(min_len_us * 1e-6 * fs)
    detections: list[tuple[int, tuple[int, int]]] = []
    last_end = -1
    for a, b in merged:
        if not (env[a:b] > hi).any():
            continue
        i0 = _refine_onset(p, a, w, fs)
        i0 = max(i0, last_end)
        i1 = min(n, b + w // 2)
        if i1 - i0 < min_len:
            continue
        if confirm_sync and not _has_sync(x[i0:i1], fs):
            continue
        ts = int(round(channel.start_time + i0 / fs * 1e6))
        detections.append((ts, (i0, i1)))
        last_end = i1
    return detections


def _refine_onset(p: np.ndarray, coarse: int, w_env: int, fs: float) -> int:
    """Refine a rise index to the half-power crossing of the raw envelope.

    With the threshold at half the packet plateau, the causal short-window
    mean first crosses when the window half covers signal, so the true
    onset sits half a window later.
    """
    w2 = max(2, int(2e-6 * fs))
    back = max(w_env * 2, int(40e-6 * fs))
    j0 = max(0, coarse - back)
    j1 = min(p.size, coarse + back)
    seg = p[j0:j1]
    if seg.size < 4 * w2:
        return coarse
    plateau = float(np.median(p[min(coarse + w2, p.size - 1) : min(coarse + 8 * w2, p.size)]))
    if plateau <= 0:
        return coarse
    short = np.convolve(seg, np.ones(w2) / w2, mode="valid")
    over = np.nonzero(short > plateau / 2.0)[0]
    if over.size == 0:
        return coarse
    return j0 + int(over[0]) + w2 // 2


def _coarse_freq_offset(x: np.ndarray, sps: int) -> float:
    """Modulation-free CFO estimate in rad/sample.

    With modulation index 0.5 the per-symbol phase step is +-pi/2, so the
    squared symbol-lag autocorrelation contributes e^{j(pi + 2*cfo_step)}
    regardless of the bit; the angle of its negated sum halves back to the
    CFO.  Unambiguous for |cfo| < symbol_rate/4.
    """
    if x.size <= sps:
        return 0.0
    u = x[sps:] * np.conj(x[:-sps])
    acc = np.sum(u * u)
    if abs(acc) <= 1e-30:
        return 0.0
    return float(np.angle(-acc) / (2.0 * sps))


def _has_sync(x: np.ndarray, fs: float, max_errors: int = 0) -> bool:
    step = int(round(fs / SYMBOL_RATE))
    if step < 1:
        return False
    w_off = _coarse_freq_offset(x, step)
    f_inst = np.angle(x[1:] * np.conj(x[:-1])) - w_off
    if step >= 4:  # integrate over half a symbol before deciding
        f_inst = np.convolve(f_inst, np.ones(step // 2) / (step // 2), mode="same")
    for phase in range(step):
        bits = (f_inst[phase::step] > 0).astype(np.int8)
        if bits.size < _SYNC_BITS.size:
            continue
        win = np.lib.stride_tricks.sliding_window_view(bits, ACCESS_ADDRESS_BITS.size)
        errs = (win != ACCESS_ADDRESS_BITS).sum(axis=1)
        if (errs <= max_errors).any():
            return True
    return False


# --- demodulation ---

def demodulate(span: IqFrame, bt: float = GAUSS_BT, mod_index: float = MODULATION_INDEX) -> tuple[np.ndarray, float]:
    """Recover bits and CFO from a packet span (first antenna).

    CFO is estimated from the preamble phase trajectory, compensated, and
    refined with a data-aided least-squares phase-slope fit over the whole
    packet.  Returned bits start at the preamble.  Raises SyncFailure when
    the access address cannot be found.
    """
    x = span.samples[0].astype(np.complex128)
    fs = span.sample_rate
    sps_in = fs / SYMBOL_RATE
    if sps_in < 1.999:
        raise BadParams("span sample rate below 2 samples per symbol")
    up = max(1, int(np.ceil(8.0 / sps_in)))
    if up > 1:
        x = signal.resample_poly(x, up, 1)
        fs *= up
    sps = int(round(fs / SYMBOL_RATE))
    # the span may begin up to a symbol inside the packet; pad so the bit
    # grid can start before sample 0 (replicated sample keeps d_inst clean)
    x = np.concatenate([np.full(sps, x[0]), x])

    # coarse CFO + coarse symbol alignment from the discriminator bit stream
    d_inst = np.angle(x[1:] * np.conj(x[:-1]))
    w_off = _coarse_freq_offset(x, sps)
    coarse = w_off * fs / (2.0 * np.pi)
    d_smooth = d_inst - w_off
    if sps >= 4:  # integrate over half a symbol before sync decisions
        d_smooth = np.convolve(d_smooth, np.ones(sps // 2) / (sps // 2), mode="same")
    coarse_start = _sync_search(d_smooth, sps)
    if coarse_start is None:
        raise SyncFailure("access address correlation failed")

    # fine symbol timing: correlate the ideal sync-word frequency pulse
    ref_sync = gfsk_modulate(_SYNC_BITS, sps=sps, bt=bt, mod_index=mod_index).samples[0]
    ref_d = np.angle(ref_sync[1:] * np.conj(ref_sync[:-1]))
    start = _fine_timing(d_inst - 2.0 * np.pi * coarse / fs, ref_d, coarse_start, sps)

    # refine coarse CFO on the preamble (alternating bits cancel modulation)
    pre = d_inst[start : start + PREAMBLE_BITS.size * sps]
    if pre.size >= 2 * sps:
        coarse = float(np.mean(pre)) * fs / (2.0 * np.pi)

    n_bits = (x.size - start) // sps
    if n_bits < _SYNC_BITS.size:
        raise SyncFailure("span too short after alignment")
    derot = x[start : start + n_bits * sps] * np.exp(
        -2j * np.pi * coarse / fs * np.arange(n_bits * sps)
    )
    bits = _decide_bits(derot, sps)

    # data-aided fine CFO: conjugate against the regenerated ideal baseband,
    # fitted over the true packet extent only (the span may trail into noise)
    n_fit = _packet_extent_bits(bits, span.center_freq)
    ref = gfsk_modulate(bits[:n_fit], sps=sps, bt=bt, mod_index=mod_index).samples[0]
    ph = np.unwrap(np.angle(derot[: n_fit * sps] * np.conj(ref)))
    t = np.arange(ph.size) / fs
    slope = np.polyfit(t, ph, 1)[0]
    cfo = coarse + slope / (2.0 * np.pi)

    derot2 = x[start : start + n_bits * sps] * np.exp(-2j * np.pi * cfo / fs * np.arange(n_bits * sps))
    bits = _decide_bits(derot2, sps)
    return bits, float(cfo)


def _packet_extent_bits(bits: np.ndarray, center_freq: float) -> int:
    """Bit count of the full packet, from the de-whitened PDU length octet;
    falls back to the sync word when the header is not readable."""
    from .frames import whitening_sequence  # local import to avoid a cycle at module load

    try:
        channel = _POSITION_TO_CHANNEL[int(round((center_freq - 2.402e9) / CHANNEL_SPACING))]
    except IndexError:
        return min(_SYNC_BITS.size, bits.size)
    head = bits[_SYNC_BITS.size : _SYNC_BITS.size + 16]
    if head.size < 16:
        return min(_SYNC_BITS.size, bits.size)
    clear = head ^ whitening_sequence(channel, 16)
    length = int(np.packbits(clear[8:16].astype(np.uint8), bitorder="little")[0])
    total = _SYNC_BITS.size + (2 + length + 3) * 8
    return min(total, bits.size)


def _decide_bits(x: np.ndarray, sps: int) -> np.ndarray:
    """Mid-symbol average of the instantaneous frequency, one bit per sps."""
    d = np.angle(x[1:] * np.conj(x[:-1]))
    n_bits = x.size // sps
    if d.size < n_bits * sps:
        d = np.append(d, d[-1])
    mat = d[: n_bits * sps].reshape(n_bits, sps)
    lo = sps // 4
    hi = max(lo + 1, sps - sps // 4)
    return (mat[:, lo:hi].mean(axis=1) > 0).astype(np.int8)


def _sync_search(d_inst: np.ndarray, sps: int) -> int | None:
    """Locate the packet start (preamble, coarse to one symbol) via an exact
    access-address match in the per-phase discriminator bit streams.

    The span may begin a few samples into the preamble, so the derived
    start can be slightly negative; it is clamped while "no match at all"
    stays distinct (None).
    """
    best: int | None = None
    for phase in range(sps):
        bits = (d_inst[phase::sps] > 0).astype(np.int8)
        if bits.size < _SYNC_BITS.size:
            continue
        win = np.lib.stride_tricks.sliding_window_view(bits, ACCESS_ADDRESS_BITS.size)
        hits = np.nonzero((win == ACCESS_ADDRESS_BITS).all(axis=1))[0]
        if hits.size:
            aa_start_bit = int(hits[0])
            start = phase + (aa_start_bit - PREAMBLE_BITS.size) * sps
            if best is None or start < best:
                best = start
    return max(0, best) if best is not None else None


def _fine_timing(d_inst: np.ndarray, ref_d: np.ndarray, coarse_start: int, sps: int) -> int:
    """Best sample offset of the preamble start within +-1 symbol of the
    coarse estimate, by correlating the known sync frequency waveform."""
    best_k, best_c = max(0, coarse_start), -np.inf
    for k in range(max(0, coarse_start - sps), coarse_start + sps + 1):
        seg = d_inst[k : k + ref_d.size]
        if seg.size < ref_d.size:
            break
        c = float(np.dot(seg, ref_d))
        if c > best_c:
            best_k, best_c = k, c
    return best_k


# --- feature extraction ---

def estimate_rss(span: IqFrame, cal_offset: float = 0.0) -> float:
    """10*log10(mean |sample|^2) + cal_offset, over the first antenna."""
    p = float(np.mean(np.abs(span.samples[0]) ** 2))
    return 10.0 * np.log10(max(p, 1e-30)) + cal_offset


@dataclass
class SteeringConfig:
    antennas: int = 2
    spacing: float = LIGHT_SPEED / 2.44e9 / 2.0  # lambda/2 at 2.44 GHz
    center_freq: float = 2.44e9
    grid: np.ndarray = field(default_factory=lambda: np.arange(-90.0, 90.0 + 0.25, 0.5))
    light_speed: float = LIGHT_SPEED

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.antennas < 2:
            raise BadParams("need at least two antennas")
        if self.spacing <= 0:
            raise BadParams("spacing must be positive")
        if self.grid.size == 0 or np.any(np.diff(self.grid) <= 0):
            raise BadParams("grid must be nonempty and strictly increasing")

    @property
    def delta(self) -> float:
        return 2.0 * np.pi * self.spacing * self.center_freq / self.light_speed

    def steering(self, theta_deg: np.ndarray) -> np.ndarray:
        """Steering matrix b(theta), shape (M, len(theta)), elements 0..M-1."""
        th = np.deg2rad(np.atleast_1d(theta_deg))
        m = np.arange(self.antennas)[:, np.newaxis]
        return np.exp(1j * self.delta * np.sin(th)[np.newaxis, :] * m)


@dataclass
class PseudoSpectrum:
    covariance: np.ndarray
    noise_subspace: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    peak: float


def estimate_aoa_music(frame: IqFrame, config: SteeringConfig, n_signals: int = 1) -> tuple[float, PseudoSpectrum]:
    """MUSIC angle of arrival from raw multi-antenna baseband I/Q.

    Builds the sample covariance sum(y_i y_i^H)/N_s, takes the noise
    subspace from the smallest eigenvalues (for two antennas, the
    eigenvector of the smaller eigenvalue), and scans the pseudo-spectrum
    1/|b(theta)^H E E^H b(theta)| over the grid.
    """
    y = frame.samples
    m, n = y.shape
    if m < 2:
        raise BadParams("MUSIC needs at least two antennas")
    if n < m:
        raise BadParams("need at least as many snapshots as antennas")
    if m != config.antennas:
        raise BadParams("antenna count does not match steering config")
    cov = y @ y.conj().T / n
    if float(np.trace(cov).real) <= 1e-30:
        raise DegenerateCovariance("all-zero input")
    evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues
    noise = evecs[:, : m - n_signals]
    b = config.steering(config.grid)
    proj = noise.conj().T @ b
    denom = np.maximum(np.sum(np.abs(proj) ** 2, axis=0), 1e-30)
    values = 1.0 / denom
    peak = float(config.grid[int(np.argmax(values))])
    return peak, PseudoSpectrum(cov, noise, config.grid.copy(), values, peak)


# --- raw I/Q file format ---

_IQ_MAGIC = b"BLEIQ001"
_HEADER = struct.Struct("<8sIQddq")  # magic, M, N_s, sample_rate, center_freq, start_time_us


class IoFailure(OSError):
    pass


def write_iq(path: str | Path, frame: IqFrame) -> None:
    """Interleaved float32 (I,Q) pairs, one antenna plane after another,
    behind a 64-byte header."""
    m, n = frame.samples.shape
    header = _HEADER.pack(_IQ_MAGIC, m, n, frame.sample_rate, frame.center_freq, int(round(frame.start_time)))
    header = header.ljust(64, b"\x00")
    planes = np.empty((m, 2 * n), dtype=np.float32)
    planes[:, 0::2] = frame.samples.real
    planes[:, 1::2] = frame.samples.imag
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(planes.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_iq(path: str | Path) -> IqFrame:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) < 64:
        raise IoFailure("truncated I/Q file header")
    magic, m, n, fs, fc, t0 = _HEADER.unpack(blob[: _HEADER.size])
    if magic != _IQ_MAGIC:
        raise IoFailure("not a raw I/Q capture file")
    flat = np.frombuffer(blob[64:], dtype=np.float32)
    if flat.size != 2 * m * n:
        raise IoFailure("I/Q payload size mismatch")
    planes = flat.reshape(m, 2 * n)
    samples = planes[:, 0::2].astype(np.complex128) + 1j * planes[:, 1::2].astype(np.complex128)
    return IqFrame(samples, fs, fc, float(t0))


def awgn(frame: IqFrame, snr_db: float, rng: np.random.Generator, signal_power: float | None = None) -> IqFrame:
    """Add complex white noise for a target in-band SNR."""
    if signal_power is None:
        signal_power = float(np.mean(np.abs(frame.samples) ** 2))
    sigma = np.sqrt(signal_power / 10 ** (snr_db / 10.0) / 2.0)
    noise = sigma * (
        rng.standard_normal(frame.samples.shape) + 1j * rng.standard_normal(frame.samples.shape)
    )
    return IqFrame(frame.samples + noise, frame.sample_rate, frame.center_freq, frame.start_time)
