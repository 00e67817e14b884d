"""Throughput/GPS traces: parsing, kappa recovery, Doppler and a user source.

Trace files are delimited text with one record per second::

    # timestamp_s, latitude_deg, longitude_deg, throughput_bps
    1500000000.0, 51.0543, 3.7174, 2451000.0

Commas or whitespace separate the fields and ``#`` starts a comment. The
transport mode is the file-name prefix up to the first ``_`` or ``-``
(``bus_03.csv`` is a bus trace).
"""
from __future__ import annotations

import logging
import math
import os
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .env import ChannelParams, doppler_rho
from .exceptions import TraceFormatError

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
EARTH_RADIUS_M = 6_371_008.8
TRANSPORT_MODES = ("foot", "bicycle", "bus", "tram", "train", "car")
KAPPA_MAX = 1e9

_LAG_X, _LAG_W = np.polynomial.laguerre.laggauss(64)


@dataclass(frozen=True)
class TraceRecord:
    timestamp: float
    latitude: float
    longitude: float
    throughput: float


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

_SPLIT = re.compile(r"[,\s;]+")


def parse_trace(path) -> List[TraceRecord]:
    """Read and validate a trace file.

    Raises
    ------
    TraceFormatError
        On malformed lines (all of them are listed in ``bad_lines``), negative
        throughput or timestamps that do not strictly increase.
    """
    records: List[TraceRecord] = []
    bad = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p for p in _SPLIT.split(line) if p]
            try:
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                ts, lat, lon, thr = (float(p) for p in parts)
                if not all(math.isfinite(v) for v in (ts, lat, lon, thr)):
                    raise ValueError("non-finite field")
                if thr < 0:
                    raise ValueError("negative throughput")
            except ValueError as exc:
                bad.append((lineno, str(exc)))
                continue
            records.append(TraceRecord(ts, lat, lon, thr))
    if bad:
        lines = ", ".join(str(n) for n, _ in bad[:10])
        raise TraceFormatError(f"{path}: malformed lines {lines}", bad_lines=bad)
    for i in range(1, len(records)):
        if records[i].timestamp <= records[i - 1].timestamp:
            raise TraceFormatError(
                f"{path}: timestamps not strictly increasing at record {i + 1}",
                bad_lines=[(i + 1, "non-monotonic timestamp")])
    return records


def emit_trace(records: Sequence[TraceRecord], path) -> None:
    """Write records in the format read by :func:`parse_trace` (lossless)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# timestamp_s, latitude_deg, longitude_deg, throughput_bps\n")
        for r in records:
            fh.write(f"{r.timestamp!r}, {r.latitude!r}, {r.longitude!r}, {r.throughput!r}\n")


def transport_mode(path) -> str:
    stem = Path(path).name.lower()
    prefix = re.split(r"[_\-.]", stem, maxsplit=1)[0]
    return prefix if prefix in TRANSPORT_MODES else "unknown"


# ---------------------------------------------------------------------------
# kappa recovery
# ---------------------------------------------------------------------------

def expected_throughput(kappa, W_meas: float = 15e6):
    """``E[W log2(1 + kappa |h|^2)]`` with ``|h|^2 ~ Exp(1)``, by 64-node Gauss-Laguerre."""
    kappa = np.asarray(kappa, float)
    vals = np.log2(1.0 + kappa[..., None] * _LAG_X) @ _LAG_W
    return W_meas * vals


def recover_kappa(x: float, W_meas: float = 15e6, kappa_max: float = KAPPA_MAX,
                  strict: bool = False) -> float:
    """Invert :func:`expected_throughput` for ``kappa`` by bisection.

    Measurements beyond the range reachable with ``kappa <= kappa_max`` are
    clamped to ``kappa_max`` (with a warning) or rejected if ``strict``.
    """
    if not x > 0:
        raise ValueError("throughput must be positive")
    top = float(expected_throughput(kappa_max, W_meas))
    if x >= top:
        msg = f"throughput {x:.4g} bit/s beyond the range of kappa <= {kappa_max:g}"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return kappa_max
    # bisection on log(kappa); the map is strictly increasing
    lo, hi = -60.0, math.log(kappa_max)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(expected_throughput(math.exp(mid), W_meas)) < x:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return math.exp(0.5 * (lo + hi))


def mean_snr_db(kappa: float) -> float:
    """Mean SNR ``E[kappa |h|^2] = kappa`` in dB."""
    return 10.0 * math.log10(kappa)


# ---------------------------------------------------------------------------
# mobility
# ---------------------------------------------------------------------------

def haversine(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_M):
    """Great-circle distance in metres between points given in degrees."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def estimate_speeds(records: Sequence[TraceRecord], max_speed: float = 50.0) -> np.ndarray:
    """Speed (m/s) per record from consecutive GPS fixes.

    The first record reuses the first interval's speed. Jumps faster than
    ``max_speed`` are clamped and reported with a warning.
    """
    if len(records) < 2:
        raise ValueError("need at least two records to estimate speed")
    ts = np.array([r.timestamp for r in records])
    lat = np.array([r.latitude for r in records])
    lon = np.array([r.longitude for r in records])
    v = haversine(lat[:-1], lon[:-1], lat[1:], lon[1:]) / np.diff(ts)
    fast = v > max_speed
    if np.any(fast):
        warnings.warn(f"{int(fast.sum())} GPS jumps above {max_speed} m/s clamped",
                      RuntimeWarning, stacklevel=2)
        v = np.minimum(v, max_speed)
    return np.concatenate([v[:1], v])


def estimate_rho(records: Sequence[TraceRecord], slot_duration: float = 1e-3,
                 carrier_freq: float = 1.8e9, max_speed: float = 50.0) -> np.ndarray:
    """Per-record channel correlation ``J0(2 pi f_d T_slot)`` with ``f_d = v f_c / c``."""
    v = estimate_speeds(records, max_speed)
    fd = v * carrier_freq / SPEED_OF_LIGHT
    return np.array([doppler_rho(f, slot_duration) for f in fd])


def quantize_blocks(w, block: float):
    """Round bandwidths up to whole multiples of ``block`` Hz.

    The result is never below ``w``: an under-allocation would fail the user.
    """
    if not block > 0:
        raise ValueError("block size must be positive")
    w = np.asarray(w, float)
    with np.errstate(invalid="ignore"):
        k = np.ceil(w / block)
        # undo a spurious round-up, then fix a spurious round-down
        k = np.where((k >= 1) & ((k - 1) * block >= w), k - 1, k)
        k = np.where(k * block < w, k + 1, k)
    out = np.where(np.isfinite(w), k * block, w)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# trace-driven users
# ---------------------------------------------------------------------------

@dataclass
class TraceSeries:
    mode: str
    path: str
    kappa: np.ndarray  # linear SNR at the measurement bandwidth
    rho: np.ndarray


class TraceUserSource:
    """Draws ``(distance, kappa, rho)`` for new users from a pool of traces.

    ``kappa`` recovered from a trace is a mean SNR; the simulator's kappa is
    an SNR per unit transmit power density, hence the division by ``power``.
    The distance returned is the ring-model distance with the same pathloss,
    so statistical schedulers see a consistent picture.

    Parameters
    ----------
    directory : path
        Folder with trace files.
    channel : ChannelParams
    W_meas : float
        Bandwidth assumed for the measurements (Hz).
    block : float
        Resource-block size (Hz) used by quantised schedulers.
    slot_duration_s, carrier_freq : float
        Physical slot length and carrier used for the Doppler conversion.
    modes : sequence of str, optional
        Restrict the pool to these transport modes.
    """

    def __init__(self, directory, channel: ChannelParams = ChannelParams(),
                 W_meas: float = 15e6, block: float = 200e3, slot_duration_s: float = 1e-3,
                 carrier_freq: float = 1.8e9, modes: Optional[Sequence[str]] = None):
        if not block > 0:
            raise ValueError("block size must be positive")
        self.channel = channel
        self.W_meas = W_meas
        self.block = block
        self.pools: Dict[str, List[TraceSeries]] = {}
        files = sorted(p for p in Path(directory).iterdir() if p.is_file())
        for p in files:
            mode = transport_mode(p)
            if modes is not None and mode not in modes:
                continue
            recs = parse_trace(p)
            if len(recs) < 2:
                log.warning("skipping %s: fewer than two records", p)
                continue
            thr = np.array([r.throughput for r in recs])
            keep = thr > 0
            if not np.any(keep):
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                kap = np.array([recover_kappa(x, W_meas) for x in thr[keep]])
                rho = estimate_rho(recs, slot_duration_s, carrier_freq)[keep]
            self.pools.setdefault(mode, []).append(TraceSeries(mode, str(p), kap, rho))
        if not self.pools:
            raise ValueError(f"no usable traces in {directory}")

    @property
    def series(self) -> List[TraceSeries]:
        return [s for pool in self.pools.values() for s in pool]

    def equivalent_distance(self, kappa_env):
        ch = self.channel
        return (ch.C_pl / (np.asarray(kappa_env) * ch.noise_psd)) ** (1.0 / ch.n_pl)

    def factory(self, rng: np.random.Generator):
        """User factory for :class:`~deepsched.env.SchedulingEnv`."""
        allseries = self.series
        s = allseries[rng.integers(len(allseries))]
        i = rng.integers(len(s.kappa))
        kappa_env = float(s.kappa[i]) / self.channel.power
        return float(self.equivalent_distance(kappa_env)), kappa_env, float(s.rho[i])

    __call__ = factory


# ---------------------------------------------------------------------------
# synthetic traces
# ---------------------------------------------------------------------------

_MODE_SPEED = {"foot": 1.4, "bicycle": 5.0, "bus": 9.0, "tram": 8.0, "train": 25.0, "car": 14.0}


def generate_trace(n_seconds: int, mode: str = "bus", rng=None, start=(51.05, 3.72),
                   t0: float = 1.5e9, W_meas: float = 15e6,
                   mean_snr_db_value: float = 6.0) -> List[TraceRecord]:
    """Synthetic trace in the on-disk format.

    Heading and speed follow slow random walks around a mode-typical speed;
    the mean SNR is a log-normal AR(1) process around ``mean_snr_db_value``.
    """
    rng = np.random.default_rng(rng)
    v0 = _MODE_SPEED.get(mode, 5.0)
    lat, lon = start
    heading = rng.uniform(0, 2 * math.pi)
    snr_db = mean_snr_db_value + rng.normal(0, 3.0)
    out = []
    for i in range(n_seconds):
        thr = float(expected_throughput(10 ** (snr_db / 10), W_meas))
        out.append(TraceRecord(t0 + i, round(lat, 7), round(lon, 7), round(thr, 1)))
        speed = max(0.0, v0 * (1 + 0.2 * rng.normal()))
        heading += 0.1 * rng.normal()
        step = speed / EARTH_RADIUS_M
        lat += math.degrees(step * math.cos(heading))
        lon += math.degrees(step * math.sin(heading) / max(math.cos(math.radians(lat)), 1e-6))
        snr_db = mean_snr_db_value + 0.9 * (snr_db - mean_snr_db_value) + rng.normal(0, 1.3)
    return out


def write_synthetic_traces(directory, n_files_per_mode: int = 1, n_seconds: int = 120,
                           modes: Sequence[str] = TRANSPORT_MODES, seed: int = 0) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    seqs = np.random.SeedSequence(seed).spawn(len(modes) * n_files_per_mode)
    paths = []
    j = 0
    for mode in modes:
        for i in range(n_files_per_mode):
            recs = generate_trace(n_seconds, mode, np.random.default_rng(seqs[j]))
            j += 1
            p = os.path.join(directory, f"{mode}_{i:02d}.csv")
            emit_trace(recs, p)
            paths.append(p)
    return paths
