"""Timestamped power traces with kernel markers, and the sweep tables built from them.

Trace CSV layout (one row per sample or marker, rows in time order)::

    # sample_rate_hz=100.0
    t_s,record,channel,value,kernel,freq_mhz
    12.340,sample,package,105.34,,
    12.300,begin,,,propagate,650
    13.900,end,,,propagate,650

Lines starting with ``#`` before the header carry ``key=value`` metadata.
Numbers are written in the shortest form that parses back to the same
double, so emitting a parsed canonical file reproduces it byte for byte.
"""

from __future__ import annotations

import enum
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    InsufficientDataError,
    MalformedRowError,
    NonMonotoneTimestampError,
    SweepConflictError,
    TimestampMismatchError,
    TraceError,
    UnbalancedMarkerError,
    UnknownKernelError,
)

TRACE_HEADER = "t_s,record,channel,value,kernel,freq_mhz"
SWEEP_HEADER = "kernel,freq_mhz,t_s,e_s_j,p_avg_w"
SAMPLE_RATE_KEY = "sample_rate_hz"

# aggregated (kernel, f) values from different traces may differ by at most this fraction
SWEEP_CONFLICT_TOLERANCE = 0.10


class Channel(enum.Enum):
    PACKAGE = "package"
    DRAM = "dram"
    DEVICE = "device"
    NODE = "node"


_CHANNEL_ORDER = {c: i for i, c in enumerate(Channel)}


class MarkerKind(enum.Enum):
    BEGIN = "begin"
    END = "end"


@dataclass(frozen=True)
class PowerSample:
    t: float
    channel: Channel
    power: float


@dataclass(frozen=True)
class Marker:
    t: float
    kernel: str
    kind: MarkerKind
    freq: float


class ChannelData(NamedTuple):
    t: np.ndarray
    power: np.ndarray


@dataclass(frozen=True)
class SweepPoint:
    f: float
    t_s: float
    e_s: float
    p_avg: float


SweepTable = Dict[str, List[SweepPoint]]


def format_number(x: float, min_decimals: int = 0) -> str:
    """Shortest round-tripping positional form of ``x``."""
    x = float(x) + 0.0  # drop negative zero
    if x.is_integer() and min_decimals == 0:
        return str(int(x))
    s = np.format_float_positional(x, unique=True, trim="0")
    if min_decimals:
        whole, _, frac = s.partition(".")
        s = f"{whole}.{frac.ljust(min_decimals, '0')}"
    return s


def _format_time(t):
    return format_number(t, min_decimals=3)


def _format_power(p):
    return format_number(p, min_decimals=1)


def _pair_markers(markers, lines=None):
    """Match Begin/End markers per kernel with a stack; return pairs in Begin order."""
    open_: Dict[str, list] = defaultdict(list)
    pairs = []
    for i, mk in enumerate(markers):
        line = None if lines is None else lines[i]
        if mk.kind is MarkerKind.BEGIN:
            open_[mk.kernel].append((i, mk))
            continue
        stack = open_[mk.kernel]
        if not stack:
            raise UnbalancedMarkerError(f"end marker for {mk.kernel!r} without a matching begin", line)
        j, begin = stack.pop()
        if not mk.t > begin.t:
            raise UnbalancedMarkerError(
                f"end marker for {mk.kernel!r} at t={mk.t} does not follow its begin at t={begin.t}", line
            )
        if mk.freq != begin.freq:
            raise UnbalancedMarkerError(
                f"{mk.kernel!r} pair changes frequency ({begin.freq} -> {mk.freq})", line
            )
        pairs.append((j, begin, mk))
    for kernel, stack in open_.items():
        if stack:
            i, mk = stack[0]
            raise UnbalancedMarkerError(
                f"begin marker for {kernel!r} at t={mk.t} is never closed",
                None if lines is None else lines[i],
            )
    pairs.sort(key=lambda x: x[0])
    return [(b, e) for _, b, e in pairs]


@dataclass(frozen=True)
class PowerTrace:
    channels: Mapping[Channel, ChannelData]
    markers: Tuple[Marker, ...] = ()
    sample_rate: float = 1.0
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        chans = {}
        for ch in sorted(self.channels, key=_CHANNEL_ORDER.get):
            t, p = self.channels[ch]
            t = np.array(t, dtype=float)
            p = np.array(p, dtype=float)
            if t.shape != p.shape or t.ndim != 1:
                raise TraceError(f"channel {ch.value}: time and power arrays differ in shape")
            if t.size and t[0] < 0:
                raise TraceError(f"channel {ch.value}: negative timestamp {t[0]}")
            if np.any(np.diff(t) <= 0):
                raise NonMonotoneTimestampError(f"channel {ch.value}: timestamps not strictly increasing")
            if np.any(p < 0):
                raise TraceError(f"channel {ch.value}: negative power")
            t.flags.writeable = False
            p.flags.writeable = False
            chans[ch] = ChannelData(t, p)
        object.__setattr__(self, "channels", chans)
        markers = tuple(sorted(self.markers, key=lambda m: m.t))
        object.__setattr__(self, "markers", markers)
        object.__setattr__(self, "meta", dict(self.meta))
        if not self.sample_rate > 0:
            raise TraceError(f"sample rate must be > 0, got {self.sample_rate}")
        _pair_markers(markers)
        span = self.time_span()
        if span is not None:
            lo, hi = span
            for mk in markers:
                if not lo <= mk.t <= hi:
                    raise TraceError(f"marker {mk.kernel!r} at t={mk.t} outside sampled range [{lo}, {hi}]")

    @classmethod
    def from_samples(cls, samples: Iterable[PowerSample], markers=(), sample_rate=1.0, meta=None):
        by_ch = defaultdict(lambda: ([], []))
        for s in samples:
            by_ch[s.channel][0].append(s.t)
            by_ch[s.channel][1].append(s.power)
        return cls({c: ChannelData(*v) for c, v in by_ch.items()}, tuple(markers), sample_rate, meta or {})

    @property
    def samples(self) -> List[PowerSample]:
        out = []
        for ch, (t, p) in self.channels.items():
            out.extend(PowerSample(float(a), ch, float(b)) for a, b in zip(t, p))
        out.sort(key=lambda s: (s.t, _CHANNEL_ORDER[s.channel]))
        return out

    def time_span(self):
        spans = [(d.t[0], d.t[-1]) for d in self.channels.values() if d.t.size]
        if not spans:
            return None
        return float(min(a for a, _ in spans)), float(max(b for _, b in spans))

    def pairs(self, kernel: Optional[str] = None):
        pairs = _pair_markers(self.markers)
        if kernel is None:
            return pairs
        return [(b, e) for b, e in pairs if b.kernel == kernel]

    def kernels(self):
        return sorted({m.kernel for m in self.markers})


def parse_trace(stream) -> PowerTrace:
    """Parse trace CSV text (a string or a text stream)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    meta = {}
    header_seen = False
    samples = defaultdict(lambda: ([], []))
    markers, marker_lines = [], []
    last_t = -math.inf
    last_sample_t = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not header_seen:
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            if line != TRACE_HEADER:
                raise MalformedRowError(f"expected header {TRACE_HEADER!r}, got {line!r}", lineno)
            header_seen = True
            continue
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != 6:
            raise MalformedRowError(f"expected 6 fields, got {len(fields)}", lineno)
        ts, record, channel, value, kernel, freq = fields
        try:
            t = float(ts)
        except ValueError:
            raise MalformedRowError(f"bad timestamp {ts!r}", lineno) from None
        if not math.isfinite(t) or t < 0:
            raise MalformedRowError(f"timestamp must be finite and >= 0, got {ts!r}", lineno)
        if t < last_t:
            raise NonMonotoneTimestampError(f"timestamp {ts} is earlier than the previous row", lineno)
        last_t = t
        if record == "sample":
            if kernel or freq:
                raise MalformedRowError("sample rows must leave kernel and freq_mhz empty", lineno)
            try:
                ch = Channel(channel)
            except ValueError:
                raise MalformedRowError(f"unknown channel {channel!r}", lineno) from None
            try:
                p = float(value)
            except ValueError:
                raise MalformedRowError(f"bad power value {value!r}", lineno) from None
            if not math.isfinite(p) or p < 0:
                raise MalformedRowError(f"power must be finite and >= 0, got {value!r}", lineno)
            if last_sample_t.get(ch, -math.inf) >= t:
                raise NonMonotoneTimestampError(f"repeated timestamp {ts} on channel {channel}", lineno)
            last_sample_t[ch] = t
            samples[ch][0].append(t)
            samples[ch][1].append(p)
        elif record in ("begin", "end"):
            if channel or value:
                raise MalformedRowError("marker rows must leave channel and value empty", lineno)
            if not kernel:
                raise MalformedRowError("marker row without kernel name", lineno)
            try:
                f = float(freq)
            except ValueError:
                raise MalformedRowError(f"bad frequency {freq!r}", lineno) from None
            markers.append(Marker(t, kernel, MarkerKind(record), f))
            marker_lines.append(lineno)
        else:
            raise MalformedRowError(f"unknown record type {record!r}", lineno)
    if not header_seen:
        raise MalformedRowError("missing header line", 1)
    _pair_markers(markers, marker_lines)
    rate = meta.pop(SAMPLE_RATE_KEY, None)
    channels = {c: ChannelData(*v) for c, v in samples.items()}
    if rate is not None:
        try:
            sample_rate = float(rate)
        except ValueError:
            raise MalformedRowError(f"bad {SAMPLE_RATE_KEY} {rate!r}") from None
    else:
        sample_rate = _infer_rate(channels)
    return PowerTrace(channels, tuple(markers), sample_rate, meta)


def _infer_rate(channels):
    for d in channels.values():
        if len(d.t) >= 2:
            return float(1.0 / np.median(np.diff(d.t)))
    return 1.0


def emit_trace(trace: PowerTrace, comments: Sequence[str] = ()) -> str:
    """Canonical CSV text for ``trace``.

    ``comments`` are extra ``#`` lines written after the metadata (e.g. a run manifest).
    """
    out = [f"# {SAMPLE_RATE_KEY}={format_number(trace.sample_rate)}"]
    out += [f"# {k}={v}" for k, v in trace.meta.items()]
    out += [f"# {c}" for c in comments]
    out.append(TRACE_HEADER)
    rows = []
    for ch, (t, p) in trace.channels.items():
        order = _CHANNEL_ORDER[ch]
        for a, b in zip(t.tolist(), p.tolist()):
            rows.append((a, 0, order, f"{_format_time(a)},sample,{ch.value},{_format_power(b)},,"))
    for i, mk in enumerate(trace.markers):
        rows.append((mk.t, 1, i, f"{_format_time(mk.t)},{mk.kind.value},,,{mk.kernel},{format_number(mk.freq)}"))
    rows.sort(key=lambda r: r[:3])
    out += [r[3] for r in rows]
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class Segment:
    begin: Marker
    end: Marker
    channel: Channel
    t: np.ndarray
    power: np.ndarray

    @property
    def duration(self):
        return self.end.t - self.begin.t


def segment(trace: PowerTrace, kernel: str, channel: Optional[Channel] = None) -> List[Segment]:
    """Samples inside every marker pair of ``kernel``, one entry per pair and channel."""
    pairs = trace.pairs(kernel)
    if not pairs:
        raise UnknownKernelError(f"no marker pairs for kernel {kernel!r}")
    if channel is not None and channel not in trace.channels:
        raise TraceError(f"trace has no {channel.value} channel")
    chans = [channel] if channel is not None else list(trace.channels)
    out = []
    for begin, end in pairs:
        for ch in chans:
            t, p = trace.channels[ch]
            lo = np.searchsorted(t, begin.t, side="left")
            hi = np.searchsorted(t, end.t, side="right")
            out.append(Segment(begin, end, ch, t[lo:hi], p[lo:hi]))
    return out


def integrate_energy(seg: Segment) -> float:
    """Trapezoidal energy over the segment.

    The stretches between a marker and the nearest sample are charged at that
    sample's power.
    """
    t, p = seg.t, seg.power
    if len(t) < 2:
        raise InsufficientDataError(
            f"{seg.begin.kernel!r} segment at t={seg.begin.t} has {len(t)} sample(s); need 2"
        )
    parts = 0.5 * (p[1:] + p[:-1]) * np.diff(t)
    head = p[0] * (t[0] - seg.begin.t)
    tail = p[-1] * (seg.end.t - t[-1])
    return math.fsum([head, *parts.tolist(), tail])


def average_power(seg: Segment) -> float:
    return integrate_energy(seg) / seg.duration


def sum_channels(trace: PowerTrace, channels, into: Channel = Channel.NODE) -> PowerTrace:
    """Collapse ``channels`` into one channel whose power is their pointwise sum."""
    channels = sorted(set(channels), key=_CHANNEL_ORDER.get)
    if not channels:
        raise TraceError("no channels requested")
    missing = [c.value for c in channels if c not in trace.channels]
    if missing:
        raise TraceError(f"trace lacks channel(s) {', '.join(missing)}")
    t0 = trace.channels[channels[0]].t
    for c in channels[1:]:
        if not np.array_equal(trace.channels[c].t, t0):
            raise TimestampMismatchError(
                f"channels {channels[0].value} and {c.value} are sampled at different times"
            )
    total = np.sum([trace.channels[c].power for c in channels], axis=0)
    return PowerTrace({into: ChannelData(t0, total)}, trace.markers, trace.sample_rate, trace.meta)


def pair_energy(trace: PowerTrace, begin: Marker, end: Marker) -> float:
    """Energy of one marker pair, summed over every channel of the trace."""
    total = []
    for ch, (t, p) in trace.channels.items():
        lo = np.searchsorted(t, begin.t, side="left")
        hi = np.searchsorted(t, end.t, side="right")
        total.append(integrate_energy(Segment(begin, end, ch, t[lo:hi], p[lo:hi])))
    if not total:
        raise InsufficientDataError(f"{begin.kernel!r} segment at t={begin.t}: trace has no samples")
    return math.fsum(total)


def build_sweep(traces: Sequence[PowerTrace]) -> SweepTable:
    """Average every (kernel, frequency) marker pair across ``traces`` into a sweep table."""
    per_trace = defaultdict(list)  # (kernel, f) -> [(durations, energies)] one entry per trace
    for trace in traces:
        local = defaultdict(lambda: ([], []))
        for begin, end in trace.pairs():
            local[(begin.kernel, begin.freq)][0].append(end.t - begin.t)
            local[(begin.kernel, begin.freq)][1].append(pair_energy(trace, begin, end))
        for key, v in local.items():
            per_trace[key].append(v)
    table: SweepTable = {}
    for (kernel, f), groups in sorted(per_trace.items()):
        _check_conflict(kernel, f, groups)
        durations = [d for g in groups for d in g[0]]
        energies = [e for g in groups for e in g[1]]
        t_s = math.fsum(durations) / len(durations)
        e_s = math.fsum(energies) / len(energies)
        table.setdefault(kernel, []).append(SweepPoint(f, t_s, e_s, e_s / t_s))
    return table


def _check_conflict(kernel, f, groups):
    if len(groups) < 2:
        return
    for idx, what in ((0, "duration"), (1, "energy")):
        means = [math.fsum(g[idx]) / len(g[idx]) for g in groups]
        lo, hi = min(means), max(means)
        if hi > lo * (1.0 + SWEEP_CONFLICT_TOLERANCE):
            raise SweepConflictError(
                f"{kernel!r} at {format_number(f)} MHz: mean {what} differs across traces "
                f"({lo:g} vs {hi:g})"
            )


def emit_sweep(table: SweepTable, comments: Sequence[str] = ()) -> str:
    out = [f"# {c}" for c in comments]
    out.append(SWEEP_HEADER)
    for kernel in sorted(table):
        for pt in sorted(table[kernel], key=lambda p: p.f):
            out.append(
                ",".join([kernel, format_number(pt.f), format_number(pt.t_s),
                          format_number(pt.e_s), format_number(pt.p_avg)])
            )
    return "\n".join(out) + "\n"


def parse_sweep(stream) -> SweepTable:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    table: SweepTable = {}
    header_seen = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if line.startswith("#") or (not line and header_seen):
            continue
        if not header_seen:
            if line != SWEEP_HEADER:
                raise MalformedRowError(f"expected header {SWEEP_HEADER!r}, got {line!r}", lineno)
            header_seen = True
            continue
        fields = line.split(",")
        if len(fields) != 5 or not fields[0]:
            raise MalformedRowError("expected kernel,freq_mhz,t_s,e_s_j,p_avg_w", lineno)
        try:
            f, t_s, e_s, p = (float(x) for x in fields[1:])
        except ValueError:
            raise MalformedRowError(f"non-numeric field in {line!r}", lineno) from None
        rows = table.setdefault(fields[0], [])
        if any(r.f == f for r in rows):
            raise MalformedRowError(f"duplicate frequency {fields[1]} for kernel {fields[0]!r}", lineno)
        rows.append(SweepPoint(f, t_s, e_s, p))
    if not header_seen:
        raise MalformedRowError("missing header line", 1)
    for rows in table.values():
        rows.sort(key=lambda r: r.f)
    return table
