"""Acquisition file parsing, clock synchronization and label realignment.

Signal files hold one sample per line: a timestamp in seconds, ten sEMG
values and optional trailing columns (inclinometer, glove) that are ignored.
Label files hold a timestamp and an integer movement label in 0..17.
"""

from __future__ import annotations

import io
import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, TextIO

import numpy as np

from .errors import DomainError, OrderingError, ParseError, SchemaError, SynchronizationError

N_CHANNELS = 10
N_LABELS = 18
SAMPLE_RATE_HZ = 100
VALID_ACQUISITION_IDS = (2, 3, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14)

_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True)
class SignalTable:
    times: np.ndarray  # (n,)
    emg: np.ndarray  # (n, 10)

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class LabelTable:
    times: np.ndarray  # (n,)
    labels: np.ndarray  # (n,) int

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class RawAcquisition:
    acquisition_id: int
    signal: SignalTable
    label_stream: LabelTable


@dataclass(frozen=True)
class LabeledSignal:
    """Uniformly sampled multichannel signal with one label per sample.

    ``channels`` is stored samples-first, shape (T, 10).
    """

    channels: np.ndarray
    labels: np.ndarray
    repetition: np.ndarray
    acquisition_id: int = 0
    sample_rate: int = SAMPLE_RATE_HZ
    start_index: int = 0  # grid index of the first sample, i.e. t0 = start_index / sample_rate

    def __post_init__(self):
        if self.channels.ndim != 2:
            raise DomainError("channels must be a (T, C) matrix")
        t = self.channels.shape[0]
        if len(self.labels) != t or len(self.repetition) != t:
            raise DomainError("labels and repetition index must match the channel length")

    def __len__(self):
        return self.channels.shape[0]

    @property
    def times(self) -> np.ndarray:
        return (self.start_index + np.arange(len(self))) / self.sample_rate

    def truncate_front(self, n: int) -> "LabeledSignal":
        return replace(
            self,
            channels=self.channels[n:],
            labels=self.labels[n:],
            repetition=self.repetition[n:],
            start_index=self.start_index + n,
        )


@dataclass(frozen=True)
class RelabelConfig:
    envelope_window: float = 0.2
    onset_factor: float = 3.0
    max_shift: float = 1.0

    def __post_init__(self):
        if min(self.envelope_window, self.onset_factor, self.max_shift) <= 0:
            raise DomainError("relabel parameters must be strictly positive")
        if self.max_shift >= 2.5:
            raise DomainError("max_shift must stay below half a 5 s movement (2.5 s)")


# --------------------------------------------------------------------------
# parsing


def _open_text(source) -> TextIO:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=None)
    return source


def _numeric_rows(source, min_fields: int, what: str) -> Iterator[tuple[int, list[float]]]:
    """Yield ``(row_number, values)`` for every non-blank line.

    Row numbers are 1-based file line numbers.
    """
    stream = _open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = [tok for tok in _SPLIT.split(line) if tok]
            if len(tokens) < min_fields:
                raise SchemaError(
                    f"{what}: expected at least {min_fields} fields, found {len(tokens)}", row=lineno
                )
            values = []
            for col, tok in enumerate(tokens, start=1):
                try:
                    v = float(tok)
                except ValueError:
                    raise ParseError(f"{what}: malformed numeric field {tok!r} in column {col}", row=lineno) from None
                if not math.isfinite(v):
                    raise ParseError(f"{what}: non-finite value {tok!r} in column {col}", row=lineno)
                values.append(v)
            yield lineno, values
    finally:
        if stream is not source:
            stream.close()


def parse_signal_file(source) -> SignalTable:
    """Parse a signal file into timestamps and the ten sEMG columns.

    ``source`` is a path or an open text stream.
    """
    times: list[float] = []
    rows: list[list[float]] = []
    last = -math.inf
    for lineno, values in _numeric_rows(source, 1, "signal"):
        if len(values) < 1 + N_CHANNELS:
            raise SchemaError(f"expected {N_CHANNELS} EMG columns, found {len(values) - 1}", row=lineno)
        t = values[0]
        if t <= last:
            raise OrderingError(f"timestamp {t!r} does not increase (previous {last!r})", row=lineno)
        last = t
        times.append(t)
        rows.append(values[1 : 1 + N_CHANNELS])
    emg = np.asarray(rows, dtype=float).reshape(len(rows), N_CHANNELS)
    return SignalTable(np.asarray(times, dtype=float), emg)


def parse_label_file(source) -> LabelTable:
    times: list[float] = []
    labels: list[int] = []
    last = -math.inf
    for lineno, values in _numeric_rows(source, 2, "label"):
        t, raw = values[0], values[1]
        if raw != int(raw):
            raise ParseError(f"label {raw!r} is not an integer", row=lineno)
        label = int(raw)
        if not 0 <= label < N_LABELS:
            raise DomainError(f"row {lineno}: label {label} outside 0..{N_LABELS - 1}")
        if t <= last:
            raise OrderingError(f"timestamp {t!r} does not increase (previous {last!r})", row=lineno)
        last = t
        times.append(t)
        labels.append(label)
    return LabelTable(np.asarray(times, dtype=float), np.asarray(labels, dtype=np.int64))


def load_acquisition(signal_path, label_path, acquisition_id: int = 0) -> RawAcquisition:
    return RawAcquisition(acquisition_id, parse_signal_file(signal_path), parse_label_file(label_path))


def _fmt(v: float) -> str:
    # shortest round-trip decimal; integral floats drop the trailing ".0"
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def format_signal_rows(times, emg, tail=None) -> str:
    """Canonical text form: space separated, shortest round-trip reals."""
    emg = np.asarray(emg)
    out = io.StringIO()
    for i, t in enumerate(times):
        fields = [_fmt(t)] + [_fmt(v) for v in emg[i]]
        if tail is not None:
            fields.extend(_fmt(v) for v in tail[i])
        out.write(" ".join(fields))
        out.write("\n")
    return out.getvalue()


def format_label_rows(times, labels) -> str:
    return "".join(f"{_fmt(t)} {int(lab)}\n" for t, lab in zip(times, labels))


# --------------------------------------------------------------------------
# validation diagnostics (non-raising scan used by the CLI)


@dataclass
class FileDiagnostics:
    path: str
    kind: str
    rows: int = 0
    channels: int | None = None
    label_min: int | None = None
    label_max: int | None = None
    monotonic: bool = True
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def diagnose_file(path, kind: str, max_errors: int = 50) -> FileDiagnostics:
    """Scan a signal (``kind="signal"``) or label file and collect every issue."""
    diag = FileDiagnostics(str(path), kind)
    min_fields = 1 + N_CHANNELS if kind == "signal" else 2
    last = -math.inf

    def err(msg):
        if len(diag.errors) < max_errors:
            diag.errors.append(msg)

    with open(path, "r", encoding="utf-8", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = [tok for tok in _SPLIT.split(line) if tok]
            diag.rows += 1
            try:
                values = [float(tok) for tok in tokens]
            except ValueError:
                err(f"row {lineno}: malformed numeric field")
                continue
            if not all(math.isfinite(v) for v in values):
                err(f"row {lineno}: non-finite value")
                continue
            if len(values) < min_fields:
                if kind == "signal":
                    err(f"row {lineno}: expected {N_CHANNELS} EMG columns, found {max(len(values) - 1, 0)}")
                else:
                    err(f"row {lineno}: expected timestamp and label, found {len(values)} fields")
                continue
            if kind == "signal":
                diag.channels = N_CHANNELS
            else:
                lab = values[1]
                if lab != int(lab) or not 0 <= lab < N_LABELS:
                    err(f"row {lineno}: label {tokens[1]} outside 0..{N_LABELS - 1}")
                else:
                    lab = int(lab)
                    diag.label_min = lab if diag.label_min is None else min(diag.label_min, lab)
                    diag.label_max = lab if diag.label_max is None else max(diag.label_max, lab)
            if values[0] <= last:
                diag.monotonic = False
                err(f"row {lineno}: timestamp {tokens[0]} does not increase")
            last = values[0]
    return diag


# --------------------------------------------------------------------------
# synchronization


def synchronize(raw: RawAcquisition, sample_rate: int = SAMPLE_RATE_HZ) -> LabeledSignal:
    """Resample EMG onto a uniform grid and hold labels from the preceding label row.

    Grid points sit on absolute multiples of ``1/sample_rate`` from the later
    of the two stream starts to the end of the signal, computed as ``k / sample_rate`` so that
    already-uniform decimal timestamps are reproduced exactly.
    """
    sig, lab = raw.signal, raw.label_stream
    if len(sig) == 0 or len(lab) == 0:
        raise SynchronizationError("signal and label streams must both be nonempty")
    # the last label row is held to the end of the signal
    lo = max(sig.times[0], lab.times[0])
    hi = sig.times[-1]
    if lo > hi:
        raise SynchronizationError(
            f"time ranges do not overlap: signal [{sig.times[0]}, {sig.times[-1]}], "
            f"labels [{lab.times[0]}, {lab.times[-1]}]"
        )
    k0 = math.ceil(lo * sample_rate - 1e-9)
    k1 = math.floor(hi * sample_rate + 1e-9)
    ks = np.arange(k0, k1 + 1)
    grid = ks / sample_rate
    # guard the tolerance used above against stepping outside the overlap
    keep = (grid >= lo) & (grid <= hi)
    ks, grid = ks[keep], grid[keep]
    if len(grid) == 0:
        raise SynchronizationError("overlap is shorter than one sample period")

    channels = np.empty((len(grid), sig.emg.shape[1]))
    for c in range(sig.emg.shape[1]):
        channels[:, c] = np.interp(grid, sig.times, sig.emg[:, c])
    idx = np.searchsorted(lab.times, grid, side="right") - 1
    labels = lab.labels[idx].astype(np.int64)
    return LabeledSignal(
        channels=channels,
        labels=labels,
        repetition=repetition_index(labels),
        acquisition_id=raw.acquisition_id,
        sample_rate=sample_rate,
        start_index=int(ks[0]),
    )


def label_runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal constant runs as ``(label, start, stop)`` with ``stop`` exclusive."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], cuts))
    stops = np.concatenate((cuts, [len(labels)]))
    return [(int(labels[s]), int(s), int(e)) for s, e in zip(starts, stops)]


def repetition_index(labels: np.ndarray) -> np.ndarray:
    """Number each run of a movement label 1, 2, ... in onset order; rest is 0."""
    rep = np.zeros(len(labels), dtype=np.int64)
    seen: dict[int, int] = {}
    for label, s, e in label_runs(labels):
        if label == 0:
            continue
        seen[label] = seen.get(label, 0) + 1
        rep[s:e] = seen[label]
    return rep


# --------------------------------------------------------------------------
# relabeling


def activity_envelope(channels: np.ndarray, width: int, trailing: bool = True) -> np.ndarray:
    """Moving average of the summed rectified channels.

    Channels are centred on their median first so a constant electrode offset
    does not read as activity. ``trailing`` averages samples ``t-width+1..t``;
    otherwise ``t..t+width-1``. Edges average over the available samples.
    """
    centred = channels - np.median(channels, axis=0)
    rect = np.abs(centred).sum(axis=1)
    csum = np.concatenate(([0.0], np.cumsum(rect)))
    n = len(rect)
    t = np.arange(n)
    if trailing:
        lo, hi = np.maximum(t - width + 1, 0), t + 1
    else:
        lo, hi = t, np.minimum(t + width, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def _first_upcrossing(env: np.ndarray, thr: float, lo: int, hi: int) -> int | None:
    """First index in [lo, hi] where the envelope moves from below to at/above ``thr``."""
    for i in range(max(lo, 1), hi + 1):
        if env[i] >= thr and env[i - 1] < thr:
            return i
    if lo == 0 and env[0] >= thr:
        return 0
    return None


def relabel(signal: LabeledSignal, config: RelabelConfig = RelabelConfig()) -> LabeledSignal:
    """Move rest/movement label boundaries onto measured activity onsets and offsets.

    Onsets are the first upward crossing of ``onset_factor`` times the median
    rest envelope (trailing window) within ``max_shift`` of the nominal
    boundary. Offsets use the same rule on the time-reversed signal. A
    boundary with no crossing in range stays where it was.
    """
    labels = signal.labels
    n = len(labels)
    if n == 0 or not np.any(labels == 0) or not np.any(labels != 0):
        return signal
    width = max(1, int(round(config.envelope_window * signal.sample_rate)))
    shift = int(round(config.max_shift * signal.sample_rate))
    back = activity_envelope(signal.channels, width, trailing=True)
    fwd = activity_envelope(signal.channels, width, trailing=False)
    baseline = float(np.median(back[labels == 0]))
    thr = config.onset_factor * baseline
    if not thr > 0:
        return signal
    rev = fwd[::-1]

    runs = label_runs(labels)
    new_labels = labels.copy()
    for k, (label, s, e) in enumerate(runs):
        if label == 0:
            continue
        new_s, new_e = s, e
        prev_rest = k > 0 and runs[k - 1][0] == 0
        next_rest = k + 1 < len(runs) and runs[k + 1][0] == 0
        if prev_rest:
            # never cross into the previous movement or past this one's end
            lo = max(s - shift, runs[k - 1][1] + 1)
            hi = min(s + shift, e - 1)
            hit = _first_upcrossing(back, thr, lo, hi)
            if hit is not None:
                new_s = hit
        if next_rest:
            # reversed index r corresponds to sample n-1-r; the offset boundary
            # at e (first rest sample) sits at reversed index n-e
            nxt_stop = runs[k + 1][2]
            lo = max(n - (e + shift), n - nxt_stop + 1)
            hi = min(n - (e - shift), n - (new_s + 1))
            hit = _first_upcrossing(rev, thr, lo, hi)
            if hit is not None:
                new_e = n - hit
        if new_e <= new_s:
            new_s, new_e = s, e
        new_labels[s:e] = 0 if prev_rest or next_rest else label
        if not prev_rest:
            new_labels[s:new_s] = label
        if not next_rest:
            new_labels[new_e:e] = label
        new_labels[new_s:new_e] = label
    return replace(signal, labels=new_labels, repetition=repetition_index(new_labels))
