"""Seeded synthetic acquisitions in the ingest file format.

Each movement class owns a fixed 10-channel activation pattern that
amplitude-modulates band-limited noise; rest emits low baseline noise.
Sessions after the first of each day get a per-channel gain and offset drift
that mimics electrode displacement and fatigue. The subject reacts to the
nominal label with a random delay, so labels need realignment.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .ingest import N_CHANNELS, VALID_ACQUISITION_IDS

# day -> (session 1, session 2, session 3)
DAY_SESSIONS = {1: (2, 3, 5), 2: (6, 7, 8), 3: (9, 10, 11), 4: (12, 13, 14)}
TAIL_COLUMNS = 6


def session_of(acq: int) -> tuple[int, int]:
    for day, accs in DAY_SESSIONS.items():
        if acq in accs:
            return day, accs.index(acq) + 1
    raise KeyError(f"acquisition {acq} is not part of the protocol")


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 18
    channels: int = N_CHANNELS
    repetitions: int = 10
    movement_s: float = 5.0
    rest_s: float = 3.0
    sample_rate: int = 100
    rest_level: float = 0.005
    activation_low: float = 0.01
    activation_high: float = 1.0
    repetition_spread: float = 0.05
    noise_band_hz: tuple[float, float] = (10.0, 40.0)
    ramp_s: float = 0.1
    reaction_delay_s: float = 0.3
    jitter_ms: float = 0.5
    # per-channel gains are drawn log-uniformly from [low, high]
    drift_gain_low: float = 0.2
    drift_gain_high: float = 5.0
    drift_offset: float = 0.02
    drift: bool = True
    seed: int = 0

    def with_(self, **kw) -> "SynthConfig":
        return SynthConfig(**{**asdict(self), **kw})


def _schedule(cfg: SynthConfig):
    """Nominal (label, start_sample, stop_sample) runs: rest before every repetition and at the end."""
    fs = cfg.sample_rate
    rest = int(round(cfg.rest_s * fs))
    move = int(round(cfg.movement_s * fs))
    runs, t = [], 0
    for m in range(1, cfg.n_classes):
        for _ in range(cfg.repetitions):
            runs.append((0, t, t + rest))
            t += rest
            runs.append((m, t, t + move))
            t += move
    runs.append((0, t, t + rest))
    return runs, t + rest


def activation_patterns(cfg: SynthConfig) -> np.ndarray:
    """Per-class channel activation levels; row 0 (rest) is the baseline."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC1A55]))
    # log-uniform: classes differ by ratios, which is what amplitude features see
    pat = np.exp(rng.uniform(np.log(cfg.activation_low), np.log(cfg.activation_high), size=(cfg.n_classes, cfg.channels)))
    pat[0] = cfg.rest_level
    return pat


def session_drift(cfg: SynthConfig, acq: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (gain, offset) for one acquisition; identity for each day's first session."""
    day, session = session_of(acq)
    if not cfg.drift or session == 1:
        return np.ones(cfg.channels), np.zeros(cfg.channels)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD21F7, acq]))
    gain = np.exp(rng.uniform(np.log(cfg.drift_gain_low), np.log(cfg.drift_gain_high), cfg.channels))
    offset = rng.uniform(-cfg.drift_offset, cfg.drift_offset, cfg.channels)
    return gain, offset


def generate_acquisition(cfg: SynthConfig, acq: int):
    """Return ``(times, emg, labels)`` for one acquisition."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, acq]))
    fs = cfg.sample_rate
    runs, n = _schedule(cfg)
    pat = activation_patterns(cfg)

    envelope = np.tile(pat[0], (n, 1))
    labels = np.zeros(n, dtype=np.int64)
    ramp = max(1, int(round(cfg.ramp_s * fs)))
    max_delay = int(round(cfg.reaction_delay_s * fs))
    for label, s, e in runs:
        labels[s:e] = label
        if label == 0:
            continue
        on = s + int(rng.integers(0, max_delay + 1))
        off = e + int(rng.integers(0, max_delay + 1))
        level = pat[label] * (1.0 + rng.uniform(-cfg.repetition_spread, cfg.repetition_spread))
        shape = np.ones(off - on)
        shape[:ramp] = np.linspace(0.0, 1.0, ramp + 1)[1:]
        shape[-ramp:] = np.minimum(shape[-ramp:], np.linspace(1.0, 0.0, ramp + 1)[:-1])
        envelope[on:off] = pat[0] + np.outer(shape, level - pat[0])

    lo, hi = cfg.noise_band_hz
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    noise = sps.sosfilt(sos, rng.standard_normal((n + 200, cfg.channels)), axis=0)[200:]
    noise /= noise.std(axis=0)

    gain, offset = session_drift(cfg, acq)
    emg = envelope * noise * gain + offset

    jitter = rng.uniform(-cfg.jitter_ms, cfg.jitter_ms, n) / 1000.0
    jitter[0] = jitter[-1] = 0.0  # endpoints on the grid so resampling keeps every sample
    times = np.round(np.arange(n) / fs + jitter, 4)
    return times, emg, labels


def signal_path(out_dir, acq: int) -> Path:
    return Path(out_dir) / f"acq_{acq:02d}_emg.txt"


def label_path(out_dir, acq: int) -> Path:
    return Path(out_dir) / f"acq_{acq:02d}_labels.txt"


def write_acquisition(out_dir, acq: int, times, emg, labels) -> None:
    tail = np.zeros((len(times), TAIL_COLUMNS))
    with open(signal_path(out_dir, acq), "w", encoding="utf-8", newline="\n") as fh:
        np.savetxt(fh, np.column_stack([times, emg, tail]), fmt=["%.4f"] + ["%.6g"] * (emg.shape[1] + TAIL_COLUMNS))
    with open(label_path(out_dir, acq), "w", encoding="utf-8", newline="\n") as fh:
        np.savetxt(fh, np.column_stack([times, labels]), fmt=["%.4f", "%d"])


def generate_dataset(out_dir, cfg: SynthConfig = SynthConfig(), acquisitions=VALID_ACQUISITION_IDS) -> dict:
    """Write every acquisition pair plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for acq in acquisitions:
        times, emg, labels = generate_acquisition(cfg, acq)
        write_acquisition(out, acq, times, emg, labels)
        day, session = session_of(acq)
        gain, offset = session_drift(cfg, acq)
        files[str(acq)] = {
            "signal": signal_path(out, acq).name,
            "labels": label_path(out, acq).name,
            "day": day,
            "session": session,
            "gain": [round(float(g), 12) for g in gain],
            "offset": [round(float(o), 12) for o in offset],
        }
    manifest = {"generator": "semgsvm.synth", "seed": cfg.seed, "config": asdict(cfg), "acquisitions": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
