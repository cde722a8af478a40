"""Windowing, MAV/WL features and z-score standardization."""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .ingest import LabeledSignal, N_CHANNELS


class FeatureKind(str, enum.Enum):
    MAV = "MAV"
    WL = "WL"

    @classmethod
    def parse(cls, value) -> "FeatureKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).upper())


@dataclass(frozen=True)
class WindowSpec:
    length_ms: int = 100
    stride_ms: int = 100

    def __post_init__(self):
        if self.length_ms <= 0 or self.stride_ms <= 0:
            raise DomainError("window length and stride must be positive")

    def samples(self, sample_rate: int) -> tuple[int, int]:
        n = self.length_ms * sample_rate / 1000
        step = self.stride_ms * sample_rate / 1000
        if n != int(n) or step != int(step):
            raise DomainError(f"{self} does not map to whole samples at {sample_rate} Hz")
        return int(n), int(step)


@dataclass(frozen=True)
class Window:
    samples: np.ndarray  # (N, C)
    label: int
    repetition: int
    start: int  # absolute grid index of the first sample


def segment(signal: LabeledSignal, spec: WindowSpec = WindowSpec()) -> list[Window]:
    """Cut fixed-length windows and drop every window whose labels are not unanimous."""
    n, step = spec.samples(signal.sample_rate)
    t = len(signal)
    windows = []
    for s in range(0, t - n + 1, step):
        lab = signal.labels[s : s + n]
        if np.any(lab != lab[0]):
            continue
        windows.append(
            Window(signal.channels[s : s + n], int(lab[0]), int(signal.repetition[s]), signal.start_index + s)
        )
    return windows


def mav(x) -> float:
    """Mean absolute value of one channel's window."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DomainError("MAV of an empty window is undefined")
    return float(np.abs(x).sum() / x.size)


def waveform_length(x) -> float:
    """Sum of absolute first differences inside the window.

    No term reaches back to the sample preceding the window.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise DomainError("waveform length needs at least two samples")
    return float(np.abs(np.diff(x)).sum())


@dataclass(frozen=True)
class FeatureSet:
    feature_kind: FeatureKind
    vectors: np.ndarray  # (M, C)
    labels: np.ndarray
    repetition: np.ndarray
    starts: np.ndarray  # absolute grid index of each window's first sample
    acquisition_id: int = 0
    window_spec: WindowSpec = field(default_factory=WindowSpec)
    sample_rate: int = 100
    acquisition: np.ndarray | None = None  # per-row source id when rows from several acquisitions are mixed

    def __post_init__(self):
        m = len(self.vectors)
        if not (len(self.labels) == len(self.repetition) == len(self.starts) == m):
            raise DomainError("feature rows, labels, repetition and starts must have equal length")
        if self.acquisition is None:
            object.__setattr__(self, "acquisition", np.full(m, self.acquisition_id, dtype=np.int64))

    def __len__(self):
        return len(self.vectors)

    @property
    def window_ids(self) -> list[tuple[int, int]]:
        """Identity of every row as ``(acquisition, start sample)``."""
        return list(zip(self.acquisition.tolist(), self.starts.tolist()))

    def take(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            vectors=self.vectors[idx],
            labels=self.labels[idx],
            repetition=self.repetition[idx],
            starts=self.starts[idx],
            acquisition=self.acquisition[idx],
        )

    @classmethod
    def concat(cls, sets: list["FeatureSet"]) -> "FeatureSet":
        if not sets:
            raise DomainError("nothing to concatenate")
        kinds = {s.feature_kind for s in sets}
        if len(kinds) != 1:
            raise DomainError("cannot mix feature kinds")
        first = sets[0]
        return replace(
            first,
            vectors=np.vstack([s.vectors for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            repetition=np.concatenate([s.repetition for s in sets]),
            starts=np.concatenate([s.starts for s in sets]),
            acquisition=np.concatenate([s.acquisition for s in sets]),
        )

    # serialization ------------------------------------------------------

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        n_ch = self.vectors.shape[1]
        w.writerow(["acq", "window_start_ms", "label", "repetition"] + [f"ch{c + 1}" for c in range(n_ch)])
        ms = self.starts * 1000 // self.sample_rate
        for i in range(len(self)):
            w.writerow(
                [int(self.acquisition[i]), int(ms[i]), int(self.labels[i]), int(self.repetition[i])]
                + [repr(float(v)) for v in self.vectors[i]]
            )
        return out.getvalue()

    def sidecar(self) -> dict:
        return {
            "feature_kind": self.feature_kind.value,
            "window_spec": {"length_ms": self.window_spec.length_ms, "stride_ms": self.window_spec.stride_ms},
            "sample_rate": self.sample_rate,
            "acquisition_id": self.acquisition_id,
        }

    @classmethod
    def from_csv(cls, text: str, sidecar: dict) -> "FeatureSet":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        n_ch = len(header) - 4
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        rate = int(sidecar.get("sample_rate", 100))
        return cls(
            feature_kind=FeatureKind.parse(sidecar["feature_kind"]),
            vectors=data[:, 4 : 4 + n_ch],
            labels=data[:, 2].astype(np.int64),
            repetition=data[:, 3].astype(np.int64),
            starts=np.round(data[:, 1] * rate / 1000).astype(np.int64),
            acquisition_id=int(sidecar.get("acquisition_id", 0)),
            window_spec=WindowSpec(**sidecar["window_spec"]),
            sample_rate=rate,
            acquisition=data[:, 0].astype(np.int64),
        )

    def save(self, csv_path, json_path=None) -> None:
        from pathlib import Path

        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        json_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, csv_path, json_path=None) -> "FeatureSet":
        from pathlib import Path

        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        return cls.from_csv(csv_path.read_text(encoding="utf-8"), json.loads(json_path.read_text(encoding="utf-8")))


_FEATURES = {FeatureKind.MAV: mav, FeatureKind.WL: waveform_length}


def extract_features(
    windows: list[Window],
    feature_kind: FeatureKind | str,
    acquisition_id: int = 0,
    window_spec: WindowSpec = WindowSpec(),
    sample_rate: int = 100,
) -> FeatureSet:
    """One feature row per window, one column per channel."""
    kind = FeatureKind.parse(feature_kind)
    if not windows:
        raise DomainError("no windows to featurize")
    stack = np.stack([w.samples for w in windows])  # (M, N, C)
    if kind is FeatureKind.MAV:
        if stack.shape[1] < 1:
            raise DomainError("MAV of an empty window is undefined")
        vectors = np.abs(stack).mean(axis=1)
    else:
        if stack.shape[1] < 2:
            raise DomainError("waveform length needs at least two samples")
        vectors = np.abs(np.diff(stack, axis=1)).sum(axis=1)
    return FeatureSet(
        feature_kind=kind,
        vectors=vectors,
        labels=np.array([w.label for w in windows], dtype=np.int64),
        repetition=np.array([w.repetition for w in windows], dtype=np.int64),
        starts=np.array([w.start for w in windows], dtype=np.int64),
        acquisition_id=acquisition_id,
        window_spec=window_spec,
        sample_rate=sample_rate,
    )


@dataclass(frozen=True)
class StandardizationStats:
    means: np.ndarray
    std_devs: np.ndarray

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "std_devs": self.std_devs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.asarray(d["means"], dtype=float), np.asarray(d["std_devs"], dtype=float))

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.asarray(vectors, dtype=float)
        if vectors.shape[-1] != len(self.means):
            raise DomainError(f"expected {len(self.means)} feature columns, got {vectors.shape[-1]}")
        return (vectors - self.means) / self.std_devs


STD_FLOOR = 1e-12


def fit_standardization(features: FeatureSet | np.ndarray) -> StandardizationStats:
    v = features.vectors if isinstance(features, FeatureSet) else np.asarray(features, dtype=float)
    if len(v) == 0:
        raise DomainError("cannot fit standardization on an empty set")
    std = v.std(axis=0)
    # a (numerically) constant column keeps unit scale and maps to ~0
    return StandardizationStats(v.mean(axis=0), np.where(std > STD_FLOOR, std, 1.0))


def apply_standardization(features: FeatureSet, stats: StandardizationStats) -> FeatureSet:
    return replace(features, vectors=stats.apply(features.vectors))


def featurize(signal: LabeledSignal, kinds=(FeatureKind.MAV, FeatureKind.WL), spec: WindowSpec = WindowSpec()):
    """Segment once and compute every requested feature kind."""
    windows = segment(signal, spec)
    return {
        FeatureKind.parse(k): extract_features(windows, k, signal.acquisition_id, spec, signal.sample_rate)
        for k in kinds
    }


__all__ = [
    "FeatureKind",
    "WindowSpec",
    "Window",
    "FeatureSet",
    "StandardizationStats",
    "segment",
    "mav",
    "waveform_length",
    "extract_features",
    "fit_standardization",
    "apply_standardization",
    "featurize",
    "N_CHANNELS",
]
