"""Run configuration stored as a commented ``key = value`` file."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace

from .errors import DomainError
from .features import FeatureKind, WindowSpec
from .harness import Part, PipelineConfig, SmoothingConfig, TRAIN_FRACTION_OF_HALF
from .ingest import RelabelConfig
from .svm import HyperparameterGrid

DEFAULT_SEED = 1
_SECTION = "run"

_COMMENTS = {
    "data_dir": "directory holding acq_NN_emg.txt / acq_NN_labels.txt pairs",
    "out_dir": "where reports are written",
    "seed": "split and subsampling seed",
    "window_ms": "feature window length",
    "stride_ms": "window stride; equal to window_ms means non-overlapping",
    "envelope_window": "relabel envelope width, seconds",
    "onset_factor": "relabel threshold as a multiple of the median rest envelope",
    "max_shift": "largest label boundary move, seconds",
    "var_order": "whitening VAR order",
    "cutoff_hz": "Butterworth low-pass cutoff",
    "c_exponents": "C grid as powers of two",
    "gamma_exponents": "gamma grid as powers of two",
    "train_fraction": "share of the first half kept for training",
    "smoothing_k": "majority vote window, odd",
    "smoothing": "on, off or both",
    "features": "mav, wl or both",
    "part": "1, 2 or both",
    "workers": "grid-search threads",
}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace(";", ",").split(",") if t.strip())


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = ""
    out_dir: str = ""
    seed: int = DEFAULT_SEED
    window_ms: int = 100
    stride_ms: int = 100
    envelope_window: float = 0.2
    onset_factor: float = 3.0
    max_shift: float = 1.0
    var_order: int = 20
    cutoff_hz: float = 5.0
    c_exponents: tuple[int, ...] = HyperparameterGrid().c_exponents
    gamma_exponents: tuple[int, ...] = HyperparameterGrid().gamma_exponents
    train_fraction: float = TRAIN_FRACTION_OF_HALF
    smoothing_k: int = 5
    smoothing: str = "both"
    features: str = "both"
    part: str = "both"
    workers: int = 1

    def __post_init__(self):
        if self.smoothing not in ("on", "off", "both"):
            raise DomainError(f"smoothing must be on, off or both, got {self.smoothing!r}")
        if self.features not in ("mav", "wl", "both"):
            raise DomainError(f"features must be mav, wl or both, got {self.features!r}")
        if self.part not in ("1", "2", "both"):
            raise DomainError(f"part must be 1, 2 or both, got {self.part!r}")

    # derived settings -------------------------------------------------

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            relabel=RelabelConfig(self.envelope_window, self.onset_factor, self.max_shift),
            var_order=self.var_order,
            cutoff_hz=self.cutoff_hz,
            window=WindowSpec(self.window_ms, self.stride_ms),
        )

    @property
    def grid(self) -> HyperparameterGrid:
        return HyperparameterGrid(tuple(self.c_exponents), tuple(self.gamma_exponents))

    @property
    def smoothing_options(self) -> list[SmoothingConfig]:
        opts = {"off": [False], "on": [True], "both": [False, True]}[self.smoothing]
        return [SmoothingConfig(flag, self.smoothing_k) for flag in opts]

    @property
    def feature_kinds(self) -> list[FeatureKind]:
        return list(FeatureKind) if self.features == "both" else [FeatureKind.parse(self.features)]

    @property
    def parts(self) -> list[Part]:
        return [Part.PART1, Part.PART2] if self.part == "both" else [Part(int(self.part))]

    # persistence ------------------------------------------------------

    def to_dict(self, include_paths: bool = True) -> dict:
        d = asdict(self)
        d["c_exponents"] = list(self.c_exponents)
        d["gamma_exponents"] = list(self.gamma_exponents)
        if not include_paths:
            d.pop("data_dir")
            d.pop("out_dir")
        return d

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"# {_COMMENTS[f.name]}")
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.read_string(f"[{_SECTION}]\n" + text)
        return cls().override(**dict(parser[_SECTION]))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def override(self, **values) -> "RunConfig":
        """Return a copy with string or typed values coerced to each field's type."""
        known = {f.name: f for f in fields(self)}
        updates = {}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in known:
                raise DomainError(f"unknown config key {key!r}")
            default = getattr(RunConfig(), key)
            if isinstance(default, tuple):
                updates[key] = _ints(raw) if isinstance(raw, str) else tuple(int(v) for v in raw)
            elif isinstance(default, bool):
                updates[key] = str(raw).lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                updates[key] = int(raw)
            elif isinstance(default, float):
                updates[key] = float(raw)
            else:
                updates[key] = str(raw).strip().lower() if key in ("smoothing", "features", "part") else str(raw)
        return replace(self, **updates)
