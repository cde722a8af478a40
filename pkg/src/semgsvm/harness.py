"""Repeatability protocol: dataset splits, plans, smoothing, metrics and reports."""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, PlanError, ProtocolWarning, SemgError
from .features import FeatureKind, FeatureSet, WindowSpec, featurize
from .ingest import N_LABELS, RawAcquisition, RelabelConfig, load_acquisition, relabel, synchronize
from .preprocessing import (
    DEFAULT_CUTOFF_HZ,
    DEFAULT_VAR_ORDER,
    FilterCoefficients,
    VarModel,
    apply_filter,
    design_butterworth_lowpass,
    fit_var,
    whiten,
)
from .svm import GridResult, HyperparameterGrid, KernelParams, evaluate_grid, train_multiclass
from .synth import DAY_SESSIONS, label_path, signal_path

log = logging.getLogger("semgsvm")

TRAIN_FRACTION_OF_HALF = 0.10


def log_event(stage: str, cell: str, message: str, *args, level=logging.INFO):
    log.log(level, "stage=%s cell=%s " + message, stage, cell, *args)


# --------------------------------------------------------------------------
# preprocessing pipeline


@dataclass(frozen=True)
class PipelineConfig:
    relabel: RelabelConfig = RelabelConfig()
    var_order: int = DEFAULT_VAR_ORDER
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    window: WindowSpec = WindowSpec()


@dataclass
class Preprocessed:
    signal: object  # LabeledSignal after synchronize, relabel, whiten and low-pass
    var_model: VarModel
    filter: FilterCoefficients


def preprocess(raw: RawAcquisition, cfg: PipelineConfig = PipelineConfig()) -> Preprocessed:
    """synchronize -> relabel -> VAR whiten -> Butterworth low-pass."""
    sig = synchronize(raw)
    sig = relabel(sig, cfg.relabel)
    model = fit_var(sig, cfg.var_order)
    sig = whiten(sig, model)
    coeffs = design_butterworth_lowpass(cfg.cutoff_hz, sig.sample_rate)
    return Preprocessed(apply_filter(coeffs, sig), model, coeffs)


def acquisition_features(raw: RawAcquisition, cfg: PipelineConfig = PipelineConfig(), kinds=tuple(FeatureKind)):
    pre = preprocess(raw, cfg)
    return featurize(pre.signal, kinds, cfg.window)


# --------------------------------------------------------------------------
# splits


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key]))


def split_acquisition(features: FeatureSet, seed: int) -> tuple[FeatureSet, FeatureSet]:
    """Uniform random 50/50 window partition; ``half_a`` takes the odd row.

    Both halves keep temporal order.
    """
    m = len(features)
    if m == 0:
        raise DomainError("cannot split an empty feature set")
    perm = _rng(seed).permutation(m)
    k = (m + 1) // 2
    return features.take(np.sort(perm[:k])), features.take(np.sort(perm[k:]))


def subsample_training(half: FeatureSet, fraction: float, seed: int) -> FeatureSet:
    """Draw ``ceil(fraction * len(half))`` rows, stratified by class.

    Allocation is proportional (largest remainder, ties to the lower label);
    every present class keeps at least one row when the budget allows.
    """
    if not 0 < fraction <= 1:
        raise DomainError("fraction must lie in (0, 1]")
    m = len(half)
    target = math.ceil(fraction * m - 1e-9)
    if target >= m:
        return half
    classes, counts = np.unique(half.labels, return_counts=True)
    exact = fraction * counts
    alloc = np.floor(exact).astype(int)
    order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - alloc[i]), classes[i]))
    for i in order[: target - alloc.sum()]:
        alloc[i] += 1
    if target >= len(classes):
        for i in np.flatnonzero(alloc == 0):
            donor = int(np.argmax(alloc))
            alloc[donor] -= 1
            alloc[i] += 1
    rng = _rng(seed, 1)
    chosen = []
    for cls, n in zip(classes, alloc):
        rows = np.flatnonzero(half.labels == cls)
        chosen.append(rng.choice(rows, size=n, replace=False))
    return half.take(np.sort(np.concatenate(chosen)))


def hold_out_validation(half: FeatureSet) -> tuple[FeatureSet, FeatureSet]:
    """Validation is every first-repetition movement window; the rest is testing.

    Rest windows have no repetition and always go to testing.
    """
    is_val = (half.repetition == 1) & (half.labels != 0)
    movements = set(np.unique(half.labels[half.labels != 0]).tolist())
    missing = sorted(movements - set(np.unique(half.labels[is_val]).tolist()))
    if missing:
        warnings.warn(
            f"acquisition {half.acquisition_id}: no first-repetition windows for movements {missing}",
            ProtocolWarning,
            stacklevel=2,
        )
    return half.take(np.flatnonzero(is_val)), half.take(np.flatnonzero(~is_val))


# --------------------------------------------------------------------------
# plans


class Part(enum.IntEnum):
    PART1 = 1
    PART2 = 2


@dataclass(frozen=True)
class ExperimentPlan:
    part: Part
    day: int
    training_acq: int
    validation_acqs: tuple[int, ...]
    testing_acqs: tuple[int, ...]
    split_seed: int
    train_fraction_of_half: float = TRAIN_FRACTION_OF_HALF

    @classmethod
    def for_day(cls, part, day: int, seed: int, fraction: float = TRAIN_FRACTION_OF_HALF) -> "ExperimentPlan":
        if day not in DAY_SESSIONS:
            raise PlanError(f"day must be 1..4, got {day}")
        accs = DAY_SESSIONS[day]
        part = Part(int(part))
        val = accs if part is Part.PART1 else accs[:1]
        return cls(part, day, accs[0], tuple(val), tuple(accs), int(seed), fraction)

    def to_dict(self) -> dict:
        return {
            "part": int(self.part),
            "day": self.day,
            "training_acq": self.training_acq,
            "validation_acqs": list(self.validation_acqs),
            "testing_acqs": list(self.testing_acqs),
            "split_seed": self.split_seed,
            "train_fraction_of_half": self.train_fraction_of_half,
        }


@dataclass
class MaterializedPlan:
    plan: ExperimentPlan
    feature_kind: FeatureKind
    training: FeatureSet
    validation: FeatureSet
    testing: dict[int, FeatureSet]
    notes: list[str] = field(default_factory=list)


def acquisition_split(features: FeatureSet, acq: int, seed: int):
    """The per-acquisition split shared by both protocol parts and both feature kinds."""
    half_a, half_b = split_acquisition(features, _derive(seed, acq))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ProtocolWarning)
        val, test = hold_out_validation(half_b)
    return half_a, val, test, [str(w.message) for w in caught]


def _derive(seed: int, *key) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *key]).generate_state(2, np.uint32).view(np.uint64)[0])


def assemble_plan(part, day: int, seed: int, features: dict[int, FeatureSet], fraction: float = TRAIN_FRACTION_OF_HALF) -> MaterializedPlan:
    """Materialize training, validation and per-acquisition testing sets for one plan.

    ``features`` maps acquisition id to one feature kind's FeatureSet.
    """
    plan = ExperimentPlan.for_day(part, day, seed, fraction)
    for acq in plan.testing_acqs:
        if acq not in features:
            raise PlanError(f"acquisition {acq} is missing", acquisition_id=acq)
    kinds = {features[a].feature_kind for a in plan.testing_acqs}
    if len(kinds) != 1:
        raise PlanError("plan mixes feature kinds")
    notes, vals, tests = [], {}, {}
    training = None
    for acq in plan.testing_acqs:
        half_a, val, test, msgs = acquisition_split(features[acq], acq, seed)
        notes.extend(msgs)
        vals[acq], tests[acq] = val, test
        if acq == plan.training_acq:
            training = subsample_training(half_a, fraction, _derive(seed, acq, 1))
    validation = FeatureSet.concat([vals[a] for a in plan.validation_acqs])
    return MaterializedPlan(plan, kinds.pop(), training, validation, tests, notes)


# --------------------------------------------------------------------------
# smoothing and metrics


@dataclass(frozen=True)
class SmoothingConfig:
    enabled: bool = True
    window_k: int = 5

    def __post_init__(self):
        if self.window_k < 1 or self.window_k % 2 == 0:
            raise DomainError("smoothing window must be an odd integer >= 1")


def smooth_predictions(labels, config: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    """Centred majority vote over ``window_k`` consecutive predictions.

    Edges use the truncated neighbourhood. When the centre label ties for the
    top count it is kept; a tie not involving the centre goes to the lowest label.
    """
    labels = np.asarray(labels)
    if not config.enabled or config.window_k == 1 or len(labels) == 0:
        return labels.copy()
    h = config.window_k // 2
    out = labels.copy()
    n = len(labels)
    for i in range(n):
        vals, counts = np.unique(labels[max(0, i - h) : min(n, i + h + 1)], return_counts=True)
        top = counts.max()
        centre_count = counts[vals == labels[i]][0]
        if centre_count < top:
            out[i] = vals[np.argmax(counts)]
    return out


def accuracy(predicted, truth) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DomainError(f"length mismatch: {len(predicted)} predictions vs {len(truth)} labels")
    if len(truth) == 0:
        raise DomainError("accuracy of an empty sequence is undefined")
    return 100.0 * float(np.count_nonzero(predicted == truth)) / len(truth)


def confusion(predicted, truth, n_labels: int = N_LABELS) -> np.ndarray:
    """Counts with truth on rows and prediction on columns."""
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DomainError(f"length mismatch: {len(predicted)} predictions vs {len(truth)} labels")
    if len(truth) == 0:
        raise DomainError("confusion of an empty sequence is undefined")
    m = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(m, (truth, predicted), 1)
    return m


def per_class_recall(matrix: np.ndarray) -> np.ndarray:
    support = matrix.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, np.diag(matrix) / np.maximum(support, 1), np.nan)


def rank_movements(matrix: np.ndarray) -> list[int]:
    """Labels by recall, descending; ties by label; unsupported labels last."""
    recall = per_class_recall(np.asarray(matrix))
    supported = [k for k in range(len(recall)) if not np.isnan(recall[k])]
    unsupported = [k for k in range(len(recall)) if np.isnan(recall[k])]
    return sorted(supported, key=lambda k: (-recall[k], k)) + unsupported


# --------------------------------------------------------------------------
# experiments


@dataclass
class ResultCell:
    part: int
    day: int
    train_acq: int
    validation_acqs: tuple[int, ...]
    test_acq: int
    feature: str
    smoothing: bool
    accuracy: float | None
    c: float | None
    gamma: float | None
    validation_accuracy: float | None = None
    confusion: np.ndarray | None = None
    ranking: list[int] | None = None
    status: str = "ok"
    reason: str = ""

    @property
    def key(self):
        return (self.part, self.train_acq, self.test_acq, self.feature, self.smoothing)


@dataclass
class ExperimentReport:
    cells: list[ResultCell]
    plans: list[dict]
    seed: int
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def failed(self) -> list[ResultCell]:
        return [c for c in self.cells if c.status != "ok"]

    def sorted(self) -> "ExperimentReport":
        order = sorted(self.cells, key=lambda c: (c.part, c.day, c.feature, c.test_acq, c.smoothing))
        return ExperimentReport(order, self.plans, self.seed, self.config, self.notes)

    def cell(self, part, test_acq, feature, smoothing) -> ResultCell:
        feature = FeatureKind.parse(feature).value
        for c in self.cells:
            if (c.part, c.test_acq, c.feature, c.smoothing) == (int(part), test_acq, feature, smoothing):
                return c
        raise KeyError((part, test_acq, feature, smoothing))


def _smoothing_options(smoothing) -> list[SmoothingConfig]:
    if isinstance(smoothing, SmoothingConfig):
        return [smoothing]
    return list(smoothing)


def evaluate_plan(
    mplan: MaterializedPlan,
    c: float,
    gamma: float,
    validation_accuracy: float | None,
    smoothing,
    cache_bytes=None,
) -> list[ResultCell]:
    """Train the final model for a chosen cell and score every testing acquisition."""
    plan = mplan.plan
    kind = mplan.feature_kind.value
    kwargs = {} if cache_bytes is None else {"cache_bytes": cache_bytes}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = train_multiclass(mplan.training, c, KernelParams(gamma), **kwargs)
    cells = []
    for acq in plan.testing_acqs:
        test = mplan.testing[acq]
        raw_pred = model.predict(test.vectors) if len(test) else np.zeros(0, dtype=np.int64)
        for sm in _smoothing_options(smoothing):
            base = dict(
                part=int(plan.part), day=plan.day, train_acq=plan.training_acq, validation_acqs=plan.validation_acqs,
                test_acq=acq, feature=kind, smoothing=sm.enabled, c=c, gamma=gamma,
                validation_accuracy=validation_accuracy,
            )
            if len(test) == 0:
                cells.append(ResultCell(accuracy=None, status="failed", reason="empty testing set", **base))
                continue
            pred = smooth_predictions(raw_pred, sm)
            cm = confusion(pred, test.labels)
            cells.append(ResultCell(accuracy=accuracy(pred, test.labels), confusion=cm, ranking=rank_movements(cm), **base))
    return cells


def _failed_cells(plan: ExperimentPlan, kind: str, smoothing, reason: str) -> list[ResultCell]:
    return [
        ResultCell(int(plan.part), plan.day, plan.training_acq, plan.validation_acqs, acq, kind, sm.enabled,
                   None, None, None, status="failed", reason=reason)
        for acq in plan.testing_acqs
        for sm in _smoothing_options(smoothing)
    ]


def run_experiment(
    mplan: MaterializedPlan,
    smoothing=(SmoothingConfig(False), SmoothingConfig(True)),
    grid: HyperparameterGrid = HyperparameterGrid(),
    workers: int = 1,
) -> ExperimentReport:
    """Grid search on (training, validation), final fit, then every testing acquisition."""
    plan = mplan.plan
    kind = mplan.feature_kind.value
    try:
        result = evaluate_grid(mplan.training, {"validation": mplan.validation}, grid, workers=workers)
        c, g, vacc = result.best("validation")
        cells = evaluate_plan(mplan, c, g, vacc, smoothing)
    except SemgError as exc:
        cells = _failed_cells(plan, kind, smoothing, f"{type(exc).__name__}: {exc}")
    return ExperimentReport(cells, [plan.to_dict()], plan.split_seed, notes=list(mplan.notes))


def run_protocol(
    features: dict[int, dict[FeatureKind, FeatureSet]],
    seed: int,
    parts=(Part.PART1, Part.PART2),
    days=(1, 2, 3, 4),
    kinds=(FeatureKind.MAV, FeatureKind.WL),
    smoothing=(SmoothingConfig(False), SmoothingConfig(True)),
    grid: HyperparameterGrid = HyperparameterGrid(),
    fraction: float = TRAIN_FRACTION_OF_HALF,
    workers: int = 1,
    config_echo: dict | None = None,
) -> ExperimentReport:
    """Every (part, day, feature) experiment.

    Both parts share the training set of a day, so one grid evaluation per
    (day, feature) scores both parts' validation sets.
    """
    cells, plans, notes = [], [], []
    parts = [Part(int(p)) for p in parts]
    for day in days:
        for kind in kinds:
            kind = FeatureKind.parse(kind)
            tag = f"day{day}/{kind.value}"
            try:
                per_acq = {acq: features[acq][kind] for acq in DAY_SESSIONS[day] if acq in features}
                mplans = {p: assemble_plan(p, day, seed, per_acq, fraction) for p in parts}
            except PlanError as exc:
                for p in parts:
                    plan = ExperimentPlan.for_day(p, day, seed, fraction)
                    cells.extend(_failed_cells(plan, kind.value, smoothing, str(exc)))
                log_event("plan", tag, "failed: %s", exc, level=logging.ERROR)
                continue
            first = mplans[parts[0]]
            notes.extend(first.notes)
            log_event("grid", tag, "training rows=%d, %d cells", len(first.training), len(grid))
            try:
                result = evaluate_grid(
                    first.training, {f"part{int(p)}": mplans[p].validation for p in parts}, grid, workers=workers
                )
            except SemgError as exc:
                for p in parts:
                    cells.extend(_failed_cells(mplans[p].plan, kind.value, smoothing, f"{type(exc).__name__}: {exc}"))
                log_event("grid", tag, "failed: %s", exc, level=logging.ERROR)
                continue
            for cell, reason in result.failures.items():
                log_event("grid", f"{tag}/C={cell[0]:g},g={cell[1]:g}", "cell failed: %s", reason, level=logging.WARNING)
            if result.stalled_machines:
                log_event("grid", tag, "%d cells hit the SMO iteration cap", len(result.stalled_machines))
            for p in parts:
                mp = mplans[p]
                try:
                    c, g, vacc = result.best(f"part{int(p)}")
                    log_event("train", f"{tag}/part{int(p)}", "chosen C=%g gamma=%g validation=%.2f%%", c, g, vacc)
                    cells.extend(evaluate_plan(mp, c, g, vacc, smoothing))
                except SemgError as exc:
                    cells.extend(_failed_cells(mp.plan, kind.value, smoothing, f"{type(exc).__name__}: {exc}"))
                if kind is FeatureKind.parse(kinds[0]):
                    plans.append(mp.plan.to_dict())
    report = ExperimentReport(cells, plans, seed, config_echo or {}, sorted(set(notes)))
    return report.sorted()


# --------------------------------------------------------------------------
# dataset loading


def acquisition_files(data_dir, acq: int) -> tuple[Path, Path]:
    return signal_path(data_dir, acq), label_path(data_dir, acq)


def missing_acquisitions(data_dir, acquisitions) -> list[int]:
    out = []
    for acq in acquisitions:
        s, l = acquisition_files(data_dir, acq)
        if not (s.is_file() and l.is_file()):
            out.append(acq)
    return out


def load_features(data_dir, acquisitions, cfg: PipelineConfig = PipelineConfig(), kinds=tuple(FeatureKind)):
    """Ingest, preprocess and featurize every acquisition; raises PlanError on a missing one."""
    missing = missing_acquisitions(data_dir, acquisitions)
    if missing:
        raise PlanError(f"missing files for acquisition {missing[0]}", acquisition_id=missing[0])
    out = {}
    for acq in acquisitions:
        s, l = acquisition_files(data_dir, acq)
        raw = load_acquisition(s, l, acq)
        out[acq] = acquisition_features(raw, cfg, kinds)
        log_event("features", f"acq{acq}", "%d windows", len(next(iter(out[acq].values()))))
    return out
