"""One-vs-one soft-margin SVM with an RBF kernel and validation grid search."""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import _smo
from .errors import ConvergenceWarning, DegenerateTrainingError, DomainError, SearchError
from .features import FeatureKind, FeatureSet, StandardizationStats, fit_standardization

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
DEFAULT_TOLERANCE = 1e-3
DEFAULT_MAX_PASSES = 100
DEFAULT_CACHE_BYTES = 256 * 2**20


@dataclass(frozen=True)
class HyperparameterGrid:
    c_exponents: tuple[int, ...] = (0, 2, 4, 6, 8, 10, 12, 14, 16)
    gamma_exponents: tuple[int, ...] = (-16, -14, -12, -10, -8, -6, -4, -2)

    @property
    def c_values(self) -> list[float]:
        return [2.0**e for e in self.c_exponents]

    @property
    def gamma_values(self) -> list[float]:
        return [2.0**e for e in self.gamma_exponents]

    def cells(self) -> list[tuple[float, float]]:
        """All (C, gamma) pairs, C-major in ascending order."""
        return [(c, g) for c in sorted(self.c_values) for g in sorted(self.gamma_values)]

    def __len__(self):
        return len(self.c_exponents) * len(self.gamma_exponents)


@dataclass(frozen=True)
class KernelParams:
    gamma: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise DomainError(f"gamma must be finite and positive, got {self.gamma}")


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DomainError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel matrix between the rows of ``a`` and ``b``."""
    return np.exp(-gamma * cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean"))


# --------------------------------------------------------------------------
# binary machine


@dataclass
class BinarySvm:
    """Decision function ``sum_i coef_i K(s_i, x) + bias``; positive votes ``class_pair[0]``."""

    support_vectors: np.ndarray
    dual_coefficients: np.ndarray  # alpha_i * y_i
    bias: float
    kernel: KernelParams
    class_pair: tuple[int, int] = (1, -1)
    c: float = 1.0
    converged: bool = True
    iterations: int = 0
    dual_objective: float = float("nan")

    def decision_function(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if len(self.support_vectors) == 0:
            return np.full(len(x), self.bias)
        if x.shape[1] != self.support_vectors.shape[1]:
            raise DomainError(f"expected {self.support_vectors.shape[1]} features, got {x.shape[1]}")
        return rbf_matrix(x, self.support_vectors, self.kernel.gamma) @ self.dual_coefficients + self.bias

    def to_dict(self) -> dict:
        return {
            "class_pair": list(self.class_pair),
            "c": self.c,
            "gamma": self.kernel.gamma,
            "bias": self.bias,
            "dual_coefficients": self.dual_coefficients.tolist(),
            "support_vectors": self.support_vectors.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinarySvm":
        sv = np.asarray(d["support_vectors"], dtype=float)
        return cls(
            support_vectors=sv.reshape(len(sv), -1) if sv.size else sv.reshape(0, 0),
            dual_coefficients=np.asarray(d["dual_coefficients"], dtype=float),
            bias=float(d["bias"]),
            kernel=KernelParams(float(d["gamma"])),
            class_pair=tuple(d["class_pair"]),
            c=float(d["c"]),
            converged=bool(d.get("converged", True)),
            iterations=int(d.get("iterations", 0)),
        )


@dataclass
class DualSolution:
    alpha: np.ndarray
    grad: np.ndarray
    bias: float
    iterations: int
    converged: bool

    def objective(self, y: np.ndarray) -> float:
        """Dual objective ``sum(alpha) - 0.5 alpha'Q alpha`` from the stored gradient."""
        # grad = Q alpha - 1  =>  alpha'Q alpha = alpha'(grad + 1)
        return float(self.alpha.sum() - 0.5 * self.alpha @ (self.grad + 1.0))


class KernelColumnCache:
    """Least-recently-used cache of kernel columns for problems too large for a dense Gram."""

    def __init__(self, x: np.ndarray, gamma: float, budget_bytes: int):
        self.x = x
        self.gamma = gamma
        self.capacity = max(2, budget_bytes // max(1, 8 * len(x)))
        self._cols: OrderedDict[int, np.ndarray] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def column(self, i: int) -> np.ndarray:
        col = self._cols.get(i)
        if col is not None:
            self._cols.move_to_end(i)
            self.hits += 1
            return col
        self.misses += 1
        col = rbf_matrix(self.x[i], self.x, self.gamma)[0]
        self._cols[i] = col
        if len(self._cols) > self.capacity:
            self._cols.popitem(last=False)
        return col


def _max_iter(n: int, max_passes: int) -> int:
    return max(1, max_passes) * max(n, 100)


def solve_dual(kernel: np.ndarray, y: np.ndarray, c: float, tolerance=DEFAULT_TOLERANCE, max_passes=DEFAULT_MAX_PASSES) -> DualSolution:
    """SMO on a dense kernel matrix."""
    y = np.ascontiguousarray(y, dtype=float)
    kernel = np.ascontiguousarray(kernel, dtype=float)
    alpha, grad, it, ok = _smo.solve_dense(kernel, y, float(c), float(tolerance), _max_iter(len(y), max_passes))
    return DualSolution(alpha, grad, float(_smo.decision_bias(alpha, grad, y, float(c))), int(it), bool(ok))


def solve_dual_cached(cache: KernelColumnCache, y: np.ndarray, c: float, tolerance=DEFAULT_TOLERANCE, max_passes=DEFAULT_MAX_PASSES) -> DualSolution:
    """Same iteration as :func:`solve_dual`, fetching kernel columns on demand."""
    y = np.ascontiguousarray(y, dtype=float)
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    kdiag = np.ones(n)  # RBF: K(x, x) = 1
    c = float(c)
    it, ok = 0, False
    limit = _max_iter(n, max_passes)
    while it < limit:
        i, gmax = _smo.select_i(alpha, grad, y, c)
        if i < 0:
            ok = True
            break
        k_i = cache.column(i)
        j, gmax2 = _smo.select_j(alpha, grad, y, c, kdiag, k_i, i, gmax)
        if j < 0 or gmax + gmax2 < tolerance:
            ok = True
            break
        _smo.update_pair(alpha, grad, y, c, kdiag, k_i, cache.column(j), i, j)
        it += 1
    return DualSolution(alpha, grad, float(_smo.decision_bias(alpha, grad, y, c)), it, ok)


def kkt_violation(sol: DualSolution, y: np.ndarray, c: float) -> float:
    """Maximal violating-pair gap ``max_up(-yG) - min_low(-yG)`` (<= 0 means exact optimum)."""
    y = np.asarray(y, dtype=float)
    a, g = sol.alpha, sol.grad
    up = ((y > 0) & (a < c)) | ((y < 0) & (a > 0))
    low = ((y > 0) & (a > 0)) | ((y < 0) & (a < c))
    score = -y * g
    if not up.any() or not low.any():
        return 0.0
    return float(score[up].max() - score[low].min())


def _check_binary(y: np.ndarray, c: float):
    if c <= 0:
        raise DomainError("C must be positive")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateTrainingError("binary training needs both classes present")


def train_binary_svm(
    features,
    labels,
    c: float,
    kernel: KernelParams,
    tolerance: float = DEFAULT_TOLERANCE,
    max_passes: int = DEFAULT_MAX_PASSES,
    cache_bytes: int = DEFAULT_CACHE_BYTES,
    class_pair: tuple[int, int] = (1, -1),
) -> BinarySvm:
    """Soft-margin dual via SMO. ``labels`` are +1/-1.

    Stops once the maximal KKT violation drops below ``tolerance``. After
    ``max_passes * n`` pair updates it gives up, warns with
    :class:`ConvergenceWarning` and returns the partial model.
    """
    x = np.asarray(features, dtype=float)
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    _check_binary(y, c)
    if 8 * len(x) ** 2 <= cache_bytes:
        sol = solve_dual(rbf_matrix(x, x, kernel.gamma), y, c, tolerance, max_passes)
    else:
        sol = solve_dual_cached(KernelColumnCache(x, kernel.gamma, cache_bytes), y, c, tolerance, max_passes)
    if not sol.converged:
        warnings.warn(f"SMO stopped after {sol.iterations} updates without reaching tolerance {tolerance}", ConvergenceWarning, stacklevel=2)
    return _machine_from_solution(sol, x, y, c, kernel, class_pair)


def _machine_from_solution(sol: DualSolution, x, y, c, kernel, class_pair) -> BinarySvm:
    sv = sol.alpha > 0
    return BinarySvm(
        support_vectors=x[sv],
        dual_coefficients=(sol.alpha * y)[sv],
        bias=sol.bias,
        kernel=kernel,
        class_pair=class_pair,
        c=float(c),
        converged=sol.converged,
        iterations=sol.iterations,
        dual_objective=sol.objective(y),
    )


# --------------------------------------------------------------------------
# one-vs-one ensemble


@dataclass
class SvmModel:
    machines: list[BinarySvm]
    classes: np.ndarray
    chosen_c: float
    chosen_gamma: float
    standardization: StandardizationStats
    feature_kind: FeatureKind
    _pool: np.ndarray | None = field(default=None, repr=False)
    _pool_index: list[np.ndarray] | None = field(default=None, repr=False)

    def _build_pool(self):
        rows = [m.support_vectors for m in self.machines if len(m.support_vectors)]
        if not rows:
            self._pool, self._pool_index = np.zeros((0, len(self.standardization.means))), [np.zeros(0, int)] * len(self.machines)
            return
        stacked = np.vstack(rows)
        pool, inverse = np.unique(stacked, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        index, pos = [], 0
        for m in self.machines:
            k = len(m.support_vectors)
            index.append(inverse[pos : pos + k])
            pos += k
        self._pool, self._pool_index = pool, index

    def votes(self, vectors) -> np.ndarray:
        """Vote counts, shape (M, n_classes); input is raw (unstandardized) features."""
        x = np.atleast_2d(np.asarray(vectors, dtype=float))
        if x.shape[1] != len(self.standardization.means):
            raise DomainError(f"expected {len(self.standardization.means)} features, got {x.shape[1]}")
        z = self.standardization.apply(x)
        if self._pool is None:
            self._build_pool()
        kp = rbf_matrix(z, self._pool, self.chosen_gamma) if len(self._pool) else np.zeros((len(z), 0))
        pos = {int(c): k for k, c in enumerate(self.classes)}
        tally = np.zeros((len(z), len(self.classes)), dtype=np.int64)
        rows = np.arange(len(z))
        for m, idx in zip(self.machines, self._pool_index):
            dec = kp[:, idx] @ m.dual_coefficients + m.bias
            a, b = pos[m.class_pair[0]], pos[m.class_pair[1]]
            winner = np.where(dec > 0, a, b)
            np.add.at(tally, (rows, winner), 1)
        return tally

    def predict(self, vectors) -> np.ndarray:
        """Max-wins voting; ties go to the lowest label."""
        return self.classes[np.argmax(self.votes(vectors), axis=1)]

    def to_dict(self) -> dict:
        return {
            "format": "semgsvm-model",
            "version": MODEL_FORMAT_VERSION,
            "feature_kind": self.feature_kind.value,
            "chosen_c": self.chosen_c,
            "chosen_gamma": self.chosen_gamma,
            "classes": [int(c) for c in self.classes],
            "standardization": self.standardization.to_dict(),
            "machines": [m.to_dict() for m in self.machines],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        if d.get("format") != "semgsvm-model":
            raise DomainError("not a semgsvm model document")
        if int(d.get("version", 0)) != MODEL_FORMAT_VERSION:
            raise DomainError(f"unsupported model version {d.get('version')}")
        machines = [BinarySvm.from_dict(m) for m in d["machines"]]
        for m in machines:
            if m.support_vectors.size == 0:
                m.support_vectors = np.zeros((0, len(d["standardization"]["means"])))
        return cls(
            machines=machines,
            classes=np.asarray(d["classes"], dtype=np.int64),
            chosen_c=float(d["chosen_c"]),
            chosen_gamma=float(d["chosen_gamma"]),
            standardization=StandardizationStats.from_dict(d["standardization"]),
            feature_kind=FeatureKind.parse(d["feature_kind"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "SvmModel":
        return cls.from_dict(json.loads(text))


def predict(model: SvmModel, vector):
    """Label for one feature vector, or an array of labels for a matrix."""
    v = np.asarray(vector, dtype=float)
    out = model.predict(v)
    return int(out[0]) if v.ndim == 1 else out


class _PairTrainer:
    """Shared state for training every class pair on one standardized training set."""

    def __init__(self, z: np.ndarray, labels: np.ndarray, gamma: float, tolerance, max_passes, cache_bytes):
        self.z = z
        self.labels = labels
        self.gamma = gamma
        self.tolerance = tolerance
        self.max_passes = max_passes
        self.cache_bytes = cache_bytes
        self.classes = np.unique(labels)
        self.pairs = list(itertools.combinations(self.classes.tolist(), 2))
        self.dense = 8 * len(z) ** 2 <= cache_bytes
        self.gram = rbf_matrix(z, z, gamma) if self.dense else None
        self.index = {}
        for a, b in self.pairs:
            idx = np.flatnonzero((labels == a) | (labels == b))
            self.index[(a, b)] = (idx, np.where(labels[idx] == a, 1.0, -1.0))

    def solve(self, pair, c) -> DualSolution:
        idx, y = self.index[pair]
        if self.dense:
            return solve_dual(self.gram[np.ix_(idx, idx)], y, c, self.tolerance, self.max_passes)
        cache = KernelColumnCache(self.z[idx], self.gamma, self.cache_bytes)
        return solve_dual_cached(cache, y, c, self.tolerance, self.max_passes)

    def machines(self, c) -> tuple[list[BinarySvm], list[tuple[np.ndarray, DualSolution]]]:
        out, raw = [], []
        kp = KernelParams(self.gamma)
        for pair in self.pairs:
            sol = self.solve(pair, c)
            idx, y = self.index[pair]
            out.append(_machine_from_solution(sol, self.z[idx], y, c, kp, pair))
            raw.append((idx, sol))
        return out, raw


def train_multiclass(
    features: FeatureSet,
    c: float,
    kernel: KernelParams,
    tolerance: float = DEFAULT_TOLERANCE,
    max_passes: int = DEFAULT_MAX_PASSES,
    cache_bytes: int = DEFAULT_CACHE_BYTES,
) -> SvmModel:
    """Train one binary machine per unordered pair of classes present."""
    classes = np.unique(features.labels)
    if len(classes) < 2:
        raise DegenerateTrainingError(f"need at least two classes, found {classes.tolist()}")
    stats = fit_standardization(features)
    z = stats.apply(features.vectors)
    trainer = _PairTrainer(z, features.labels, kernel.gamma, tolerance, max_passes, cache_bytes)
    machines, _ = trainer.machines(c)
    stalled = sum(not m.converged for m in machines)
    if stalled:
        warnings.warn(f"{stalled} of {len(machines)} machines hit the SMO iteration cap", ConvergenceWarning, stacklevel=2)
    return SvmModel(machines, classes, float(c), float(kernel.gamma), stats, features.feature_kind)


# --------------------------------------------------------------------------
# grid search


@dataclass
class GridResult:
    """Validation accuracy (percent) of every grid cell, per validation set."""

    cells: list[tuple[float, float]]
    accuracy: dict[str, np.ndarray]  # name -> (n_cells,) with nan for failed cells
    failures: dict[tuple[float, float], str] = field(default_factory=dict)
    stalled_machines: dict[tuple[float, float], int] = field(default_factory=dict)

    def best(self, name: str) -> tuple[float, float, float]:
        """Accuracy maximiser; ties go to smaller C, then smaller gamma."""
        acc = self.accuracy[name]
        best_k = None
        for k in range(len(self.cells)):
            if np.isnan(acc[k]):
                continue
            # cells run C-major ascending, so the first maximum wins ties
            if best_k is None or acc[k] > acc[best_k]:
                best_k = k
        if best_k is None:
            raise SearchError("every grid cell failed")
        c, g = self.cells[best_k]
        return c, g, float(acc[best_k])


def evaluate_grid(
    train: FeatureSet,
    validations: dict[str, FeatureSet],
    grid: HyperparameterGrid = HyperparameterGrid(),
    tolerance: float = DEFAULT_TOLERANCE,
    max_passes: int = DEFAULT_MAX_PASSES,
    cache_bytes: int = DEFAULT_CACHE_BYTES,
    workers: int = 1,
) -> GridResult:
    """Train every grid cell once and score it on each validation set.

    Scoring several validation sets against the same trained cells lets the
    two protocol variants share one search.
    """
    classes = np.unique(train.labels)
    if len(classes) < 2:
        raise DegenerateTrainingError(f"need at least two classes, found {classes.tolist()}")
    for name, v in validations.items():
        if len(v) == 0:
            raise SearchError(f"validation set {name!r} is empty")
        if v.feature_kind != train.feature_kind or v.vectors.shape[1] != train.vectors.shape[1]:
            raise SearchError(f"validation set {name!r} does not match the training features")
    stats = fit_standardization(train)
    z = stats.apply(train.vectors)
    zval = {name: stats.apply(v.vectors) for name, v in validations.items()}
    truth = {name: v.labels for name, v in validations.items()}
    cells = grid.cells()
    acc = {name: np.full(len(cells), np.nan) for name in validations}
    failures: dict = {}
    stalled: dict = {}

    def run_gamma(gamma):
        out = {}
        trainer = _PairTrainer(z, train.labels, gamma, tolerance, max_passes, cache_bytes)
        kval = {name: rbf_matrix(v, z, gamma) for name, v in zval.items()}
        for c in sorted(grid.c_values):
            try:
                raw = [(trainer.index[p], trainer.solve(p, c)) for p in trainer.pairs]
            except Exception as exc:  # a failed cell is excluded, not fatal
                out[(c, gamma)] = exc
                continue
            n_stalled = sum(not sol.converged for _, sol in raw)
            scores = {}
            for name, kv in kval.items():
                tally = np.zeros((len(kv), len(classes)), dtype=np.int64)
                rows = np.arange(len(kv))
                pos = {int(cl): k for k, cl in enumerate(classes)}
                for (a, b), ((idx, y), sol) in zip(trainer.pairs, raw):
                    sv = sol.alpha > 0
                    dec = kv[:, idx[sv]] @ (sol.alpha * y)[sv] + sol.bias
                    np.add.at(tally, (rows, np.where(dec > 0, pos[a], pos[b])), 1)
                pred = classes[np.argmax(tally, axis=1)]
                scores[name] = 100.0 * float(np.mean(pred == truth[name]))
            out[(c, gamma)] = (scores, n_stalled)
            log.debug("grid cell C=%g gamma=%g %s", c, gamma, scores)
        return out

    gammas = sorted(grid.gamma_values)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_gamma, gammas))
    else:
        results = [run_gamma(g) for g in gammas]
    merged = {}
    for r in results:
        merged.update(r)
    for k, cell in enumerate(cells):
        res = merged[cell]
        if isinstance(res, Exception):
            failures[cell] = f"{type(res).__name__}: {res}"
            continue
        scores, n_stalled = res
        for name in validations:
            acc[name][k] = scores[name]
        if n_stalled:
            stalled[cell] = n_stalled
    return GridResult(cells, acc, failures, stalled)


def grid_search(
    train: FeatureSet,
    validation: FeatureSet,
    grid: HyperparameterGrid = HyperparameterGrid(),
    **kwargs,
) -> tuple[float, float, float]:
    """Return ``(C, gamma, validation accuracy %)`` of the best grid cell."""
    return evaluate_grid(train, {"validation": validation}, grid, **kwargs).best("validation")
