"""VAR whitening and second-order Butterworth low-pass filtering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, signal as sps

from .errors import DomainError, FitError, InsufficientDataError
from .ingest import LabeledSignal

DEFAULT_VAR_ORDER = 20
DEFAULT_CUTOFF_HZ = 5.0
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class VarModel:
    """VAR(p) model ``x_t = intercept + sum_j A_j x_{t-j} + e_t``.

    ``coefficient_matrices`` has shape (p, C, C); entry ``[j-1]`` is ``A_j``.
    """

    order_p: int
    coefficient_matrices: np.ndarray
    intercept: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.coefficient_matrices)
        if a.ndim != 3 or a.shape[0] != self.order_p or a.shape[1] != a.shape[2]:
            raise DomainError(f"expected {self.order_p} square coefficient matrices, got shape {a.shape}")
        if a.shape[1] != len(self.intercept):
            raise DomainError("intercept length does not match the coefficient matrices")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(self.intercept))):
            raise DomainError("VAR coefficients must be finite")

    def to_dict(self) -> dict:
        return {
            "order_p": self.order_p,
            "coefficient_matrices": np.asarray(self.coefficient_matrices).tolist(),
            "intercept": np.asarray(self.intercept).tolist(),
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VarModel":
        return cls(
            order_p=int(d["order_p"]),
            coefficient_matrices=np.asarray(d["coefficient_matrices"], dtype=float),
            intercept=np.asarray(d["intercept"], dtype=float),
            ridge=float(d.get("ridge", 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _lagged_block(x: np.ndarray, p: int, start: int, stop: int) -> np.ndarray:
    """Regressor rows for targets ``x[start:stop]``: ``[x_{t-1}, ..., x_{t-p}]``."""
    return np.hstack([x[start - j : stop - j] for j in range(1, p + 1)])


def fit_var(signal: LabeledSignal | np.ndarray, order_p: int = DEFAULT_VAR_ORDER, chunk: int = 20000) -> VarModel:
    """Least-squares VAR(p) fit with intercept.

    Targets and each lag block are centred on their own means, so the
    coefficient matrices come from a regression without intercept and the
    intercept is recovered as ``ybar - sum_j A_j xbar_j``. The system is solved
    through an incremental QR of ``[X | Y]`` so long recordings never hold the
    full regressor matrix. A numerically rank-deficient regressor falls back to
    ridge with ``1e-8 * trace(X'X)/dim``.
    """
    x = np.asarray(signal.channels if isinstance(signal, LabeledSignal) else signal, dtype=float)
    if order_p < 1:
        raise DomainError("VAR order must be at least 1")
    t, c = x.shape
    dim = c * order_p
    if t - order_p < dim + 1:
        raise InsufficientDataError(f"need more than {dim + order_p} samples for VAR({order_p}) on {c} channels, got {t}")

    ybar = x[order_p:].mean(axis=0)
    xbar = np.stack([x[order_p - j : t - j].mean(axis=0) for j in range(1, order_p + 1)])
    centre = np.concatenate([xbar.ravel(), ybar])

    r = np.zeros((0, dim + c))
    for s in range(order_p, t, chunk):
        e = min(s + chunk, t)
        block = np.hstack([_lagged_block(x, order_p, s, e), x[s:e]]) - centre
        r = linalg.qr(np.vstack([r, block]), mode="r", check_finite=False)[0][: dim + c]

    r11, r12 = r[:dim, :dim], r[:dim, dim:]
    diag = np.abs(np.diag(r11))
    ridge = 0.0
    if diag.min() > diag.max() * max(t, dim) * np.finfo(float).eps:
        coef = linalg.solve_triangular(r11, r12, check_finite=False)
    else:
        gxx = r11.T @ r11
        gxy = r11.T @ r12
        trace = np.trace(gxx)
        ridge = RIDGE_SCALE * (trace / dim if trace > 0 else 1.0)
        try:
            coef = linalg.solve(gxx + ridge * np.eye(dim), gxy, assume_a="pos", check_finite=False)
        except linalg.LinAlgError as exc:
            raise FitError(f"VAR({order_p}) regressor is rank deficient even with ridge {ridge:g}") from exc

    # coef rows run [lag1 ch0..ch(c-1), lag2 ...]; columns are target channels
    mats = coef.T.reshape(c, order_p, c).transpose(1, 0, 2)
    intercept = ybar - np.einsum("jab,jb->a", mats, xbar)
    return VarModel(order_p, mats, intercept, ridge)


def var_residuals(x: np.ndarray, model: VarModel) -> np.ndarray:
    p = model.order_p
    t = x.shape[0]
    if t <= p:
        raise InsufficientDataError(f"signal of length {t} is too short to whiten with VAR({p})")
    res = x[p:] - model.intercept
    for j in range(1, p + 1):
        res -= x[p - j : t - j] @ model.coefficient_matrices[j - 1].T
    return res


def whiten(signal: LabeledSignal, model: VarModel) -> LabeledSignal:
    """Replace each sample after the first p by its one-step VAR prediction residual."""
    if signal.channels.shape[1] != model.coefficient_matrices.shape[1]:
        raise DomainError("channel count does not match the VAR model")
    res = var_residuals(signal.channels, model)
    trimmed = signal.truncate_front(model.order_p)
    return replace(trimmed, channels=res)


def unwhiten(residuals: np.ndarray, model: VarModel, initial: np.ndarray) -> np.ndarray:
    """Run the VAR recursion forward from ``initial`` (p samples) driven by ``residuals``."""
    p = model.order_p
    out = np.empty((p + len(residuals), residuals.shape[1]))
    out[:p] = initial
    a = model.coefficient_matrices
    for t in range(p, len(out)):
        acc = model.intercept + residuals[t - p]
        for j in range(1, p + 1):
            acc = acc + a[j - 1] @ out[t - j]
        out[t] = acc
    return out


# --------------------------------------------------------------------------
# Butterworth low-pass


@dataclass(frozen=True)
class FilterCoefficients:
    numerator: tuple[float, float, float]
    denominator: tuple[float, float, float]
    cutoff_hz: float
    sample_rate_hz: float

    def __post_init__(self):
        if self.denominator[0] != 1.0:
            raise DomainError("denominator must be normalised to a leading 1")
        roots = np.roots(self.denominator)
        if np.any(np.abs(roots) >= 1.0):
            raise DomainError("filter poles must lie inside the unit circle")

    def to_dict(self) -> dict:
        return {
            "numerator": list(self.numerator),
            "denominator": list(self.denominator),
            "cutoff_hz": self.cutoff_hz,
            "sample_rate_hz": self.sample_rate_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterCoefficients":
        return cls(tuple(d["numerator"]), tuple(d["denominator"]), float(d["cutoff_hz"]), float(d["sample_rate_hz"]))


def design_butterworth_lowpass(cutoff_hz: float = DEFAULT_CUTOFF_HZ, sample_rate_hz: float = 100.0) -> FilterCoefficients:
    """Second-order Butterworth low-pass via the pre-warped bilinear transform."""
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise DomainError(f"cutoff {cutoff_hz} Hz must lie in (0, {sample_rate_hz / 2}) Hz")
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    q = math.sqrt(2.0)
    norm = 1.0 / (1.0 + q * k + k * k)
    b0 = k * k * norm
    a1 = 2.0 * (k * k - 1.0) * norm
    a2 = (1.0 - q * k + k * k) * norm
    return FilterCoefficients((b0, 2.0 * b0, b0), (1.0, a1, a2), float(cutoff_hz), float(sample_rate_hz))


def frequency_response(coeffs: FilterCoefficients, frequency_hz: float) -> float:
    """|H(e^{jw})| at ``frequency_hz``."""
    nyq = coeffs.sample_rate_hz / 2
    if not 0 <= frequency_hz <= nyq:
        raise DomainError(f"frequency {frequency_hz} Hz outside [0, {nyq}] Hz")
    z1 = np.exp(-2j * np.pi * frequency_hz / coeffs.sample_rate_hz)
    b, a = coeffs.numerator, coeffs.denominator
    return float(abs((b[0] + b[1] * z1 + b[2] * z1 * z1) / (a[0] + a[1] * z1 + a[2] * z1 * z1)))


def apply_filter(coeffs: FilterCoefficients, signal: LabeledSignal | np.ndarray):
    """Causal direct-form filtering per channel from zero initial state."""
    if isinstance(signal, LabeledSignal):
        out = sps.lfilter(coeffs.numerator, coeffs.denominator, signal.channels, axis=0)
        return replace(signal, channels=out)
    return sps.lfilter(coeffs.numerator, coeffs.denominator, np.asarray(signal, dtype=float), axis=0)
