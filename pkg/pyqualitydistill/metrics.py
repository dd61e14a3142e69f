"""Evaluation statistics: rank and linear correlation, residual summaries."""

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.stats import rankdata

from pyqualitydistill.exceptions import DegenerateMetricError, EmptyBatchError

logger = logging.getLogger(__name__)


class ResidualStats(NamedTuple):
    mean_residual: float
    mae: float
    rmse: float


@dataclass(frozen=True)
class EvalReport:
    """Correlation and residual summary of one (model, split) evaluation."""
    srcc: float
    plcc: float
    mean_residual: float
    mae: float
    rmse: float
    n: int
    plcc_logistic: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        if out["plcc_logistic"] is None:
            del out["plcc_logistic"]
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        return cls(
            srcc=float(data["srcc"]),
            plcc=float(data["plcc"]),
            mean_residual=float(data["mean_residual"]),
            mae=float(data["mae"]),
            rmse=float(data["rmse"]),
            n=int(data["n"]),
            plcc_logistic=None if data.get("plcc_logistic") is None else float(data["plcc_logistic"]),
        )


def _vectors(x: Sequence[float], y: Sequence[float], minimum: int) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DegenerateMetricError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < minimum:
        raise DegenerateMetricError(f"need at least {minimum} values, got {a.size}")
    return a, b


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt(np.sum(ac * ac) * np.sum(bc * bc))
    if denom == 0.0:
        raise DegenerateMetricError("correlation undefined for a constant vector")
    return float(np.clip(np.sum(ac * bc) / denom, -1.0, 1.0))


def plcc(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Pearson linear correlation.

    Raises:
        DegenerateMetricError: For fewer than 2 values or a constant input.

    Example:
        >>> round(plcc([1, 2, 3], [1, 2, 4]), 6)
        0.981981
    """
    a, b = _vectors(x, y, 2)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateMetricError("PLCC undefined for a constant vector")
    return _pearson(a, b)


def srcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation; tied values share their average rank."""
    a, b = _vectors(x, y, 2)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateMetricError("SRCC undefined for a constant vector")
    return _pearson(rankdata(a, method="average"), rankdata(b, method="average"))


def _logistic4(x: np.ndarray, top: float, bottom: float, center: float, scale: float) -> np.ndarray:
    return bottom + (top - bottom) / (1.0 + np.exp(-(x - center) / np.abs(scale)))


def logistic_plcc(pred: Sequence[float], label: Sequence[float]) -> float:
    """
    Pearson correlation after mapping predictions through a fitted monotone logistic.

    Falls back to raw PLCC when the fit does not converge.
    """
    a, b = _vectors(pred, label, 2)
    p0 = [float(b.max()), float(b.min()), float(np.median(a)), float(np.std(a)) or 1.0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            coef, _ = curve_fit(_logistic4, a, b, p0=p0, maxfev=20000)
        mapped = _logistic4(a, *coef)
        if not np.all(np.isfinite(mapped)):
            raise RuntimeError("non-finite logistic mapping")
    except (RuntimeError, ValueError) as e:
        logger.warning("Logistic fit failed (%s); using raw PLCC", e)
        return plcc(a, b)
    return plcc(mapped, b)


def residual_stats(pred: Sequence[float], label: Sequence[float]) -> ResidualStats:
    p = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(label, dtype=np.float64).ravel()
    if p.size == 0:
        raise EmptyBatchError("residual statistics need at least one value")
    if p.shape != y.shape:
        raise DegenerateMetricError(f"length mismatch: {p.size} vs {y.size}")
    r = p - y
    return ResidualStats(float(r.mean()), float(np.abs(r).mean()), float(np.sqrt(np.mean(r * r))))


def evaluate_predictions(pred: Sequence[float], label: Sequence[float], logistic: bool = False) -> EvalReport:
    """Build an EvalReport for aligned predictions and labels."""
    a, b = _vectors(pred, label, 2)
    res = residual_stats(a, b)
    return EvalReport(
        srcc=srcc(a, b),
        plcc=plcc(a, b),
        mean_residual=res.mean_residual,
        mae=res.mae,
        rmse=res.rmse,
        n=int(a.size),
        plcc_logistic=logistic_plcc(a, b) if logistic else None,
    )
