"""
Teacher signals: point-wise soft scores and confidence-weighted pair preferences.

Every function here is pure; sampling takes its seed explicitly.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, xlog1py

from pyqualitydistill.definitions import QUALITY_SCORES, QUALITY_TOKENS
from pyqualitydistill.exceptions import ConfigurationError, InsufficientDataError, InvalidSignalError

logger = logging.getLogger(__name__)

TOKEN_VALUES = np.array([QUALITY_SCORES[t] for t in QUALITY_TOKENS], dtype=np.float64)
DEFAULT_TAU = 0.1
_LOG2 = math.log(2.0)
_SERIES_CUTOFF = 1e-3


@dataclass(frozen=True)
class TeacherPointSignal:
    """Teacher judgment for one image."""
    image_id: Hashable
    logits: np.ndarray
    probs: np.ndarray
    soft_score: float


@dataclass(frozen=True)
class SupervisionPair:
    """Teacher preference between images a (option A) and b (option B)."""
    a: Hashable
    b: Hashable
    logit_a: float
    logit_b: float
    p_a: float
    t: int
    omega: float

    @property
    def p_b(self) -> float:
        return 1.0 - self.p_a


def point_probs(logits: Sequence[float], image_id: Optional[Any] = None) -> np.ndarray:
    """
    Softmax over the five quality-token log-likelihoods.

    Args:
        logits: Five log-likelihoods in Excellent..Bad order.
        image_id: Used only to label errors.

    Returns:
        np.ndarray: Probabilities summing to 1.

    Raises:
        InvalidSignalError: If the vector is not five finite numbers.

    Example:
        >>> point_probs([0, 0, 0, 0, 0])
        array([0.2, 0.2, 0.2, 0.2, 0.2])
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.shape != (len(QUALITY_TOKENS),):
        raise InvalidSignalError(f"expected {len(QUALITY_TOKENS)} logits, got shape {arr.shape}", image_id)
    if not np.all(np.isfinite(arr)):
        raise InvalidSignalError(f"non-finite logits {arr.tolist()}", image_id)
    z = np.exp(arr - arr.max())
    return z / z.sum()


def point_score(probs: Sequence[float], image_id: Optional[Any] = None) -> float:
    """Expected ordinal value (5..1) under the token distribution; lies in [1, 5]."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != TOKEN_VALUES.shape or not np.all(np.isfinite(p)):
        raise InvalidSignalError(f"invalid probability vector {p.tolist()}", image_id)
    if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidSignalError(f"probabilities must be non-negative and sum to 1, got {p.tolist()}", image_id)
    return float(min(5.0, max(1.0, float(TOKEN_VALUES @ p))))


def make_point_signal(image_id: Hashable, logits: Sequence[float]) -> TeacherPointSignal:
    arr = np.asarray(logits, dtype=np.float64)
    probs = point_probs(arr, image_id)
    return TeacherPointSignal(image_id, arr, probs, point_score(probs, image_id))


def pair_probs(l_a: float, l_b: float) -> Tuple[float, float]:
    """
    Two-way softmax over the decision-token log-likelihoods.

    Returns:
        Tuple[float, float]: (p_a, p_b) with p_a = sigmoid(l_a - l_b).

    Raises:
        InvalidSignalError: If either log-likelihood is not finite.
    """
    if not (math.isfinite(l_a) and math.isfinite(l_b)):
        raise InvalidSignalError(f"non-finite pair logits ({l_a}, {l_b})")
    p_a = float(expit(l_a - l_b))
    return p_a, 1.0 - p_a


def _check_probability(p_a: float) -> None:
    if not (0.0 <= p_a <= 1.0):
        raise InvalidSignalError(f"probability {p_a} outside [0, 1]")


def pair_label(p_a: float) -> int:
    """Hard preference: 1 when A is at least as likely as B (ties go to A)."""
    _check_probability(p_a)
    return 1 if p_a >= 0.5 else 0


def pair_confidence(p_a: float) -> float:
    """
    One minus the binary entropy of (p_a, 1 - p_a) in nats, normalized by log 2.

    Computed from x = 2 p_a - 1 as ((1+x) log(1+x) + (1-x) log(1-x)) / (2 log 2), so the
    result is 0 only at p_a = 0.5 exactly.
    """
    _check_probability(p_a)
    x = 2.0 * p_a - 1.0
    if abs(x) < _SERIES_CUTOFF:
        # leading terms of sum x^(2k) / (k (2k - 1)); the closed form cancels to 0 here
        x2 = x * x
        total = x2 * (1.0 + x2 / 6.0 + x2 * x2 / 15.0)
    else:
        total = float(xlog1py(1.0 + x, x)) + float(xlog1py(1.0 - x, -x))
    return min(1.0, max(0.0, total / (2.0 * _LOG2)))


def make_pair(a: Hashable, b: Hashable, logit_a: float, logit_b: float) -> SupervisionPair:
    if a == b:
        raise InvalidSignalError("a pair must compare two different images", a)
    p_a, _ = pair_probs(float(logit_a), float(logit_b))
    return SupervisionPair(
        a=a,
        b=b,
        logit_a=float(logit_a),
        logit_b=float(logit_b),
        p_a=p_a,
        t=pair_label(p_a),
        omega=pair_confidence(p_a),
    )


def sample_pairs(ids: Sequence[Hashable], count: int, seed: int, unique: bool = False) -> List[Tuple[Hashable, Hashable]]:
    """
    Draw ordered image pairs uniformly at random, rejecting self-pairs.

    The first element of each pair is presented as option A.

    Args:
        ids: Candidate image ids (at least two).
        count: Number of pairs to draw.
        seed: Seed of the generator; equal inputs give equal lists.
        unique: Redraw pairs already drawn instead of keeping duplicates.

    Returns:
        List[Tuple]: count pairs (a, b) with a != b.

    Raises:
        InsufficientDataError: If fewer than two ids are given.
        ConfigurationError: If count is negative or unique pairs cannot cover count.
    """
    n = len(ids)
    if n < 2:
        raise InsufficientDataError(f"need at least 2 ids to sample pairs, got {n}")
    if count < 0:
        raise ConfigurationError(f"pair count must be >= 0, got {count}")
    if unique and count > n * (n - 1):
        raise ConfigurationError(f"cannot draw {count} distinct ordered pairs from {n} ids")

    rng = np.random.default_rng(seed)
    pairs: List[Tuple[Hashable, Hashable]] = []
    seen = set()
    while len(pairs) < count:
        need = count - len(pairs)
        a_idx = rng.integers(0, n, size=need)
        b_idx = rng.integers(0, n, size=need)
        for i, j in zip(a_idx.tolist(), b_idx.tolist()):
            if i == j:
                continue
            if unique:
                if (i, j) in seen:
                    continue
                seen.add((i, j))
            pairs.append((ids[i], ids[j]))
    return pairs


def filter_pairs(pairs: Sequence[SupervisionPair], tau: float = DEFAULT_TAU) -> List[SupervisionPair]:
    """Keep the pairs whose confidence is at least tau, preserving order."""
    if not (0.0 <= tau <= 1.0):
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    kept = [p for p in pairs if p.omega >= tau]
    logger.debug("Confidence filter tau=%s kept %d of %d pairs", tau, len(kept), len(pairs))
    return kept
