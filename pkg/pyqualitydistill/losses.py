"""
Training objectives of both stages with gradients with respect to student scores.

Vector losses take aligned arrays and return one gradient per entry. The pair
losses take scores keyed by image id and return gradients keyed the same way
(``LossValue.ids``), since a pair batch touches an arbitrary subset of images.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from pyqualitydistill.exceptions import (
    ConfigurationError,
    DanglingPairError,
    DegenerateBatchError,
    EmptyBatchError,
)
from pyqualitydistill.signals import SupervisionPair

logger = logging.getLogger(__name__)

DEFAULT_BETA = 1.0
DEFAULT_LAMBDA_DIS = 0.5
DEFAULT_LAMBDA_CAL = 1.0
PLCC_EPS = 1e-8


@dataclass
class LossValue:
    """Loss value and dL/ds per score; ids names the score of each gradient when keyed by id."""
    value: float
    score_grads: np.ndarray
    ids: Optional[Tuple[Hashable, ...]] = None

    def grads_by_id(self) -> Dict[Hashable, float]:
        if self.ids is None:
            raise ValueError("loss gradients are positional, not keyed by id")
        return {i: float(g) for i, g in zip(self.ids, self.score_grads)}


def _pair_arrays(scores: Sequence[float], targets: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if s.shape != t.shape:
        raise DegenerateBatchError(f"length mismatch: {s.size} scores vs {t.size} targets")
    if s.size == 0:
        raise EmptyBatchError("loss received an empty batch")
    return s, t


def smooth_l1(pred: float, target: float, beta: float = DEFAULT_BETA) -> LossValue:
    """
    Huber-style loss: 0.5 d^2 / beta inside |d| < beta, |d| - 0.5 beta outside.

    Example:
        >>> smooth_l1(2.5, 2.0).value
        0.125
    """
    if not beta > 0:
        raise ConfigurationError(f"smooth L1 beta must be > 0, got {beta}")
    d = float(pred) - float(target)
    if abs(d) < beta:
        value = 0.5 * d * d / beta
    else:
        value = abs(d) - 0.5 * beta
    grad = min(1.0, max(-1.0, d / beta))
    return LossValue(value, np.array([grad]))


def reg_loss(scores: Sequence[float], teacher_scores: Sequence[float], beta: float = DEFAULT_BETA) -> LossValue:
    """Mean smooth L1 between student and teacher soft scores."""
    if not beta > 0:
        raise ConfigurationError(f"smooth L1 beta must be > 0, got {beta}")
    s, t = _pair_arrays(scores, teacher_scores)
    d = s - t
    ad = np.abs(d)
    per = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    grads = np.clip(d / beta, -1.0, 1.0) / s.size
    return LossValue(float(per.mean()), grads)


def rank_prob(s_a: float, s_b: float) -> float:
    """Probability that a outranks b under the logistic of the score difference."""
    return float(expit(float(s_a) - float(s_b)))


def rank_loss(
    scores_by_id: Mapping[Hashable, float],
    pairs: Sequence[SupervisionPair],
    use_confidence: bool = True,
) -> LossValue:
    """
    Mean confidence-weighted binary cross-entropy over pairs, in the logits domain.

    Args:
        scores_by_id: Student score of every image the pairs mention.
        pairs: Retained supervision pairs.
        use_confidence: Weight each pair by its confidence; False weights all pairs 1.

    Returns:
        LossValue: Gradients keyed by ids in first-appearance order.

    Raises:
        EmptyBatchError: If pairs is empty.
        DanglingPairError: If a pair mentions an id without a score.
    """
    if not pairs:
        raise EmptyBatchError("rank loss received no pairs")

    index: Dict[Hashable, int] = {}
    a_idx: List[int] = []
    b_idx: List[int] = []
    for pair in pairs:
        for image_id, target in ((pair.a, a_idx), (pair.b, b_idx)):
            if image_id not in scores_by_id:
                raise DanglingPairError(image_id, "no student score")
            if image_id not in index:
                index[image_id] = len(index)
            target.append(index[image_id])

    ids = tuple(index)
    s = np.array([float(scores_by_id[i]) for i in ids], dtype=np.float64)
    ai = np.array(a_idx)
    bi = np.array(b_idx)
    t = np.array([p.t for p in pairs], dtype=np.float64)
    w = np.array([p.omega if use_confidence else 1.0 for p in pairs], dtype=np.float64)

    d = s[ai] - s[bi]
    per = np.logaddexp(0.0, d) - t * d
    n = len(pairs)
    value = float(np.sum(w * per) / n)

    dd = w * (expit(d) - t) / n
    grads = np.zeros_like(s)
    np.add.at(grads, ai, dd)
    np.add.at(grads, bi, -dd)
    return LossValue(value, grads, ids)


def distill_loss(
    scores_by_id: Mapping[Hashable, float],
    teacher_scores: Mapping[Hashable, float],
    pairs: Sequence[SupervisionPair],
    lambda_dis: float = DEFAULT_LAMBDA_DIS,
    beta: float = DEFAULT_BETA,
    use_point: bool = True,
    use_confidence: bool = True,
) -> LossValue:
    """
    Point-wise smooth L1 on teacher soft scores plus lambda_dis times the rank loss.

    teacher_scores selects the images of the point term; pairs select those of the
    rank term. Gradients are keyed by the union of both id sets (point ids first).

    Raises:
        EmptyBatchError: If a term that contributes has no samples.
    """
    order: Dict[Hashable, int] = {}
    reg: Optional[LossValue] = None
    rank: Optional[LossValue] = None

    if use_point:
        point_ids = list(teacher_scores)
        for i in point_ids:
            if i not in scores_by_id:
                raise DanglingPairError(i, "no student score for point term")
            order.setdefault(i, len(order))
        reg = reg_loss([scores_by_id[i] for i in point_ids], [teacher_scores[i] for i in point_ids], beta)
    if lambda_dis != 0.0:
        rank = rank_loss(scores_by_id, pairs, use_confidence=use_confidence)
        for i in rank.ids:
            order.setdefault(i, len(order))
    if reg is None and rank is None:
        raise EmptyBatchError("distillation loss has neither a point nor a pair term")

    ids = tuple(order)
    grads = np.zeros(len(ids), dtype=np.float64)
    value = 0.0
    if reg is not None:
        value += reg.value
        grads[: len(point_ids)] += reg.score_grads
    if rank is not None:
        value += lambda_dis * rank.value
        for i, g in zip(rank.ids, rank.score_grads):
            grads[order[i]] += lambda_dis * g
    return LossValue(value, grads, ids)


def mse_loss(scores: Sequence[float], labels: Sequence[float]) -> LossValue:
    s, y = _pair_arrays(scores, labels)
    d = s - y
    return LossValue(float(np.mean(d * d)), 2.0 * d / s.size)


def plcc_loss(scores: Sequence[float], labels: Sequence[float]) -> LossValue:
    """
    One minus the Pearson correlation of a mini-batch.

    A batch whose scores are (numerically) constant yields loss 1 and zero gradient.

    Raises:
        DegenerateBatchError: If fewer than 2 samples or the labels are constant.
    """
    s, y = _pair_arrays(scores, labels)
    n = s.size
    if n < 2:
        raise DegenerateBatchError(f"PLCC loss needs at least 2 samples, got {n}")
    yc = y - y.mean()
    sigma_y = float(np.sqrt(np.mean(yc * yc)))
    if sigma_y < PLCC_EPS:
        raise DegenerateBatchError("PLCC loss undefined for constant labels")
    sc = s - s.mean()
    sigma_s = float(np.sqrt(np.mean(sc * sc)))
    if sigma_s < PLCC_EPS:
        logger.warning("PLCC loss on a constant-score batch of %d; returning 1 with zero gradient", n)
        return LossValue(1.0, np.zeros(n))
    rho = float(np.mean(sc * yc)) / (sigma_s * sigma_y)
    drho = (yc / (sigma_s * sigma_y) - rho * sc / (sigma_s * sigma_s)) / n
    return LossValue(1.0 - rho, -drho)


def calib_loss(scores: Sequence[float], labels: Sequence[float], lambda_cal: float = DEFAULT_LAMBDA_CAL) -> LossValue:
    """MSE plus lambda_cal times the PLCC loss."""
    mse = mse_loss(scores, labels)
    if lambda_cal == 0.0:
        return mse
    plcc = plcc_loss(scores, labels)
    return LossValue(mse.value + lambda_cal * plcc.value, mse.score_grads + lambda_cal * plcc.score_grads)
