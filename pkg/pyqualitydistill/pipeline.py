"""
Two-stage training: teacher distillation, then calibration on a small MOS budget.

Stage 1 fits the student to teacher soft scores and confidence-weighted pair
preferences and never reads MOS. Stage 2 fine-tunes on the labeled subset with
MSE plus a PLCC term and keeps the checkpoint with the best held-out PLCC.
Around these sit the MOS budget split, checkpoint selection, the affine teacher
baseline and the multi-seed drivers behind sweeps and ablations.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from pyqualitydistill.config import TrainConfig
from pyqualitydistill.dataset import DatasetBundle, FeatureDataset
from pyqualitydistill.definitions import AblationMode, CheckpointMode, Split
from pyqualitydistill.exceptions import (
    BudgetTooSmallError,
    ConfigurationError,
    DanglingPairError,
    DegenerateBatchError,
    DegenerateFitError,
    DegenerateMetricError,
    InsufficientDataError,
    MissingLabelsError,
    MissingSignalError,
    SeedRunError,
    TrainingDivergenceError,
)
from pyqualitydistill.losses import calib_loss, distill_loss, mse_loss, rank_loss, reg_loss
from pyqualitydistill.metrics import EvalReport, evaluate_predictions, plcc
from pyqualitydistill.signals import SupervisionPair, filter_pairs
from pyqualitydistill.student import (
    OptimizerState,
    StudentParams,
    backward,
    default_hidden_sizes,
    forward_batch,
    init_optimizer,
    init_params,
    optimizer_step,
)
from pyqualitydistill.utils import stream_rng, stream_seed

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12
VAL_DISTILL_LOSS = "val_distill_loss"
HOLDOUT_PLCC = "holdout_plcc"

# Named random streams of the training seed.
_INIT = 10
_STAGE1_SPLIT = 11
_STAGE1_SHUFFLE = 12
_MOS_BUDGET = 13
_HOLDOUT = 14
_STAGE2_SHUFFLE = 15


@dataclass
class EpochRecord:
    """Loss components and selection criterion of one epoch."""
    stage: int
    epoch: int
    losses: Dict[str, float]
    criterion: Optional[float]
    metric: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "epoch": self.epoch,
            "metric": self.metric,
            "criterion": self.criterion,
            "losses": dict(self.losses),
        }


@dataclass
class RunLog:
    """
    Epoch history of one stage, the epoch selection picked, and evaluations of the result.

    selected_epoch is None only for an empty history (zero epochs or a skipped stage).
    """
    stage: int
    metric: str
    records: List[EpochRecord] = field(default_factory=list)
    selected_epoch: Optional[int] = None
    reports: Dict[str, EvalReport] = field(default_factory=dict)

    def __post_init__(self):
        if self.selected_epoch is not None and self.selected_epoch not in {r.epoch for r in self.records}:
            raise ConfigurationError(f"selected epoch {self.selected_epoch} is not in the stage-{self.stage} log")

    def to_records(self) -> List[Dict[str, Any]]:
        """JSONL records: one per epoch plus a trailer with the selection and reports."""
        trailer = {
            "stage": self.stage,
            "metric": self.metric,
            "selected_epoch": self.selected_epoch,
            "reports": {split: report.to_dict() for split, report in sorted(self.reports.items())},
        }
        return [r.to_dict() for r in self.records] + [trailer]

    @classmethod
    def from_records(cls, records: Sequence[Mapping[str, Any]]) -> "RunLog":
        if not records:
            raise ConfigurationError("an empty record list is not a run log")
        *epochs, trailer = records
        return cls(
            stage=int(trailer["stage"]),
            metric=str(trailer["metric"]),
            records=[
                EpochRecord(
                    stage=int(r["stage"]),
                    epoch=int(r["epoch"]),
                    losses={k: float(v) for k, v in r["losses"].items()},
                    criterion=None if r["criterion"] is None else float(r["criterion"]),
                    metric=str(r["metric"]),
                )
                for r in epochs
            ],
            selected_epoch=None if trailer["selected_epoch"] is None else int(trailer["selected_epoch"]),
            reports={k: EvalReport.from_dict(v) for k, v in trailer.get("reports", {}).items()},
        )


class StageResult(NamedTuple):
    params: StudentParams
    log: RunLog
    optimizer: Optional[OptimizerState]


@dataclass
class PipelineResult:
    """Everything one seeded run of both stages produced."""
    seed: int
    params: StudentParams
    stage1: RunLog
    stage2: Optional[RunLog]
    labeled_ids: List[Hashable]
    reports: Dict[str, EvalReport]


# ---------------------------------------------------------------------------
# MOS budget and checkpoint selection
# ---------------------------------------------------------------------------

def split_mos_budget(dataset: FeatureDataset, ratio: float, seed: int) -> Tuple[List[Hashable], List[Hashable]]:
    """
    Choose which training images expose their MOS.

    Samples floor(ratio * N_train) training ids uniformly without replacement.
    Only training ids that carry a MOS are candidates; the check does not count
    as a label read. Both lists keep dataset order.

    Returns:
        Tuple[List, List]: (labeled ids, unlabeled training ids).

    Raises:
        ConfigurationError: If ratio is outside [0, 1].
        BudgetTooSmallError: If ratio > 0 selects no image.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigurationError(f"MOS ratio must lie in [0, 1], got {ratio}")
    train_ids = [i for i in dataset.ids_in(Split.TRAIN) if dataset.has_label(i)]
    k = int(math.floor(ratio * len(train_ids) + 1e-9))
    if ratio > 0.0 and k == 0:
        raise BudgetTooSmallError(f"ratio {ratio} of {len(train_ids)} labeled training images selects none")
    chosen = set(stream_rng(seed, _MOS_BUDGET).choice(len(train_ids), size=k, replace=False).tolist())
    labeled = [i for n, i in enumerate(train_ids) if n in chosen]
    unlabeled = [i for n, i in enumerate(train_ids) if n not in chosen]
    unlabeled += [i for i in dataset.ids_in(Split.TRAIN) if not dataset.has_label(i)]
    logger.info("MOS budget: %d of %d training images labeled (ratio %s)", len(labeled), len(train_ids), ratio)
    return labeled, unlabeled


def split_holdout(labeled_ids: Sequence[Hashable], frac: float, seed: int) -> Tuple[List[Hashable], List[Hashable]]:
    """
    Split D_MOS into (fit ids, held-out ids) for calibration checkpoint selection.

    Raises:
        MissingLabelsError: If labeled_ids is empty.
        BudgetTooSmallError: If fewer than 2 ids would remain on either side.
    """
    m = len(labeled_ids)
    if m == 0:
        raise MissingLabelsError("calibration needs at least one labeled image")
    n_hold = max(2, int(math.floor(frac * m)))
    if m - n_hold < 2:
        raise BudgetTooSmallError(f"{m} labeled images cannot give >= 2 for fitting and >= 2 held out")
    order = stream_rng(seed, _HOLDOUT).permutation(m)
    held = set(order[:n_hold].tolist())
    fit = [i for n, i in enumerate(labeled_ids) if n not in held]
    hold = [i for n, i in enumerate(labeled_ids) if n in held]
    return fit, hold


def select_checkpoint(history: Sequence[EpochRecord], mode: CheckpointMode) -> int:
    """
    Index into history of the epoch to keep.

    mos_free minimizes the criterion (a validation distillation loss), few_shot
    maximizes it (held-out PLCC). A missing criterion ranks last. Ties within
    1e-12 go to the earlier epoch.

    Raises:
        InsufficientDataError: If history is empty.
    """
    if not history:
        raise InsufficientDataError("cannot select a checkpoint from an empty history")
    sign = 1.0 if CheckpointMode(mode) == CheckpointMode.MOS_FREE else -1.0
    best_index = 0
    best_value = math.inf
    for index, record in enumerate(history):
        c = record.criterion
        value = math.inf if c is None or not math.isfinite(c) else sign * c
        if value < best_value - TIE_TOLERANCE:
            best_index, best_value = index, value
    return best_index


def affine_calibrate(teacher_scores: Sequence[float], labels: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares (a, b) with labels ~ a * teacher_scores + b.

    Example:
        >>> affine_calibrate([1.0, 2.0], [3.0, 5.0])
        (2.0, 1.0)

    Raises:
        DegenerateFitError: For fewer than 2 points or constant scores.
    """
    x = np.asarray(teacher_scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DegenerateFitError(f"length mismatch: {x.size} scores vs {y.size} labels")
    if x.size < 2 or np.all(x == x[0]):
        raise DegenerateFitError("affine calibration needs at least 2 distinct scores")
    fit = linregress(x, y)
    return float(fit.slope), float(fit.intercept)


# ---------------------------------------------------------------------------
# Shared training helpers
# ---------------------------------------------------------------------------

def _layer_sizes(config: TrainConfig, input_dim: int) -> Tuple[int, ...]:
    hidden = config.hidden_sizes or default_hidden_sizes(input_dim)
    return (input_dim,) + tuple(hidden) + (1,)


def initial_params(config: TrainConfig, input_dim: int) -> StudentParams:
    return init_params(_layer_sizes(config, input_dim), stream_seed(config.seed, _INIT))


def _chunks(ids: Sequence[Hashable], batch_size: int, rng: np.random.Generator, min_size: int = 1) -> Iterator[List[Hashable]]:
    """Shuffled mini-batches; a last batch below min_size is merged into the one before it."""
    order = rng.permutation(len(ids))
    batches = [[ids[k] for k in order[start:start + batch_size]] for start in range(0, len(ids), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_size:
        tail = batches.pop()
        batches[-1].extend(tail)
    return iter(batches)


def _scores(params: StudentParams, dataset: FeatureDataset, ids: Sequence[Hashable]) -> np.ndarray:
    if not ids:
        return np.zeros(0)
    return forward_batch(params, dataset.features_of(ids))


def _apply(params, opt, dataset, ids, grads, trainable) -> None:
    g = backward(params, dataset.features_of(ids), grads)
    optimizer_step(params, g, opt, trainable_layers=trainable)


def _check_finite(value: float, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergenceError(f"non-finite loss {value}", step=step)


def dedupe_pair_list(pairs: Sequence[SupervisionPair]) -> List[SupervisionPair]:
    """Keep the first occurrence of every ordered (a, b)."""
    seen = set()
    out = []
    for p in pairs:
        if (p.a, p.b) not in seen:
            seen.add((p.a, p.b))
            out.append(p)
    return out


# ---------------------------------------------------------------------------
# Stage 1: distillation from teacher signals
# ---------------------------------------------------------------------------

def _check_signals(bundle_points: Mapping[Hashable, Any], pairs: Sequence[SupervisionPair], train_ids: Sequence[Hashable]) -> None:
    missing = [i for i in train_ids if i not in bundle_points]
    if missing:
        raise MissingSignalError(f"{len(missing)} training images have no teacher point signal, e.g. {missing[0]!r}")
    train = set(train_ids)
    for p in pairs:
        for image_id in (p.a, p.b):
            if image_id not in train:
                raise DanglingPairError(image_id, "pair endpoint is not a training image")


class _DistillScope:
    """Images and retained pairs of one side (fit or validation) of Stage 1."""

    def __init__(self, ids: List[Hashable], pairs: List[SupervisionPair], points: Mapping[Hashable, Any]):
        self.ids = ids
        self.pairs = pairs
        self.teacher = {i: points[i].soft_score for i in ids}


def _distill_components(
    params: StudentParams,
    dataset: FeatureDataset,
    scope: _DistillScope,
    config: TrainConfig,
) -> Dict[str, float]:
    """Point term, pair term and the total that ranks Stage-1 checkpoints."""
    ids = list(scope.ids)
    extra = [i for p in scope.pairs for i in (p.a, p.b)]
    all_ids = list(dict.fromkeys(ids + extra))
    scores = dict(zip(all_ids, _scores(params, dataset, all_ids).tolist()))

    out: Dict[str, float] = {}
    out["point"] = reg_loss([scores[i] for i in ids], [scope.teacher[i] for i in ids], config.smooth_l1_beta).value
    lam = config.effective_lambda_dis
    if scope.pairs and lam > 0.0:
        out["pair"] = rank_loss(scores, scope.pairs, use_confidence=config.use_confidence).value
        total = lam * out["pair"]
        if config.use_point:
            total += out["point"]
    else:
        total = out["point"]
    out["total"] = total
    return out


def train_stage1(
    config: TrainConfig,
    dataset: FeatureDataset,
    point_signals: Mapping[Hashable, Any],
    pairs: Sequence[SupervisionPair],
    mos_holdout: Optional[Tuple[Sequence[Hashable], np.ndarray]] = None,
) -> StageResult:
    train_ids = dataset.ids_in(Split.TRAIN)
    _check_signals(point_signals, pairs, train_ids)
    params = initial_params(config, dataset.dim)
    opt = init_optimizer(params, config.stage1_hyper())
    few_shot = config.checkpoint_mode == CheckpointMode.FEW_SHOT and mos_holdout is not None
    metric = HOLDOUT_PLCC if few_shot else VAL_DISTILL_LOSS
    mode = CheckpointMode.FEW_SHOT if few_shot else CheckpointMode.MOS_FREE
    if config.checkpoint_mode == CheckpointMode.FEW_SHOT and mos_holdout is None:
        logger.warning("few_shot checkpointing requested without labels; selecting by distillation loss")

    if config.stage1_epochs == 0:
        return StageResult(params, RunLog(stage=1, metric=metric), opt)
    if len(train_ids) < 2:
        raise InsufficientDataError(f"Stage 1 needs at least 2 training images, got {len(train_ids)}")

    retained = list(pairs)
    if config.dedupe_pairs:
        retained = dedupe_pair_list(retained)
    if config.use_confidence:
        retained = filter_pairs(retained, config.tau)
    lam = config.effective_lambda_dis
    if lam > 0.0 and not retained:
        if not config.use_point:
            raise InsufficientDataError("no supervision pair survives filtering and the point term is off")
        logger.warning("No supervision pair survives filtering; training on the point term alone")

    n_val = max(1, int(math.floor(config.stage1_val_frac * len(train_ids))))
    if len(train_ids) - n_val < 1:
        raise InsufficientDataError("Stage-1 validation split leaves no image to train on")
    order = stream_rng(config.seed, _STAGE1_SPLIT).permutation(len(train_ids))
    val_set = {train_ids[k] for k in order[:n_val].tolist()}
    fit_ids = [i for i in train_ids if i not in val_set]
    val_ids = [i for i in train_ids if i in val_set]
    fit = _DistillScope(fit_ids, [p for p in retained if p.a not in val_set and p.b not in val_set], point_signals)
    val = _DistillScope(val_ids, [p for p in retained if p.a in val_set and p.b in val_set], point_signals)
    logger.info(
        "Stage 1: %d epochs, %d fit / %d validation images, %d / %d pairs retained",
        config.stage1_epochs, len(fit_ids), len(val_ids), len(fit.pairs), len(val.pairs),
    )

    rng = stream_rng(config.seed, _STAGE1_SHUFFLE)
    use_pairs = lam > 0.0 and bool(fit.pairs)
    if not config.use_point and not use_pairs:
        raise InsufficientDataError("the point term is off and no supervision pair lies among the fit images")
    history: List[EpochRecord] = []
    snapshots: List[Tuple[StudentParams, OptimizerState]] = []
    for epoch in range(1, config.stage1_epochs + 1):
        step_losses = []
        for batch in _chunks(fit_ids, config.stage1_batch, rng):
            pair_batch: List[SupervisionPair] = []
            if use_pairs:
                k = min(config.stage1_pair_batch, len(fit.pairs))
                pair_batch = [fit.pairs[j] for j in rng.choice(len(fit.pairs), size=k, replace=False).tolist()]
            if not config.use_point and not pair_batch:
                continue
            point_ids = batch if config.use_point else []
            union = list(dict.fromkeys(point_ids + [i for p in pair_batch for i in (p.a, p.b)]))
            s = _scores(params, dataset, union)
            loss = distill_loss(
                dict(zip(union, s.tolist())),
                {i: fit.teacher[i] for i in point_ids},
                pair_batch,
                lambda_dis=lam if pair_batch else 0.0,
                beta=config.smooth_l1_beta,
                use_point=config.use_point,
                use_confidence=config.use_confidence,
            )
            _check_finite(loss.value, opt.step + 1)
            position = {i: n for n, i in enumerate(union)}
            grads = np.zeros(len(union))
            for image_id, g in zip(loss.ids, loss.score_grads):
                grads[position[image_id]] += g
            _apply(params, opt, dataset, union, grads, None)
            step_losses.append(loss.value)

        components = _distill_components(params, dataset, val, config)
        losses = {"train_total": float(np.mean(step_losses))}
        losses.update({f"val_{k}": v for k, v in components.items()})
        if few_shot:
            criterion = _holdout_plcc(params, dataset, mos_holdout[0], mos_holdout[1])
        else:
            criterion = components["total"]
        history.append(EpochRecord(1, epoch, losses, criterion, metric))
        snapshots.append((params.copy(), opt.copy()))
        logger.debug("Stage 1 epoch %d: %s criterion=%s", epoch, losses, criterion)

    chosen = select_checkpoint(history, mode)
    best_params, best_opt = snapshots[chosen]
    log = RunLog(stage=1, metric=metric, records=history, selected_epoch=history[chosen].epoch)
    logger.info("Stage 1 done; selected epoch %d by %s", log.selected_epoch, metric)
    return StageResult(best_params, log, best_opt)


def run_stage1(
    config: TrainConfig,
    dataset: FeatureDataset,
    point_signals: Mapping[Hashable, Any],
    pairs: Sequence[SupervisionPair],
    mos_holdout: Optional[Tuple[Sequence[Hashable], np.ndarray]] = None,
) -> Tuple[StudentParams, RunLog]:
    """
    Distill teacher signals into a fresh student over the training split.

    Each step pairs a shuffled mini-batch of images for the point term with an
    independently drawn mini-batch of retained pairs for the rank term. Pairs
    are retained when their confidence reaches tau (only when confidence
    weighting is on). A seeded 10% of training images is held out, with the
    pairs that lie entirely inside it, to rank epochs by distillation loss.

    This stage never reads MOS from the dataset. For few_shot selection the
    caller passes (held-out ids, their labels) as mos_holdout.

    Args:
        config: Training configuration.
        dataset: Features and split tags.
        point_signals: Teacher point signal of every training image.
        pairs: Supervision pairs among training images.
        mos_holdout: Labels used only to rank epochs in few_shot mode.

    Returns:
        Tuple[StudentParams, RunLog]: Selected parameters and the epoch history.

    Raises:
        MissingSignalError: If a training image has no point signal.
        DanglingPairError: If a pair mentions a non-training image.
        TrainingDivergenceError: On a non-finite loss or update.
    """
    result = train_stage1(config, dataset, point_signals, pairs, mos_holdout)
    return result.params, result.log


# ---------------------------------------------------------------------------
# Stage 2: calibration on D_MOS
# ---------------------------------------------------------------------------

def _holdout_plcc(params: StudentParams, dataset: FeatureDataset, ids: Sequence[Hashable], labels: np.ndarray) -> Optional[float]:
    try:
        return plcc(_scores(params, dataset, list(ids)), labels)
    except DegenerateMetricError:
        return None


def _calibration_step_loss(scores: np.ndarray, labels: np.ndarray, lambda_cal: float):
    try:
        return calib_loss(scores, labels, lambda_cal)
    except DegenerateBatchError:
        # constant-label batch: PLCC term undefined
        return mse_loss(scores, labels)


def run_stage2(
    config: TrainConfig,
    params: StudentParams,
    dataset: FeatureDataset,
    labeled_ids: Sequence[Hashable],
    optimizer: Optional[OptimizerState] = None,
) -> Tuple[StudentParams, RunLog]:
    """
    Fine-tune on labeled images with MSE + lambda_cal * (1 - PLCC).

    A seeded calib_holdout_frac of the labeled ids is held out; the history starts
    with an epoch-0 record of the incoming parameters, and the epoch with the best
    held-out PLCC wins. The optimizer restarts unless reuse_optimizer is set and
    an optimizer state is passed; head_only updates the last layer only.

    Raises:
        MissingLabelsError: If labeled_ids is empty.
        BudgetTooSmallError: If the labeled set cannot be split for selection.
    """
    fit_ids, hold_ids = split_holdout(labeled_ids, config.calib_holdout_frac, config.seed)
    fit_labels = dataset.labels(fit_ids)
    hold_labels = dataset.labels(hold_ids)
    label_of = dict(zip(fit_ids, fit_labels.tolist()))

    params = params.copy()
    if config.reuse_optimizer and optimizer is not None:
        opt = optimizer.copy()
        opt.hyper = config.stage2_hyper()
    else:
        opt = init_optimizer(params, config.stage2_hyper())
    trainable = {params.n_layers - 1} if config.head_only else None
    logger.info(
        "Stage 2: %d epochs, %d fit / %d held-out labeled images%s",
        config.stage2_epochs, len(fit_ids), len(hold_ids), " (head only)" if config.head_only else "",
    )

    def record(epoch: int, train_value: float) -> EpochRecord:
        fit_loss = _calibration_step_loss(_scores(params, dataset, fit_ids), fit_labels, config.lambda_cal)
        losses = {"train_total": train_value, "fit_calib": fit_loss.value}
        return EpochRecord(2, epoch, losses, _holdout_plcc(params, dataset, hold_ids, hold_labels), HOLDOUT_PLCC)

    first = _calibration_step_loss(_scores(params, dataset, fit_ids), fit_labels, config.lambda_cal).value
    history = [record(0, first)]
    snapshots = [params.copy()]
    rng = stream_rng(config.seed, _STAGE2_SHUFFLE)
    for epoch in range(1, config.stage2_epochs + 1):
        step_losses = []
        for batch in _chunks(fit_ids, config.stage2_batch, rng, min_size=2):
            labels = np.array([label_of[i] for i in batch])
            s = _scores(params, dataset, batch)
            loss = _calibration_step_loss(s, labels, config.lambda_cal)
            _check_finite(loss.value, opt.step + 1)
            _apply(params, opt, dataset, batch, loss.score_grads, trainable)
            step_losses.append(loss.value)
        history.append(record(epoch, float(np.mean(step_losses))))
        snapshots.append(params.copy())
        logger.debug("Stage 2 epoch %d: %s criterion=%s", epoch, history[-1].losses, history[-1].criterion)

    chosen = select_checkpoint(history, CheckpointMode.FEW_SHOT)
    log = RunLog(stage=2, metric=HOLDOUT_PLCC, records=history, selected_epoch=history[chosen].epoch)
    logger.info("Stage 2 done; selected epoch %d (held-out PLCC %s)", log.selected_epoch, history[chosen].criterion)
    return snapshots[chosen], log


# ---------------------------------------------------------------------------
# Evaluation and end-to-end runs
# ---------------------------------------------------------------------------

def predict(params: StudentParams, dataset: FeatureDataset, ids: Sequence[Hashable]) -> np.ndarray:
    return _scores(params, dataset, list(ids))


def evaluate(
    params: StudentParams,
    dataset: FeatureDataset,
    split: Split = Split.TEST,
    logistic: bool = False,
    against_latent: bool = False,
) -> EvalReport:
    """
    EvalReport of the student on one split, against MOS or (synthetic data) latent quality.

    Raises:
        InsufficientDataError: If the split has fewer than 2 images.
    """
    ids = dataset.ids_in(split)
    if len(ids) < 2:
        raise InsufficientDataError(f"split {Split(split).value} has {len(ids)} images; need at least 2")
    target = dataset.latent_of(ids) if against_latent else dataset.labels(ids)
    return evaluate_predictions(predict(params, dataset, ids), target, logistic=logistic)


def _report_splits(dataset: FeatureDataset, splits: Sequence[Split]) -> List[Split]:
    return [Split(s) for s in splits if len(dataset.ids_in(s)) >= 2]


def few_shot_holdout(
    config: TrainConfig,
    dataset: FeatureDataset,
    labeled_ids: Sequence[Hashable],
) -> Optional[Tuple[List[Hashable], np.ndarray]]:
    """Held-out calibration ids and their MOS, for few_shot Stage-1 selection; None otherwise."""
    if config.checkpoint_mode != CheckpointMode.FEW_SHOT or not labeled_ids:
        return None
    _, hold_ids = split_holdout(labeled_ids, config.calib_holdout_frac, config.seed)
    return hold_ids, dataset.labels(hold_ids)


def run_pipeline(
    config: TrainConfig,
    bundle: DatasetBundle,
    splits: Sequence[Split] = (Split.TEST,),
    against_latent: bool = False,
) -> PipelineResult:
    """
    Run the MOS budget split, Stage 1 (unless skipped) and Stage 2 (when labels exist).

    Reports cover every requested split with at least two images. The Stage-1 log
    carries reports of the distilled student so the calibration gain is visible.
    """
    dataset = bundle.dataset
    labeled, _ = split_mos_budget(dataset, config.mos_ratio, config.seed)

    if config.skip_stage1:
        stage1 = StageResult(initial_params(config, dataset.dim), RunLog(stage=1, metric=VAL_DISTILL_LOSS), None)
        logger.info("Stage 1 skipped; calibrating a freshly initialized student")
    else:
        mos_holdout = few_shot_holdout(config, dataset, labeled)
        stage1 = train_stage1(config, dataset, bundle.point_signals, bundle.pairs, mos_holdout)

    wanted = _report_splits(dataset, splits)
    for split in wanted:
        stage1.log.reports[split.value] = evaluate(stage1.params, dataset, split, config.logistic_plcc, against_latent)

    params = stage1.params
    stage2_log = None
    if labeled:
        params, stage2_log = run_stage2(config, stage1.params, dataset, labeled, optimizer=stage1.optimizer)
    else:
        logger.info("No MOS budget; skipping calibration")

    reports = {split.value: evaluate(params, dataset, split, config.logistic_plcc, against_latent) for split in wanted}
    if stage2_log is not None:
        stage2_log.reports.update(reports)
    return PipelineResult(config.seed, params, stage1.log, stage2_log, labeled, reports)


def teacher_baseline(
    bundle: DatasetBundle,
    labeled_ids: Sequence[Hashable],
    split: Split = Split.TEST,
    against_latent: bool = False,
) -> Dict[str, Any]:
    """
    Raw teacher soft scores and their affine calibration on labeled_ids, evaluated on split.

    Returns:
        Dict[str, Any]: {"teacher": EvalReport, "teacher_affine": EvalReport or None, "a": ..., "b": ...}.
    """
    dataset = bundle.dataset
    ids = dataset.ids_in(split)
    target = dataset.latent_of(ids) if against_latent else dataset.labels(ids)
    raw = bundle.teacher_scores(ids)
    out: Dict[str, Any] = {"teacher": evaluate_predictions(raw, target), "teacher_affine": None, "a": None, "b": None}
    if labeled_ids:
        a, b = affine_calibrate(bundle.teacher_scores(labeled_ids), dataset.labels(labeled_ids))
        out.update(a=a, b=b, teacher_affine=evaluate_predictions(a * raw + b, target))
    return out


# ---------------------------------------------------------------------------
# Seeded repeats, sweeps and ablations
# ---------------------------------------------------------------------------

BundleSource = Callable[[int], DatasetBundle]


@dataclass
class RepeatReport:
    """Per-seed reports and their mean / population standard deviation per split."""
    per_seed: List[PipelineResult]
    aggregates: Dict[str, Dict[str, float]]

    @property
    def seeds(self) -> List[int]:
        return [r.seed for r in self.per_seed]


def aggregate_reports(results: Sequence[PipelineResult]) -> Dict[str, Dict[str, float]]:
    out: Dict[str, Dict[str, float]] = {}
    splits = sorted({s for r in results for s in r.reports})
    for split in splits:
        srcc = np.array([r.reports[split].srcc for r in results if split in r.reports])
        plcc_values = np.array([r.reports[split].plcc for r in results if split in r.reports])
        out[split] = {
            "srcc_mean": float(srcc.mean()),
            "srcc_std": float(srcc.std()),
            "plcc_mean": float(plcc_values.mean()),
            "plcc_std": float(plcc_values.std()),
            "n_seeds": int(srcc.size),
        }
    return out


def run_seeded_repeats(
    config: TrainConfig,
    seeds: Sequence[int],
    bundle_for_seed: BundleSource,
    splits: Sequence[Split] = (Split.TEST,),
    against_latent: bool = False,
) -> RepeatReport:
    """
    Run the full pipeline once per seed and aggregate.

    Each run gets config.seed = seed and its own bundle from bundle_for_seed, so
    MOS budgets, pair draws and training streams differ per seed. Runs execute on
    up to config.workers threads; results are ordered by seed, so permuting seeds
    leaves the report unchanged.

    Raises:
        ConfigurationError: If seeds is empty or repeats a seed.
        SeedRunError: Wrapping the failure of the smallest failing seed.
    """
    ordered = sorted(int(s) for s in seeds)
    if not ordered:
        raise ConfigurationError("need at least one seed")
    if len(set(ordered)) != len(ordered):
        raise ConfigurationError(f"duplicate seeds in {ordered}")

    def one(seed: int) -> PipelineResult:
        result = run_pipeline(config.replace(seed=seed), bundle_for_seed(seed), splits, against_latent)
        logger.info("Seed %d finished: %s", seed, {k: round(v.srcc, 4) for k, v in result.reports.items()})
        return result

    outcomes: Dict[int, Any] = {}
    with ThreadPoolExecutor(max_workers=max(1, min(config.workers, len(ordered)))) as pool:
        futures = {seed: pool.submit(one, seed) for seed in ordered}
        for seed, future in futures.items():
            try:
                outcomes[seed] = future.result()
            except Exception as e:
                outcomes[seed] = e

    for seed in ordered:
        if isinstance(outcomes[seed], BaseException):
            raise SeedRunError(seed, outcomes[seed]) from outcomes[seed]
    results = [outcomes[s] for s in ordered]
    return RepeatReport(results, aggregate_reports(results))


@dataclass
class CurveRow:
    """One line of a sweep or ablation table; seed is None on mean rows."""
    key: str
    value: Any
    seed: Optional[int]
    srcc: float
    plcc: float

    def to_dict(self) -> Dict[str, Any]:
        return {self.key: self.value, "seed": "mean" if self.seed is None else self.seed, "srcc": self.srcc, "plcc": self.plcc}


def _curve_rows(key: str, value: Any, report: RepeatReport, split: Split) -> Tuple[List[CurveRow], CurveRow]:
    split = Split(split).value
    rows = [CurveRow(key, value, r.seed, r.reports[split].srcc, r.reports[split].plcc) for r in report.per_seed]
    agg = report.aggregates[split]
    return rows, CurveRow(key, value, None, agg["srcc_mean"], agg["plcc_mean"])


@dataclass
class CurveResult:
    """Per-seed rows followed by one mean row per setting, plus the full summaries."""
    key: str
    rows: List[CurveRow]
    summary: Dict[str, Dict[str, Dict[str, float]]]

    def records(self) -> List[Dict[str, Any]]:
        return [r.to_dict() for r in self.rows]

    def means(self) -> Dict[str, Dict[str, float]]:
        return {str(r.value): {"srcc": r.srcc, "plcc": r.plcc} for r in self.rows if r.seed is None}


def label_efficiency_sweep(
    config: TrainConfig,
    ratios: Sequence[float],
    seeds: Sequence[int],
    bundle_for_seed: BundleSource,
    split: Split = Split.TEST,
    against_latent: bool = False,
) -> CurveResult:
    """Seeded repeats at every MOS ratio; rows are `ratio,seed,srcc,plcc` then one mean row per ratio."""
    data_rows: List[CurveRow] = []
    mean_rows: List[CurveRow] = []
    summary: Dict[str, Dict[str, Dict[str, float]]] = {}
    for ratio in ratios:
        report = run_seeded_repeats(config.replace(mos_ratio=float(ratio)), seeds, bundle_for_seed, (split,), against_latent)
        rows, mean = _curve_rows("ratio", float(ratio), report, split)
        data_rows.extend(rows)
        mean_rows.append(mean)
        summary[str(float(ratio))] = report.aggregates
    return CurveResult("ratio", data_rows + mean_rows, summary)


def ablation_grid(
    config: TrainConfig,
    modes: Sequence[AblationMode],
    seeds: Sequence[int],
    bundle_for_seed: BundleSource,
    split: Split = Split.TEST,
    against_latent: bool = False,
) -> CurveResult:
    """Seeded repeats for each supervision variant; rows are `mode,seed,srcc,plcc` then mean rows."""
    data_rows: List[CurveRow] = []
    mean_rows: List[CurveRow] = []
    summary: Dict[str, Dict[str, Dict[str, float]]] = {}
    for mode in modes:
        mode = AblationMode(mode)
        report = run_seeded_repeats(config.with_ablation(mode), seeds, bundle_for_seed, (split,), against_latent)
        rows, mean = _curve_rows("mode", mode.value, report, split)
        data_rows.extend(rows)
        mean_rows.append(mean)
        summary[mode.value] = report.aggregates
    return CurveResult("mode", data_rows + mean_rows, summary)
