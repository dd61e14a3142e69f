"""
Training, benchmark and run configuration.

Config files are flat JSON objects whose keys are the field names of TrainConfig,
SynthConfig and RunOptions. A key present in more than one (``seed``) sets all of them.
"""

import dataclasses
import logging
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from pyqualitydistill.definitions import AblationMode, CheckpointMode, Split, TeacherBias
from pyqualitydistill.exceptions import ConfigurationError
from pyqualitydistill.student import AdamWHyper
from pyqualitydistill.utils import PathLike, read_json

logger = logging.getLogger(__name__)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigurationError(message)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of both training stages and of the MOS protocol."""
    hidden_sizes: Tuple[int, ...] = ()
    stage1_epochs: int = 30
    stage1_batch: int = 64
    stage1_pair_batch: int = 64
    stage1_lr: float = 1e-3
    stage2_epochs: int = 100
    stage2_batch: int = 32
    stage2_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    lambda_dis: float = 0.5
    lambda_cal: float = 1.0
    smooth_l1_beta: float = 1.0
    tau: float = 0.1
    mos_ratio: float = 0.1
    calib_holdout_frac: float = 0.2
    stage1_val_frac: float = 0.1
    seed: int = 0
    checkpoint_mode: CheckpointMode = CheckpointMode.MOS_FREE
    use_point: bool = True
    use_pairs: bool = True
    use_confidence: bool = True
    skip_stage1: bool = False
    head_only: bool = False
    reuse_optimizer: bool = False
    dedupe_pairs: bool = False
    logistic_plcc: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "checkpoint_mode", _enum(CheckpointMode, self.checkpoint_mode, "checkpoint_mode"))
        _require(all(h > 0 for h in self.hidden_sizes), f"hidden sizes must be positive, got {self.hidden_sizes}")
        for name in ("stage1_epochs", "stage2_epochs"):
            _require(getattr(self, name) >= 0, f"{name} must be >= 0")
        for name in ("stage1_batch", "stage1_pair_batch", "stage2_batch", "workers"):
            _require(getattr(self, name) > 0, f"{name} must be > 0")
        _require(0.0 <= self.mos_ratio <= 1.0, f"mos_ratio must lie in [0, 1], got {self.mos_ratio}")
        _require(0.0 < self.calib_holdout_frac < 1.0, "calib_holdout_frac must lie in (0, 1)")
        _require(0.0 < self.stage1_val_frac < 1.0, "stage1_val_frac must lie in (0, 1)")
        _require(0.0 <= self.tau <= 1.0, f"tau must lie in [0, 1], got {self.tau}")
        _require(self.lambda_dis >= 0.0 and self.lambda_cal >= 0.0, "loss weights must be >= 0")
        _require(self.smooth_l1_beta > 0.0, "smooth_l1_beta must be > 0")
        self.stage1_hyper()
        self.stage2_hyper()

    def stage1_hyper(self) -> AdamWHyper:
        return AdamWHyper(self.stage1_lr, self.beta1, self.beta2, self.adam_eps, self.weight_decay)

    def stage2_hyper(self) -> AdamWHyper:
        return AdamWHyper(self.stage2_lr, self.beta1, self.beta2, self.adam_eps, self.weight_decay)

    @property
    def effective_lambda_dis(self) -> float:
        return self.lambda_dis if self.use_pairs else 0.0

    def with_ablation(self, mode: AblationMode) -> "TrainConfig":
        """Config variant for one row of the supervision ablation."""
        mode = _enum(AblationMode, mode, "ablation mode")
        presets = {
            AblationMode.POINT: dict(use_point=True, use_pairs=False, use_confidence=True, skip_stage1=False),
            AblationMode.PAIR: dict(use_point=True, use_pairs=True, use_confidence=False, skip_stage1=False),
            AblationMode.PAIR_CONF: dict(use_point=False, use_pairs=True, use_confidence=True, skip_stage1=False),
            AblationMode.ALL: dict(use_point=True, use_pairs=True, use_confidence=True, skip_stage1=False),
            AblationMode.CALIBRATION_ONLY: dict(skip_stage1=True),
        }
        return dataclasses.replace(self, **presets[mode])

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return _to_dict(self)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic benchmark and simulated teacher."""
    n: int = 2000
    d: int = 16
    informative_dims: int = 4
    feature_noise: float = 0.25
    teacher_bias: TeacherBias = TeacherBias.COMPRESSIVE
    gamma: float = 0.5
    affine_alpha: float = 0.8
    affine_beta: float = 1.0
    teacher_noise: float = 0.15
    content_bias: float = 0.35
    point_sharpness: float = 2.0
    pair_sharpness: float = 3.0
    pair_noise: float = 0.5
    heteroscedastic: bool = False
    mos_noise: float = 0.2
    seed: int = 0
    train_frac: float = 0.7
    val_frac: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "teacher_bias", _enum(TeacherBias, self.teacher_bias, "teacher_bias"))
        _require(self.n >= 10, f"n must be >= 10, got {self.n}")
        _require(1 <= self.informative_dims <= self.d, f"informative_dims must lie in [1, d={self.d}]")
        for name in ("feature_noise", "teacher_noise", "pair_noise", "mos_noise"):
            _require(getattr(self, name) >= 0.0, f"{name} must be >= 0")
        _require(self.point_sharpness > 0.0 and self.pair_sharpness > 0.0, "sharpness must be > 0")
        _require(self.gamma > 0.0, "gamma must be > 0 for a strictly increasing teacher map")
        _require(self.affine_alpha > 0.0, "affine_alpha must be > 0 for a strictly increasing teacher map")
        _require(self.content_bias == 0.0 or self.informative_dims < self.d,
                 "content_bias needs a distractor column: informative_dims must be < d")
        _require(0.0 < self.train_frac and 0.0 <= self.val_frac and self.train_frac + self.val_frac < 1.0,
                 "split fractions must leave a non-empty test split")

    def replace(self, **changes: Any) -> "SynthConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return _to_dict(self)


@dataclass(frozen=True)
class RunOptions:
    """Command-level settings that are not model hyperparameters."""
    data_dir: str = "data"
    run_dir: str = "run"
    split: Split = Split.TEST
    ratios: Tuple[float, ...] = (0.0, 0.1, 0.3)
    n_seeds: int = 5
    modes: Tuple[AblationMode, ...] = tuple(AblationMode)
    synthetic: bool = False
    against_latent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "split", _enum(Split, self.split, "split"))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "modes", tuple(_enum(AblationMode, m, "mode") for m in self.modes))
        _require(all(0.0 <= r <= 1.0 for r in self.ratios), f"ratios must lie in [0, 1], got {self.ratios}")
        _require(self.n_seeds >= 1, "n_seeds must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return _to_dict(self)


def _enum(enum_cls, value, name):
    try:
        return enum_cls(value)
    except ValueError as e:
        allowed = ", ".join(m.value for m in enum_cls)
        raise ConfigurationError(f"invalid {name} {value!r}; expected one of: {allowed}") from e


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    return value


def _to_dict(obj: Any) -> Dict[str, Any]:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _build(cls, values: Mapping[str, Any], base: Optional[Any] = None):
    known = {k: v for k, v in values.items() if k in _field_names(cls)}
    try:
        if base is not None:
            return dataclasses.replace(base, **known)
        return cls(**known)
    except TypeError as e:
        raise ConfigurationError(f"invalid {cls.__name__} value: {e}") from e


def split_flat_config(
    values: Mapping[str, Any],
    train: Optional[TrainConfig] = None,
    synth: Optional[SynthConfig] = None,
    run: Optional[RunOptions] = None,
) -> Tuple[TrainConfig, SynthConfig, RunOptions]:
    """
    Distribute a flat key-value document over the three config dataclasses.

    Raises:
        ConfigurationError: On keys that belong to none of them or invalid values.
    """
    known = _field_names(TrainConfig) | _field_names(SynthConfig) | _field_names(RunOptions)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    return (
        _build(TrainConfig, values, train),
        _build(SynthConfig, values, synth),
        _build(RunOptions, values, run),
    )


def load_config_file(path: PathLike) -> Dict[str, Any]:
    document = read_json(path)
    if not isinstance(document, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return document


def snapshot(train: TrainConfig, run: Optional[RunOptions] = None, synth: Optional[SynthConfig] = None) -> Dict[str, Any]:
    """
    Flat document that reproduces a run when passed back through split_flat_config.

    With synth given, its seed wins the shared ``seed`` key; only runs that
    overwrite the training seed per repeat (sweeps, ablations) should pass it.
    """
    out: Dict[str, Any] = {}
    if run is not None:
        out.update(run.to_dict())
    out.update(train.to_dict())
    if synth is not None:
        out.update(synth.to_dict())
    return out


def parse_list(text: str, cast=str) -> Tuple[Any, ...]:
    items: Iterable[str] = (s.strip() for s in text.split(","))
    try:
        return tuple(cast(s) for s in items if s)
    except ValueError as e:
        raise ConfigurationError(f"cannot parse list {text!r}: {e}") from e
