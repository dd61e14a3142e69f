from typing import Any, Callable, Dict, Optional, Sequence, Tuple

from pyqualitydistill.config import SynthConfig, TrainConfig
from pyqualitydistill.dataset import DatasetBundle
from pyqualitydistill.definitions import AblationMode, Split
from pyqualitydistill.formats import load_bundle, write_bundle
from pyqualitydistill.metrics import EvalReport
from pyqualitydistill.pipeline import (
    CurveResult,
    PipelineResult,
    RepeatReport,
    RunLog,
    StageResult,
    ablation_grid,
    evaluate,
    label_efficiency_sweep,
    run_pipeline,
    run_seeded_repeats,
    run_stage2,
    split_mos_budget,
    teacher_baseline,
    train_stage1,
)
from pyqualitydistill.providers.synth import SyntheticBenchmark, make_benchmark, resample_pairs
from pyqualitydistill.student import OptimizerState, StudentParams
from pyqualitydistill.utils import PathLike


class QualityEngine:
    """
    Training and evaluation front end over one dataset bundle.

    Args:
        bundle: Dataset plus teacher signals.
        bundle_for_seed: Bundle a seeded repeat trains on; defaults to the same bundle for every seed.
        train: Default training configuration.
        against_latent: Evaluate against latent quality instead of MOS (synthetic data only).
    """

    def __init__(
        self,
        bundle: DatasetBundle,
        bundle_for_seed: Optional[Callable[[int], DatasetBundle]] = None,
        train: Optional[TrainConfig] = None,
        against_latent: bool = False,
    ):
        self.bundle = bundle
        self.bundle_for_seed = bundle_for_seed or (lambda seed: bundle)
        self.train = train or TrainConfig()
        self.against_latent = against_latent

    @property
    def dataset(self):
        return self.bundle.dataset

    def distill(self, config: Optional[TrainConfig] = None) -> StageResult:
        """
        Run the distillation stage on the bundle's training split.

        No MOS is read. In few_shot checkpoint mode use run() instead, which passes
        the held-out calibration labels in for selection.

        Returns:
            StageResult: Selected parameters, the epoch history and the optimizer
            state at the selected epoch, which calibrate() can continue from.

        Example:
            >>> engine = synthetic_engine(SynthConfig(n=200))
            >>> params, log, optimizer = engine.distill(TrainConfig(stage1_epochs=2))
            >>> log.selected_epoch in (1, 2)
            True
        """
        config = config or self.train
        return train_stage1(config, self.dataset, self.bundle.point_signals, self.bundle.pairs)

    def calibrate(
        self,
        params: StudentParams,
        config: Optional[TrainConfig] = None,
        optimizer: Optional[OptimizerState] = None,
    ) -> Tuple[StudentParams, RunLog, list]:
        """
        Fine-tune params on the MOS budget config.mos_ratio of the training split.

        With config.reuse_optimizer set, the AdamW moments and step count continue
        from optimizer (usually the one distill() returned) instead of restarting.

        Returns:
            Tuple[StudentParams, RunLog, list]: Calibrated parameters, the epoch history
            and the labeled ids it used.
        """
        config = config or self.train
        labeled, _ = split_mos_budget(self.dataset, config.mos_ratio, config.seed)
        new_params, log = run_stage2(config, params, self.dataset, labeled, optimizer=optimizer)
        return new_params, log, labeled

    def evaluate(self, params: StudentParams, split: Split = Split.TEST, logistic: bool = False) -> EvalReport:
        """
        SRCC, PLCC and residual statistics of a student on one split.

        Example:
            >>> report = engine.evaluate(params, "test")
            >>> sorted(report.to_dict())
            ['mae', 'mean_residual', 'n', 'plcc', 'rmse', 'srcc']
        """
        return evaluate(params, self.dataset, split, logistic, self.against_latent)

    def run(self, config: Optional[TrainConfig] = None, splits: Sequence[Split] = (Split.TEST,)) -> PipelineResult:
        """Both stages on the bundle with config.seed."""
        return run_pipeline(config or self.train, self.bundle, splits, self.against_latent)

    def repeats(self, seeds: Sequence[int], config: Optional[TrainConfig] = None, splits: Sequence[Split] = (Split.TEST,)) -> RepeatReport:
        """Full pipeline once per seed with mean and standard deviation per split."""
        return run_seeded_repeats(config or self.train, seeds, self.bundle_for_seed, splits, self.against_latent)

    def sweep(self, ratios: Sequence[float], seeds: Sequence[int], config: Optional[TrainConfig] = None, split: Split = Split.TEST) -> CurveResult:
        """
        Label-efficiency curve: seeded repeats at each MOS ratio.

        Example:
            >>> curve = engine.sweep([0.0, 0.1, 0.3], range(5))
            >>> len(curve.rows)
            18
        """
        return label_efficiency_sweep(config or self.train, ratios, seeds, self.bundle_for_seed, split, self.against_latent)

    def ablate(self, modes: Sequence[AblationMode], seeds: Sequence[int], config: Optional[TrainConfig] = None, split: Split = Split.TEST) -> CurveResult:
        """Supervision ablation: seeded repeats for each of point, pair, pair_conf, all, cft_only."""
        return ablation_grid(config or self.train, modes, seeds, self.bundle_for_seed, split, self.against_latent)

    def teacher_baseline(self, config: Optional[TrainConfig] = None, split: Split = Split.TEST) -> Dict[str, Any]:
        """Raw teacher soft scores, and the same scores under an affine fit on the MOS budget."""
        config = config or self.train
        labeled, _ = split_mos_budget(self.dataset, config.mos_ratio, config.seed)
        return teacher_baseline(self.bundle, labeled, split, self.against_latent)

    def save(self, directory: PathLike):
        return write_bundle(self.bundle, directory)


def create_synthetic_engine(synth: Optional[SynthConfig] = None, train: Optional[TrainConfig] = None, against_latent: bool = False) -> QualityEngine:
    """
    Create an engine over a freshly generated synthetic benchmark.

    Seeded repeats keep images, features, MOS and splits and redraw the pair set
    (and the teacher's pair noise) from each run's seed.

    Args:
        synth (SynthConfig, optional): Benchmark settings. Defaults to SynthConfig().
        train (TrainConfig, optional): Training settings. Defaults to TrainConfig().
        against_latent (bool): Evaluate against latent quality rather than MOS.

    Returns:
        QualityEngine: Engine with a per-seed pair resampler.
    """
    train = train or TrainConfig()
    benchmark: SyntheticBenchmark = make_benchmark(synth or SynthConfig(), unique_pairs=train.dedupe_pairs)

    def bundle_for_seed(seed: int) -> DatasetBundle:
        pairs = resample_pairs(benchmark, seed, unique=train.dedupe_pairs)
        return DatasetBundle(benchmark.dataset, benchmark.bundle.point_signals, pairs)

    return QualityEngine(benchmark.bundle, bundle_for_seed, train, against_latent)


def create_file_engine(data_dir: PathLike, train: Optional[TrainConfig] = None) -> QualityEngine:
    """
    Create an engine over a bundle directory (features, MOS, splits and teacher signals).

    Harvested pairs are fixed, so seeded repeats vary only the MOS budget and training streams.

    Args:
        data_dir (str): Directory written by `synth`, `harvest` or write_bundle.
        train (TrainConfig, optional): Training settings.

    Returns:
        QualityEngine: Engine over the loaded bundle.
    """
    return QualityEngine(load_bundle(data_dir), train=train)


# Convenience aliases
def synthetic_engine(synth: Optional[SynthConfig] = None, train: Optional[TrainConfig] = None, against_latent: bool = False) -> QualityEngine:
    """
    Create a synthetic engine - alias for create_synthetic_engine.

    Example:
        engine = synthetic_engine(SynthConfig(seed=0))
        result = engine.run(TrainConfig(mos_ratio=0.1))
        print(result.reports["test"].plcc)
    """
    return create_synthetic_engine(synth, train, against_latent)


def file_engine(data_dir: PathLike, train: Optional[TrainConfig] = None) -> QualityEngine:
    """
    Create a file-backed engine - alias for create_file_engine.

    Example:
        engine = file_engine("data")
        curve = engine.sweep([0.0, 0.1, 0.3], range(5))
    """
    return create_file_engine(data_dir, train)
