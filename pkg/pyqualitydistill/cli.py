"""
Command-line surface.

    pyqualitydistill synth      write a synthetic bundle into --data-dir
    pyqualitydistill harvest    collect teacher signals from an endpoint (--manifest)
    pyqualitydistill distill    Stage 1 on the bundle; checkpoint into --run-dir
    pyqualitydistill calibrate  Stage 2 on a MOS budget; checkpoint into --run-dir
    pyqualitydistill eval       EvalReport of the latest checkpoint as JSON on stdout
    pyqualitydistill sweep      label-efficiency curve over --ratios and --seeds
    pyqualitydistill ablate     supervision ablation over --modes and --seeds
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pyqualitydistill.config import (
    RunOptions,
    SynthConfig,
    TrainConfig,
    load_config_file,
    parse_list,
    snapshot,
    split_flat_config,
)
from pyqualitydistill.definitions import AblationMode, CheckpointMode, ExitCode, Split, TeacherBias
from pyqualitydistill.exceptions import (
    BudgetTooSmallError,
    ConfigurationError,
    DanglingPairError,
    DanglingReferenceError,
    DegenerateBatchError,
    DegenerateFitError,
    DegenerateMetricError,
    EmptyBatchError,
    FormatError,
    HarvestError,
    InsufficientDataError,
    InvalidSignalError,
    MissingArtifactError,
    MissingLabelsError,
    MissingSignalError,
    QualityDistillError,
    SeedRunError,
    ShapeError,
    TemplateError,
    TrainingDivergenceError,
)
from pyqualitydistill.formats import (
    BundlePaths,
    RunPaths,
    load_bundle,
    write_bundle,
    write_curve,
    write_eval_report,
    write_labeled_ids,
    write_run_log,
)
from pyqualitydistill.pipeline import (
    evaluate,
    few_shot_holdout,
    initial_params,
    run_stage2,
    split_mos_budget,
    train_stage1,
)
from pyqualitydistill.providers.synth import make_benchmark
from pyqualitydistill.providers.teacher_client import HarvestManifest, TeacherEndpointClient
from pyqualitydistill.pyqualitydistill import QualityEngine, create_synthetic_engine
from pyqualitydistill.signals import sample_pairs
from pyqualitydistill.student import load_checkpoint, save_checkpoint
from pyqualitydistill.utils import read_csv_table, write_json

logger = logging.getLogger(__name__)

EXIT_CODES = """exit codes:
  0  success
  1  unexpected error
  2  usage error (unknown command or flag)
  3  invalid configuration
  4  malformed or inconsistent data file
  5  missing artifact (bundle file, checkpoint)
  6  training diverged
  7  harvest failed for every request
  8  data unusable (too few images, empty budget, missing labels or signals)
"""

_EXIT_MAP: Tuple[Tuple[type, ExitCode], ...] = (
    (ConfigurationError, ExitCode.CONFIGURATION),
    (TemplateError, ExitCode.CONFIGURATION),
    (FormatError, ExitCode.FORMAT),
    (DanglingReferenceError, ExitCode.FORMAT),
    (MissingArtifactError, ExitCode.MISSING_ARTIFACT),
    (TrainingDivergenceError, ExitCode.DIVERGENCE),
    (HarvestError, ExitCode.HARVEST),
    (InsufficientDataError, ExitCode.DATA),
    (BudgetTooSmallError, ExitCode.DATA),
    (MissingLabelsError, ExitCode.DATA),
    (MissingSignalError, ExitCode.DATA),
    (DanglingPairError, ExitCode.DATA),
    (InvalidSignalError, ExitCode.DATA),
    (ShapeError, ExitCode.DATA),
    (EmptyBatchError, ExitCode.DATA),
    (DegenerateBatchError, ExitCode.DATA),
    (DegenerateMetricError, ExitCode.DATA),
    (DegenerateFitError, ExitCode.DATA),
)


def exit_code_for(error: BaseException) -> ExitCode:
    """Exit status of an error; a failed seeded repeat maps by its cause."""
    if isinstance(error, SeedRunError):
        return exit_code_for(error.cause)
    for cls, code in _EXIT_MAP:
        if isinstance(error, cls):
            return code
    return ExitCode.GENERIC


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _ratios(text: str) -> Tuple[float, ...]:
    return parse_list(text, float)


def _modes(text: str) -> Tuple[str, ...]:
    return parse_list(text, str)


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", dest="config_file", default=None, help="flat JSON config; flags override it")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--data-dir", dest="data_dir", default=argparse.SUPPRESS, help="bundle directory")
    p.add_argument("--run-dir", dest="run_dir", default=argparse.SUPPRESS, help="artifact directory")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    return p


def _train_parser() -> argparse.ArgumentParser:
    s = argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("training")
    g.add_argument("--hidden-sizes", dest="hidden_sizes", type=lambda t: parse_list(t, int), default=s)
    g.add_argument("--stage1-epochs", dest="stage1_epochs", type=int, default=s)
    g.add_argument("--stage1-batch", dest="stage1_batch", type=int, default=s)
    g.add_argument("--stage1-pair-batch", dest="stage1_pair_batch", type=int, default=s)
    g.add_argument("--stage1-lr", dest="stage1_lr", type=float, default=s)
    g.add_argument("--stage2-epochs", dest="stage2_epochs", type=int, default=s)
    g.add_argument("--stage2-batch", dest="stage2_batch", type=int, default=s)
    g.add_argument("--stage2-lr", dest="stage2_lr", type=float, default=s)
    g.add_argument("--weight-decay", dest="weight_decay", type=float, default=s)
    g.add_argument("--lambda-dis", dest="lambda_dis", type=float, default=s)
    g.add_argument("--lambda-cal", dest="lambda_cal", type=float, default=s)
    g.add_argument("--tau", type=float, default=s)
    g.add_argument("--mos-ratio", dest="mos_ratio", type=float, default=s)
    g.add_argument("--calib-holdout-frac", dest="calib_holdout_frac", type=float, default=s)
    g.add_argument("--checkpoint-mode", dest="checkpoint_mode", choices=[m.value for m in CheckpointMode], default=s)
    g.add_argument("--workers", type=int, default=s)
    g.add_argument("--no-point", dest="use_point", action="store_false", default=s)
    g.add_argument("--no-pairs", dest="use_pairs", action="store_false", default=s)
    g.add_argument("--no-confidence", dest="use_confidence", action="store_false", default=s)
    g.add_argument("--skip-stage1", dest="skip_stage1", action="store_true", default=s)
    g.add_argument("--head-only", dest="head_only", action="store_true", default=s)
    g.add_argument("--reuse-optimizer", dest="reuse_optimizer", action="store_true", default=s)
    g.add_argument("--dedupe-pairs", dest="dedupe_pairs", action="store_true", default=s)
    g.add_argument("--logistic-plcc", dest="logistic_plcc", action="store_true", default=s)
    return p


def _synth_parser() -> argparse.ArgumentParser:
    s = argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("synthetic benchmark")
    g.add_argument("--n", type=int, default=s)
    g.add_argument("--d", type=int, default=s)
    g.add_argument("--informative-dims", dest="informative_dims", type=int, default=s)
    g.add_argument("--feature-noise", dest="feature_noise", type=float, default=s)
    g.add_argument("--teacher-bias", dest="teacher_bias", choices=[b.value for b in TeacherBias], default=s)
    g.add_argument("--gamma", type=float, default=s)
    g.add_argument("--teacher-noise", dest="teacher_noise", type=float, default=s)
    g.add_argument("--content-bias", dest="content_bias", type=float, default=s)
    g.add_argument("--pair-sharpness", dest="pair_sharpness", type=float, default=s)
    g.add_argument("--pair-noise", dest="pair_noise", type=float, default=s)
    g.add_argument("--heteroscedastic", action="store_true", default=s)
    g.add_argument("--mos-noise", dest="mos_noise", type=float, default=s)
    return p


def build_parser() -> argparse.ArgumentParser:
    common, train, synth = _common_parser(), _train_parser(), _synth_parser()
    parser = argparse.ArgumentParser(
        prog="pyqualitydistill",
        description="Distill teacher quality judgments into a student regressor and calibrate it on few MOS labels.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    s = argparse.SUPPRESS

    sub.add_parser("synth", parents=[common, synth], help="write a synthetic benchmark bundle")

    h = sub.add_parser("harvest", parents=[common], help="collect teacher signals from an endpoint")
    h.add_argument("--manifest", required=True, help="harvest manifest JSON")

    sub.add_parser("distill", parents=[common, train], help="run the distillation stage")
    sub.add_parser("calibrate", parents=[common, train], help="run the calibration stage")

    e = sub.add_parser("eval", parents=[common, train], help="evaluate the latest checkpoint")
    e.add_argument("--split", choices=[x.value for x in Split], default=s)
    e.add_argument("--against-latent", dest="against_latent", action="store_true", default=s)

    for name, helptext in (("sweep", "label-efficiency curve"), ("ablate", "supervision ablation grid")):
        c = sub.add_parser(name, parents=[common, train, synth], help=helptext)
        c.add_argument("--seeds", dest="n_seeds", type=int, default=s, help="number of seeds, 0..N-1")
        c.add_argument("--split", choices=[x.value for x in Split], default=s)
        c.add_argument("--synthetic", action="store_true", default=s, help="regenerate the benchmark, redrawing pairs per seed")
        c.add_argument("--against-latent", dest="against_latent", action="store_true", default=s)
        if name == "sweep":
            c.add_argument("--ratios", type=_ratios, default=s, help="comma-separated MOS ratios")
        else:
            c.add_argument("--modes", type=_modes, default=s, help=f"comma-separated: {','.join(m.value for m in AblationMode)}")
    return parser


_NON_CONFIG = {"command", "config_file", "log_level", "manifest"}


def resolve_configs(args: argparse.Namespace) -> Tuple[TrainConfig, SynthConfig, RunOptions]:
    """Config file values, then command-line flags on top."""
    values: Dict[str, Any] = {}
    if args.config_file:
        values.update(load_config_file(args.config_file))
    values.update({k: v for k, v in vars(args).items() if k not in _NON_CONFIG})
    return split_flat_config(values)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, train: TrainConfig, synth: SynthConfig, run: RunOptions) -> None:
    benchmark = make_benchmark(synth, unique_pairs=train.dedupe_pairs)
    write_bundle(benchmark.bundle, run.data_dir)
    write_json(synth.to_dict(), Path(run.data_dir) / "synth_config.json")


def _harvest_pairs(manifest: HarvestManifest, data_dir: str, seed: int) -> List[Tuple[str, str]]:
    """Pairs among the manifest's training images (all images without a splits file)."""
    ids = sorted(manifest.images)
    splits_path = BundlePaths.in_dir(data_dir).splits
    if splits_path.exists():
        df = read_csv_table(splits_path, ["id", "split"])
        train = {i for i, s in zip(df["id"], df["split"]) if s == Split.TRAIN.value}
        candidates = [i for i in ids if i in train]
    else:
        candidates = ids
    return sample_pairs(candidates, len(ids), seed)


def cmd_harvest(args, train: TrainConfig, synth: SynthConfig, run: RunOptions) -> None:
    manifest = HarvestManifest.from_file(args.manifest)
    client = TeacherEndpointClient(manifest)
    client.harvest(sorted(manifest.images), _harvest_pairs(manifest, run.data_dir, train.seed))


def _save_stage(paths: RunPaths, stage: int, params, log, optimizer, train: TrainConfig, run: RunOptions) -> None:
    save_checkpoint(paths.checkpoint(stage), params, optimizer, {"seed": train.seed, "stage": stage, "mos_ratio": train.mos_ratio})
    write_run_log(log, paths.run_log(stage))
    write_json(snapshot(train, run), paths.config)


def cmd_distill(args, train: TrainConfig, synth: SynthConfig, run: RunOptions) -> None:
    bundle = load_bundle(run.data_dir)
    paths = RunPaths.in_dir(run.run_dir)
    labeled = []
    if train.checkpoint_mode == CheckpointMode.FEW_SHOT:
        labeled, _ = split_mos_budget(bundle.dataset, train.mos_ratio, train.seed)
    mos_holdout = few_shot_holdout(train, bundle.dataset, labeled)
    result = train_stage1(train, bundle.dataset, bundle.point_signals, bundle.pairs, mos_holdout)
    _save_stage(paths, 1, result.params, result.log, result.optimizer, train, run)


def cmd_calibrate(args, train: TrainConfig, synth: SynthConfig, run: RunOptions) -> None:
    bundle = load_bundle(run.data_dir)
    paths = RunPaths.in_dir(run.run_dir)
    optimizer = None
    if train.skip_stage1:
        params = initial_params(train, bundle.dataset.dim)
    else:
        checkpoint = load_checkpoint(paths.checkpoint(1))
        params, optimizer = checkpoint.params, checkpoint.optimizer
    labeled, _ = split_mos_budget(bundle.dataset, train.mos_ratio, train.seed)
    new_params, log = run_stage2(train, params, bundle.dataset, labeled, optimizer=optimizer)
    write_labeled_ids(labeled, paths.labeled_ids)
    _save_stage(paths, 2, new_params, log, None, train, run)


def cmd_eval(args, train: TrainConfig, synth: SynthConfig, run: RunOptions) -> None:
    paths = RunPaths.in_dir(run.run_dir)
    ckpt_path = paths.checkpoint(2) if paths.checkpoint(2).exists() else paths.checkpoint(1)
    checkpoint = load_checkpoint(ckpt_path)
    bundle = load_bundle(run.data_dir)
    report = evaluate(checkpoint.params, bundle.dataset, run.split, train.logistic_plcc, run.against_latent)
    write_eval_report(report, paths.eval_report(run.split))
    sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")


def _engine(train: TrainConfig, synth: SynthConfig, run: RunOptions) -> QualityEngine:
    if run.synthetic:
        return create_synthetic_engine(synth, train, run.against_latent)
    return QualityEngine(load_bundle(run.data_dir), train=train, against_latent=run.against_latent)


def cmd_sweep(args, train: TrainConfig, synth: SynthConfig, run: RunOptions) -> None:
    paths = RunPaths.in_dir(run.run_dir)
    curve = _engine(train, synth, run).sweep(run.ratios, range(run.n_seeds), train, run.split)
    write_curve(curve, paths.curve("sweep"), paths.curve_summary("sweep"))
    write_json(snapshot(train, run, synth if run.synthetic else None), paths.config)


def cmd_ablate(args, train: TrainConfig, synth: SynthConfig, run: RunOptions) -> None:
    paths = RunPaths.in_dir(run.run_dir)
    curve = _engine(train, synth, run).ablate(run.modes, range(run.n_seeds), train, run.split)
    write_curve(curve, paths.curve("ablation"), paths.curve_summary("ablation"))
    write_json(snapshot(train, run, synth if run.synthetic else None), paths.config)


COMMANDS = {
    "synth": cmd_synth,
    "harvest": cmd_harvest,
    "distill": cmd_distill,
    "calibrate": cmd_calibrate,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else int(ExitCode.USAGE)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        train, synth, run = resolve_configs(args)
        COMMANDS[args.command](args, train, synth, run)
    except QualityDistillError as e:
        code = exit_code_for(e)
        logger.error("%s failed: %s", args.command, e)
        sys.stderr.write(f"error: {e}\n")
        return int(code)
    except Exception as e:
        logger.exception("%s failed unexpectedly", args.command)
        sys.stderr.write(f"error: {e}\n")
        return int(ExitCode.GENERIC)
    return int(ExitCode.OK)


if __name__ == "__main__":
    sys.exit(main())
