"""
On-disk formats of dataset bundles and run artifacts.

A bundle directory holds:

    features.jsonl   {"id": ..., "feat": [...]}
    mos.csv          id,mos
    points.jsonl     {"id": ..., "logits": [5 values, Excellent..Bad]}
    pairs.jsonl      {"a": ..., "b": ..., "logit_a": ..., "logit_b": ...}
    splits.csv       id,split
    latent.csv       id,latent   (synthetic bundles only)

Floats are written in shortest round-trip form, so write -> read -> write is
byte-identical. Rows are ordered by id, except pairs, which keep their order.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from pyqualitydistill.dataset import DatasetBundle, FeatureDataset
from pyqualitydistill.definitions import Split
from pyqualitydistill.exceptions import (
    DanglingReferenceError,
    FormatError,
    InvalidSignalError,
    MissingArtifactError,
)
from pyqualitydistill.metrics import EvalReport
from pyqualitydistill.pipeline import CurveResult, RunLog
from pyqualitydistill.signals import SupervisionPair, TeacherPointSignal, make_pair, make_point_signal
from pyqualitydistill.utils import (
    PathLike,
    convert_json_to_csv,
    read_csv_table,
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
)

logger = logging.getLogger(__name__)


def render_float(value: float) -> str:
    """Shortest decimal string that parses back to the same double."""
    return repr(float(value))


@dataclass(frozen=True)
class BundlePaths:
    features: Path
    mos: Path
    points: Path
    pairs: Path
    splits: Path
    latent: Path

    @classmethod
    def in_dir(cls, directory: PathLike) -> "BundlePaths":
        d = Path(directory)
        return cls(
            features=d / "features.jsonl",
            mos=d / "mos.csv",
            points=d / "points.jsonl",
            pairs=d / "pairs.jsonl",
            splits=d / "splits.csv",
            latent=d / "latent.csv",
        )


@dataclass(frozen=True)
class RunPaths:
    """Artifact locations inside one run directory."""
    root: Path

    @classmethod
    def in_dir(cls, directory: PathLike) -> "RunPaths":
        return cls(Path(directory))

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    def checkpoint(self, stage: int) -> Path:
        return self.root / f"stage{stage}.ckpt.json"

    def run_log(self, stage: int) -> Path:
        return self.root / f"stage{stage}_log.jsonl"

    def eval_report(self, split: Split) -> Path:
        return self.root / f"eval_{Split(split).value}.json"

    @property
    def labeled_ids(self) -> Path:
        return self.root / "labeled_ids.csv"

    @property
    def harvest_report(self) -> Path:
        return self.root / "harvest_report.json"

    def curve(self, name: str) -> Path:
        return self.root / f"{name}.csv"

    def curve_summary(self, name: str) -> Path:
        return self.root / f"{name}_summary.json"


def _require(path: Path, hint: str) -> None:
    if not path.exists():
        raise MissingArtifactError(path, hint)


def _as_id(value: Any, path: Path, line: int, field_name: str) -> str:
    if not isinstance(value, str) or not value:
        raise FormatError(path, line, 1, f"{field_name} must be a non-empty string, got {value!r}")
    return value


def _as_number(value: Any, path: Path, line: int, field_name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(path, line, 1, f"{field_name} must be a number, got {value!r}")
    return float(value)


def _field(record: Mapping[str, Any], name: str, path: Path, line: int) -> Any:
    if name not in record:
        raise FormatError(path, line, 1, f"missing field {name!r}")
    return record[name]


# ---------------------------------------------------------------------------
# Readers
# ---------------------------------------------------------------------------

def read_features(path: PathLike) -> Dict[str, List[float]]:
    path = Path(path)
    rows: Dict[str, List[float]] = {}
    width: Optional[int] = None
    for line, record in read_jsonl(path):
        image_id = _as_id(_field(record, "id", path, line), path, line, "id")
        feat = _field(record, "feat", path, line)
        if not isinstance(feat, list) or not feat:
            raise FormatError(path, line, 1, "feat must be a non-empty list")
        values = [_as_number(v, path, line, "feat entry") for v in feat]
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise FormatError(path, line, 1, f"feature vector of length {len(values)}; earlier rows have {width}")
        if image_id in rows:
            raise FormatError(path, line, 1, f"duplicate id {image_id!r}")
        rows[image_id] = values
    if not rows:
        raise FormatError(path, 1, 1, "no feature rows")
    return rows


def _read_id_table(path: Path, value_column: str, numeric: bool) -> Dict[str, Any]:
    df = read_csv_table(path, ["id", value_column], numeric=[value_column] if numeric else [])
    out: Dict[str, Any] = {}
    for row, (image_id, value) in enumerate(zip(df["id"], df[value_column])):
        if not image_id:
            raise FormatError(path, row + 2, 1, "empty id")
        if image_id in out:
            raise FormatError(path, row + 2, 1, f"duplicate id {image_id!r}")
        out[image_id] = value
    return out


def read_splits(path: PathLike) -> Dict[str, Split]:
    path = Path(path)
    raw = _read_id_table(path, "split", numeric=False)
    out = {}
    for row, (image_id, value) in enumerate(raw.items()):
        try:
            out[image_id] = Split(value)
        except ValueError as e:
            raise FormatError(path, row + 2, 2, f"unknown split {value!r}") from e
    return out


def read_points(path: PathLike) -> Dict[str, TeacherPointSignal]:
    path = Path(path)
    out: Dict[str, TeacherPointSignal] = {}
    for line, record in read_jsonl(path):
        image_id = _as_id(_field(record, "id", path, line), path, line, "id")
        logits = _field(record, "logits", path, line)
        if not isinstance(logits, list):
            raise FormatError(path, line, 1, "logits must be a list")
        try:
            signal = make_point_signal(image_id, [_as_number(v, path, line, "logit") for v in logits])
        except InvalidSignalError as e:
            raise FormatError(path, line, 1, str(e)) from e
        if image_id in out:
            raise FormatError(path, line, 1, f"duplicate id {image_id!r}")
        out[image_id] = signal
    return out


def read_pairs(path: PathLike) -> List[SupervisionPair]:
    path = Path(path)
    out: List[SupervisionPair] = []
    for line, record in read_jsonl(path):
        a = _as_id(_field(record, "a", path, line), path, line, "a")
        b = _as_id(_field(record, "b", path, line), path, line, "b")
        l_a = _as_number(_field(record, "logit_a", path, line), path, line, "logit_a")
        l_b = _as_number(_field(record, "logit_b", path, line), path, line, "logit_b")
        try:
            out.append(make_pair(a, b, l_a, l_b))
        except InvalidSignalError as e:
            raise FormatError(path, line, 1, str(e)) from e
    return out


def _check_refs(ids: Iterable[str], known: Mapping[str, Any], source: Path, target: Path) -> None:
    for image_id in ids:
        if image_id not in known:
            raise DanglingReferenceError(image_id, source, target)


def load_bundle(directory: PathLike) -> DatasetBundle:
    """
    Read and cross-validate a bundle directory.

    Raises:
        MissingArtifactError: If a required file is absent.
        FormatError: On a parse failure, with file, line and column.
        DanglingReferenceError: If a file names an id the features file lacks,
            or a feature row has no split.
    """
    paths = BundlePaths.in_dir(directory)
    for p in (paths.features, paths.mos, paths.points, paths.pairs, paths.splits):
        _require(p, "expected in a dataset bundle")

    features = read_features(paths.features)
    splits = read_splits(paths.splits)
    mos = _read_id_table(paths.mos, "mos", numeric=True)
    points = read_points(paths.points)
    pairs = read_pairs(paths.pairs)
    latent = _read_id_table(paths.latent, "latent", numeric=True) if paths.latent.exists() else None

    _check_refs(splits, features, paths.splits, paths.features)
    _check_refs(features, splits, paths.features, paths.splits)
    _check_refs(mos, features, paths.mos, paths.features)
    _check_refs(points, features, paths.points, paths.features)
    _check_refs((i for p in pairs for i in (p.a, p.b)), features, paths.pairs, paths.features)
    if latent is not None:
        _check_refs(latent, features, paths.latent, paths.features)

    ids = sorted(features)
    dataset = FeatureDataset(
        ids,
        np.array([features[i] for i in ids], dtype=np.float64),
        splits,
        mos=mos,
        latent=latent,
    )
    logger.info("Loaded bundle %s: %d images, %d point signals, %d pairs", directory, len(ids), len(points), len(pairs))
    return DatasetBundle(dataset, {i: points[i] for i in sorted(points)}, pairs)


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def point_record(signal: TeacherPointSignal) -> Dict[str, Any]:
    return {"id": signal.image_id, "logits": [float(v) for v in signal.logits]}


def pair_record(pair: SupervisionPair) -> Dict[str, Any]:
    return {"a": pair.a, "b": pair.b, "logit_a": pair.logit_a, "logit_b": pair.logit_b}


def write_points(signals: Iterable[TeacherPointSignal], path: PathLike) -> None:
    write_jsonl((point_record(s) for s in sorted(signals, key=lambda s: str(s.image_id))), path)


def write_pairs(pairs: Iterable[SupervisionPair], path: PathLike) -> None:
    write_jsonl((pair_record(p) for p in pairs), path)


def write_id_table(values: Mapping[Hashable, float], path: PathLike, column: str) -> None:
    rows = [{"id": str(i), column: render_float(values[i])} for i in sorted(values, key=str)]
    convert_json_to_csv(rows, path, ["id", column])


def write_bundle(bundle: DatasetBundle, directory: PathLike) -> BundlePaths:
    """Write every file of a bundle; latent.csv only when the dataset carries latent quality."""
    paths = BundlePaths.in_dir(directory)
    dataset = bundle.dataset
    ids = sorted(dataset.ids, key=str)
    write_jsonl(({"id": str(i), "feat": [float(v) for v in dataset.features[dataset.row(i)]]} for i in ids), paths.features)
    write_id_table(dataset.mos_items(), paths.mos, "mos")
    convert_json_to_csv([{"id": str(i), "split": dataset.split[i].value} for i in ids], paths.splits, ["id", "split"])
    write_points(bundle.point_signals.values(), paths.points)
    write_pairs(bundle.pairs, paths.pairs)
    if dataset.latent is not None:
        write_id_table(dataset.latent, paths.latent, "latent")
    logger.info("Wrote bundle of %d images to %s", len(ids), directory)
    return paths


# ---------------------------------------------------------------------------
# Run artifacts
# ---------------------------------------------------------------------------

def write_run_log(log: RunLog, path: PathLike) -> None:
    write_jsonl(log.to_records(), path)


def read_run_log(path: PathLike) -> RunLog:
    path = Path(path)
    _require(path, "run the stage that produces it first")
    return RunLog.from_records([record for _, record in read_jsonl(path)])


def write_eval_report(report: EvalReport, path: PathLike) -> None:
    write_json(report.to_dict(), path)


def read_eval_report(path: PathLike) -> EvalReport:
    path = Path(path)
    _require(path, "run eval first")
    return EvalReport.from_dict(read_json(path))


def write_labeled_ids(ids: Sequence[Hashable], path: PathLike) -> None:
    convert_json_to_csv([{"id": str(i)} for i in ids], path, ["id"])


def read_labeled_ids(path: PathLike) -> List[str]:
    path = Path(path)
    _require(path, "run calibrate first")
    return list(read_csv_table(path, ["id"])["id"])


def write_curve(result: CurveResult, csv_path: PathLike, summary_path: PathLike) -> None:
    """Sweep or ablation table as CSV plus a JSON summary of means and standard deviations."""
    rows = []
    for record in result.records():
        row = dict(record)
        row["srcc"] = render_float(row["srcc"])
        row["plcc"] = render_float(row["plcc"])
        if result.key == "ratio":
            row["ratio"] = render_float(row["ratio"])
        rows.append(row)
    convert_json_to_csv(rows, csv_path, [result.key, "seed", "srcc", "plcc"])
    write_json({"key": result.key, "settings": result.summary}, summary_path)
