import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from pyqualitydistill.exceptions import FormatError

PathLike = Union[str, os.PathLike]


def convert_json_to_csv(records: Iterable[Dict[str, Any]], path: PathLike, columns: Sequence[str]) -> None:
    """Write a list of flat records to CSV with a fixed column order."""
    df = pd.DataFrame(list(records), columns=list(columns))
    atomic_write_text(path, df.to_csv(index=False))


def read_csv_table(path: PathLike, columns: Sequence[str], numeric: Sequence[str] = ()) -> pd.DataFrame:
    """
    Read a CSV file and check its header and numeric columns.

    Float columns are parsed with the round-trip parser so values written by
    convert_json_to_csv come back bit-identical.

    Raises:
        FormatError: On a malformed file, a wrong header, or a numeric cell that
            is not a finite number (nan and inf included).
    """
    path = Path(path)
    try:
        df = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(path, 1, 1, f"unreadable CSV: {e}") from e

    if list(df.columns) != list(columns):
        raise FormatError(path, 1, 1, f"expected header {','.join(columns)}, got {','.join(map(str, df.columns))}")

    for name in numeric:
        col = list(df.columns).index(name) + 1
        parsed = pd.to_numeric(df[name], errors="coerce")
        bad = ~np.isfinite(parsed.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            row = int(bad.nonzero()[0][0])
            raise FormatError(path, row + 2, col, f"non-numeric or non-finite value {df[name].iloc[row]!r} in column {name}")
        df[name] = [float(v) for v in df[name]]
    return df


def dump_json_line(record: Dict[str, Any]) -> str:
    return json.dumps(record, allow_nan=False)


def write_jsonl(records: Iterable[Dict[str, Any]], path: PathLike) -> None:
    atomic_write_text(path, "".join(dump_json_line(r) + "\n" for r in records))


def read_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """
    Yield (line_number, record) for each non-empty line of a JSONL file.

    Raises:
        FormatError: With the file, line and column of the first bad line.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(path, line_no, e.colno, e.msg) from e
            if not isinstance(record, dict):
                raise FormatError(path, line_no, 1, "expected a JSON object")
            yield line_no, record


def write_json(document: Any, path: PathLike) -> None:
    atomic_write_text(path, json.dumps(document, indent=2, allow_nan=False) + "\n")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(path, e.lineno, e.colno, e.msg) from e


def atomic_write_text(path: PathLike, text: str) -> None:
    """Replace path with text in one rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def append_line(path: PathLike, line: str) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as f:
        f.write(line + "\n")
        f.flush()


def float_list(values: Iterable[Any]) -> List[float]:
    return [float(v) for v in values]


def optional_float(value: Optional[Any]) -> Optional[float]:
    return None if value is None else float(value)


def stream_seed(seed: int, stream: int) -> int:
    """Independent integer seed for one named stream of ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1)[0])


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])
