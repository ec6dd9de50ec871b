"""Reading and writing doubleshrink files.

Handles the returns CSV (date-major, first column dates, header row of
tickers), custom target weights, run configuration files and every output
the CLI writes. Outputs carry no timestamps and floats are written with
full precision, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, TypeAdapter, ValidationError

from doubleshrink.core import PortfolioWeights, ReturnPanel
from doubleshrink.exceptions import ConfigError, InvalidDataError
from doubleshrink.models import ExperimentSummary, RunConfig, TargetKind, TargetSpec

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
CUSTOM_TARGET_PREFIX = "custom:"

PathLike = Union[str, Path]


def _read_raw_csv(path: Path) -> pd.DataFrame:
    """Read every cell as text, indexed by 1-based file line.

    Blank lines are dropped, so the index can skip numbers.
    """
    if not path.exists():
        raise InvalidDataError(f"File not found: {path}")
    try:
        raw = pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True
        )
    except pd.errors.EmptyDataError as exc:
        raise InvalidDataError(f"File is empty: {path}") from exc
    except pd.errors.ParserError as exc:
        raise InvalidDataError(f"Malformed CSV {path}: {exc}") from exc

    lines = [i + 1 for i, text in enumerate(path.read_text().splitlines()) if text.strip()]
    if len(lines) == raw.shape[0]:
        raw.index = pd.Index(lines)
    else:
        # quoted fields spanning lines; fall back to row positions
        raw.index = pd.RangeIndex(1, raw.shape[0] + 1)
    return raw


def _parse_cell(cell: object, row: int, column: str) -> float:
    text = "" if pd.isna(cell) else str(cell).strip()
    if not text:
        raise InvalidDataError("Missing value", row=row, column=column)
    try:
        value = float(text)
    except ValueError as exc:
        raise InvalidDataError(f"Non-numeric value '{text}'", row=row, column=column) from exc
    if not np.isfinite(value):
        raise InvalidDataError(f"Non-finite value '{text}'", row=row, column=column)
    return value


def ingest_returns(path: PathLike) -> ReturnPanel:
    """Load a date-major returns CSV into an assets x time panel.

    The first row holds the tickers (its first cell labels the date column)
    and each following row is one date. Rows in error messages are file
    lines, counting the header as line 1.

    Args:
        path: CSV file to read.

    Returns:
        The transposed panel with tickers and dates as labels.

    Raises:
        InvalidDataError: On missing, non-numeric or non-finite values,
            ragged rows, duplicate or empty tickers, or fewer than 3 rows.
    """
    path = Path(path)
    raw = _read_raw_csv(path)
    if raw.shape[1] < 3:
        raise InvalidDataError(f"{path} needs a date column and at least 2 asset columns")

    header = ["" if pd.isna(h) else str(h).strip() for h in raw.iloc[0]]
    tickers = header[1:]
    empty = [i + 2 for i, t in enumerate(tickers) if not t]
    if empty:
        raise InvalidDataError(f"Empty ticker in header column {empty[0]}")
    duplicates = sorted({t for t in tickers if tickers.count(t) > 1})
    if duplicates:
        raise InvalidDataError(f"Duplicate tickers: {', '.join(duplicates)}")

    body = raw.iloc[1:]
    if body.shape[0] < 3:
        raise InvalidDataError(f"{path} needs at least 3 observations, found {body.shape[0]}")

    dates = [str(d).strip() for d in body.iloc[:, 0]]
    values = np.empty((len(tickers), body.shape[0]))
    for t, (line, record) in enumerate(body.iterrows()):
        for i, ticker in enumerate(tickers):
            values[i, t] = _parse_cell(record.iloc[i + 1], int(line), ticker)

    logger.info("Loaded %d assets x %d observations from %s", len(tickers), len(dates), path)
    return ReturnPanel(values, tuple(tickers), tuple(dates))


def export_returns(panel: ReturnPanel, path: PathLike) -> Path:
    """Write a panel in the date-major layout ``ingest_returns`` reads."""
    path = Path(path)
    frame = pd.DataFrame(
        panel.values.T,
        index=pd.Index(panel.time_labels, name="date"),
        columns=list(panel.asset_labels),
    )
    frame.to_csv(path, float_format=FLOAT_FORMAT)
    return path


def load_custom_target(path: PathLike) -> TargetSpec:
    """Read custom target weights from a two-column ``asset,weight`` CSV.

    Raises:
        InvalidDataError: If the file is malformed or the weights do not sum
            to one.
    """
    path = Path(path)
    raw = _read_raw_csv(path)
    if raw.shape[1] != 2 or raw.shape[0] < 3:
        raise InvalidDataError(f"{path} must have an 'asset,weight' header and at least 2 rows")
    body = raw.iloc[1:]
    labels = [str(a).strip() for a in body.iloc[:, 0]]
    weights = [
        _parse_cell(cell, row=int(line), column="weight")
        for line, cell in body.iloc[:, 1].items()
    ]
    try:
        return TargetSpec(kind=TargetKind.CUSTOM, weights=weights, asset_labels=labels)
    except ValidationError as exc:
        raise InvalidDataError(f"Invalid custom target {path}: {exc.errors()[0]['msg']}") from exc


def resolve_target(text: str) -> TargetSpec:
    """Turn ``ew``, ``ec`` or ``custom:<csv>`` into a target spec.

    Raises:
        InvalidDataError: If the text names no known target.
    """
    if text.strip().lower().startswith(CUSTOM_TARGET_PREFIX):
        return load_custom_target(text.strip()[len(CUSTOM_TARGET_PREFIX) :])
    try:
        return TargetSpec.parse(text)
    except ValueError as exc:
        raise InvalidDataError(str(exc)) from exc


def load_run_config(path: PathLike) -> RunConfig:
    """Load a run configuration JSON file.

    Args:
        path: Path to the file.

    Returns:
        The parsed configuration.

    Raises:
        ConfigError: If the file is missing or invalid.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        return RunConfig.model_validate_json(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in config file: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"Invalid config format: {e}") from e


def ensure_output_dir(path: PathLike) -> Path:
    """Create the output directory if needed."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_weights(
    weights: PortfolioWeights,
    asset_labels: tuple[str, ...],
    path: PathLike,
    output_format: str = "csv",
) -> Path:
    """Write a weight vector as ``asset,weight`` rows (CSV) or records (JSON)."""
    frame = pd.DataFrame({"asset": list(asset_labels), "weight": weights.weights})
    return write_table(frame, path, output_format)


def write_table(frame: pd.DataFrame, path: PathLike, output_format: str = "csv") -> Path:
    """Write a table as CSV or as a JSON list of records."""
    path = Path(path)
    if output_format == "json":
        path = path.with_suffix(".json")
        records = json.loads(frame.to_json(orient="records", double_precision=15))
        path.write_text(json.dumps(records, indent=2) + "\n")
    else:
        path = path.with_suffix(".csv")
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_record(record: BaseModel, path: PathLike) -> Path:
    """Write a pydantic record as indented JSON."""
    path = Path(path)
    path.write_text(record.model_dump_json(indent=2) + "\n")
    return path


def write_summaries(summaries: Sequence[ExperimentSummary], path: PathLike) -> Path:
    """Write the summaries of every simulated cell as one JSON list."""
    path = Path(path)
    adapter = TypeAdapter(list[ExperimentSummary])
    path.write_bytes(adapter.dump_json(list(summaries), indent=2) + b"\n")
    return path
