"""CSV persistence for matrices, trajectories and experiment reports.

Every file opens with '#' metadata lines (command, parameters, seed, build), then a header
row. Reals carry 17 significant digits so values read back bit-identical.
"""

import csv
import dataclasses
import logging
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from src.constants import BUILD_ID, NORMAL_METHOD
from src.models.diffusion import Ensemble
from src.models.errors import ValidationError
from src.models.matrices import GeneralMatrix, StateSpace, parse_state_label, state_label

log = logging.getLogger(__name__)

OUTPUT_DIR = Path("results")


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (tuple, list)) and all(isinstance(v, (int, float)) for v in value):
        return ";".join(format_value(v) for v in value)
    if value is None:
        return ""
    return str(value)


def metadata_lines(command: str, params: Mapping[str, object], seed: int | None = None) -> list[str]:
    lines = [f"# command={command}"]
    lines += [f"# {key}={format_value(value)}" for key, value in params.items()]
    if seed is not None:
        lines.append(f"# seed={seed}")
    lines.append(f"# build={BUILD_ID}")
    lines.append(f"# normal_method={NORMAL_METHOD}")
    return lines


def resolve(path: str | Path, base: str | Path | None = None) -> Path:
    """Relative paths land under base, or OUTPUT_DIR when no base is given."""
    path = Path(path)
    if path.is_absolute():
        return path
    return Path(base if base is not None else OUTPUT_DIR) / path


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]], metadata: Sequence[str]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as f:
        for line in metadata:
            f.write(line + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    log.info("Wrote %s", target)
    return target


def write_matrix_csv(path: str | Path, matrix: GeneralMatrix, metadata: Sequence[str]) -> Path:
    """Row-major dump with state labels "n:m" heading rows and columns."""
    labels = matrix.space.labels()
    rows = ([label, *(float(v) for v in matrix.entries[i])] for i, label in enumerate(labels))
    return write_csv(path, ["state", *labels], rows, metadata)


def read_matrix_csv(path: str | Path) -> GeneralMatrix:
    target = Path(path)
    with open(target, encoding="utf-8", newline="") as f:
        body = [line for line in f if not line.startswith("#")]
    table = list(csv.reader(body))
    if not table or table[0][:1] != ["state"]:
        raise ValidationError(f"{target} is not a matrix dump (missing 'state' header)")
    labels = table[0][1:]
    space = StateSpace(tuple(parse_state_label(label) for label in labels))
    entries = np.zeros((len(space), len(space)))
    for row in table[1:]:
        entries[space.index(parse_state_label(row[0]))] = [float(v) for v in row[1:]]
    return GeneralMatrix(space, entries)


def write_trajectories(path: str | Path, ensemble: Ensemble, metadata: Sequence[str]) -> Path:
    def rows():
        for r in range(ensemble.replicates):
            for j, t in enumerate(ensemble.times):
                yield r, float(t), float(ensemble.x[r, j]), float(ensemble.y[r, j])

    return write_csv(path, ["replicate", "t", "x", "y"], rows(), metadata)


def write_records(path: str | Path, records: Sequence[object], metadata: Sequence[str]) -> Path:
    """One row per dataclass record, columns in field order."""
    if not records:
        raise ValidationError(f"No records to write to {path}")
    names = [f.name for f in dataclasses.fields(records[0])]
    rows = ([getattr(record, name) for name in names] for record in records)
    return write_csv(path, names, rows, metadata)


def matrix_rows(matrix: GeneralMatrix, states: Sequence[tuple[int, int]] | None = None) -> list[list[object]]:
    """Rows of a matrix as [label, entries...], optionally for selected states only."""
    chosen = states if states is not None else matrix.space.states
    return [[state_label(s), *(float(v) for v in matrix.row(s))] for s in chosen]
