import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from src.models.errors import ValidationError
from src.models.params import InitialBlocks, SeedbankParams
from src.models.reports import TvRecord
from src.services.seedbank_models import blockcounting_q
from src.stores.csv_store import (
    format_value,
    metadata_lines,
    matrix_rows,
    read_matrix_csv,
    resolve,
    write_csv,
    write_matrix_csv,
    write_records,
)


def test_format_value_keeps_full_precision():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(True) == "true"
    assert format_value((0.5, 2)) == "0.5;2"
    assert format_value(None) == ""
    assert format_value("seedbank") == "seedbank"


def test_metadata_lines_order():
    lines = metadata_lines("rates", {"c": 0.5, "K": 2.0}, seed=7)
    assert lines[0] == "# command=rates"
    assert "# c=0.5" in lines
    assert "# seed=7" in lines
    assert lines[-2].startswith("# build=")
    assert lines[-1].startswith("# normal_method=")


def test_resolve_places_relative_paths_under_output_dir():
    with tempfile.TemporaryDirectory() as tmp:
        with patch("src.stores.csv_store.OUTPUT_DIR", Path(tmp)):
            assert resolve("rates.csv") == Path(tmp) / "rates.csv"
        assert resolve("rates.csv", base=tmp) == Path(tmp) / "rates.csv"
        absolute = Path(tmp) / "elsewhere.csv"
        assert resolve(absolute, base="ignored") == absolute


def test_write_csv_uses_lf_and_creates_directories():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_csv(Path(tmp) / "nested" / "out.csv", ["a", "b"], [[1, 0.25]], ["# command=test"])
        raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw == b"# command=test\na,b\n1,0.25\n"


def test_matrix_dump_reads_back_identically():
    Q = blockcounting_q(SeedbankParams(c=0.3, K=1.7), InitialBlocks(3, 2))
    with tempfile.TemporaryDirectory() as tmp:
        path = write_matrix_csv(Path(tmp) / "q.csv", Q, metadata_lines("dump-matrix", {"matrix": "q"}))
        text = path.read_text(encoding="utf-8")
        reread = read_matrix_csv(path)
    assert text.startswith("# command=dump-matrix\n")
    assert "state,0:0,0:1" in text
    assert reread.space == Q.space
    assert np.array_equal(reread.entries, Q.entries)


def test_read_matrix_csv_rejects_other_files():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_csv(Path(tmp) / "not_matrix.csv", ["t", "tv"], [[1.0, 0.1]], [])
        with pytest.raises(ValidationError):
            read_matrix_csv(path)


def test_write_records_uses_field_names():
    records = [TvRecord(c=0.2, t=1.0, tv=0.125), TvRecord(c=0.1, t=1.0, tv=0.0625)]
    with tempfile.TemporaryDirectory() as tmp:
        path = write_records(Path(tmp) / "tv.csv", records, ["# command=converge"])
        lines = path.read_text(encoding="utf-8").splitlines()
        with pytest.raises(ValidationError):
            write_records(Path(tmp) / "empty.csv", [], [])
    assert lines[1] == "c,t,tv"
    assert lines[2] == "0.20000000000000001,1,0.125"


def test_matrix_rows_selects_states():
    Q = blockcounting_q(SeedbankParams(c=0.5, K=2.0), InitialBlocks(1, 0))
    rows = matrix_rows(Q, [(1, 0)])
    assert rows == [["1:0", 0.0, 0.5, -0.5]]
