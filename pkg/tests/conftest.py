from __future__ import annotations

import json
from pathlib import Path

import pytest


def write_fixture_table(directory: Path, rows: list[str], dim: int, codes: list[str], has_logits: bool = True) -> tuple[Path, Path]:
    """Write a CSV table + manifest + vocabulary into ``directory``."""
    (directory / "vocab.txt").write_text("\n".join(codes) + "\n")
    header = ["recording_id", "interval_start_sec"] + [f"emb_{i}" for i in range(dim)]
    if has_logits:
        header += [f"logit_{i}" for i in range(len(codes))]
    data = directory / "table.csv"
    data.write_text(",".join(header) + "\n" + "".join(r + "\n" for r in rows))
    manifest = directory / "manifest.json"
    manifest.write_text(
        json.dumps({"embedding_dim": dim, "has_logits": has_logits, "vocabulary": "vocab.txt", "source_tag": "fixture"})
    )
    return data, manifest


FOUR_ROWS = [
    "recA,0,1.0,2.0,2.0,-1.0",
    "recA,5,0.5,-0.5,-inf,-3.0",
    "recA,10,0.0,0.25,-2.0,-inf",
    "recA,15,-1.5,3.0,-4.0,-0.5",
]


@pytest.fixture
def four_row_table(tmp_path: Path) -> tuple[Path, Path]:
    """4 intervals of one recording, D=2, C=2; exactly one row has sigmoid(logit) > 0.5."""
    return write_fixture_table(tmp_path, FOUR_ROWS, 2, ["grnsan", "comior1"])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
