import csv
import json

import pytest

from replaytune.cli import main
from replaytune.report import COLUMNS

OUTPUTS = ["report.json", "replays.jsonl", "summary.txt", "snapshot.hrsn", "capture.json",
           *COLUMNS]


def _search(out, *extra):
    return main(["search", "crc", "-K", "6", "-R", "3", "--validate", "3", "--out", str(out),
                 *extra])


def test_search_writes_every_output(tmp_path, capsys):
    assert _search(tmp_path) == 0
    for name in OUTPUTS:
        assert (tmp_path / name).exists(), name
    for name, cols in COLUMNS.items():
        with open(tmp_path / name) as f:
            rows = list(csv.reader(f))
        assert rows[0] == cols
        assert len(rows) > 1
    assert "benchmark crc" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _search(a, "--noise", "gaussian:0.01", "--seed", "4") == 0
    assert _search(b, "--noise", "gaussian:0.01", "--seed", "4") == 0
    for name in OUTPUTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_capture_then_replay(tmp_path, capsys):
    assert main(["capture", "quantize", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "baseline.hrim").exists()
    assert main(["replay", "quantize", "-R", "4", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "replays.jsonl").read_text().splitlines()
    assert len(lines) == 4 and len({json.loads(x)["cycles"] for x in lines}) == 1
    assert "matches" in capsys.readouterr().out


def test_report_merges_reports(tmp_path):
    for name in ("crc", "quantize"):
        assert main(["search", name, "-K", "3", "-R", "3", "--validate", "0",
                     "--out", str(tmp_path / name)]) == 0
    out = tmp_path / "merged"
    assert main(["report", str(tmp_path / "crc" / "report.json"),
                 str(tmp_path / "quantize" / "report.json"), "--out", str(out)]) == 0
    with open(out / "storage.csv") as f:
        assert [r["benchmark"] for r in csv.DictReader(f)] == ["crc", "quantize"]


def test_bench_and_profile(tmp_path, capsys):
    assert main(["bench"]) == 0
    out = capsys.readouterr().out
    for name in ("fir", "bubblesort", "fft", "huffman", "crc", "quantize"):
        assert name in out
    assert main(["profile", "fir", "--out", str(tmp_path)]) == 0
    prof = json.loads((tmp_path / "profile.json").read_text())
    assert prof["functions"][0]["function"] == "fir_filter"


@pytest.mark.parametrize("argv", [
    ["search", "nosuch", "-K", "1"],
    ["search", "crc", "--noise", "loud"],
    ["search", "crc", "-R", "2"],
    ["search", "crc", "--workers", "0"],
])
def test_usage_errors_exit_2(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["search"])
    assert e.value.code == 2


def test_corrupt_snapshot_exits_1(tmp_path, capsys):
    assert main(["capture", "crc", "--out", str(tmp_path)]) == 0
    snap = tmp_path / "snapshot.hrsn"
    blob = bytearray(snap.read_bytes())
    blob[100] ^= 0xFF
    snap.write_bytes(bytes(blob))
    assert main(["replay", "crc", "--out", str(tmp_path)]) == 1
    assert "SnapshotError" in capsys.readouterr().err


def test_bad_report_exits_1(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text(json.dumps({"schema": 99}))
    assert main(["report", str(bad), "--out", str(tmp_path)]) == 1
