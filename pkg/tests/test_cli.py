import numpy as np
import pytest

from slim3d import cli
from slim3d.masks import causal_mask, load_mask, parse_strategy
from slim3d.oracle import oracle_strategy_mask
from slim3d.scene import TokenLayout, load_layout, load_scene, save_layout


@pytest.fixture
def scene_files(tmp_path):
    scn, lay = tmp_path / "s.scn", tmp_path / "l.lay"
    assert cli.main(["scene", "--seed", "3", "--out", str(scn)]) == 0
    n = load_scene(scn).N
    save_layout(TokenLayout(n_system=2, n_objects=n, tokens_per_object=1, n_instruction=4, n_response=1), lay)
    return scn, lay


def test_mask_geo_inst_writes_file_and_stats(scene_files, tmp_path, capsys):
    scn, lay = scene_files
    out = tmp_path / "m.smk"
    code = cli.main(["mask", "--scene", str(scn), "--layout", str(lay), "--strategy", "geo+inst",
                     "--kmin", "2", "--kmax", "10", "--out", str(out)])
    assert code == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("geo+inst: ") and "density" in line
    assert out.read_text().startswith("SLIMMASK v1 ")


def test_mask_causal_equals_causal_mask(scene_files, tmp_path):
    scn, lay = scene_files
    out = tmp_path / "c.smk"
    assert cli.main(["mask", "--scene", str(scn), "--layout", str(lay), "--strategy", "causal",
                     "--out", str(out)]) == 0
    assert load_mask(out) == causal_mask(load_layout(lay).n)


def test_mask_fixedn_matches_oracle(scene_files, tmp_path):
    scn, lay = scene_files
    out = tmp_path / "f.smk"
    assert cli.main(["mask", "--scene", str(scn), "--layout", str(lay), "--strategy", "fixedn:5",
                     "--out", str(out)]) == 0
    assert load_mask(out) == oracle_strategy_mask(load_scene(scn), load_layout(lay), parse_strategy("fixedn:5"))


def test_stats_reads_mask_back(scene_files, tmp_path, capsys):
    scn, lay = scene_files
    out = tmp_path / "m.smk"
    cli.main(["mask", "--scene", str(scn), "--layout", str(lay), "--out", str(out)])
    first = capsys.readouterr().out.split(": ", 1)[1]
    assert cli.main(["stats", "--mask", str(out), "--layout", str(lay)]) == 0
    assert capsys.readouterr().out == first


@pytest.mark.parametrize("argv", [
    ["mask", "--scene", "missing.scn", "--layout", "missing.lay", "--out", "x"],
    ["nonsense"],
    ["bench", "--sizes", "a,b"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2


def test_bad_strategy_exits_2(scene_files, tmp_path):
    scn, lay = scene_files
    assert cli.main(["mask", "--scene", str(scn), "--layout", str(lay), "--strategy", "window",
                     "--out", str(tmp_path / "x")]) == 2


def test_malformed_scene_exits_2(tmp_path, scene_files, capsys):
    _, lay = scene_files
    bad = tmp_path / "bad.scn"
    bad.write_text("SLIMSCENE v1 1\nA 0 nan 0\n")
    assert cli.main(["mask", "--scene", str(bad), "--layout", str(lay), "--out", str(tmp_path / "x")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_check_passes_and_is_deterministic(tmp_path, capsys):
    args = ["check", "--seed", "7", "--cases", "40"]
    assert cli.main(args) == 0
    first = capsys.readouterr().out
    assert first.rstrip().endswith("all suites passed")
    cli.main(args)
    assert capsys.readouterr().out == first


def test_check_fault_injection_exits_1(capsys):
    assert cli.main(["check", "--cases", "5", "--fault", "inject-grad"]) == 1
    out = capsys.readouterr().out
    assert "l0.Wv[0, 0, 0]" in out and "verification FAILED" in out


def test_bench_csv(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert cli.main(["bench", "--sizes", "32", "--strategies", "geo,full", "--trials", "3",
                     "--warmup", "1", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("N,strategy,object_block_density,dense_seconds,sparse_seconds")
    full = [r for r in rows if ",full," in r][0].split(",")
    assert float(full[2]) == 1.0


def test_ablate_table_shape_and_determinism(tmp_path, capsys):
    out = tmp_path / "a.csv"
    argv = ["ablate", "--seeds", "2", "--steps", "3", "--n-train", "32", "--n-eval", "32", "--out", str(out)]
    assert cli.main(argv) == 0
    text = capsys.readouterr().out
    csv = out.read_text().splitlines()
    assert len(csv) == 1 + 8 * 2
    assert [l.split(",")[0] for l in csv[1::2]] == list(cli.ABLATION_ROWS)
    assert "A0" in text and "D1+I" in text and "±" in text
    assert cli.main(argv) == 0
    assert out.read_text().splitlines() == csv


def test_slim_threads_validation(monkeypatch):
    monkeypatch.setenv("SLIM_THREADS", "0")
    assert cli.main(["ablate", "--seeds", "1", "--strategies", "causal", "--steps", "0"]) == 2
    monkeypatch.setenv("SLIM_THREADS", "2")
    assert cli.slim_threads() == 2

