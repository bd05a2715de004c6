import json
import subprocess
import sys

import numpy as np
import pytest

from selfverify import synth
from selfverify.cli import main
from selfverify.imageio import write_pnm


@pytest.fixture
def fixture_image(tmp_path):
    img, _ = synth.image_dataset(1, seed=77)
    d = tmp_path / "one"
    d.mkdir()
    write_pnm(d / "disk.ppm", img[0])
    return d


@pytest.fixture
def own_profile(tmp_path, fixture_image):
    out = tmp_path / "prof"
    assert main(["profile", "--model", "desk_image", "--calib", str(fixture_image),
                 "--out", str(out), "--min-samples", "1"]) == 0
    return out


def test_detect_on_empty_dir_is_a_usage_error(tmp_path, own_profile, capsys):
    (tmp_path / "empty").mkdir()
    capsys.readouterr()
    code = main(["detect", "--model", "desk_image", "--profiles", str(own_profile),
                 "--input", str(tmp_path / "empty")])
    out, err = capsys.readouterr()
    assert code == 1 and out == "" and err


def test_detect_natural_fixture_with_its_own_profile(fixture_image, own_profile, capsys):
    capsys.readouterr()
    code = main(["detect", "--model", "desk_image", "--profiles", str(own_profile),
                 "--input", str(fixture_image / "disk.ppm")])
    lines = capsys.readouterr().out.splitlines()
    assert code == 0 and len(lines) == 1
    rec = json.loads(lines[0])
    assert rec["verdict"] == "natural" and rec["d_semantic"] == 0


def test_detect_exit_two_when_flagged(own_profile, tmp_path):
    other = tmp_path / "other"
    other.mkdir()
    imgs, _ = synth.image_dataset(1, seed=78)
    write_pnm(other / "a.ppm", imgs[0])
    write_pnm(other / "b.ppm", imgs[2])
    code = main(["detect", "--model", "desk_image", "--profiles", str(own_profile),
                 "--input", str(other), "--threshold-semantic", "0",
                 "--out", str(tmp_path / "r.jsonl"), "--dump-saliency", str(tmp_path / "sal")])
    recs = [json.loads(l) for l in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert code == 2 and len(recs) == 2
    assert all(r["verdict"] != "natural" for r in recs)
    assert len(list((tmp_path / "sal").iterdir())) == 2


def test_modality_mismatch_and_bad_flags(own_profile, fixture_image, capsys):
    assert main(["detect", "--model", "desk_audio", "--profiles", str(own_profile),
                 "--input", str(fixture_image)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["detect", "--model", "desk_image"])
    assert exc.value.code == 1
    assert main(["detect", "--model", "nowhere", "--profiles", "x", "--input", "y"]) == 1


@pytest.mark.parametrize("channels", [1, 3])
def test_visualize_writes_one_file_per_channel(tmp_path, channels):
    out = tmp_path / "vis"
    assert main(["visualize", "--model", "desk_image", "--out", str(out),
                 "--channels", str(channels), "--steps", "4"]) == 0
    patterns = sorted(p.name for p in out.iterdir() if p.suffix in (".ppm", ".pgm"))
    assert len(patterns) == channels
    sidecar = (out / "activations.txt").read_text()
    assert sidecar.count("mean_activation") == channels + 1


def test_end_to_end_pipeline(tmp_path, capsys):
    nat = tmp_path / "nat"
    assert main(["synth", "--modality", "image", "--per-class", "6", "--seed", "3",
                 "--out", str(nat)]) == 0
    assert main(["profile", "--model", "desk_image", "--calib", str(nat), "--out",
                 str(tmp_path / "p"), "--min-samples", "2", "--alpha", "0.5",
                 "--pattern-size", "32"]) == 0
    assert main(["attack", "--model", "desk_image", "--carriers", str(nat), "--out",
                 str(tmp_path / "adv"), "--groups", "2", "--group-size", "3", "--steps", "10"]) == 0
    assert main(["attack", "--model", "desk_image", "--carriers", str(nat), "--out",
                 str(tmp_path / "noise"), "--kind", "fgsm,bim", "--epsilons", "0.05"]) == 0
    for attacks in ("adv", "noise"):
        ev = tmp_path / f"ev_{attacks}"
        assert main(["evaluate", "--model", "desk_image", "--profiles", str(tmp_path / "p"),
                     "--naturals", str(nat), "--attacks", str(tmp_path / attacks), "--out", str(ev),
                     "--grid", "0:1:0.1", "--include-failed", "--workers", "1"]) == 0
        summary = json.loads((ev / "summary.json").read_text())
        recs = [json.loads(l) for l in (ev / "reports.jsonl").read_text().splitlines()]
        assert summary["counts"]["natural"] == 30
        assert summary["counts"]["adversarial"] == sum(r["truth"] == "adversarial" for r in recs)
        assert len(summary["grid"]) == 11
    # naturals cannot pose as attacks
    assert main(["evaluate", "--model", "desk_image", "--profiles", str(tmp_path / "p"),
                 "--naturals", str(nat), "--attacks", str(nat), "--out", str(tmp_path / "bad")]) == 1


def test_audio_synth_raw_and_ingest(tmp_path):
    raw = tmp_path / "wav"
    assert main(["synth", "--modality", "audio", "--per-class", "1", "--raw", "--out", str(raw)]) == 0
    assert len(list(raw.rglob("*.wav"))) == 6
    assert main(["profile", "--model", "desk_audio", "--calib", str(raw), "--out",
                 str(tmp_path / "p"), "--min-samples", "1"]) == 0
    code = main(["detect", "--model", "desk_audio", "--profiles", str(tmp_path / "p"),
                 "--input", str(raw), "--out", str(tmp_path / "r.jsonl")])
    assert code in (0, 2)
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 6


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "selfverify.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("profile", "detect", "attack", "evaluate", "visualize"):
        assert cmd in res.stdout
