import numpy as np
import pytest

from vlmguard.errormap import export_error_map, compute_error_map, load_image
from vlmguard.harness.cli import main
from vlmguard.harness.fixtures import make_suite, write_suite


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("suite")
    write_suite(make_suite(4, 4, 4, seed=5), d)
    return d


def test_gen_fixtures(tmp_path, capsys):
    assert main(["gen-fixtures", "--out", str(tmp_path), "--n-clean", "1", "--n-global", "1", "--n-patch", "1",
                 "--size", "64"]) == 0
    assert len((tmp_path / "manifest.tsv").read_text().splitlines()) == 3
    assert len(list(tmp_path.glob("*.png"))) == 3


def test_detect_images(suite_dir, capsys):
    img = suite_dir / "patch_5_000.png"
    assert main(["detect", str(img)]) == 0
    assert "LocalAttack" in capsys.readouterr().out


def test_detect_sequence_and_loss_map(suite_dir, tmp_path, capsys):
    imgs = [str(suite_dir / "clean_5_000.png"), str(suite_dir / "patch_5_001.png")]
    assert main(["detect", "--sequence", *imgs]) == 0
    assert "rep=" + imgs[1] in capsys.readouterr().out
    lm = tmp_path / "m.txt"
    export_error_map(compute_error_map(load_image(imgs[1])), lm)
    assert main(["detect", "--loss-map", str(lm)]) == 0
    assert "LocalAttack" in capsys.readouterr().out


def test_purify(suite_dir, tmp_path):
    out, mask = tmp_path / "p.png", tmp_path / "m.png"
    assert main(["purify", str(suite_dir / "patch_5_000.png"), "--out", str(out), "--mask-out", str(mask)]) == 0
    img = load_image(out)
    # 8-bit PNG stores the 0.5 gray as 128/255
    assert np.sum(np.all(img == 128 / 255, axis=2)) >= 5120 and mask.exists()


def test_eapt(suite_dir, tmp_path, capsys):
    trace = tmp_path / "t.csv"
    assert main(["eapt", str(suite_dir / "global_5_000.png"), "--prompt", "what color is the traffic light ahead",
                 "--trace-out", str(trace)]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    assert last.startswith("what color is the traffic light ahead ") and len(last.split()) == 7 + 7
    assert len(trace.read_text().splitlines()) == 4


def test_run_is_byte_identical(suite_dir, tmp_path):
    outs = []
    for i in range(3):
        d = tmp_path / f"r{i}"
        assert main(["run", str(suite_dir / "manifest.tsv"), "--out", str(d), "--t-s", "5e-5",
                     "--prompt", "what color is the traffic light ahead"]) == 0
        outs.append((d / "report.csv").read_bytes() + (d / "distributions.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert b"GlobalAttack" in outs[0]


def test_evaluate_and_calibrate(suite_dir, tmp_path, capsys):
    d = tmp_path / "r"
    assert main(["run", str(suite_dir / "manifest.tsv"), "--out", str(d), "--t-s", "5e-5"]) == 0
    capsys.readouterr()
    assert main(["evaluate", str(d / "report.csv")]) == 0
    assert "f1_binary," in capsys.readouterr().out
    cfg = tmp_path / "tuned.cfg"
    assert main(["calibrate", str(suite_dir / "manifest.tsv"), "--out", str(cfg), "--grid-cc1", "0.1:0.9:9"]) == 0
    text = cfg.read_text()
    assert "t_s = " in text
    assert main(["detect", "--config", str(cfg), str(suite_dir / "clean_5_000.png")]) == 0
    assert "\tClean\t" in capsys.readouterr().out.splitlines()[-1]


def test_usage_errors(suite_dir, capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["detect", "--no-such-flag"])
    assert exc.value.code == 1
    assert main(["detect"]) == 1
    assert main(["calibrate", str(suite_dir / "manifest.tsv"), "--grid-ts", "a:b"]) == 1


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    assert main(["detect", str(bad)]) == 2
    assert main(["detect", str(tmp_path / "missing.png")]) == 2
    (tmp_path / "m.tsv").write_text("only\ttwo\n")
    assert main(["run", str(tmp_path / "m.tsv"), "--out", str(tmp_path / "o")]) == 2
    assert main(["detect", "--t-s", "-1", str(bad)]) == 2
    lm = tmp_path / "lm.txt"
    lm.write_text("1 2\n3\n")
    assert main(["detect", "--loss-map", str(lm)]) == 2
