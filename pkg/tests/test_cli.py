import numpy as np
import pytest

from segres.cli import main
from segres.dataio import load_dataset, load_image_ppm, load_labels_pgm


def run_synth(tmp_path, name="data", count=4, size=8, classes=2, seed=3, extra=()):
    out = tmp_path / name
    code = main(
        [
            "synth",
            "--out",
            str(out),
            "--count",
            str(count),
            "--size",
            str(size),
            "--classes",
            str(classes),
            "--fg-rate",
            "0.3",
            "--seed",
            str(seed),
            *extra,
        ]
    )
    return code, out


def run_train(tmp_path, data, epochs=2, extra=()):
    ckpt = tmp_path / "model.segr"
    hist = tmp_path / "history.csv"
    code = main(
        [
            "train",
            "--data",
            str(data),
            "--epochs",
            str(epochs),
            "--batch",
            "2",
            "--seed",
            "1",
            "--out",
            str(ckpt),
            "--history",
            str(hist),
            *extra,
        ]
    )
    return code, ckpt, hist


class TestSynth:
    def test_writes_dataset(self, tmp_path, capsys):
        code, out = run_synth(tmp_path, count=5)
        assert code == 0
        assert "foreground fraction" in capsys.readouterr().out
        ds = load_dataset(out)
        assert len(ds) == 5 and ds.class_count == 2

    def test_rerun_identical_files(self, tmp_path):
        _, a = run_synth(tmp_path, "a")
        _, b = run_synth(tmp_path, "b")
        for rel in ("images/0000.ppm", "labels/0003.pgm", "meta.txt"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_size_not_divisible_exits_2(self, tmp_path):
        code, _ = run_synth(tmp_path, size=20)
        assert code == 2

    def test_bad_flag_exits_2(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "x"), "--count", "zero"]) == 2


class TestTrain:
    def test_writes_artifacts(self, tmp_path, capsys):
        _, data = run_synth(tmp_path)
        code, ckpt, hist = run_train(tmp_path, data)
        assert code == 0
        assert ckpt.exists() and hist.exists()
        lines = hist.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_miou,seconds"
        assert len(lines) == 3
        assert "final validation mIoU" in capsys.readouterr().out

    def test_table_defaults_when_flags_omitted(self):
        from segres.cli import _build_parser

        parser, _ = _build_parser()
        args = parser.parse_args(
            ["train", "--data", "d", "--out", "o", "--history", "h"]
        )
        assert (args.lr, args.momentum, args.epochs) == (0.1, 0.9, 210)

    def test_beta_out_of_range_exits_2(self, tmp_path):
        _, data = run_synth(tmp_path)
        code, _, _ = run_train(tmp_path, data, extra=("--loss", "bce", "--beta", "1.5"))
        assert code == 2

    def test_missing_dataset_exits_1(self, tmp_path):
        code, _, _ = run_train(tmp_path, tmp_path / "nonexistent")
        assert code == 1


class TestEvalPredict:
    @pytest.fixture()
    def trained(self, tmp_path):
        _, data = run_synth(tmp_path, count=4)
        code, ckpt, _ = run_train(tmp_path, data, epochs=3)
        assert code == 0
        return data, ckpt

    def test_eval_writes_report(self, tmp_path, trained, capsys):
        data, ckpt = trained
        report = tmp_path / "report.txt"
        code = main(["eval", "--data", str(data), "--model", str(ckpt), "--report", str(report)])
        assert code == 0
        assert "mIoU" in capsys.readouterr().out
        lines = report.read_text().strip().splitlines()
        assert lines[-1].startswith("Mean")
        values = [float(line.split()[-1]) for line in lines[:-1]]
        assert abs(float(lines[-1].split()[-1]) - np.mean(values)) < 1e-9

    def test_eval_class_mismatch_exits_1(self, tmp_path, trained):
        _, ckpt = trained
        _, other = run_synth(tmp_path, "other", classes=3)
        code = main(
            ["eval", "--data", str(other), "--model", str(ckpt), "--report", str(tmp_path / "r")]
        )
        assert code == 1

    def test_predict_roundtrip(self, tmp_path, trained):
        data, ckpt = trained
        image = data / "images" / "0000.ppm"
        out1, out2 = tmp_path / "p1.pgm", tmp_path / "p2.pgm"
        color = tmp_path / "overlay.ppm"
        assert main(["predict", "--image", str(image), "--model", str(ckpt), "--out", str(out1), "--color", str(color)]) == 0
        assert main(["predict", "--image", str(image), "--model", str(ckpt), "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        labels = load_labels_pgm(out1)
        src = load_image_ppm(image)
        assert labels.shape == src.shape[1:]
        assert labels.max() < 2
        assert color.exists()

    def test_predict_bad_dimensions_exits_1(self, tmp_path, trained):
        _, ckpt = trained
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P6\n3 3\n255\n" + bytes(27))
        code = main(["predict", "--image", str(bad), "--model", str(ckpt), "--out", str(tmp_path / "o.pgm")])
        assert code == 1


class TestGradcheck:
    def test_default_run_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "conv2d.dx" in out and "network." in out

    def test_single_layer_restriction(self, capsys):
        assert main(["gradcheck", "--layer", "conv2d"]) == 0
        out = capsys.readouterr().out
        assert "conv2d.dw" in out and "batchnorm" not in out

    def test_impossible_tolerance_exits_3(self, capsys):
        assert main(["gradcheck", "--tol", "1e-12"]) == 3


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "synth.cfg"
        cfg.write_text("count = 3\nseed = 9  # comment\n")
        out = tmp_path / "ds"
        code = main(["synth", "--out", str(out), "--size", "8", "--config", str(cfg)])
        assert code == 0
        assert len(load_dataset(out)) == 3

    def test_cli_flag_beats_config(self, tmp_path):
        cfg = tmp_path / "synth.cfg"
        cfg.write_text("count = 3\n")
        out = tmp_path / "ds"
        code = main(["synth", "--out", str(out), "--size", "8", "--count", "2", "--config", str(cfg)])
        assert code == 0
        assert len(load_dataset(out)) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs = 3\n")  # not a synth option
        assert main(["synth", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 2

    def test_malformed_line_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("count 3\n")
        assert main(["synth", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 2


class TestTopLevel:
    def test_no_command_exits_2(self):
        assert main([]) == 2

    def test_version_exits_0(self):
        assert main(["--version"]) == 0
