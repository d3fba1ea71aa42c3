import numpy as np
import pytest

from rramnet import experiments as ex
from rramnet.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, build_parser, main
from rramnet.data import Dataset
from rramnet.device import b_of_k, k_of_b
from rramnet.nn import LinearTransfer, MlpModel, SinhTransfer, accuracy, save_checkpoint
from rramnet.trainer import TrainConfig, new_model


def tiny_linear(seed=0):
    return new_model([16, 12, 8, 10], LinearTransfer(), seed=seed)


def tiny_test_set(n=200, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(0, 1, (n, 16)), rng.integers(0, 10, n), (4, 4, 1))


class TestConfig:
    def test_presets(self):
        assert ex.PRESETS["shallow-mnist"]["paper"] == [784, 500, 250, 10]
        assert ex.PRESETS["deep-mnist"]["paper"] == [784, 2500, 2000, 1500, 1000, 500, 10]
        assert ex.PRESETS["deep-mnist"]["desk"] == [784, 512, 512, 512, 256, 128, 10]
        assert ex.PRESETS["shallow-cifar"]["paper"] == [2352, 4000, 1000, 4000, 10]

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="preset"):
            ex.ExperimentConfig(preset="resnet")

    def test_custom_dims(self):
        cfg = ex.ExperimentConfig(preset="custom", dims=[784, 30, 10])
        assert cfg.layer_dims == [784, 30, 10]

    def test_key_changes_with_training_settings(self):
        a = ex.ExperimentConfig()
        b = ex.ExperimentConfig(train=TrainConfig(seed=1))
        c = ex.ExperimentConfig(out_dir="elsewhere")
        assert a.key() != b.key() and a.key() == c.key()

    def test_make_transfer(self):
        assert ex.make_transfer("sinh", 2.0) == LinearTransfer()
        assert ex.make_transfer("sinh", 7.5) == SinhTransfer(b_of_k(7.5))
        with pytest.raises(ValueError):
            ex.make_transfer("tanh")

    def test_default_schedule_scales_with_b(self):
        lr4 = ex.default_schedule("sinh", 4.0)
        lr2 = ex.default_schedule("sinh", 2.0)
        assert lr4 == ex.BASE_LR["sinh"]
        assert lr2[0] > lr4[0]
        assert ex.default_schedule("linear") == ex.BASE_LR["linear"]

    def test_with_defaults_overrides(self):
        cfg = ex.with_defaults(ex.ExperimentConfig(transfer="linear"), lr_initial=0.3,
                               epochs=None)
        assert cfg.train.lr_initial == 0.3 and cfg.train.epochs == 30
        cifar = ex.with_defaults(ex.ExperimentConfig(preset="shallow-cifar"))
        assert cifar.train.epochs == ex.CIFAR_DESK_EPOCHS

    def test_desk_note(self):
        assert "note" in ex.ExperimentConfig(preset="deep-mnist").meta()
        assert "note" not in ex.ExperimentConfig(preset="shallow-mnist").meta()


class TestSweepNaive:
    def test_rows(self, tmp_path):
        model, ts = tiny_linear(), tiny_test_set()
        rows = ex.cmd_sweep_naive(model, [7.5, 2, 3], ts, tmp_path / "s.csv", seed=4)
        assert [r[0] for r in rows] == [2.0, 3.0, 7.5]
        assert rows[0][1] == accuracy(model, ts)
        assert rows[0][2] == 0.0
        text = (tmp_path / "s.csv").read_text().splitlines()
        assert text[0] == "# seed=4"
        assert "k,accuracy,normalized_loss" in text

    def test_near_linear_device_keeps_predictions(self, tmp_path):
        model, ts = tiny_linear(), tiny_test_set()
        k = k_of_b(1e-6)
        rows = ex.cmd_sweep_naive(model, [k], ts, tmp_path / "s.csv")
        assert rows[0][1] == accuracy(model, ts)

    def test_rejects_sinh_checkpoint(self, tmp_path):
        model = new_model([16, 10], SinhTransfer(2.0))
        with pytest.raises(ValueError, match="linear"):
            ex.cmd_sweep_naive(model, [3], tiny_test_set(), tmp_path / "s.csv")

    def test_reproducible_bytes(self, tmp_path):
        model, ts = tiny_linear(), tiny_test_set()
        ex.cmd_sweep_naive(model, [2, 5, 10], ts, tmp_path / "a.csv")
        ex.cmd_sweep_naive(model, [2, 5, 10], ts, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestHist:
    def test_zero_input(self, tmp_path):
        model = tiny_linear()
        mad = ex.cmd_hist(model, 1, "A", tmp_path, inputs=np.zeros((5, 12)))
        assert mad == 0.0
        rows = ex.read_csv(tmp_path / "hist.csv")
        ideal = [r for r in rows if r["series"] == "ideal"]
        assert len(ideal) == 1 and int(ideal[0]["count"]) == 5 * 8

    def test_mad_larger_for_mid_range_inputs(self, tmp_path):
        model = tiny_linear()
        mad_a = ex.cmd_hist(model, 1, "A", tmp_path / "a", count=2000)
        mad_b = ex.cmd_hist(model, 1, "B", tmp_path / "b", count=2000)
        assert mad_b > mad_a

    def test_fifty_bins(self, tmp_path):
        ex.cmd_hist(tiny_linear(), 0, "B", tmp_path, count=100)
        rows = ex.read_csv(tmp_path / "hist.csv")
        assert sum(r["series"] == "input" for r in rows) == ex.HIST_BINS

    def test_invalid_layer(self, tmp_path):
        with pytest.raises(IndexError):
            ex.cmd_hist(tiny_linear(), 3, "A", tmp_path)

    def test_dataset_source_propagates(self):
        model, ts = tiny_linear(), tiny_test_set()
        x = ex.layer_inputs(model, 1, "dataset", 10, test_set=ts)
        assert x.shape == (10, 12) and x.min() >= 0 and x.max() <= 1


class TestGradcheck:
    @pytest.mark.parametrize("kind", ["linear", "sinh", "complex"])
    def test_passes(self, kind):
        report, ok = ex.cmd_gradcheck(kind)
        assert ok, str(report)


class TestCli:
    def test_gradcheck_exit(self, capsys):
        assert main(["gradcheck", "--transfer", "sinh"]) == EXIT_OK
        assert "PASS" in capsys.readouterr().out

    def test_usage_errors(self, capsys):
        assert main([]) == EXIT_USAGE
        assert main(["train", "--transfer", "tanh"]) == EXIT_USAGE
        assert main(["sweep-naive", "--k-list", "2,x"]) == EXIT_USAGE

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        code = main(["hist", "--checkpoint", str(tmp_path / "none.npz"), "--layer", "0",
                     "--source", "A", "--out", str(tmp_path)])
        assert code == EXIT_DATA

    def test_hist_synthetic(self, tmp_path, capsys):
        ck = save_checkpoint(tiny_linear(), tmp_path / "m.npz")
        code = main(["hist", "--checkpoint", str(ck), "--layer", "1", "--source", "B",
                     "--count", "50", "--out", str(tmp_path / "h")])
        assert code == EXIT_OK
        assert (tmp_path / "h" / "hist.csv").exists()
        assert (tmp_path / "h" / "outputs.csv").exists()

    def test_invalid_layer_is_usage_error(self, tmp_path):
        ck = save_checkpoint(tiny_linear(), tmp_path / "m.npz")
        assert main(["hist", "--checkpoint", str(ck), "--layer", "9", "--source", "A",
                     "--out", str(tmp_path)]) == EXIT_USAGE

    def test_config_file_defaults(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[rramnet]\nseed = 5\nepochs = 3\nk-list = 2,4\n")
        parser = build_parser()
        from rramnet.cli import _apply_config_file
        args = _apply_config_file(parser, ["sweep-naive", "--config", str(ini), "--seed", "9"])
        assert args.seed == 9 and args.epochs == 3 and args.k_list == [2.0, 4.0]

    def test_config_file_unknown_key(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[rramnet]\nmomentum = 0.9\n")
        assert main(["train", "--config", str(ini)]) == EXIT_USAGE

    def test_numerical_exit_code(self, monkeypatch):
        from rramnet import cli

        def broken(*a, **kw):
            raise cli.NumericalError("non-finite loss at epoch 0, batch 0")

        monkeypatch.setattr(cli.experiments, "cmd_train", broken)
        monkeypatch.setattr(cli.experiments, "load_split", lambda *a: None)
        assert main(["train", "--epochs", "1"]) == EXIT_NUMERICAL
