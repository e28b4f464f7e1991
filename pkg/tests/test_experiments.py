import xml.etree.ElementTree as ET

import numpy as np
import pytest

from anneal_cnn.cli import main
from anneal_cnn.data import write_idx_images, write_idx_labels
from anneal_cnn.errors import DomainError
from anneal_cnn.experiments import (ExperimentConfig, datasize_sizes, make_config, read_config,
                                    run_crossval, run_datasize, run_epochs, run_experiment)
from anneal_cnn.report import read_csv

from conftest import synthetic_dataset


@pytest.fixture(scope="module")
def pools():
    return synthetic_dataset(200, seed=1), synthetic_dataset(30, seed=2)


def test_crossval_row_count_contract(pools):
    train, test = pools
    cfg = ExperimentConfig("crossval", regimes="bp", losses="mse", learning_rates="0.1",
                           train_cap=100)
    table = run_crossval(cfg, train, test)
    assert len(table.data_rows()) == 10 and len(table.summary_rows()) == 1
    mean = table.summary_rows()[0]
    assert mean.val_acc == pytest.approx(np.mean([r.val_acc for r in table.data_rows()]), rel=1e-5)


def test_crossval_is_deterministic(pools):
    train, test = pools
    cfg = ExperimentConfig("crossval", regimes="qa,sa", losses="ce", learning_rates="0.1",
                           train_cap=60, folds=3)
    a = run_crossval(cfg, train, test)
    b = run_crossval(cfg, train, test)
    acc = lambda t: [(r.key(), r.val_acc, r.test_acc) for r in t.rows]
    assert acc(a) == acc(b)
    assert len(a.data_rows()) == 6


def test_epochs_rows(pools):
    train, test = pools
    cfg = ExperimentConfig("epochs", regimes="bp,qa", losses="mse,ce", epochs=3, train_cap=80)
    table = run_epochs(cfg, train, test)
    assert len(table) == 2 * 2 * 3
    for rows in table.series().values():
        idx = [r.index for r in rows]
        assert idx == [1, 2, 3]
        walls = [r.wall_ms for r in rows]
        assert walls == sorted(walls)


def test_datasize_rows_and_caps(pools):
    train, test = pools
    cfg = ExperimentConfig("datasize", regimes="bp", losses="mse,ce", train_cap=100)
    assert datasize_sizes(cfg, len(train)) == (20, 40, 60, 80, 100)
    table = run_datasize(cfg, train, test)
    assert len(table) == 10
    assert sorted({r.index for r in table.rows}) == [20, 40, 60, 80, 100]


def test_datasize_wall_time_grows_with_size():
    train, test = synthetic_dataset(1000, seed=3), synthetic_dataset(20, seed=4)
    cfg = ExperimentConfig("datasize", regimes="bp", losses="ce", train_cap=1000, repeats=3)
    table = run_datasize(cfg, train, test)
    walls = [r.wall_ms for r in table.rows]
    assert all(b >= 0.9 * a for a, b in zip(walls, walls[1:]))


def test_config_validation():
    with pytest.raises(DomainError):
        ExperimentConfig("crossval", regimes="")
    with pytest.raises(DomainError):
        ExperimentConfig("crossval", losses="hinge")
    with pytest.raises(DomainError):
        ExperimentConfig("crossval", learning_rates="0.1,-1")
    with pytest.raises(DomainError):
        ExperimentConfig("sweep")
    cfg = ExperimentConfig("crossval", full=True)
    assert cfg.train_cap is None and cfg.test_cap is None
    assert cfg.lrs == (1.0, 0.1, 0.01) and ExperimentConfig("epochs").n_epochs == 10


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[experiment]\nregimes = bp,qa\nseed = 4\n"
                   "[data]\ntrain_cap = 300\n"
                   "[training]\nbatch_size = 8\nlearning_rates = 0.1, 0.01\n"
                   "[qa]\nqa_reads = 3\n")
    values = read_config(ini)
    cfg = make_config("crossval", values, {"seed": 9, "regimes": None})
    assert cfg.regimes == ("bp", "qa") and cfg.seed == 9
    assert cfg.train_cap == 300 and cfg.batch_size == 8 and cfg.qa_reads == 3
    assert cfg.lrs == (0.1, 0.01)
    ini.write_text("[experiment]\nbogus = 1\n")
    with pytest.raises(DomainError):
        read_config(ini)
    ini.write_text("[nonsense]\nseed = 1\n")
    with pytest.raises(DomainError):
        read_config(ini)


def test_run_experiment_writes_outputs(tmp_path, pools):
    train, test = pools
    cfg = ExperimentConfig("epochs", regimes="bp", losses="ce", epochs=2, train_cap=50,
                           out_dir=str(tmp_path))
    table, paths = run_experiment(cfg, train, test)
    assert read_csv(paths["csv"]) == table
    for key in ("accuracy", "time"):
        ET.parse(paths[key])
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "epochs.csv", "epochs_accuracy.svg", "epochs_time.svg"]


@pytest.fixture
def mnist_fixture(tmp_path):
    d = tmp_path / "mnist"
    d.mkdir()
    tr, te = synthetic_dataset(40, seed=5), synthetic_dataset(10, seed=6)
    write_idx_images(d / "train-images-idx3-ubyte", (tr.images[:, 0] * 255).round())
    write_idx_labels(d / "train-labels-idx1-ubyte", tr.labels)
    write_idx_images(d / "t10k-images-idx3-ubyte", (te.images[:, 0] * 255).round())
    write_idx_labels(d / "t10k-labels-idx1-ubyte", te.labels)
    return d


def test_cli_crossval(tmp_path, mnist_fixture, capsys):
    out = tmp_path / "out"
    rc = main(["crossval", "--data", str(mnist_fixture), "--out", str(out), "--regimes", "bp",
               "--losses", "ce", "--lr", "0.1", "--folds", "4"])
    assert rc == 0
    assert len(read_csv(out / "crossval.csv")) == 5
    ET.parse(out / "crossval_accuracy.svg")
    assert "crossval: 4 data rows, 1 summary rows" in capsys.readouterr().out


def test_cli_error_is_one_line(tmp_path, capsys):
    rc = main(["epochs", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)])
    assert rc != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("anneal-cnn: error:")
    assert main(["crossval", "--regimes", "xx", "--data", str(tmp_path)]) != 0


def test_cli_qubo_dump_and_solve(tmp_path, capsys):
    path = tmp_path / "q.txt"
    assert main(["qubo", "dump", "--residuals", "1,-1,0.5", "--loss", "mse", "-o", str(path)]) == 0
    for sampler in ("sa", "qa", "exact"):
        assert main(["qubo", "solve", str(path), "--reads", "10", "--seed", "1",
                     "--sampler", sampler]) == 0
    outs = capsys.readouterr().out.split("bitstring,energy,occurrences\n")[1:]
    firsts = [o.splitlines()[0].split(",")[:2] for o in outs]
    assert firsts[0] == firsts[1] == firsts[2]
    assert sum(int(line.split(",")[2]) for line in outs[0].splitlines()) == 10
