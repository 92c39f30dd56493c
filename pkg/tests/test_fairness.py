import numpy as np
import pytest

from cslearn.core import DomainError, LoadError
from cslearn.fairness import (ExperimentConfig, PreprocessSpec, evaluate_metrics, load_and_preprocess,
                              make_fair_problem, read_table, run_experiment, synth_generate,
                              synth_spec, write_synth)
from cslearn.models import LinearKind, Parameterization

TOY_SPEC = PreprocessSpec(("age",), ("job",), "sex", "income", positive=">50K")
TOY_TRAIN = """age,job,sex,income
20,a,F,<=50K
30,b,M,>50K
40,a,M,>50K
50,b,F,<=50K
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_toy_layout(tmp_path):
    train = _write(tmp_path, "train.csv", TOY_TRAIN)
    test = _write(tmp_path, "test.csv", "age,job,sex,income\n35,c,M,>50K\n")
    tr, te, spec = load_and_preprocess(train, test, TOY_SPEC)
    assert spec.dimension == 4 and tr.dimension == 4
    assert tr.protected_slot == 3
    std = np.std([20, 30, 40, 50])
    np.testing.assert_allclose(tr.X[:, 0], (np.array([20, 30, 40, 50]) - 35) / std)
    np.testing.assert_array_equal(tr.X[:, 1:3], [[1, 0], [0, 1], [1, 0], [0, 1]])
    # "F" sorts first, so it is group A.
    np.testing.assert_array_equal(tr.X[:, 3], [1, 0, 0, 1])
    np.testing.assert_array_equal(tr.y, [0, 1, 1, 0])
    # Unseen category "c" is an all-zero block; test uses training statistics.
    np.testing.assert_array_equal(te.X[0], [0.0, 0.0, 0.0, 0.0])


def test_explicit_group_a(tmp_path):
    train = _write(tmp_path, "train.csv", TOY_TRAIN)
    spec = PreprocessSpec(("age",), ("job",), "sex", "income", positive=">50K", group_a="M")
    tr, _, fitted = load_and_preprocess(train, train, spec)
    assert fitted.groups == ("M", "F")
    np.testing.assert_array_equal(tr.X[:, 3], [0, 1, 1, 0])


def test_constant_numeric_maps_to_zero(tmp_path):
    text = "age,job,sex,income\n" + "".join(f"7,a,{'FM'[k % 2]},>50K\n" for k in range(4))
    tr, _, _ = load_and_preprocess(_write(tmp_path, "t.csv", text), None, TOY_SPEC)
    assert np.all(tr.X[:, 0] == 0.0)


def test_non_binary_protected(tmp_path):
    text = TOY_TRAIN + "60,a,X,>50K\n"
    with pytest.raises(LoadError, match="binary"):
        load_and_preprocess(_write(tmp_path, "t.csv", text), None, TOY_SPEC)


def test_malformed_rows(tmp_path):
    with pytest.raises(LoadError, match="row 3"):
        read_table(_write(tmp_path, "a.csv", "age,job\n1,a\n2\n"))
    bad = TOY_TRAIN.replace("30,b", "thirty,b")
    with pytest.raises(LoadError, match="row 3"):
        load_and_preprocess(_write(tmp_path, "b.csv", bad), None, TOY_SPEC)
    c_path = _write(tmp_path, "c.csv", "age,sex,income\n1,F,0\n2,M,1\n")
    with pytest.raises(LoadError, match="missing"):
        load_and_preprocess(c_path, c_path, TOY_SPEC)


def test_seeded_split(tmp_path):
    tr_text, _ = synth_generate(50, 10, seed=1)
    path = _write(tmp_path, "all.csv", tr_text)
    a = load_and_preprocess(path, None, synth_spec(), seed=3)
    b = load_and_preprocess(path, None, synth_spec(), seed=3)
    c = load_and_preprocess(path, None, synth_spec(), seed=4)
    assert len(a[0]) == 40 and len(a[1]) == 10
    assert np.array_equal(a[0].X, b[0].X)
    assert not np.array_equal(a[0].X, c[0].X)


def test_fair_problem_domain():
    problem = make_fair_problem(0.01)
    assert problem.constraints[0].name == "fairness_kl"
    assert problem.constraints[0].paired
    for bad in (0.0, -1.0, float("inf")):
        with pytest.raises(DomainError):
            make_fair_problem(bad)


def test_metrics_by_hand(tmp_path):
    train = _write(tmp_path, "train.csv", TOY_TRAIN)
    tr, _, _ = load_and_preprocess(train, train, TOY_SPEC)
    # Score = 0.5 + 0.3 * slot: every sample flips between A and B.
    flip = Parameterization(LinearKind(), 4, [0, 0, 0, 0.3, 0.45])
    m = evaluate_metrics(flip, tr)
    assert m.fairness == 0.0
    # predicts positive exactly for A (= F rows), which are the negatives
    assert m.accuracy == 0.0
    stable = Parameterization(LinearKind(), 4, [1.0, 0, 0, 0, 0.5])
    m = evaluate_metrics(stable, tr)
    assert m.fairness == 1.0 and m.accuracy == 0.5


def test_synth_deterministic_and_shaped(tmp_path):
    a = synth_generate(30, 20, d_numeric=3, seed=5)
    assert a == synth_generate(30, 20, d_numeric=3, seed=5)
    assert a != synth_generate(30, 20, d_numeric=3, seed=6)
    tr, te = write_synth(tmp_path, 30, 20, d_numeric=3, seed=5)
    header, rows = read_table(tr)
    assert header == ["num_0", "num_1", "num_2", "group", "z", "y"]
    assert len(rows) == 30 and len(read_table(te)[1]) == 20
    with pytest.raises(DomainError):
        synth_generate(5, 20)


def test_small_experiment_outputs(tmp_path):
    tr, te = write_synth(tmp_path / "data", 200, 100, seed=2)
    cfg = ExperimentConfig(str(tr), str(te), hidden=4, epochs=5, inner_steps=2, epsilon=0.01, vc_dim=10)
    result = run_experiment(cfg, tmp_path / "out")
    out = tmp_path / "out"
    for name in ("unconstrained.csv", "constrained.csv", "report.txt"):
        assert (out / name).exists()
    report = (out / "report.txt").read_text()
    assert "fairness_delta = " in report and "[certificate]" in report
    assert result.certificate.lambda_l1 == pytest.approx(result.final_lambda)
    assert len(result.constrained) == 5
    assert result.unconstrained.column("lambda_0").tolist() == [0.0] * 5


def test_experiment_without_certificate_inputs(tmp_path):
    tr, te = write_synth(tmp_path, 100, 50, seed=2)
    result = run_experiment(ExperimentConfig(str(tr), str(te), hidden=2, epochs=1, inner_steps=1))
    assert result.certificate is None
    assert "not computed" in result.report()
