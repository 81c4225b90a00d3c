import csv
import json
import time

import pytest

import oracle_kinematics as oracle
from strokenet import cli, training
from strokenet.core import read_recordings
from strokenet.evaluation import RESULTS_SCHEMA, aggregate_folds, results_dict

TOY = ["generator.n_ad=10", "generator.n_hc=10", "generator.tasks=1-4", "model.cells=gru", "model.hidden=8",
       "model.embed_dim=8", "training.epochs=5", "training.ws=10", "training.stride=5", "grid.ws=10,20",
       "grid.stride=1,5"]


def run(outdir, *argv, overrides=TOY):
    args = list(argv) + ["-o", str(outdir)]
    for o in overrides:
        args += ["--set", o]
    return cli.main(args)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    t0 = time.perf_counter()
    codes = [run(out, v) for v in ("generate", "extract", "tss")]
    t1 = time.perf_counter()
    codes.append(run(out, "train", "--model", "gru"))
    train_seconds = time.perf_counter() - t1
    codes += [run(out, "evaluate", "--model", "gru"), run(out, "ensemble")]
    return out, codes, train_seconds, t1 - t0


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_pipeline_exit_codes_and_budget(pipeline):
    _, codes, train_seconds, _ = pipeline
    assert codes == [0] * 6
    assert train_seconds < 300


def test_generate_counts_and_checksum(pipeline, tmp_path):
    out = pipeline[0]
    assert len(_rows(out / "subjects.csv")) == 21
    recs = read_recordings(out / "recordings.csv")
    assert len(recs) == 20 * 4
    assert run(tmp_path, "generate") == 0
    for name in ("subjects.csv", "recordings.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_default_task_list_gives_34_recordings_per_subject(tmp_path):
    assert run(tmp_path, "generate", overrides=["generator.n_ad=1", "generator.n_hc=1",
                                                "generator.strokes_per_task=2,3"]) == 0
    assert len(read_recordings(tmp_path / "recordings.csv")) == 2 * 34


def test_extract_rows_match_strokes_and_oracle(pipeline):
    out = pipeline[0]
    recs = read_recordings(out / "recordings.csv")
    rows = _rows(out / "features.csv")
    assert len(rows) - 1 == sum(len(r.strokes) for r in recs)
    assert len(rows[0]) == 3 + 27  # subject, task, stroke keys
    want = oracle.task_matrix(recs[5])
    got = [list(map(float, r[3:])) for r in rows[1:] if r[0] == recs[5].subject_id and int(r[1]) == recs[5].task_id]
    assert len(got) == len(want)
    for g, w in zip(got, want):
        for a, b in zip(g, w):
            assert abs(a - b) <= 1e-9 * max(1.0, abs(b))


def test_tss_surface(pipeline):
    rows = _rows(pipeline[0] / "tss_surface.csv")
    assert len(rows) == 1 + 4
    for r in rows[1:]:
        d, a, rr, e, t = map(float, r[2:])
        assert t == d + a - rr + e


def test_train_artifacts_and_evaluate_equality(pipeline):
    out = pipeline[0]
    res = json.loads((out / "results" / "gru_ws10_s5.json").read_text())
    assert res["schema"] == RESULTS_SCHEMA and len(res["per_fold"]) == 5
    for k in range(5):
        assert (out / "checkpoints" / f"gru_ws10_s5_fold{k}.snck").exists()
        assert _rows(out / "logs" / f"gru_ws10_s5_fold{k}.csv")[0] == ["step", "split", "loss", "f1", "lr",
                                                                        "grad_norm"]
    ev = json.loads((out / "evaluation" / "gru_ws10_s5.json").read_text())
    assert ev == res


def test_train_rerun_is_byte_identical(pipeline, tmp_path):
    out = pipeline[0]
    for name in ("subjects.csv", "features.csv"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    assert run(tmp_path, "train", "--model", "gru") == 0
    assert run(tmp_path, "ensemble") == 0
    for name in ("gru_ws10_s5.json", "ensemble_ranking.json", "ensemble_stacking.json"):
        assert (tmp_path / "results" / name).read_bytes() == (out / "results" / name).read_bytes()


def test_compare_sorts_and_reports_advantage(pipeline, capsys):
    out = pipeline[0]
    assert run(out, "compare") == 0
    summary = json.loads((out / "comparison.json").read_text())
    accs = [r["mean"]["accuracy"] for r in summary["rows"]]
    assert accs == sorted(accs, reverse=True)
    assert len(summary["rows"]) == 5
    ens = max(r["mean"]["accuracy"] for r in summary["rows"] if r["family"] == "ensemble")
    rec = max(r["mean"]["accuracy"] for r in summary["rows"] if r["family"] == "recurrent")
    assert summary["ensemble_advantage"] == pytest.approx(ens - rec)
    assert "ensemble advantage" in capsys.readouterr().out


def test_compare_two_inputs_two_rows(pipeline, tmp_path):
    res = pipeline[0] / "results"
    assert run(tmp_path, "compare", str(res / "ensemble_mv.json"), str(res / "gru_ws10_s5.json")) == 0
    assert len((tmp_path / "comparison.txt").read_text().splitlines()) == 3


def _row(model, acc, std=1.0):
    m = {"accuracy": acc, "sensitivity": acc, "specificity": acc, "f1": acc}
    report = aggregate_folds([m, m])
    out = results_dict(model, None, None, report)
    out["std"]["accuracy"] = std
    return out


def test_sort_is_stable_on_ties():
    rows = [_row("a", 70.0), _row("b", 80.0), _row("c", 70.0), _row("d", 80.0)]
    assert [r["model"] for r in cli.sort_by_accuracy(rows)] == ["b", "d", "a", "c"]


def test_mean_std_formatting(paper_text):
    table = cli.format_table([_row("ranking", 80.18, 6.22)])
    assert "80.18 (6.22)" in table
    assert "80.18" in paper_text


def test_report_roundtrip(pipeline, tmp_path):
    src = pipeline[0] / "results" / "gru_ws10_s5.json"
    dst = tmp_path / "copy.json"
    assert cli.main(["report", str(src), "--output", str(dst)]) == 0
    assert dst.read_bytes() == src.read_bytes()


# -- exit codes ------------------------------------------------------------------------

def test_usage_errors_exit_1(tmp_path, capsys):
    assert run(tmp_path, "generate", overrides=["generator.n_ad=0"]) == 1
    assert "single-class" in capsys.readouterr().err
    assert run(tmp_path, "generate", overrides=["nosuch.key=1"]) == 1
    assert run(tmp_path, "generate", overrides=["generator.bogus=1"]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[extra]\nx = 1\n")
    assert cli.main(["generate", "-c", str(bad), "-o", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    assert run(tmp_path, "compare", str(tmp_path / "only.json")) == 1


def test_data_errors_exit_2(pipeline, tmp_path, capsys):
    assert run(tmp_path, "extract") == 2
    lines = (pipeline[0] / "recordings.csv").read_text().splitlines()
    lines[3] = "garbage,row"
    (tmp_path / "recordings.csv").write_text("\n".join(lines) + "\n")
    assert run(tmp_path, "extract") == 2
    assert "line 4" in capsys.readouterr().err
    res = json.loads((pipeline[0] / "results" / "ensemble_mv.json").read_text())
    res["schema"] = RESULTS_SCHEMA + 1
    (tmp_path / "old.json").write_text(json.dumps(res))
    assert run(tmp_path, "compare", str(tmp_path / "old.json"),
               str(pipeline[0] / "results" / "ensemble_mv.json")) == 2


def test_numerical_failure_exit_3(pipeline, tmp_path, monkeypatch, capsys):
    for name in ("subjects.csv", "features.csv"):
        (tmp_path / name).write_bytes((pipeline[0] / name).read_bytes())
    monkeypatch.setattr(training, "weighted_bce", lambda *a, **k: float("nan"))
    assert run(tmp_path, "train", "--model", "gru") == 3
    assert "numerical failure" in capsys.readouterr().err


def test_config_file_and_override_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[training]\nepochs = 7\nlr = 0.01\n")
    cfg = cli.load_config(ini, ["training.epochs=9"])
    assert cfg.training.epochs == 9 and cfg.training.lr == 0.01
    assert cfg.training.batch_size == 64
    assert cfg.ws_grid == (60, 70, 80) and cfg.stride_grid == (1, 2, 5)
    assert cfg.generator.tasks == tuple(range(1, 35))
