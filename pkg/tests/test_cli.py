"""End-to-end command-line pipelines over real temp files."""
from __future__ import annotations

import pytest

from beaconseg.cli import main
from beaconseg.evaluate import read_assignments
from beaconseg.ingest import read_corpus, read_histories


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def pipeline_dir(tmp_path, capsys):
    """events + truth + corpus for a small, exactly recoverable planted log."""
    events, truth, corpus = tmp_path / "events.tsv", tmp_path / "truth.tsv", tmp_path / "corpus.tsv"
    code, _, _ = run(
        capsys,
        "gen", "--k", "3", "--users", "120", "--beacons", "30",
        "--events-min", "15", "--events-max", "40",
        "--seed", "1", "--out", str(events), "--truth", str(truth),
    )
    assert code == 0
    code, _, _ = run(
        capsys, "ingest", "--events", str(events), "--out", str(corpus),
        "--window-days", "60", "--now", "1700000000",
    )
    assert code == 0
    return tmp_path


class TestPipeline:
    def test_gen_ingest_train_assign_eval(self, pipeline_dir, capsys):
        model = pipeline_dir / "model.json"
        assigned = pipeline_dir / "assigned.tsv"
        code, out, _ = run(
            capsys,
            "train", "--corpus", str(pipeline_dir / "corpus.tsv"),
            "--out", str(model), "--k", "3", "--seed", "1",
        )
        assert code == 0
        assert "converged=True" in out

        code, _, _ = run(
            capsys,
            "assign", "--model", str(model),
            "--input", str(pipeline_dir / "corpus.tsv"), "--out", str(assigned),
        )
        assert code == 0

        code, out, _ = run(
            capsys,
            "eval", "--predicted", str(assigned), "--truth", str(pipeline_dir / "truth.tsv"),
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "metric,value"
        metrics = dict(line.split(",") for line in lines[1:])
        assert float(metrics["ari"]) == 1.0
        assert float(metrics["purity"]) == 1.0

    def test_assign_preserves_row_count(self, pipeline_dir, capsys):
        model = pipeline_dir / "model.json"
        assigned = pipeline_dir / "assigned.tsv"
        run(capsys, "train", "--corpus", str(pipeline_dir / "corpus.tsv"),
            "--out", str(model), "--k", "3", "--seed", "1")
        run(capsys, "assign", "--model", str(model),
            "--input", str(pipeline_dir / "corpus.tsv"), "--out", str(assigned))
        histories = read_histories(pipeline_dir / "corpus.tsv")
        assignments = read_assignments(assigned)
        assert len(assignments) == len(histories)
        assert set(assignments) == {h.user for h in histories}

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        def run_pipeline(base):
            base.mkdir()
            events, corpus, model = base / "e.tsv", base / "c.tsv", base / "m.json"
            assigned, trace = base / "a.tsv", base / "t.csv"
            run(capsys, "gen", "--k", "2", "--users", "40", "--beacons", "10",
                "--events-min", "5", "--events-max", "15", "--seed", "7",
                "--out", str(events), "--truth", str(base / "truth.tsv"))
            run(capsys, "ingest", "--events", str(events), "--out", str(corpus),
                "--now", "1700000000")
            run(capsys, "train", "--corpus", str(corpus), "--out", str(model),
                "--k", "2", "--seed", "3", "--trace", str(trace))
            run(capsys, "assign", "--model", str(model), "--input", str(corpus),
                "--out", str(assigned))
            return [events, corpus, model, assigned, trace]

        first = run_pipeline(tmp_path / "one")
        second = run_pipeline(tmp_path / "two")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes(), a.name

    def test_threads_flag_does_not_change_the_model_file(self, pipeline_dir, capsys):
        serial, parallel = pipeline_dir / "m1.json", pipeline_dir / "m8.json"
        base = ["train", "--corpus", str(pipeline_dir / "corpus.tsv"),
                "--k", "5", "--seed", "2", "--shards", "64"]
        run(capsys, *base, "--out", str(serial), "--threads", "1")
        run(capsys, *base, "--out", str(parallel), "--threads", "8")
        assert serial.read_bytes() == parallel.read_bytes()


class TestPlsaPath:
    def test_plsa_assigns_training_users_but_refuses_others(self, pipeline_dir, capsys):
        model = pipeline_dir / "plsa.json"
        assigned = pipeline_dir / "assigned.tsv"
        code, _, _ = run(
            capsys,
            "plsa-train", "--corpus", str(pipeline_dir / "corpus.tsv"),
            "--out", str(model), "--k", "3", "--seed", "0", "--max-iters", "40",
        )
        assert code == 0

        code, _, _ = run(capsys, "assign", "--model", str(model),
                         "--input", str(pipeline_dir / "corpus.tsv"), "--out", str(assigned))
        assert code == 0
        assert len(read_assignments(assigned)) == 120

        unseen = pipeline_dir / "unseen.tsv"
        unseen.write_text("stranger\t2\tb00:2\n")
        code, _, err = run(capsys, "assign", "--model", str(model),
                           "--input", str(unseen), "--out", str(pipeline_dir / "nope.tsv"))
        assert code == 1
        assert "cannot score new users" in err

    def test_plsa_eval_matches_truth(self, pipeline_dir, capsys):
        model = pipeline_dir / "plsa.json"
        assigned = pipeline_dir / "assigned.tsv"
        run(capsys, "plsa-train", "--corpus", str(pipeline_dir / "corpus.tsv"),
            "--out", str(model), "--k", "3", "--seed", "0", "--max-iters", "80",
            "--tol", "1e-9")
        run(capsys, "assign", "--model", str(model),
            "--input", str(pipeline_dir / "corpus.tsv"), "--out", str(assigned))
        code, out, _ = run(capsys, "eval", "--predicted", str(assigned),
                           "--truth", str(pipeline_dir / "truth.tsv"))
        assert code == 0
        metrics = dict(line.split(",") for line in out.strip().splitlines()[1:])
        assert float(metrics["ari"]) == 1.0


class TestKmeansPath:
    def test_kmeans_writes_assignments(self, pipeline_dir, capsys):
        assigned = pipeline_dir / "kmeans.tsv"
        code, out, _ = run(capsys, "kmeans", "--corpus", str(pipeline_dir / "corpus.tsv"),
                           "--out", str(assigned), "--seed", "0")
        assert code == 0
        assert len(read_assignments(assigned)) == 120
        code, out, _ = run(capsys, "eval", "--predicted", str(assigned),
                           "--truth", str(pipeline_dir / "truth.tsv"))
        assert code == 0
        assert out.startswith("metric,value")


class TestReportCommand:
    def test_merges_em_and_plsa_traces(self, pipeline_dir, capsys):
        em_trace, plsa_trace = pipeline_dir / "em.csv", pipeline_dir / "plsa.csv"
        run(capsys, "train", "--corpus", str(pipeline_dir / "corpus.tsv"),
            "--out", str(pipeline_dir / "m.json"), "--k", "3", "--seed", "1",
            "--trace", str(em_trace))
        run(capsys, "plsa-train", "--corpus", str(pipeline_dir / "corpus.tsv"),
            "--out", str(pipeline_dir / "p.json"), "--k", "3", "--seed", "0",
            "--max-iters", "20", "--trace", str(plsa_trace))
        code, out, _ = run(capsys, "report",
                           "--trace", f"em={em_trace}", "--trace", f"plsa={plsa_trace}")
        assert code == 0
        header = out.splitlines()[0].split(",")
        assert header == ["iter", "em", "em_nondecreasing", "plsa", "plsa_nondecreasing"]
        # classic pLSA is provably monotone; every flag in its column is true
        plsa_flags = {line.split(",")[4] for line in out.splitlines()[1:] if line.split(",")[3]}
        assert plsa_flags == {"true"}

    def test_bare_path_uses_file_stem(self, tmp_path, capsys):
        trace = tmp_path / "mytrace.csv"
        trace.write_text("iter,log_objective\n1,-2.0\n")
        code, out, _ = run(capsys, "report", "--trace", str(trace))
        assert code == 0
        assert out.splitlines()[0].startswith("iter,mytrace,")

    def test_duplicate_label_fails(self, tmp_path, capsys):
        trace = tmp_path / "t.csv"
        trace.write_text("iter,log_objective\n1,-2.0\n")
        code, _, err = run(capsys, "report", "--trace", f"x={trace}", "--trace", f"x={trace}")
        assert code == 1
        assert "duplicate trace label" in err

    def test_report_out_file(self, tmp_path, capsys):
        trace = tmp_path / "t.csv"
        trace.write_text("iter,log_objective\n1,-2.0\n2,-1.0\n")
        out_path = tmp_path / "report.csv"
        code, out, _ = run(capsys, "report", "--trace", f"t={trace}", "--out", str(out_path))
        assert code == 0
        assert out == ""
        assert out_path.read_text() == "iter,t,t_nondecreasing\n1,-2.0,true\n2,-1.0,true\n"


class TestErrorHandling:
    def test_train_rejects_k_zero(self, pipeline_dir, capsys):
        code, _, err = run(capsys, "train", "--corpus", str(pipeline_dir / "corpus.tsv"),
                           "--out", str(pipeline_dir / "m.json"), "--k", "0", "--seed", "1")
        assert code == 1
        assert err.startswith("error:")

    def test_missing_seed_is_a_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["gen", "--k", "2", "--users", "5", "--beacons", "4",
                  "--out", str(tmp_path / "e.tsv"), "--truth", str(tmp_path / "t.tsv")])
        assert excinfo.value.code == 2

    def test_unknown_command_is_a_usage_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["frobnicate"])
        assert excinfo.value.code == 2

    def test_sampling_without_seed_fails(self, pipeline_dir, capsys):
        code, _, err = run(capsys, "ingest", "--events", str(pipeline_dir / "events.tsv"),
                           "--out", str(pipeline_dir / "c2.tsv"), "--filter",
                           "--sample-beacons", "5")
        assert code == 1
        assert "--seed is required" in err

    def test_missing_input_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--corpus", str(tmp_path / "absent.tsv"),
                           "--out", str(tmp_path / "m.json"), "--k", "2", "--seed", "0")
        assert code == 1
        assert err.startswith("error:")

    def test_eval_on_mismatched_user_sets(self, tmp_path, capsys):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        a.write_text("u1\t0\n")
        b.write_text("u2\t0\n")
        code, _, err = run(capsys, "eval", "--predicted", str(a), "--truth", str(b))
        assert code == 1
        assert "user sets differ" in err


class TestIngestOptions:
    def test_now_defaults_to_latest_event(self, tmp_path, capsys):
        events = tmp_path / "e.tsv"
        # Two events 10 days apart, both long before the epoch "today".
        events.write_text("864000\tu1\tb1\n1728000\tu2\tb2\n")
        corpus_path = tmp_path / "c.tsv"
        code, _, _ = run(capsys, "ingest", "--events", str(events),
                         "--out", str(corpus_path), "--window-days", "60")
        assert code == 0
        assert read_corpus(corpus_path).n_users == 2

    def test_explicit_now_prunes_old_events(self, tmp_path, capsys):
        events = tmp_path / "e.tsv"
        events.write_text("864000\tu1\tb1\n90720000\tu2\tb2\n")
        corpus_path = tmp_path / "c.tsv"
        code, _, _ = run(capsys, "ingest", "--events", str(events),
                         "--out", str(corpus_path), "--window-days", "60",
                         "--now", "90720000")
        assert code == 0
        assert read_corpus(corpus_path).users == ["u2"]

    def test_lenient_skips_malformed_lines(self, tmp_path, capsys):
        events = tmp_path / "e.tsv"
        events.write_text("notanumber\tu1\tb1\n100\tu2\tb2\n")
        corpus_path = tmp_path / "c.tsv"
        code, _, _ = run(capsys, "ingest", "--events", str(events),
                         "--out", str(corpus_path), "--lenient")
        assert code == 0
        assert read_corpus(corpus_path).users == ["u2"]

        code, _, err = run(capsys, "ingest", "--events", str(events),
                           "--out", str(corpus_path))
        assert code == 1
        assert "line 1" in err

    def test_filter_drops_head_beacons(self, pipeline_dir, capsys):
        corpus_path = pipeline_dir / "filtered.tsv"
        code, _, _ = run(capsys, "ingest", "--events", str(pipeline_dir / "events.tsv"),
                         "--out", str(corpus_path), "--now", "1700000000",
                         "--filter", "--min-users", "2", "--max-user-fraction", "0.9")
        assert code == 0
        filtered = read_corpus(corpus_path)
        original = read_corpus(pipeline_dir / "corpus.tsv")
        assert filtered.n_beacons <= original.n_beacons

    def test_eval_out_file_matches_stdout(self, pipeline_dir, capsys):
        model = pipeline_dir / "m.json"
        assigned = pipeline_dir / "a.tsv"
        run(capsys, "train", "--corpus", str(pipeline_dir / "corpus.tsv"),
            "--out", str(model), "--k", "3", "--seed", "1")
        run(capsys, "assign", "--model", str(model),
            "--input", str(pipeline_dir / "corpus.tsv"), "--out", str(assigned))
        metrics_path = pipeline_dir / "metrics.csv"
        code, out, _ = run(capsys, "eval", "--predicted", str(assigned),
                           "--truth", str(pipeline_dir / "truth.tsv"),
                           "--out", str(metrics_path))
        assert code == 0
        assert metrics_path.read_text() == out
