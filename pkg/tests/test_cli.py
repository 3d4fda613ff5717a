import csv
import json

import pytest

from nlma.cli import EXIT_INVALID, EXIT_OK, fmt, main


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_fmt_tokens():
    assert fmt(float("inf")) == "inf"
    assert fmt(float("-inf")) == "-inf"
    assert fmt(0.0) == "0"
    assert fmt(3) == "3"
    assert fmt(0.1) == "0.1"


def test_eval_closed_form(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["eval", "--fn", "smoothcone:a=1", "--s", "1.5", "--dim", "1", "--at", "0",
                 "--out", str(out)]) == EXIT_OK
    (row,) = rows(out)
    assert row["kernel"] == "full"
    assert float(row["value"]) == pytest.approx(4.9441991394691405, rel=0.02)


def test_eval_edge_tokens(tmp_path):
    out = tmp_path / "e.csv"
    main(["eval", "--fn", "maxplanes:P=1,-1", "--box", "10", "--at", "0", "--at", "1", "--out", str(out)])
    assert [r["value"] for r in rows(out)] == ["inf", "0"]
    main(["eval", "--fn", "negcone:a=1", "--box", "10", "--at", "0", "--out", str(out),
          "--json", str(tmp_path / "m.json")])
    assert rows(out)[0]["value"] == "-inf"
    meta = json.loads((tmp_path / "m.json").read_text())
    assert meta["witnesses"] and len(meta["witnesses"][0]["witness"]) == 1


def test_eval_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["eval", "--fn", "smoothcone:a=1,M=2,0.5,0.5,1", "--dim", "2", "--box", "6", "--h", "0.2",
            "--at", "0.4,-0.2", "--kernel", "nearpinned:eps=0.4"]
    main(argv + ["--out", str(a)])
    main(argv + ["--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv,needle", [
    (["eval", "--s", "2.5", "--at", "0"], "--s"),
    (["eval", "--dim", "4", "--at", "0"], "--dim"),
    (["eval", "--at", "0.013"], "grid node"),
    (["eval", "--fn", "bogus:a=1", "--at", "0"], "bogus"),
    (["eval", "--fn", "smoothcone:a=1,=2", "--at", "0"], "'=2'"),
    (["eval", "--kernel", "capped:eps=1", "--at", "0"], "capped"),
    (["eval", "--at", "0", "--h", "0.3", "--box", "1"], "h"),
    (["solve", "--tol", "-1"], "--tol"),
    (["check", "--suites", "nope"], "nope"),
])
def test_validation_errors(tmp_path, capsys, argv, needle):
    timing = tmp_path / "t.log"
    assert main(argv + ["--timing", str(timing)]) == EXIT_INVALID
    assert needle in capsys.readouterr().err
    # nothing numerical ran, so no timing log was written
    assert not timing.exists() or timing.stat().st_size == 0


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--frobnicate"])
    assert exc.value.code == 2


def test_timing_written_on_success(tmp_path):
    timing = tmp_path / "t.log"
    main(["eval", "--at", "0", "--box", "10", "--timing", str(timing), "--out", str(tmp_path / "o.csv")])
    assert timing.read_text().startswith("grid ")


def test_rearrange_and_limit(tmp_path):
    out, meta = tmp_path / "r.csv", tmp_path / "r.json"
    assert main(["rearrange", "--box", "10", "--out", str(out), "--json", str(meta)]) == EXIT_OK
    info = json.loads(meta.read_text())["points"][0]
    assert info["oracle"] == pytest.approx(info["eval_ma"], rel=1e-2)
    assert main(["limit", "--box", "10", "--at", "0.5", "--out", str(out), "--json", str(meta)]) == EXIT_OK
    assert json.loads(meta.read_text())["gaps_decreasing"] is True


def test_demo_dirichlet(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["demo-dirichlet", "--out", str(out)]) == EXIT_OK
    assert rows(out)[0]["verdict"] == "no-solution-witness"


def test_check_subset(tmp_path, capsys):
    assert main(["check", "--suites", "sign,multiplier", "--seed", "7"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "sign: 50/50 passed" in text


def test_solve_exports_barrier(tmp_path):
    out, bar, meta = tmp_path / "log.csv", tmp_path / "w.txt", tmp_path / "s.json"
    code = main(["solve", "--box", "25.575", "--h", "0.05", "--out", str(out),
                 "--barrier-out", str(bar), "--json", str(meta)])
    assert code == EXIT_OK
    header = out.read_text().splitlines()[0]
    assert header == "iter,eps,tau,sup_residual,c11,min_gap_lower,min_gap_upper"
    tail = [ln for ln in bar.read_text().splitlines() if ln.startswith("tail ")]
    assert len(tail) == 1 and len(tail[0].split()) == 3
    cert = json.loads(meta.read_text())["certificate"]
    assert cert["converged"] and cert["sandwich"]


def test_solve_not_converged_exit_3(tmp_path):
    code = main(["solve", "--box", "25.575", "--h", "0.05", "--max-iters", "1",
                 "--out", str(tmp_path / "log.csv")])
    assert code == 3
