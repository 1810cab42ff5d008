"""End-to-end runs of the `topsel` command through main(argv)."""

import json

import numpy as np
import pytest

import topsel as ts
from topsel.cli import main, parse_grid, parse_p_values
from topsel.errors import ParameterError


# ---------------------------------------------------------------------------
# flag grammars
# ---------------------------------------------------------------------------


def test_parse_p_values_forms():
    assert parse_p_values("3") == (3,)
    assert parse_p_values("1,2,5") == (1, 2, 5)
    assert parse_p_values("1..10") == tuple(range(1, 11))
    assert parse_p_values(" 4 ") == (4,)
    for bad in ("x", "5..2", "0", "", "1,0", "2..x"):
        with pytest.raises(ParameterError):
            parse_p_values(bad)


def test_parse_grid_forms():
    assert parse_grid("20x20") == (20, 20)
    assert parse_grid("8X4") == (8, 4)
    for bad in ("20", "axb", "0x5", "3x4x5"):
        with pytest.raises(ParameterError):
            parse_grid(bad)


# ---------------------------------------------------------------------------
# shared workspace
# ---------------------------------------------------------------------------


@pytest.fixture()
def ws(tmp_path):
    """Deployment, model file, and trace logs for a short noisy run."""
    rng = np.random.default_rng(2)
    area = ts.Rect(0.0, 0.0, 30.0, 30.0)
    dmap = ts.DeploymentMap(
        tuple(ts.Location(*rng.uniform(2.0, 28.0, 2)) for _ in range(5)), area
    )
    model = ts.PropagationModel(
        tuple(ts.LogLinearModel(-40.0 - i, 2.0 + 0.1 * i, 0.8) for i in range(dmap.s))
    )
    path = ts.waypoint_trajectory(
        ts.TrajectorySpec(
            waypoints=(ts.Location(4.0, 4.0), ts.Location(26.0, 22.0)),
            speed=4.0,
            tick=0.25,
        )
    )
    frames = [
        ts.sample_measurements(model, dmap, loc, seed=t, t=t) for t, loc in path
    ]
    deploy = tmp_path / "deploy.json"
    ts.save_deployment(dmap, deploy)
    model_path = tmp_path / "model.json"
    ts.save_model(model, model_path)
    traces, truth = tmp_path / "traces.csv", tmp_path / "truth.csv"
    ts.write_traces(frames, traces, truth)
    return dict(
        tmp=tmp_path, dmap=dmap, model=model, deploy=str(deploy),
        model_path=str(model_path), traces=str(traces), truth=str(truth),
        n_frames=len(frames),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def test_fit_loglinear_roundtrip(ws, capsys):
    out = str(ws["tmp"] / "fit.json")
    rc = main([
        "fit", "--traces", ws["traces"], "--truth", ws["truth"],
        "--deploy", ws["deploy"], "--model", "loglinear", "--out", out,
    ])
    text = capsys.readouterr().out
    assert rc == 0
    assert f"frames: {ws['n_frames']} used, 0 dropped" in text
    assert "sensor 0: p0=" in text and f"model written to {out}" in text
    fitted = ts.load_model(out)
    for got, want in zip(fitted.entries, ws["model"].entries):
        assert got.p0 == pytest.approx(want.p0, abs=1.5)
        assert got.eta == pytest.approx(want.eta, abs=0.5)


def test_fit_spline_family(ws, capsys):
    out = str(ws["tmp"] / "spl.json")
    rc = main([
        "fit", "--traces", ws["traces"], "--truth", ws["truth"],
        "--deploy", ws["deploy"], "--model", "spline", "--bins", "3",
        "--out", out,
    ])
    assert rc == 0
    assert "spline L=3" in capsys.readouterr().out
    fitted = ts.load_model(out)
    assert all(isinstance(e, ts.SplineModel) for e in fitted.entries)


def test_errorprob_stdout_and_file_match(ws, capsys, tmp_path):
    argv = [
        "errorprob", "--deploy", ws["deploy"], "--sigma", "0.5",
        "--p", "1,2", "--grid", "6x6",
    ]
    rc = main(argv)
    shown = capsys.readouterr().out
    out = str(tmp_path / "ep.csv")
    rc2 = main(argv + ["--out", out])
    capsys.readouterr()
    assert rc == rc2 == 0
    body = open(out, encoding="utf-8").read()
    assert shown == body
    lines = body.splitlines()
    assert lines[0] == "p,p_error,uncertainty,method"
    assert len(lines) == 3
    for line in lines[1:]:
        p, perr, unc, method = line.split(",")
        assert method == "quadrature"
        assert 0.0 <= float(perr) <= 1.0


def test_errorprob_model_noise_and_methods_agree(ws, capsys):
    rc = main([
        "errorprob", "--deploy", ws["deploy"], "--model", ws["model_path"],
        "--p", "2", "--grid", "6x6", "--method", "both",
        "--trials", "40000", "--seed", "3",
    ])
    text = capsys.readouterr().out
    assert rc == 0
    rows = [l.split(",") for l in text.splitlines()[1:]]
    assert [r[3] for r in rows] == ["quadrature", "orthant-mc"]
    quad, orth = float(rows[0][1]), float(rows[1][1])
    se = float(rows[1][2])
    assert abs(quad - orth) <= 4.0 * se


def test_errorprob_empirical_method(ws, capsys):
    rc = main([
        "errorprob", "--deploy", ws["deploy"], "--sigma", "1.0",
        "--p", "1", "--grid", "5x5", "--method", "empirical-mc",
        "--trials", "20000",
    ])
    text = capsys.readouterr().out
    assert rc == 0
    assert text.splitlines()[1].endswith("empirical-mc")


def test_run_subcommand_and_seed_override(ws, capsys):
    spec_path = ws["tmp"] / "spec.json"
    spec_path.write_text(json.dumps({
        "scenario": "accuracy-vs-p",
        "seed": 5,
        "n_sensors": 6,
        "grid": [5, 5],
        "p": [1, 2],
        "sigma_tilde": [0.5],
    }))
    out_dir = ws["tmp"] / "results"
    rc = main(["run", "--spec", str(spec_path), "--out", str(out_dir)])
    assert rc == 0
    assert "wrote" in capsys.readouterr().out
    table = open(out_dir / "accuracy-vs-p.csv").read().splitlines()
    assert len(table) == 3
    manifest = json.load(open(out_dir / "manifest.json"))
    assert manifest["seed"] == 5
    rc = main([
        "run", "--spec", str(spec_path), "--out", str(out_dir), "--seed", "9",
    ])
    capsys.readouterr()
    assert rc == 0
    assert json.load(open(out_dir / "manifest.json"))["seed"] == 9


def test_ingest_check_reports(ws, capsys):
    rc = main([
        "ingest-check", "--traces", ws["traces"], "--truth", ws["truth"],
        "--deploy", ws["deploy"],
    ])
    text = capsys.readouterr().out
    assert rc == 0
    assert f"frames emitted: {ws['n_frames']}" in text
    assert "dropped incomplete: 0" in text
    assert "targets per frame: 1" in text


# ---------------------------------------------------------------------------
# failure modes
# ---------------------------------------------------------------------------


def test_missing_file_exits_2(ws, capsys):
    rc = main([
        "errorprob", "--deploy", str(ws["tmp"] / "absent.json"),
        "--sigma", "0.5", "--p", "1",
    ])
    err = capsys.readouterr().err
    assert rc == 2
    assert "cannot open" in err


def test_bad_p_exits_2(ws, capsys):
    rc = main(["errorprob", "--deploy", ws["deploy"], "--sigma", "0.5", "--p", "0"])
    assert rc == 2
    assert "topsel:" in capsys.readouterr().err


def test_p_beyond_sensor_count_exits_2(ws, capsys):
    rc = main(["errorprob", "--deploy", ws["deploy"], "--sigma", "0.5", "--p", "9"])
    assert rc == 2
    assert "exceeds" in capsys.readouterr().err


def test_sigma_and_model_are_exclusive(ws, capsys):
    both = main([
        "errorprob", "--deploy", ws["deploy"], "--sigma", "0.5",
        "--model", ws["model_path"], "--p", "1",
    ])
    assert both == 2
    assert "exactly one" in capsys.readouterr().err
    neither = main(["errorprob", "--deploy", ws["deploy"], "--p", "1"])
    assert neither == 2


def test_negative_sigma_exits_2(ws, capsys):
    rc = main(["errorprob", "--deploy", ws["deploy"], "--sigma", "-1", "--p", "1"])
    assert rc == 2
    capsys.readouterr()


def test_bad_threads_env_exits_2(ws, capsys, monkeypatch):
    monkeypatch.setenv("TOPSEL_THREADS", "lots")
    rc = main(["errorprob", "--deploy", ws["deploy"], "--sigma", "0.5", "--p", "1"])
    assert rc == 2
    assert "TOPSEL_THREADS" in capsys.readouterr().err


def test_thread_cap_flag_accepted(ws, capsys):
    rc = main([
        "--threads", "1", "errorprob", "--deploy", ws["deploy"],
        "--sigma", "0.5", "--p", "1", "--grid", "4x4",
    ])
    assert rc == 0
    capsys.readouterr()


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["--help"])
    assert ei.value.code == 0
    text = capsys.readouterr().out
    for word in ("fit", "errorprob", "run", "ingest-check", "--threads"):
        assert word in text
