"""CLI contract: exit codes, error JSON, artifact outputs."""

import json

import numpy as np
import pytest

from seizgraph.cli import dispatch

SPEC = {
    "n_recordings": 8,
    "duration_sec": 60.0,
    "seizure_rate": 1.2,
    "focal_fraction": 0.5,
    "snr": 4.0,
    "class_bands": {"foc": [5.0, 9.0], "gen": [18.0, 24.0]},
    "seed": 3,
}


@pytest.fixture()
def corpus(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(SPEC))
    assert dispatch(["synth", "--spec", str(spec_path), "--out", str(tmp_path / "corpus")]) == 0
    return tmp_path


def test_unknown_preset_exit_2_with_error_json(tmp_path, capsys):
    code = dispatch(["--preset", "never-heard-of-it", "synth", "--spec", "x", "--out", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["type"] == "PresetError"
    assert "never-heard-of-it" in err["error"]["message"]


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"learning_rate_typo": 1}}))
    code = dispatch(["--config", str(cfg), "synth", "--spec", "x", "--out", str(tmp_path)])
    assert code == 2


def test_missing_file_is_config_error(tmp_path):
    assert dispatch(["synth", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_synth_writes_declared_outputs(corpus):
    out = corpus / "corpus"
    assert (out / "corpus.json").exists()
    recs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert len(recs) == 8
    for name in ("manifest.json", "signal.bin", "annotations.json"):
        assert (out / recs[0] / name).exists()


def test_preprocess_then_graph_correlation(corpus, tmp_path):
    clips = corpus / "clips.bin"
    stats = corpus / "stats.json"
    assert dispatch([
        "preprocess", "--in", str(corpus / "corpus"), "--task", "detect",
        "--clip-len", "12", "--out", str(clips), "--stats", str(stats),
    ]) == 0
    out = corpus / "graph.json"
    assert dispatch([
        "graph", "--mode", "correlation", "--tau", "3",
        "--clip", f"{clips}#0", "--stats", str(stats), "--out", str(out),
    ]) == 0
    payload = json.loads(out.read_text())
    assert payload["directed"] is True
    assert len(payload["nodes"]) == 19
    assert len(payload["weights"]) == 19 * 19
    w = np.array(payload["weights"]).reshape(19, 19)
    assert np.allclose(np.diag(w), 1.0)
    # each row keeps at most tau off-diagonal edges
    assert ((w > 0).sum(axis=1) <= 4).all()


def test_graph_distance_modes(corpus):
    for mode, extra in (("distance", ["--kappa", "0.9"]), ("distance-bandwidth", ["--bandwidth", "0.06"])):
        out = corpus / f"{mode}.json"
        assert dispatch(["graph", "--mode", mode, *extra, "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["directed"] is False
        assert len(payload["coords"]) == 19


def test_correlation_graph_requires_clip(corpus):
    assert dispatch(["graph", "--mode", "correlation", "--out", str(corpus / "g.json")]) == 2


def test_train_eval_interpret_pipeline(corpus):
    clips = corpus / "clips.bin"
    assert dispatch([
        "preprocess", "--in", str(corpus / "corpus"), "--task", "detect",
        "--clip-len", "12", "--out", str(clips),
    ]) == 0
    weights = corpus / "w.bin"
    report = corpus / "train.json"
    assert dispatch([
        "--seed", "4", "--preset", "smoke", "train", "--task", "detect",
        "--clips", str(clips), "--out", str(weights), "--report", str(report),
    ]) == 0
    payload = json.loads(report.read_text())
    assert payload["threshold"] is not None
    assert payload["config"]["model"]["hidden"] == 16

    eval_report = corpus / "eval.json"
    assert dispatch([
        "eval", "--weights", str(weights), "--clips", str(clips),
        "--threshold", "auto", "--report", str(eval_report),
    ]) == 0
    metrics = json.loads(eval_report.read_text())
    for key in ("auroc", "aupr", "f1", "sensitivity", "specificity", "threshold"):
        assert key in metrics

    fixed_report = corpus / "eval_fixed.json"
    assert dispatch([
        "eval", "--weights", str(weights), "--clips", str(clips),
        "--threshold", "0.5", "--report", str(fixed_report),
    ]) == 0
    assert json.loads(fixed_report.read_text())["threshold"] == 0.5

    maps_dir = corpus / "maps"
    assert dispatch([
        "interpret", "--weights", str(weights), "--clips", str(clips),
        "--task", "detect", "--out", str(maps_dir), "--limit", "3",
    ]) == 0
    assert (maps_dir / "summary.json").exists()
    assert (maps_dir / "clip00000.json").exists()
    assert (maps_dir / "clip00000.svg").exists()

    threaded_dir = corpus / "maps_threaded"
    assert dispatch([
        "--threads", "2", "interpret", "--weights", str(weights),
        "--clips", str(clips), "--task", "detect", "--out", str(threaded_dir),
        "--limit", "3",
    ]) == 0
    assert (threaded_dir / "summary.json").read_bytes() == (maps_dir / "summary.json").read_bytes()


def test_paper_preset_echoes_published_hyperparameters(corpus):
    clips = corpus / "clips.bin"
    assert dispatch([
        "preprocess", "--in", str(corpus / "corpus"), "--task", "detect",
        "--clip-len", "12", "--out", str(clips),
    ]) == 0
    cfg = corpus / "override.json"
    cfg.write_text(json.dumps({"train": {"epochs_max": 1}, "model": {"hidden": 4, "layers": 1}}))
    report = corpus / "report.json"
    assert dispatch([
        "--seed", "1", "--preset", "paper-detect-12s", "--config", str(cfg),
        "train", "--task", "detect", "--clips", str(clips),
        "--out", str(corpus / "w.bin"), "--report", str(report),
    ]) == 0
    payload = json.loads(report.read_text())["config"]
    assert payload["train"]["lr_init"] == 1e-4
    assert payload["train"]["batch_size"] == 40
    assert payload["train"]["patience"] == 5
    assert payload["train"]["undersample"] is True
    assert payload["graph"]["kappa"] == 0.9
    assert payload["graph"]["tau"] == 3
    assert payload["model"]["k_hops"] == 2
    assert payload["model"]["dropout_head"] == 0.0
    # the override took effect without touching the preset's other values
    assert payload["model"]["hidden"] == 4


def test_paper_presets_carry_exact_recipes():
    from seizgraph.presets import get_preset

    detect = get_preset("paper-detect-12s")
    assert detect["train"]["epochs_max"] == 100
    assert detect["train"]["lr_init"] == 1e-4
    classify = get_preset("paper-classify-60s")
    assert classify["train"]["epochs_max"] == 60
    assert classify["train"]["lr_init"] == 3e-4
    assert classify["model"]["dropout_head"] == 0.5
    pretrain = get_preset("paper-pretrain-12s")
    assert pretrain["train"]["epochs_max"] == 350
    assert pretrain["train"]["lr_init"] == 5e-4
    assert pretrain["model"]["layers"] == 3
    assert pretrain["model"]["hidden"] == 64
    assert pretrain["model"]["horizon"] == 12
    for name in ("paper-detect-12s", "paper-classify-12s", "paper-pretrain-60s"):
        assert get_preset(name)["train"]["batch_size"] == 40
        assert get_preset(name)["train"]["patience"] == 5


def test_data_dir_env_var(corpus, monkeypatch, tmp_path):
    monkeypatch.setenv("SEIZGRAPH_DATA_DIR", str(corpus))
    out = "env_graph.json"
    assert dispatch(["graph", "--mode", "distance", "--out", out]) == 0
    assert (corpus / out).exists()
