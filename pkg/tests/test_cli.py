import json
import pytest
from main import main
from schemas.evaluation import EvalSummary
from services.report_service import ABLATION_FILE
from utils.run_files import FREE_CONTAINER, OBSTACLE_CONTAINER, ROI_FILE, RUN_CONFIG_FILE, SEGMENTS_CONTAINER, decision_name, scores_name

FAST_FLOW = ["--epochs", "10", "--blocks", "1", "--hidden-width", "16", "--hidden-layers", "2", "--batch-size", "64"]


@pytest.fixture
def blobs(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--scenario", "blobs", "--seed", "3", "--out", str(data), "--n-reference", "300", "--n-images", "3"]) == 0
    return data


def fit(data, out, kind):
    extra = FAST_FLOW if kind == "flow" else ["--K", "2"] if kind == "gmm" else []
    return main([
        "fit", "--kind", kind, "--free", str(data / FREE_CONTAINER), "--obstacle", str(data / OBSTACLE_CONTAINER),
        "--out", str(out), *extra,
    ])


def predict(data, model, out, *extra):
    return main([
        "predict", "--manifest", str(model), "--segments", str(data / SEGMENTS_CONTAINER), "--out", str(out),
        "--roi", str(data / ROI_FILE), "--gt-dir", str(data / "gt"), *extra,
    ])


@pytest.mark.parametrize("kind", ["gmm", "flow", "knn"])
def test_synth_fit_predict_eval(blobs, tmp_path, kind):
    model, pred = tmp_path / "model", tmp_path / "pred"
    assert fit(blobs, model, kind) == 0
    assert (model / "manifest.json").exists()
    assert predict(blobs, model, pred, "--threads", "2") == 0
    for image_id in range(3):
        assert (pred / decision_name(image_id)).exists() and (pred / scores_name(image_id)).exists()
    assert main(["eval", "--pred-dir", str(pred), "--gt-dir", str(blobs / "gt")]) == 0

    summary = EvalSummary.model_validate_json((pred / "eval" / "report.json").read_text())
    assert len(summary.images) == 3
    assert summary.aggregate.mean_f1 >= 0.95
    assert summary.aggregate.ap >= 0.95
    assert (pred / "eval" / "report.txt").read_text().startswith("   image")


def test_runs_are_byte_reproducible(blobs, tmp_path):
    for name in ("a", "b"):
        assert fit(blobs, tmp_path / name / "model", "flow") == 0
        assert predict(blobs, tmp_path / name / "model", tmp_path / name / "pred") == 0
    for relative in ("model/manifest.json", "model/free_model.json", "model/obstacle_model.json",
                     f"pred/{decision_name(0)}", f"pred/{scores_name(0)}"):
        assert (tmp_path / "a" / relative).read_bytes() == (tmp_path / "b" / relative).read_bytes()


def test_run_config_is_echoed(blobs, tmp_path):
    assert fit(blobs, tmp_path / "model", "gmm") == 0
    echoed = json.loads((tmp_path / "model" / RUN_CONFIG_FILE).read_text())
    assert echoed["command"] == "fit" and echoed["kind"] == "gmm"
    assert echoed["estimator"]["gmm"]["components"] == 2
    synth_echo = json.loads((blobs / RUN_CONFIG_FILE).read_text())
    assert synth_echo["seed"] == 3 and synth_echo["synth"]["n_images"] == 3


def test_too_few_points_exits_with_data_error(blobs, tmp_path):
    code = main([
        "fit", "--kind", "gmm", "--free", str(blobs / FREE_CONTAINER), "--obstacle", str(blobs / OBSTACLE_CONTAINER),
        "--out", str(tmp_path / "model"), "--K", "5000",
    ])
    assert code == 3


def test_unknown_scenario_exits_with_data_error(tmp_path):
    assert main(["synth", "--scenario", "spirals", "--out", str(tmp_path)]) == 3


def test_missing_input_file(tmp_path):
    assert main([
        "fit", "--kind", "knn", "--free", str(tmp_path / "nope.lrsf"), "--obstacle", str(tmp_path / "nope.lrsf"),
        "--out", str(tmp_path / "model"),
    ]) == 3


def test_invalid_hyperparameter_is_a_usage_error(blobs, tmp_path):
    code = main([
        "fit", "--kind", "gmm", "--free", str(blobs / FREE_CONTAINER), "--obstacle", str(blobs / OBSTACLE_CONTAINER),
        "--out", str(tmp_path / "model"), "--K", "0",
    ])
    assert code == 2


def test_bad_arguments():
    with pytest.raises(SystemExit) as excinfo:
        main(["eval", "--pred-dir", "x", "--gt-dir", "y", "--threshold-grid", "0.5,2"])
    assert excinfo.value.code == 2


def test_eval_without_predictions_for_ground_truth(blobs, tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--pred-dir", str(tmp_path / "empty"), "--gt-dir", str(blobs / "gt")]) == 3


def test_report(blobs, tmp_path):
    out = tmp_path / "report"
    code = main([
        "report", "--free", str(blobs / FREE_CONTAINER), "--obstacle", str(blobs / OBSTACLE_CONTAINER),
        "--out", str(out), "--kind", "gmm", "--kind", "knn", "--K", "2", "--grid-size", "20",
    ])
    assert code == 0
    for kind in ("gmm", "knn"):
        for panel in ("free", "obstacle", "ratio"):
            assert (out / f"{kind}_{panel}.svg").read_text().lstrip().startswith("<?xml")
    ablation = json.loads((out / ABLATION_FILE).read_text())
    assert set(ablation) == {"gmm", "knn"}
    assert ablation["gmm"]["lr"] >= 0.99
    assert ablation["gmm"]["lr"] >= ablation["gmm"]["neg_log_p_free"] - 1e-12


def test_report_needs_two_dimensional_features(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--scenario", "blobs", "--out", str(data), "--dim", "3", "--n-reference", "50", "--n-images", "1"]) == 0
    code = main([
        "report", "--free", str(data / FREE_CONTAINER), "--obstacle", str(data / OBSTACLE_CONTAINER),
        "--out", str(tmp_path / "report"), "--kind", "knn",
    ])
    assert code == 3
