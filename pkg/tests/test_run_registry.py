from evaluation import EvalReport
from run_registry import list_runs, record_eval_report, record_train_report
from training_pipeline import TrainReport


def _url(tmp_path):
    return f"sqlite:///{tmp_path / 'runs.db'}"


def test_train_and_eval_runs_are_listed(tmp_path):
    url = _url(tmp_path)
    train = TrainReport(phase="finetune", seed=3, config_hash="abc", epochs_run=2,
                        train_loss=[1.5, 1.2], val_loss=[1.6, None])
    run_id = record_train_report(url, train, "synthetic")
    report = EvalReport(per_video={"v1": 0.5, "v0": 0.25}, mean_f_beta=0.375, beta=1.0, budget=0.15,
                        gt_mode="per_annotator", config_hash="abc", checkpoint_hash="deadbeef")
    eval_id = record_eval_report(url, report, "synthetic", seed=3)
    assert eval_id > run_id

    runs = list_runs(url)
    assert [r["kind"] for r in runs] == ["finetune", "evaluate"]
    assert runs[0]["epochs"] == 2 and runs[0]["videos"] == 0
    assert runs[1]["videos"] == 2 and runs[1]["mean_f_beta"] == 0.375
    assert [r["id"] for r in list_runs(url, kind="evaluate")] == [eval_id]
    assert list_runs(url, kind="ablation") == []
