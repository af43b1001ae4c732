import pytest

from scaf.utils.progress import DONE, ERROR, StageProgress


@pytest.fixture
def tracker():
    return StageProgress()


def _rows(tracker: StageProgress):
    table = tracker._render()
    return [[str(cell) for cell in column._cells] for column in table.columns]


def test_stages_render_in_pipeline_order(tracker):
    tracker.update_status("train", "group 1", "epoch 1/2")
    tracker.update_status("custom_step", None, "running")
    tracker.update_status("split", "group 1", "4 training devices")
    tracker.update_status("align", "group 1", "width 640 -> 512")
    _, stages, targets, statuses, elapsed = _rows(tracker)
    assert stages == ["Split", "DTW alignment", "Training", "Custom Step"]
    assert targets == ["group 1", "group 1", "group 1", ""]
    assert statuses[2] == "epoch 1/2"
    assert all(e.endswith("s") for e in elapsed)


def test_done_freezes_the_clock(tracker):
    tracker.update_status("pca", "512x32", "fitting 8 components")
    tracker.update_status("pca", None, DONE)
    record = tracker.stages["pca"]
    assert record.finished is not None
    assert record.elapsed == record.finished - record.started
    assert record.target == "512x32"


def test_reopened_stage_restarts(tracker):
    tracker.update_status("align", None, DONE)
    first = tracker.stages["align"]
    tracker.update_status("align", "warp 1/10", "")
    assert tracker.stages["align"] is not first
    assert tracker.stages["align"].finished is None


def test_mark_failed_only_touches_unfinished_stages(tracker):
    tracker.update_status("split", None, DONE)
    tracker.update_status("train", "epoch 3/10", "loss 5.1")
    tracker.mark_failed()
    assert tracker.stages["split"].status == DONE
    assert tracker.stages["train"].status == ERROR
    assert tracker.stages["train"].failed
    _, _, _, statuses, _ = _rows(tracker)
    assert statuses == [DONE, ERROR]


def test_updates_recorded_without_live_display(tracker):
    assert not tracker.started
    tracker.update_status("synth", "device 1", "generating 16 traces")
    assert tracker.stages["synth"].status == "generating 16 traces"
    tracker.stop()
    assert not tracker.started
