import numpy as np
import pytest

from scaf.data.cache import get_cache
from scaf.data.io import load_traces, manifest_path, read_manifest, read_traces, write_traces
from scaf.data.models import SplitSpec
from scaf.data.traces import TraceMatrix, as_trace, filter_devices, merge, shuffled, split, split_indices
from scaf.errors import DimensionError, EmptyInputError, InsufficientDataError, RangeError, TraceFormatError


def test_from_samples_defaults_labels():
    traces = TraceMatrix.from_samples(np.zeros((3, 5)))
    assert traces.shape == (3, 5)
    assert traces.key_bytes.tolist() == [0, 0, 0]
    assert traces.device_ids.tolist() == [1, 1, 1]
    assert traces.label(2).device_id == 1


def test_trace_matrix_is_read_only_copy():
    raw = np.ones((2, 4))
    traces = TraceMatrix.from_samples(raw)
    raw[0, 0] = 5.0
    assert traces.samples[0, 0] == 1.0
    with pytest.raises(ValueError):
        traces.samples[0, 0] = 2.0


@pytest.mark.parametrize(
    "samples, error",
    [
        (np.zeros((0, 4)), EmptyInputError),
        (np.zeros(4), DimensionError),
        (np.array([[0.0, np.nan]]), RangeError),
    ],
)
def test_trace_matrix_rejects_bad_samples(samples, error):
    with pytest.raises(error):
        TraceMatrix.from_samples(samples)


def test_label_ranges_checked():
    with pytest.raises(RangeError):
        TraceMatrix.from_samples(np.zeros((2, 3)), key_bytes=[0, 256])
    with pytest.raises(RangeError):
        TraceMatrix.from_samples(np.zeros((2, 3)), device_ids=[0, 1])
    with pytest.raises(DimensionError):
        TraceMatrix.from_samples(np.zeros((2, 3)), key_bytes=[1])


def test_as_trace_validation():
    assert as_trace([1, 2, 3]).dtype == np.float64
    with pytest.raises(EmptyInputError):
        as_trace([])
    with pytest.raises(RangeError):
        as_trace([1.0, np.inf])


def test_merge_keeps_order_and_device_labels():
    a = TraceMatrix.from_samples(np.zeros((2, 3)), device_ids=[1, 1])
    b = TraceMatrix.from_samples(np.ones((3, 3)), device_ids=[2, 2, 2])
    merged = merge([a, b])
    assert merged.n_traces == 5
    assert merged.device_ids.tolist() == [1, 1, 2, 2, 2]
    assert merged.devices() == [1, 2]
    np.testing.assert_array_equal(filter_devices(merged, [2]).samples, b.samples)


def test_merge_errors():
    with pytest.raises(EmptyInputError):
        merge([])
    with pytest.raises(DimensionError):
        merge([TraceMatrix.from_samples(np.zeros((1, 3))), TraceMatrix.from_samples(np.zeros((1, 4)))])


def test_filter_devices_without_match():
    with pytest.raises(EmptyInputError):
        filter_devices(TraceMatrix.from_samples(np.zeros((2, 2))), [7])


def test_shuffled_is_a_seeded_permutation():
    traces = TraceMatrix.from_samples(np.arange(20.0).reshape(10, 2), key_bytes=range(10))
    a, b = shuffled(traces, 5), shuffled(traces, 5)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert sorted(a.key_bytes.tolist()) == list(range(10))


def test_split_is_stratified_and_disjoint():
    keys = np.repeat(np.arange(4), 10)
    traces = TraceMatrix.from_samples(np.arange(80.0).reshape(40, 2), key_bytes=keys)
    train_idx, test_idx = split_indices(traces, SplitSpec(train_fraction=0.8, seed=1))
    assert len(train_idx) == 32 and len(test_idx) == 8
    assert set(train_idx).isdisjoint(test_idx)
    assert np.bincount(keys[train_idx]).tolist() == [8, 8, 8, 8]


def test_split_rejects_empty_partition():
    traces = TraceMatrix.from_samples(np.zeros((1, 3)))
    with pytest.raises(InsufficientDataError):
        split(traces, SplitSpec(train_fraction=0.5))


def test_write_read_traces(tmp_path, small_devices):
    path = write_traces(tmp_path / "set.scaf", small_devices, {"leakage_model": "bits", "max_shift": 0})
    loaded = read_traces(path)
    np.testing.assert_array_equal(loaded.samples, small_devices.samples)
    np.testing.assert_array_equal(loaded.key_bytes, small_devices.key_bytes)
    np.testing.assert_array_equal(loaded.device_ids, small_devices.device_ids)

    manifest = read_manifest(path)
    assert manifest["n_traces"] == str(small_devices.n_traces)
    assert manifest["devices"] == "1,2,3"
    assert manifest["leakage_model"] == "bits"
    assert manifest_path(path).exists()


def test_load_traces_uses_cache(tmp_path):
    traces = TraceMatrix.from_samples(np.ones((2, 3)))
    path = write_traces(tmp_path / "a.scaf", traces)
    first = load_traces(path)
    assert load_traces(path) is first
    assert len(get_cache()) == 1


def test_read_traces_format_errors(tmp_path):
    traces = TraceMatrix.from_samples(np.ones((2, 3)))
    path = write_traces(tmp_path / "a.scaf", traces)
    data = path.read_bytes()

    (tmp_path / "short.scaf").write_bytes(data[:6])
    with pytest.raises(TraceFormatError):
        read_traces(tmp_path / "short.scaf")

    (tmp_path / "magic.scaf").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(TraceFormatError, match="magic"):
        read_traces(tmp_path / "magic.scaf")

    (tmp_path / "version.scaf").write_bytes(data[:4] + (9).to_bytes(2, "little") + data[6:])
    with pytest.raises(TraceFormatError, match="version"):
        read_traces(tmp_path / "version.scaf")

    (tmp_path / "trunc.scaf").write_bytes(data[:-1])
    with pytest.raises(TraceFormatError):
        read_traces(tmp_path / "trunc.scaf")
