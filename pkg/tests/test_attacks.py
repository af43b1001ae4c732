import numpy as np
import pytest

from scaf.attacks.cpa import accumulated_key_rank, correlations, cpa, hypotheses, key_rank
from scaf.attacks.diagnostics import device_mean_traces, device_outliers, device_summary, outlier_count
from scaf.attacks.dom import dom_poi, dom_scores
from scaf.attacks.groups import form_groups, leave_one_out_groups
from scaf.attacks.templates import (
    confusion_matrix,
    fit_templates,
    template_accuracy,
    template_classify,
    template_ellipses,
    template_log_likelihoods,
)
from scaf.data.models import DeviceProfile, SynthConfig
from scaf.data.traces import TraceMatrix
from scaf.errors import InsufficientClassesError, InsufficientDataError, RangeError
from scaf.synth.aes import HW_TABLE, SBOX
from scaf.synth.generator import synth_dataset


##### Difference of means #####


def test_dom_two_class_toy():
    samples = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 5.0], [3.0, 1.0, 5.0], [3.0, 1.0, 5.0]])
    traces = TraceMatrix.from_samples(samples, key_bytes=[0, 0, 1, 1])
    np.testing.assert_allclose(dom_scores(traces), [3.0, 1.0, 0.0])
    pois = dom_poi(traces, 2)
    assert pois.indices.tolist() == [0, 1]
    assert pois.scores.tolist() == [3.0, 1.0]


def test_dom_scores_match_pairwise_sum():
    rng = np.random.default_rng(0)
    traces = TraceMatrix.from_samples(rng.normal(size=(60, 5)), key_bytes=rng.integers(0, 6, 60))
    classes = np.unique(traces.key_bytes)
    means = np.array([traces.samples[traces.key_bytes == c].mean(axis=0) for c in classes])
    expected = sum(np.abs(means[a] - means[b]) for a in range(len(classes)) for b in range(a + 1, len(classes)))
    np.testing.assert_allclose(dom_scores(traces), expected)

    shifted = traces.with_samples(traces.samples + 7.0)
    np.testing.assert_allclose(dom_scores(shifted), dom_scores(traces))


def test_dom_ties_go_to_lower_index():
    traces = TraceMatrix.from_samples([[0.0, 0.0], [1.0, 1.0]], key_bytes=[0, 1])
    assert dom_poi(traces, 1).indices.tolist() == [0]


def test_dom_needs_two_classes():
    with pytest.raises(InsufficientClassesError):
        dom_poi(TraceMatrix.from_samples(np.zeros((3, 4))))
    with pytest.raises(RangeError):
        dom_poi(TraceMatrix.from_samples(np.zeros((3, 4)), key_bytes=[0, 1, 2]), 5)


@pytest.mark.parametrize("seed", range(20))
def test_dom_finds_leak_positions(seed):
    profile = DeviceProfile(device_id=1, noise_sigma=0.5, leak_positions=[16, 25])
    cfg = SynthConfig(n_traces_per_device=2560, trace_length=64, devices=[profile], seed=seed)
    assert sorted(dom_poi(synth_dataset(cfg), 2).indices.tolist()) == [16, 25]


##### Templates #####


def test_noiseless_templates_confuse_only_equal_hw_classes(hw_noiseless):
    pois = dom_poi(hw_noiseless, 2)
    templates = fit_templates(hw_noiseless, pois)
    assert len(templates) == 256

    predicted = template_classify(templates, hw_noiseless)
    true_hw = HW_TABLE[SBOX[hw_noiseless.key_bytes]]
    np.testing.assert_array_equal(HW_TABLE[SBOX[predicted]], true_hw)

    # SBox outputs 0x00 and 0xFF are alone in their HW class
    unique_hw = np.isin(true_hw, [0, 8])
    np.testing.assert_array_equal(predicted[unique_hw], hw_noiseless.key_bytes[unique_hw])

    confusion = confusion_matrix(hw_noiseless.key_bytes, predicted, classes=range(256))
    assert confusion.values.sum() == hw_noiseless.n_traces
    for true_key, pred_key in zip(*np.nonzero(confusion.values)):
        assert HW_TABLE[SBOX[true_key]] == HW_TABLE[SBOX[pred_key]]


def test_template_density_at_mean():
    rng = np.random.default_rng(1)
    traces = TraceMatrix.from_samples(rng.normal(size=(40, 3)), key_bytes=[0, 1] * 20)
    templates = fit_templates(traces, [0, 2])
    t = templates[1]
    expected = -np.log(2 * np.pi * np.sqrt(np.linalg.det(t.cov)))
    assert t.log_pdf(t.mean)[0] == pytest.approx(expected)


def test_template_classify_single_vector_and_shift_invariance():
    rng = np.random.default_rng(2)
    samples = np.concatenate([rng.normal(0.0, 1.0, (30, 2)), rng.normal(5.0, 1.0, (30, 2))])
    traces = TraceMatrix.from_samples(samples, key_bytes=[3] * 30 + [9] * 30)
    templates = fit_templates(traces, [0, 1])
    assert template_classify(templates, np.array([5.0, 5.0])) == 9
    assert template_classify(templates, np.array([0.0, 0.0])) == 3

    ll = template_log_likelihoods(templates, traces)
    assert ll.shape == (60, 2)
    assert np.array_equal(np.argmax(ll, axis=1), np.argmax(ll + 123.0, axis=1))
    assert template_accuracy(templates, traces) > 0.95


def test_templates_need_enough_traces_per_class():
    traces = TraceMatrix.from_samples(np.random.default_rng(3).normal(size=(4, 3)), key_bytes=[0, 0, 1, 1])
    with pytest.raises(InsufficientDataError):
        fit_templates(traces, [0, 1])


def test_confusion_matrix_layout():
    frame = confusion_matrix(np.array([1, 1, 2]), np.array([1, 2, 2]))
    assert frame.index.name == "true"
    assert frame.columns.name == "predicted"
    assert frame.loc[1, 2] == 1
    assert frame.loc[2, 2] == 1


def test_template_ellipses_follow_covariance():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(500, 2)) * [3.0, 1.0]
    traces = TraceMatrix.from_samples(x, key_bytes=[0] * 250 + [1] * 250)
    ellipses = template_ellipses(fit_templates(traces, [0, 1])[0], levels=(1.0, 2.0))
    assert [e.level for e in ellipses] == [1.0, 2.0]
    assert ellipses[0].width > ellipses[0].height
    assert ellipses[1].width == pytest.approx(2 * ellipses[0].width)


##### CPA #####


def _cpa_set(noise: float, n: int, seed: int, key: int = 0x2B) -> TraceMatrix:
    cfg = SynthConfig(
        n_traces_per_device=n,
        trace_length=32,
        devices=[DeviceProfile(device_id=1, noise_sigma=noise, leak_positions=[9, 20])],
        random_plaintext=True,
        fixed_key_byte=key,
        seed=seed,
    )
    return synth_dataset(cfg)


def test_cpa_noiseless_recovers_key_exactly():
    result = cpa(_cpa_set(0.0, 500, 0))
    assert result.ranking[0] == 0x2B
    assert result.scores[0x2B] == pytest.approx(1.0, abs=1e-9)
    assert result.peaks[0x2B] in (9, 20)
    assert key_rank(result, 0x2B) == 1
    frame = result.to_frame()
    assert list(frame.columns) == ["guess", "score", "sample"]
    assert frame.iloc[0]["guess"] == 0x2B


def test_cpa_noisy_recovers_key():
    ranks = [key_rank(cpa(_cpa_set(0.5, 1000, seed)), 0x2B) for seed in range(20)]
    assert sum(r == 1 for r in ranks) >= 19


def test_cpa_ranking_is_affine_invariant():
    traces = _cpa_set(0.5, 300, 5)
    scaled = traces.with_samples(3.0 * traces.samples - 11.0)
    np.testing.assert_array_equal(cpa(scaled).ranking, cpa(traces).ranking)


def test_correlations_bounded_and_zero_variance_safe():
    h = hypotheses(np.arange(50) % 256)
    x = np.column_stack([np.random.default_rng(6).normal(size=50), np.ones(50)])
    rho = correlations(h, x)
    assert rho.shape == (256, 2)
    assert np.all(np.abs(rho) <= 1.0)
    assert np.all(rho[:, 1] == 0.0)


def test_cpa_errors():
    with pytest.raises(InsufficientDataError):
        cpa(TraceMatrix.from_samples(np.zeros((1, 3))))
    with pytest.raises(RangeError):
        cpa(TraceMatrix.from_samples(np.zeros((2, 3))), plaintext_byte=300)


def test_accumulated_key_rank():
    probs = np.full((3, 256), 1.0 / 256)
    probs[:, 7] = 2.0 / 256
    probs[0, 9] = 3.0 / 256
    ranks = accumulated_key_rank(probs, 7)
    assert ranks.tolist() == [2, 1, 1]


##### Groups #####


def test_form_groups_thirty_devices_in_fours():
    groups = form_groups(4, 30)
    assert [g.index for g in groups] == list(range(1, 8))
    assert groups[0].members == [1, 2, 3, 4]
    assert groups[-1].members == [25, 26, 27, 28]
    flat = [d for g in groups for d in g.members]
    assert flat == list(range(1, 29))


def test_form_groups_maps_device_ids():
    groups = form_groups(2, 4, device_ids=[10, 11, 12, 13])
    assert [g.members for g in groups] == [[10, 11], [12, 13]]
    with pytest.raises(RangeError):
        form_groups(0, 4)
    with pytest.raises(RangeError):
        form_groups(5, 4)


def test_leave_one_out_groups():
    groups = leave_one_out_groups([1, 2, 3])
    assert [g.members for g in groups] == [[2, 3], [1, 3], [1, 2]]
    with pytest.raises(RangeError):
        leave_one_out_groups([1])


##### Diagnostics #####


def _offset_devices(n_devices: int, outlier: int, offset: float) -> TraceMatrix:
    profiles = [
        DeviceProfile(
            device_id=d,
            noise_sigma=0.05,
            offset=offset if d == outlier else 0.0,
            leak_positions=[4],
        )
        for d in range(1, n_devices + 1)
    ]
    cfg = SynthConfig(n_traces_per_device=256, trace_length=20, devices=profiles, background_amplitude=1.0)
    return synth_dataset(cfg)


def test_outlier_device_is_flagged_against_the_others():
    traces = _offset_devices(5, outlier=3, offset=2.0)
    table = device_outliers(traces, exclude_self=True)
    assert table["device_id"].tolist() == [1, 2, 3, 4, 5]
    assert table.loc[table["device_id"] == 3, "outliers"].item() == 20
    assert table.loc[table["device_id"] != 3, "outliers"].max() < 20


def test_outlier_count_with_all_devices():
    ids, means = device_mean_traces(_offset_devices(20, outlier=18, offset=2.0))
    counts = outlier_count(means)
    assert ids.tolist() == list(range(1, 21))
    assert counts[17] == 20
    assert counts.sum() == 20


def test_outlier_count_needs_three_devices():
    with pytest.raises(InsufficientDataError):
        outlier_count(np.zeros((2, 5)))


def test_device_summary(small_devices):
    summary = device_summary(small_devices)
    assert summary["device_id"].tolist() == [1, 2, 3]
    assert np.all(summary["iqr"] == summary["q3"] - summary["q1"])
