import numpy as np
import pytest

from scaf.data.cache import get_cache
from scaf.data.models import DeviceProfile, LeakageModel, SynthConfig
from scaf.data.traces import TraceMatrix
from scaf.synth.generator import make_device_profiles, synth_dataset


@pytest.fixture(autouse=True)
def clear_trace_cache():
    get_cache().clear()
    yield
    get_cache().clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def hw_profile() -> DeviceProfile:
    return DeviceProfile(device_id=1, leak_positions=[10, 20], leak_strength=1.0)


@pytest.fixture
def hw_noiseless(hw_profile) -> TraceMatrix:
    """Noiseless HW leakage at samples 10 and 20, zero background, 4 traces per key."""
    cfg = SynthConfig(
        n_traces_per_device=1024,
        trace_length=40,
        devices=[hw_profile],
        background_amplitude=0.0,
    )
    return synth_dataset(cfg)


@pytest.fixture
def small_devices() -> TraceMatrix:
    """3 devices x 512 traces x 64 samples of per-bit leakage with mild device variation."""
    profiles = make_device_profiles(
        3,
        trace_length=64,
        leak_positions=[8, 30],
        noise_sigma=0.2,
        gain_spread=0.02,
        batch_offset_spread=0.1,
        offset_jitter=0.02,
        seed=3,
    )
    cfg = SynthConfig(
        n_traces_per_device=512,
        trace_length=64,
        devices=profiles,
        leakage_model=LeakageModel.BITS,
        background_amplitude=2.0,
        seed=3,
    )
    return synth_dataset(cfg)


def labelled(samples, keys=None, devices=None) -> TraceMatrix:
    samples = np.asarray(samples, dtype=np.float64)
    return TraceMatrix.from_samples(samples, key_bytes=keys, device_ids=devices)
