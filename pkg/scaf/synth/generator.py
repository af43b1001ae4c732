"""Synthetic first-round AES power traces with per-device variation.

A trace is rendered as::

    sample[j] = gain * (background[j] + leak[j]) + offset + drift + noise[j]

where ``leak`` is zero outside the profile's leak positions, ``drift`` is one
draw of N(0, drift_sigma) per trace and ``noise`` is i.i.d. N(0, noise_sigma).
"""

from typing import List, Optional, Sequence, Union

import numpy as np

from scaf.data.models import DeviceProfile, LeakageModel, SynthConfig
from scaf.data.traces import Trace, TraceMatrix, merge
from scaf.errors import ConfigurationError, RangeError
from scaf.synth.aes import HW_TABLE, SBOX
from scaf.utils.progress import progress

RngLike = Union[None, int, Sequence[int], np.random.Generator]

# Sample positions that carry the key byte in a full-length (3000-sample) capture
REFERENCE_LEAK_POSITIONS = (96, 148)
REFERENCE_TRACE_LENGTH = 3000

# Width of the leak written at each position by the per-bit model
BITS_WIDTH = 8


def leak_span(model: LeakageModel) -> int:
    return BITS_WIDTH if LeakageModel(model) == LeakageModel.BITS else 1


def scale_leak_positions(
    positions: Sequence[int],
    to_length: int,
    from_length: int = REFERENCE_TRACE_LENGTH,
) -> List[int]:
    """Map leak positions proportionally onto a trace of a different length."""
    if to_length < 1 or from_length < 1:
        raise RangeError("trace lengths must be >= 1")
    return [min(int(round(p * to_length / from_length)), to_length - 1) for p in positions]


def make_background(
    length: int,
    amplitude: float = 10.0,
    period: int = 4,
    rng: RngLike = None,
) -> Trace:
    """Key-independent clock-like waveform shared by every trace of a dataset.

    A sine carrier of the given period whose per-cycle amplitude is drawn from
    U(0.5, 1.5) * amplitude, on top of a slow wander of 10% amplitude.
    """
    if length < 1:
        raise RangeError("background length must be >= 1")
    if amplitude == 0.0:
        return np.zeros(length, dtype=np.float64)
    rng = np.random.default_rng(rng)
    j = np.arange(length)
    n_cycles = (length + period - 1) // period
    envelope = rng.uniform(0.5, 1.5, n_cycles)[j // period]
    carrier = np.sin(2.0 * np.pi * j / period)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wander = 0.1 * np.sin(2.0 * np.pi * j / (period * 37.0) + phase)
    return amplitude * (envelope * carrier + wander)


def leak_values(
    key_bytes: np.ndarray,
    plaintext_bytes: np.ndarray,
    profile: DeviceProfile,
    trace_length: int,
    model: LeakageModel = LeakageModel.HW,
) -> np.ndarray:
    """M x trace_length leakage matrix (before gain) for the given labels."""
    keys = np.asarray(key_bytes, dtype=np.int64).reshape(-1)
    pts = np.asarray(plaintext_bytes, dtype=np.int64).reshape(-1)
    v = SBOX[np.bitwise_xor(pts, keys)].astype(np.int64)
    leak = np.zeros((keys.size, trace_length), dtype=np.float64)
    for pos in profile.leak_positions:
        if LeakageModel(model) == LeakageModel.HW:
            leak[:, pos] += profile.leak_strength * HW_TABLE[v]
        else:
            for b in range(BITS_WIDTH):
                leak[:, pos + b] += 2.0 * profile.leak_strength * ((v >> b) & 1)
    return leak


def _check_positions(profile: DeviceProfile, trace_length: int, model: LeakageModel) -> None:
    last = max(profile.leak_positions) + leak_span(model) - 1
    if last >= trace_length:
        raise ConfigurationError(
            f"device {profile.device_id}: leak position {last} does not fit "
            f"in traces of length {trace_length}"
        )


def _render(
    key_bytes: np.ndarray,
    plaintext_bytes: np.ndarray,
    profile: DeviceProfile,
    background: np.ndarray,
    model: LeakageModel,
    rng: np.random.Generator,
) -> np.ndarray:
    m, n = len(key_bytes), background.shape[0]
    leak = leak_values(key_bytes, plaintext_bytes, profile, n, model)
    samples = profile.gain * (background[None, :] + leak) + profile.offset
    if profile.drift_sigma > 0:
        samples += rng.normal(0.0, profile.drift_sigma, size=(m, 1))
    if profile.noise_sigma > 0:
        samples += rng.normal(0.0, profile.noise_sigma, size=(m, n))
    return samples


def synth_trace(
    key_byte: int,
    plaintext_byte: int,
    profile: DeviceProfile,
    rng: RngLike = None,
    *,
    trace_length: Optional[int] = None,
    background: Optional[np.ndarray] = None,
    leakage_model: LeakageModel = LeakageModel.HW,
) -> Trace:
    """Render one trace. Without a background the waveform is all zeros."""
    if background is None:
        if trace_length is None:
            raise ConfigurationError("synth_trace needs a trace_length or a background")
        background = np.zeros(trace_length, dtype=np.float64)
    else:
        background = np.asarray(background, dtype=np.float64)
        if trace_length is not None and trace_length != background.shape[0]:
            raise ConfigurationError(
                f"background has {background.shape[0]} samples, trace_length is {trace_length}"
            )
    if not (0 <= key_byte <= 255 and 0 <= plaintext_byte <= 255):
        raise RangeError(f"key/plaintext bytes must be in [0, 255], got {key_byte}, {plaintext_byte}")
    _check_positions(profile, background.shape[0], leakage_model)
    rng = np.random.default_rng(rng)
    return _render(
        np.array([key_byte]), np.array([plaintext_byte]), profile, background, leakage_model, rng
    )[0]


def synth_dataset(cfg: SynthConfig) -> TraceMatrix:
    """Generate every device's traces and merge them in device order.

    Each device draws from its own substream ``default_rng([seed, device_id])``,
    so one device's traces do not depend on which other devices are generated.
    """
    if not cfg.devices:
        raise ConfigurationError("synth config lists no devices")
    ids = [d.device_id for d in cfg.devices]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"duplicate device ids in {ids}")
    for profile in cfg.devices:
        _check_positions(profile, cfg.trace_length, cfg.leakage_model)

    background = make_background(
        cfg.trace_length,
        cfg.background_amplitude,
        cfg.background_period,
        rng=[cfg.seed, 0],
    )
    n = cfg.n_traces_per_device

    sets = []
    for profile in cfg.devices:
        progress.update_status("synth", f"device {profile.device_id}", f"generating {n} traces")
        rng = np.random.default_rng([cfg.seed, profile.device_id])
        if cfg.fixed_key_byte is None:
            keys = np.arange(n, dtype=np.int64) % 256
        else:
            keys = np.full(n, cfg.fixed_key_byte, dtype=np.int64)
        if cfg.random_plaintext:
            pts = rng.integers(0, 256, size=n, dtype=np.int64)
        else:
            pts = np.full(n, cfg.fixed_plaintext_byte, dtype=np.int64)
        samples = _render(keys, pts, profile, background, cfg.leakage_model, rng)
        sets.append(
            TraceMatrix(
                samples=samples,
                key_bytes=keys,
                plaintext_bytes=pts,
                device_ids=np.full(n, profile.device_id, dtype=np.int64),
            )
        )
    progress.update_status("synth", None, "Done")
    return merge(sets)


def make_device_profiles(
    n_devices: int,
    *,
    trace_length: int = REFERENCE_TRACE_LENGTH,
    leak_positions: Optional[Sequence[int]] = None,
    leak_strength: float = 1.0,
    noise_sigma: float = 1.0,
    gain_spread: float = 0.10,
    n_batches: int = 2,
    batch_offsets: Optional[Sequence[float]] = None,
    batch_offset_spread: float = 1.0,
    offset_jitter: float = 0.2,
    drift_sigma: float = 0.0,
    first_device_id: int = 1,
    seed: int = 0,
) -> List[DeviceProfile]:
    """Draw a population of device profiles.

    Gains are uniform in 1 +/- gain_spread. Devices are split into ``n_batches``
    contiguous batches; each batch shares an offset (drawn uniformly within
    +/- batch_offset_spread unless given) and every device adds its own
    N(0, offset_jitter) jitter.
    """
    if n_devices < 1:
        raise RangeError("n_devices must be >= 1")
    if n_batches < 1:
        raise RangeError("n_batches must be >= 1")
    if not 0.0 <= gain_spread < 1.0:
        raise RangeError("gain_spread must be in [0, 1)")
    rng = np.random.default_rng(seed)
    if leak_positions is None:
        leak_positions = scale_leak_positions(REFERENCE_LEAK_POSITIONS, trace_length)
    if batch_offsets is None:
        batch_offsets = rng.uniform(-batch_offset_spread, batch_offset_spread, n_batches)
    elif len(batch_offsets) != n_batches:
        raise ConfigurationError(f"{len(batch_offsets)} batch offsets for {n_batches} batches")

    gains = 1.0 + rng.uniform(-gain_spread, gain_spread, n_devices)
    jitter = rng.normal(0.0, offset_jitter, n_devices) if offset_jitter > 0 else np.zeros(n_devices)

    profiles = []
    for i in range(n_devices):
        batch = (i * n_batches) // n_devices
        profiles.append(
            DeviceProfile(
                device_id=first_device_id + i,
                gain=float(gains[i]),
                offset=float(batch_offsets[batch] + jitter[i]),
                noise_sigma=noise_sigma,
                leak_positions=list(leak_positions),
                leak_strength=leak_strength,
                batch_id=batch,
                drift_sigma=drift_sigma,
            )
        )
    return profiles


def draw_shifts(m: int, max_shift: int, rng: RngLike = None) -> np.ndarray:
    """m independent shifts, uniform on {0, ..., max_shift}."""
    if max_shift < 0:
        raise RangeError(f"max_shift must be >= 0, got {max_shift}")
    rng = np.random.default_rng(rng)
    return rng.integers(0, max_shift + 1, size=m, dtype=np.int64)


def apply_shifts(samples: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Right-shift each row by its shift; vacated head samples repeat the row's first value."""
    samples = np.asarray(samples, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.int64)
    n = samples.shape[1]
    if shifts.size and (shifts.min() < 0 or shifts.max() >= n):
        raise RangeError(f"shifts must be in [0, {n}), got max {shifts.max()}")
    idx = np.arange(n)[None, :] - shifts[:, None]
    np.clip(idx, 0, None, out=idx)
    return np.take_along_axis(samples, idx, axis=1)


def inject_misalignment(traces: TraceMatrix, max_shift: int, rng: RngLike = None) -> TraceMatrix:
    """Rigidly shift every trace right by an independent U{0..max_shift} draw."""
    if max_shift < 0 or max_shift >= traces.trace_length:
        raise RangeError(
            f"max_shift must be in [0, {traces.trace_length}), got {max_shift}"
        )
    if max_shift == 0:
        return traces
    shifts = draw_shifts(traces.n_traces, max_shift, rng)
    return traces.with_samples(apply_shifts(traces.samples, shifts))


def augment(traces: TraceMatrix, copies: int, sigma: float, seed: int = 0) -> TraceMatrix:
    """Original rows followed by ``copies`` replicas with additive N(0, sigma^2) noise."""
    if copies < 0:
        raise RangeError(f"copies must be >= 0, got {copies}")
    if sigma < 0:
        raise RangeError(f"sigma must be >= 0, got {sigma}")
    if copies == 0:
        return traces
    rng = np.random.default_rng(seed)
    replicas = [traces.samples]
    for _ in range(copies):
        noise = rng.normal(0.0, sigma, size=traces.shape) if sigma > 0 else 0.0
        replicas.append(traces.samples + noise)
    reps = copies + 1
    return TraceMatrix(
        samples=np.concatenate(replicas, axis=0),
        key_bytes=np.tile(traces.key_bytes, reps),
        plaintext_bytes=np.tile(traces.plaintext_bytes, reps),
        device_ids=np.tile(traces.device_ids, reps),
    )
