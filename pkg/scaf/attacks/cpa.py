"""Correlation power analysis on the first-round SBox output."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from scaf.data.traces import TraceMatrix
from scaf.errors import InsufficientDataError, RangeError
from scaf.nn.layers import PROB_CLAMP
from scaf.synth.aes import HW_TABLE, SBOX
from scaf.utils.progress import progress


@dataclass(frozen=True, eq=False)
class CpaResult:
    scores: np.ndarray  # (256,) max |rho| per key guess
    peaks: np.ndarray  # (256,) sample index of that maximum
    ranking: np.ndarray  # key guesses, best first

    def to_frame(self) -> pd.DataFrame:
        """Ranked (guess, score, sample) table, best guess first."""
        return pd.DataFrame(
            {
                "guess": self.ranking,
                "score": self.scores[self.ranking],
                "sample": self.peaks[self.ranking],
            }
        )


def hypotheses(plaintext_bytes: np.ndarray) -> np.ndarray:
    """M x 256 matrix of HW(SBox(p_i xor g)) for every key guess g."""
    p = np.asarray(plaintext_bytes, dtype=np.int64)
    guesses = np.arange(256)
    return HW_TABLE[SBOX[np.bitwise_xor(p[:, None], guesses[None, :])]].astype(np.float64)


def correlations(h: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pearson correlation of every hypothesis column with every sample column.

    Pairs where either side has zero variance get rho = 0.
    """
    hc = h - h.mean(axis=0)
    xc = x - x.mean(axis=0)
    num = hc.T @ xc
    den = np.sqrt((hc**2).sum(axis=0))[:, None] * np.sqrt((xc**2).sum(axis=0))[None, :]
    rho = np.zeros_like(num)
    np.divide(num, den, out=rho, where=den > 0)
    return np.clip(rho, -1.0, 1.0)


def cpa(traces: TraceMatrix, plaintext_byte: Optional[int] = None) -> CpaResult:
    """Rank the 256 key guesses by max |rho| over all samples.

    Per-trace plaintexts come from the set unless ``plaintext_byte`` fixes one
    for every trace.
    """
    if traces.n_traces < 2:
        raise InsufficientDataError(f"CPA needs >= 2 traces, got {traces.n_traces}")
    if plaintext_byte is None:
        plaintexts = traces.plaintext_bytes
    else:
        if not 0 <= plaintext_byte <= 255:
            raise RangeError(f"plaintext byte out of range: {plaintext_byte}")
        plaintexts = np.full(traces.n_traces, plaintext_byte)

    progress.update_status("attack", "cpa", f"{traces.n_traces} traces")
    rho = np.abs(correlations(hypotheses(plaintexts), traces.samples))
    peaks = rho.argmax(axis=1)
    scores = rho[np.arange(256), peaks]
    ranking = np.argsort(-scores, kind="stable")
    progress.update_status("attack", None, "Done")
    return CpaResult(scores=scores, peaks=peaks, ranking=ranking)


def key_rank(result: CpaResult, key: int) -> int:
    """1-based position of ``key`` in the CPA ranking."""
    return int(np.flatnonzero(result.ranking == key)[0]) + 1


def accumulated_key_rank(probs: np.ndarray, key: int) -> np.ndarray:
    """Rank of the true key after accumulating log-probabilities over 1..n attack traces.

    ``probs`` is n x 256 classifier output for traces that all share ``key``.
    Ties count in the key's favour.
    """
    probs = np.asarray(probs, dtype=np.float64)
    cum = np.cumsum(np.log(np.maximum(probs, PROB_CLAMP)), axis=0)
    return 1 + (cum > cum[:, [key]]).sum(axis=1)
