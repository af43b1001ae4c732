from scaf.align.dtw import (
    AlignmentResult,
    WarpPath,
    dtw,
    realign_rows,
    realign_sampled,
    realign_set,
    resample_to_length,
)

__all__ = [
    "AlignmentResult",
    "WarpPath",
    "dtw",
    "realign_rows",
    "realign_sampled",
    "realign_set",
    "resample_to_length",
]
