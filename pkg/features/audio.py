import numpy as np
from scipy.fft import dct

from errors import RejectedInputError


def window_count(n_samples: int, window_len: int, overlap: int) -> int:
    hop = window_len - overlap
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // hop + 1


def window_starts(n_windows: int, window_len: int, overlap: int) -> np.ndarray:
    """Start sample of each sliding window."""
    return np.arange(n_windows, dtype=np.int64) * (window_len - overlap)


def preprocess(audio, window_len: int = 96, overlap: int = 48) -> np.ndarray:
    """
    Sliding windows -> |orthonormal DCT-II|, one row per window.
    Hop is window_len - overlap.
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1:
        raise RejectedInputError("audio must be a mono sample stream")
    if not 0 <= overlap < window_len:
        raise RejectedInputError("overlap must satisfy 0 <= overlap < window_len")
    if audio.size < window_len:
        raise RejectedInputError(f"audio has {audio.size} samples, shorter than one window ({window_len})")

    hop = window_len - overlap
    frames = np.lib.stride_tricks.sliding_window_view(audio, window_len)[::hop]
    return np.abs(dct(frames, type=2, norm="ortho", axis=-1))
