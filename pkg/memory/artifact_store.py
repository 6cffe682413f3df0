import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.io import wavfile

from errors import MissingArtifactError, SchemaError

logger = logging.getLogger(__name__)


class ArtifactStore:
    """
    Local artifact persistence for pipeline outputs.
    JSON documents, CSV frames with a provenance header, and 16-bit PCM WAVs.
    """

    def __init__(self, root="out"):
        self.root = Path(root)

    def path(self, name) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.root / p

    def _require(self, name) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(f"artifact not found: {p}")
        return p

    def _target(self, name) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    # --- JSON ---
    def save_json(self, name, document: dict) -> Path:
        p = self._target(name)
        # sort_keys keeps repeated runs byte-identical
        p.write_text(json.dumps(document, sort_keys=True, indent=2))
        logger.debug("saved %s", p)
        return p

    def load_json(self, name) -> dict:
        p = self._require(name)
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise SchemaError(f"{p} is not valid JSON: {e}") from e

    # --- CSV ---
    def save_frame(self, name, frame: pd.DataFrame, config_sha256: str) -> Path:
        p = self._target(name)
        with p.open("w", newline="") as handle:
            handle.write(f"# config_sha256={config_sha256}\n")
            frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
        return p

    def load_frame(self, name) -> tuple[pd.DataFrame, str | None]:
        """Returns the frame and the config hash from its provenance line."""
        p = self._require(name)
        with p.open() as handle:
            first = handle.readline().strip()
        digest = first.split("=", 1)[1] if first.startswith("# config_sha256=") else None
        try:
            frame = pd.read_csv(p, comment="#")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise SchemaError(f"{p} is not a readable CSV: {e}") from e
        return frame, digest

    # --- Audio ---
    def save_wav(self, name, samples: np.ndarray, sample_rate: int) -> Path:
        """Writes samples in [-1, 1] as 16-bit PCM."""
        p = self._target(name)
        # exact inverse of read_wav's int16 scaling
        pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(p, sample_rate, pcm)
        return p

    def load_wav(self, name) -> tuple[np.ndarray, int]:
        return read_wav(self._require(name))


def read_wav(path) -> tuple[np.ndarray, int]:
    """Reads a mono WAV and normalizes it to float64 samples in [-1, 1]."""
    try:
        sample_rate, data = wavfile.read(path)
    except ValueError as e:
        raise SchemaError(f"{path} is not a readable WAV file: {e}") from e
    if data.ndim != 1:
        raise SchemaError(f"{path} has {data.shape[1]} channels; mono audio is required")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise SchemaError(f"{path}: unsupported sample type {data.dtype}")
    return samples, int(sample_rate)
