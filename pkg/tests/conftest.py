"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from semmix.dsp_core import StftConfig, ola_weight


def support_rms_error(original: np.ndarray, reconstructed: np.ndarray,
                      cfg: StftConfig) -> tuple[float, int]:
    """RMS error over samples the analysis operator can actually see.

    Samples with zero overlap-add weight (at most the very first sample for
    the window families shipped here) carry no spectral information and are
    excluded. Returns (rms, number of excluded samples).
    """
    n = original.size
    weight = ola_weight(cfg, cfg.frame_count(n), n)
    mask = weight > 1e-12
    diff = original[mask] - reconstructed[mask]
    rms = float(np.sqrt(np.mean(diff ** 2)))
    return rms, int(n - mask.sum())
