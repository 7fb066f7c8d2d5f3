"""Fréchet activation distances over pluggable embeddings, plus the
desk-scale embedding stub.

The Fréchet distance between Gaussian summaries (m_a, C_a) and (m_b, C_b) is
||m_a - m_b||^2 + tr(C_a + C_b - 2 (C_a C_b)^{1/2}); the matrix square root is
taken through symmetric eigendecompositions with negative eigenvalues clamped
to zero. The stub embedding summarizes an utterance by its log-mel band
means and deviations, which is NOT comparable to ASR-activation numbers from
the literature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .audio_io import INPUT_RATE, Waveform, resample
from .errors import ArgumentError
from .features import DEFAULT_CONTENT_DIM, _logmel_frames


@dataclass
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        if self.covariance.shape != (self.dim, self.dim):
            raise ArgumentError(
                f"covariance shape {self.covariance.shape} does not match mean "
                f"dimension {self.dim}")
        asym = np.abs(self.covariance - self.covariance.T).max() if self.dim else 0.0
        if asym > 1e-9:
            raise ArgumentError(f"covariance is not symmetric (max asymmetry {asym})")

    @property
    def dim(self) -> int:
        return len(self.mean)


def summarize_activations(embeddings: np.ndarray) -> GaussianSummary:
    """Sample mean and unbiased covariance of row-stacked embeddings."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] < 2:
        raise ArgumentError(
            f"need at least 2 embedding rows, got array of shape {embeddings.shape}")
    n, d = embeddings.shape
    if n < d + 1:
        warnings.warn(f"covariance from {n} samples in {d} dimensions is rank-deficient",
                      stacklevel=2)
    mean = embeddings.mean(axis=0)
    centered = embeddings - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianSummary(mean, (cov + cov.T) / 2.0, n)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """Squared 2-Wasserstein distance between the two Gaussian summaries."""
    if a.dim != b.dim:
        raise ArgumentError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.covariance)
    inner = _psd_sqrt(sqrt_a @ b.covariance @ sqrt_a)
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance)
                  - 2.0 * np.trace(inner))
    return max(value, 0.0)


def conditional_fdsd(generated: np.ndarray, reference: np.ndarray) -> float:
    """Fréchet distance between matched sets of (generated, reference) embeddings."""
    generated = np.asarray(generated, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if generated.shape != reference.shape:
        raise ArgumentError(
            f"matched sets must have equal shapes, got {generated.shape} vs "
            f"{reference.shape}")
    if generated.shape[0] < 2:
        raise ArgumentError("need at least 2 matched pairs")
    return frechet_distance(summarize_activations(generated),
                            summarize_activations(reference))


def stub_embedding(w: Waveform, n_mels: int = DEFAULT_CONTENT_DIM) -> np.ndarray:
    """Per-utterance embedding: [band means | band standard deviations]."""
    x = resample(w, INPUT_RATE) if w.sample_rate_hz != INPUT_RATE else w
    logmel = _logmel_frames(x.samples, n_mels)
    if len(logmel) == 0:
        raise ArgumentError("cannot embed an empty utterance")
    return np.concatenate([logmel.mean(axis=0), logmel.std(axis=0)])
