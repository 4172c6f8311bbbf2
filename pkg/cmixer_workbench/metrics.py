"""
Evaluation metrics: normalized MSE and per-subcarrier cosine correlation.

Both take complex CSI arrays shaped [n_t, n_c] or [samples, n_t, n_c];
columns index subcarriers.
"""

from dataclasses import dataclass

import numpy as np

from config import NMSE_DB_FLOOR
from .errors import ShapeError, ValidationError
from .utils import log_error, log_warning


@dataclass(frozen=True)
class NmseResult:
    linear: float
    db: float

    def serialized_db(self) -> float:
        """dB value with perfect predictions clamped to the reporting floor."""
        if self.linear < 1e-12:
            return NMSE_DB_FLOOR
        return self.db


def _batched(h_true, h_pred):
    h_true = np.asarray(h_true)
    h_pred = np.asarray(h_pred)
    if h_true.shape != h_pred.shape:
        log_error(f"Metric inputs differ in shape: {h_true.shape} vs {h_pred.shape}")
        raise ShapeError(f"Truth and prediction shapes differ: {h_true.shape} vs {h_pred.shape}.")
    if h_true.ndim == 2:
        h_true, h_pred = h_true[None], h_pred[None]
    if h_true.ndim != 3:
        raise ShapeError(f"Expected [samples, n_t, n_c] CSI, got shape {h_true.shape}.")
    return h_true.astype(np.complex128), h_pred.astype(np.complex128)


def to_db(linear: float) -> float:
    return float(10.0 * np.log10(linear)) if linear > 0 else float('-inf')


def nmse(h_true, h_pred) -> NmseResult:
    """
    Sample mean of ||H - H_hat||^2 / ||H||^2, plus its dB value.

    Zero-norm truth samples are excluded with a warning.

    Raises:
        ValidationError: If every truth sample has zero norm
    """
    h_true, h_pred = _batched(h_true, h_pred)
    power = np.sum(np.abs(h_true) ** 2, axis=(1, 2))
    error = np.sum(np.abs(h_true - h_pred) ** 2, axis=(1, 2))
    valid = power > 0
    if not np.all(valid):
        log_warning(f"nmse: excluding {int(np.sum(~valid))} zero-norm truth samples")
    if not np.any(valid):
        log_error("nmse: every truth sample has zero norm")
        raise ValidationError("NMSE is undefined: every truth sample has zero norm.")
    linear = float(np.mean(error[valid] / power[valid]))
    return NmseResult(linear=linear, db=to_db(linear))


def rho(h_true, h_pred) -> float:
    """
    Mean over samples of (1/N_c) sum_m |h_hat_m^H h_m| / (||h_hat_m|| ||h_m||).

    Columns with zero-norm truth are excluded; zero predicted columns count as 0.

    Raises:
        ValidationError: If every truth column has zero norm
    """
    h_true, h_pred = _batched(h_true, h_pred)
    inner = np.abs(np.sum(np.conj(h_pred) * h_true, axis=1))
    norm_true = np.linalg.norm(h_true, axis=1)
    norm_pred = np.linalg.norm(h_pred, axis=1)
    valid = norm_true > 0
    if not np.all(valid):
        log_warning(f"rho: excluding {int(np.sum(~valid))} zero truth columns")
    if not np.any(valid):
        log_error("rho: every truth column has zero norm")
        raise ValidationError("Cosine correlation is undefined: every truth column has zero norm.")
    dead = valid & (norm_pred == 0)
    if np.any(dead):
        log_warning(f"rho: {int(np.sum(dead))} predicted columns are zero")
    denom = np.where(valid & ~dead, norm_true * norm_pred, 1.0)
    per_column = np.where(valid & ~dead, inner / denom, 0.0)
    counts = valid.sum(axis=1)
    keep = counts > 0
    per_sample = per_column.sum(axis=1)[keep] / counts[keep]
    return float(np.mean(per_sample))
