"""
Target shuffles for the structure ablation.

A permutation array ``perm`` moves index k to position perm[k]. The interlaced
shuffle permutes rows and columns separately, so every row still belongs to
one antenna and every column to one subcarrier; the non-interlaced shuffle
permutes the column-stacked vector and breaks that correspondence.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ValidationError
from .utils import log_error


class ShuffleMode(str, Enum):
    ORIGIN = 'origin'
    INTERLACED = 'interlaced'
    NON_INTERLACED = 'non_interlaced'


def _check_permutation(perm, size: int, label: str) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (size,):
        log_error(f"{label} permutation has shape {perm.shape}, expected ({size},)")
        raise ValidationError(f"{label} permutation must have length {size}, got shape {perm.shape}.")
    if not np.array_equal(np.sort(perm), np.arange(size)):
        log_error(f"{label} array is not a permutation of 0..{size - 1}")
        raise ValidationError(f"{label} array is not a permutation of 0..{size - 1}.")
    return perm.astype(np.int64)


def inverse_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def interlaced_shuffle(h, row_perm, col_perm) -> np.ndarray:
    """
    P_t H P_c: out[..., row_perm[i], col_perm[j]] = H[..., i, j].

    Raises:
        ValidationError: If either array is not a permutation of the matching axis
    """
    h = np.asarray(h)
    n_t, n_c = h.shape[-2:]
    row_perm = _check_permutation(row_perm, n_t, 'Antenna')
    col_perm = _check_permutation(col_perm, n_c, 'Subcarrier')
    rows = inverse_permutation(row_perm)[:, None]
    cols = inverse_permutation(col_perm)[None, :]
    return h[..., rows, cols]


def non_interlaced_shuffle(h, perm) -> np.ndarray:
    """
    vec^-1(P vec(H)) with column-stacking vec: out_vec[perm[k]] = vec(H)[k].

    Raises:
        ValidationError: If perm is not a permutation of n_t * n_c indices
    """
    h = np.asarray(h)
    n_t, n_c = h.shape[-2:]
    perm = _check_permutation(perm, n_t * n_c, 'Vectorized')
    lead = h.shape[:-2]
    vec = np.swapaxes(h, -1, -2).reshape(lead + (n_t * n_c,))
    out = np.empty_like(vec)
    out[..., perm] = vec
    return np.swapaxes(out.reshape(lead + (n_c, n_t)), -1, -2)


@dataclass(frozen=True)
class ShuffleSpec:
    """A fixed target shuffle applied identically to every sample."""

    mode: ShuffleMode = ShuffleMode.ORIGIN
    seed: int = 0
    row_perm: Optional[Tuple[int, ...]] = None
    col_perm: Optional[Tuple[int, ...]] = None
    flat_perm: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, 'mode', ShuffleMode(self.mode))
        except ValueError:
            log_error(f"Unknown shuffle mode {self.mode!r}")
            raise ConfigurationError(
                f"Unknown shuffle mode {self.mode!r}; expected one of {[m.value for m in ShuffleMode]}."
            ) from None
        if self.mode is ShuffleMode.INTERLACED and (self.row_perm is None or self.col_perm is None):
            raise ConfigurationError("Interlaced shuffle needs row_perm and col_perm.")
        if self.mode is ShuffleMode.NON_INTERLACED and self.flat_perm is None:
            raise ConfigurationError("Non-interlaced shuffle needs flat_perm.")
        for name in ('row_perm', 'col_perm', 'flat_perm'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))

    @classmethod
    def random(cls, mode, n_t: int, n_c: int, seed: int) -> 'ShuffleSpec':
        mode = ShuffleMode(mode)
        rng = np.random.default_rng(seed)
        if mode is ShuffleMode.INTERLACED:
            return cls(mode, seed, row_perm=tuple(rng.permutation(n_t)), col_perm=tuple(rng.permutation(n_c)))
        if mode is ShuffleMode.NON_INTERLACED:
            return cls(mode, seed, flat_perm=tuple(rng.permutation(n_t * n_c)))
        return cls(mode, seed)

    @classmethod
    def identity(cls, mode, n_t: int, n_c: int) -> 'ShuffleSpec':
        mode = ShuffleMode(mode)
        if mode is ShuffleMode.INTERLACED:
            return cls(mode, 0, row_perm=tuple(range(n_t)), col_perm=tuple(range(n_c)))
        if mode is ShuffleMode.NON_INTERLACED:
            return cls(mode, 0, flat_perm=tuple(range(n_t * n_c)))
        return cls(mode, 0)

    def apply(self, h) -> np.ndarray:
        if self.mode is ShuffleMode.INTERLACED:
            return interlaced_shuffle(h, self.row_perm, self.col_perm)
        if self.mode is ShuffleMode.NON_INTERLACED:
            return non_interlaced_shuffle(h, self.flat_perm)
        return np.asarray(h)

    def to_dict(self) -> dict:
        return {
            'mode': self.mode.value,
            'seed': self.seed,
            'row_perm': list(self.row_perm) if self.row_perm is not None else None,
            'col_perm': list(self.col_perm) if self.col_perm is not None else None,
            'flat_perm': list(self.flat_perm) if self.flat_perm is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ShuffleSpec':
        if not isinstance(data, dict):
            raise ConfigurationError(f"Shuffle spec must be a JSON object, got {type(data).__name__}.")
        unknown = set(data) - {'mode', 'seed', 'row_perm', 'col_perm', 'flat_perm'}
        if unknown:
            raise ConfigurationError(f"Unknown shuffle keys: {sorted(unknown)}.")
        try:
            return cls(**data)
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Malformed shuffle spec: {e}.") from e
