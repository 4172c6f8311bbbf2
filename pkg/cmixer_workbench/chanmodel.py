"""
Channel model module for the CMixer workbench
Synthetic multipath MIMO-OFDM channels, the shared-feature reformulation used
as an independent oracle, and known-subset extraction.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import SPEED_OF_LIGHT, SCENARIO_DEFAULTS
from .errors import ConfigurationError, ShapeError, ValidationError
from .utils import get_logger, log_error

UNIT_NORM_TOL = 1e-12


def _direction_array(direction):
    p = np.asarray(direction, dtype=np.float64)
    if p.shape != (3,):
        log_error(f"Direction must be a 3-vector, got shape {p.shape}")
        raise ShapeError(f"Direction must be a 3-vector, got shape {p.shape}.")
    norm = float(np.linalg.norm(p))
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        log_error(f"Non-unit direction {p.tolist()} (norm {norm!r})")
        raise ValidationError(f"Direction must have unit norm, got norm {norm!r}.")
    return p


# -------------------------
# Domain types
# -------------------------
@dataclass(frozen=True)
class PathComponent:
    """One propagation path: complex gain, delay (s) and departure direction."""

    alpha: complex
    tau: float
    direction: Tuple[float, float, float]

    def __post_init__(self):
        if self.tau < 0:
            log_error(f"Negative path delay {self.tau}")
            raise ValidationError(f"Path delay must be non-negative, got {self.tau}.")
        p = _direction_array(self.direction)
        object.__setattr__(self, 'direction', tuple(float(v) for v in p))
        object.__setattr__(self, 'alpha', complex(self.alpha))


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna element offsets (meters) relative to the first element."""

    element_offsets: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        offsets = np.asarray(self.element_offsets, dtype=np.float64)
        if offsets.ndim != 2 or offsets.shape[1] != 3 or offsets.shape[0] < 1:
            log_error(f"Malformed element offsets with shape {offsets.shape}")
            raise ShapeError(f"Element offsets must be a non-empty list of 3-vectors, got shape {offsets.shape}.")
        if np.any(offsets[0] != 0.0):
            log_error(f"First element offset {offsets[0].tolist()} is not the origin")
            raise ValidationError("The first array element must sit at the origin.")
        object.__setattr__(self, 'element_offsets', tuple(tuple(float(v) for v in row) for row in offsets))

    @classmethod
    def ula(cls, n_t: int, spacing: float):
        """Uniform linear array along the x-axis."""
        if n_t < 1:
            raise ValidationError(f"Array needs at least one element, got {n_t}.")
        return cls(tuple((i * spacing, 0.0, 0.0) for i in range(n_t)))

    @property
    def n_t(self) -> int:
        return len(self.element_offsets)

    def offsets(self) -> np.ndarray:
        return np.asarray(self.element_offsets, dtype=np.float64)


@dataclass(frozen=True)
class CarrierGrid:
    """Subcarrier frequencies f_i = f0 + offsets[i] (Hz)."""

    f0: float
    offsets: Tuple[float, ...]

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.f0 <= 0:
            log_error(f"Non-positive base frequency {self.f0}")
            raise ValidationError(f"Base frequency must be positive, got {self.f0}.")
        if offsets.ndim != 1 or offsets.size < 1:
            raise ShapeError("Carrier grid needs at least one subcarrier.")
        if offsets[0] != 0.0:
            log_error(f"First subcarrier offset {offsets[0]} is not zero")
            raise ValidationError("The first subcarrier must sit at the base frequency (offset 0).")
        if np.any(np.diff(offsets) <= 0):
            log_error("Subcarrier offsets are not strictly increasing")
            raise ValidationError("Subcarrier offsets must be strictly increasing.")
        object.__setattr__(self, 'offsets', tuple(float(v) for v in offsets))

    @classmethod
    def uniform(cls, f0: float, bandwidth: float, n_c: int):
        """Evenly spaced grid: offsets[i] = i * bandwidth / n_c."""
        if bandwidth <= 0 or n_c < 1:
            raise ValidationError(f"Invalid grid: bandwidth={bandwidth}, n_c={n_c}.")
        spacing = bandwidth / n_c
        return cls(f0, tuple(i * spacing for i in range(n_c)))

    @property
    def n_c(self) -> int:
        return len(self.offsets)

    def frequencies(self) -> np.ndarray:
        return self.f0 + np.asarray(self.offsets, dtype=np.float64)


@dataclass(frozen=True)
class CsiMatrix:
    """Complex N_t x N_c channel matrix (rows = antennas, columns = subcarriers)."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.complex128)
        if entries.ndim != 2:
            raise ShapeError(f"CSI matrix must be 2-D, got shape {entries.shape}.")
        if not np.all(np.isfinite(entries)):
            log_error("CSI matrix contains non-finite entries")
            raise ValidationError("CSI matrix entries must be finite.")
        object.__setattr__(self, 'entries', entries)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class SubsetSpec:
    """Known-channel index sets: antennas A and subcarriers B (Omega = A x B)."""

    antenna_indices: Tuple[int, ...]
    subcarrier_indices: Tuple[int, ...]

    def __post_init__(self):
        for label, idx in (('antenna', self.antenna_indices), ('subcarrier', self.subcarrier_indices)):
            values = [int(i) for i in idx]
            if not values:
                raise ValidationError(f"At least one {label} index is required.")
            if values != sorted(set(values)):
                log_error(f"{label} indices {values} are not sorted and unique")
                raise ValidationError(f"{label.capitalize()} indices must be sorted and unique.")
            if values[0] < 0:
                raise ValidationError(f"{label.capitalize()} indices must be non-negative.")
        object.__setattr__(self, 'antenna_indices', tuple(int(i) for i in self.antenna_indices))
        object.__setattr__(self, 'subcarrier_indices', tuple(int(i) for i in self.subcarrier_indices))

    @classmethod
    def uniform(cls, n_t: int, n_c: int, n_t0: int, n_c0: int):
        return cls(tuple(uniform_subset(n_t, n_t0)), tuple(uniform_subset(n_c, n_c0)))

    @property
    def n_t0(self) -> int:
        return len(self.antenna_indices)

    @property
    def n_c0(self) -> int:
        return len(self.subcarrier_indices)


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of the synthetic multipath scenario."""

    n_t: int = SCENARIO_DEFAULTS['n_t']
    n_c: int = SCENARIO_DEFAULTS['n_c']
    f0: float = SCENARIO_DEFAULTS['f0']
    bandwidth: float = SCENARIO_DEFAULTS['bandwidth']
    path_count_range: Tuple[int, int] = SCENARIO_DEFAULTS['path_count_range']
    max_delay: float = SCENARIO_DEFAULTS['max_delay']
    delay_profile_decay: float = SCENARIO_DEFAULTS['delay_profile_decay']
    azimuth_center: float = SCENARIO_DEFAULTS['azimuth_center']
    azimuth_width: float = SCENARIO_DEFAULTS['azimuth_width']
    antenna_spacing: Optional[float] = SCENARIO_DEFAULTS['antenna_spacing']
    rng_seed: int = SCENARIO_DEFAULTS['rng_seed']

    def __post_init__(self):
        lo, hi = (int(v) for v in self.path_count_range)
        object.__setattr__(self, 'path_count_range', (lo, hi))
        problems = []
        if self.n_t < 1 or self.n_c < 1:
            problems.append(f"n_t and n_c must be positive (got {self.n_t}, {self.n_c})")
        if not 1 <= lo <= hi <= 64:
            problems.append(f"path_count_range must lie within [1, 64], got {(lo, hi)}")
        if self.bandwidth <= 0:
            problems.append(f"bandwidth must be positive, got {self.bandwidth}")
        if self.f0 <= 0:
            problems.append(f"f0 must be positive, got {self.f0}")
        if self.max_delay < 0:
            problems.append(f"max_delay must be non-negative, got {self.max_delay}")
        if self.delay_profile_decay <= 0:
            problems.append(f"delay_profile_decay must be positive, got {self.delay_profile_decay}")
        if not 0 < self.azimuth_width <= 2.0 * np.pi:
            problems.append(f"azimuth_width must lie in (0, 2 pi], got {self.azimuth_width}")
        if self.antenna_spacing is not None and self.antenna_spacing <= 0:
            problems.append(f"antenna_spacing must be positive, got {self.antenna_spacing}")
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            problems.append(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}")
        if problems:
            log_error(f"Invalid scenario config: {'; '.join(problems)}")
            raise ValidationError("Invalid scenario config: " + "; ".join(problems))

    @property
    def spacing(self) -> float:
        """Element spacing in meters (half wavelength at f0 when unset)."""
        if self.antenna_spacing is not None:
            return float(self.antenna_spacing)
        return SPEED_OF_LIGHT / (2.0 * self.f0)

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry.ula(self.n_t, self.spacing)

    def grid(self) -> CarrierGrid:
        return CarrierGrid.uniform(self.f0, self.bandwidth, self.n_c)

    def to_dict(self) -> dict:
        d = asdict(self)
        d['path_count_range'] = list(self.path_count_range)
        return d

    @classmethod
    def from_dict(cls, data: dict):
        """
        Build a scenario from its JSON form; absent keys take their defaults.

        Raises:
            ConfigurationError: On unknown keys or values of the wrong type
        """
        if not isinstance(data, dict):
            raise ConfigurationError(f"Scenario config must be a JSON object, got {type(data).__name__}.")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            log_error(f"Unknown scenario config keys {sorted(unknown)}")
            raise ConfigurationError(f"Unknown scenario config keys: {sorted(unknown)}.")
        data = dict(data)
        try:
            if 'path_count_range' in data:
                data['path_count_range'] = tuple(data['path_count_range'])
            return cls(**data)
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            log_error(f"Malformed scenario config: {e}")
            raise ConfigurationError(f"Malformed scenario config: {e}.") from e


@dataclass
class ChannelDataset:
    """A batch of CSI samples with the scenario that produced them."""

    channels: np.ndarray  # complex, [n_samples, n_t, n_c]
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.channels.ndim != 3:
            raise ShapeError(f"Dataset channels must be [samples, n_t, n_c], got {self.channels.shape}.")

    def __len__(self):
        return self.channels.shape[0]


# -------------------------
# Operations
# -------------------------
def array_response(geometry: ArrayGeometry, direction, f: float) -> np.ndarray:
    """
    Per-element phase shifts exp(-j 2 pi f (d_i . p) / c) of a plane wave.

    Args:
        geometry: Array element offsets
        direction: Unit 3-vector of departure direction
        f: Frequency in Hz

    Returns:
        Complex vector of length N_t (element 0 is exactly 1)

    Raises:
        ValidationError: If the direction is not unit norm or f <= 0
    """
    p = _direction_array(direction)
    if f <= 0:
        log_error(f"Non-positive frequency {f} for array response")
        raise ValidationError(f"Frequency must be positive, got {f}.")
    projection = geometry.offsets() @ p
    return np.exp(-1j * 2.0 * np.pi * f * projection / SPEED_OF_LIGHT)


def channel_vector(paths: Sequence[PathComponent], geometry: ArrayGeometry, f: float) -> np.ndarray:
    """
    Narrowband channel at frequency f: sum_p alpha_p exp(-j 2 pi f tau_p) a(p_p).

    Raises:
        ValidationError: If the path list is empty
    """
    if not paths:
        log_error("channel_vector called with no paths")
        raise ValidationError("At least one path is required.")
    h = np.zeros(geometry.n_t, dtype=np.complex128)
    for path in paths:
        h += path.alpha * np.exp(-1j * 2.0 * np.pi * f * path.tau) * array_response(geometry, path.direction, f)
    return h


def assemble_csi(paths: Sequence[PathComponent], geometry: ArrayGeometry, grid: CarrierGrid) -> CsiMatrix:
    """Stack channel vectors over the carrier grid into an N_t x N_c CSI matrix."""
    columns = [channel_vector(paths, geometry, f) for f in grid.frequencies()]
    return CsiMatrix(np.stack(columns, axis=1))


def q_h(paths: Sequence[PathComponent], f0: float, d, delta_f: float) -> complex:
    """
    Shared-feature function evaluated at antenna offset d and frequency offset delta_f.

    The large-scale factor alpha_p exp(-j 2 pi f0 tau_p) is kept apart from the
    space, frequency and cross shifts so the CSI grid can be rebuilt without
    going through the per-frequency array response.
    """
    if not paths:
        log_error("q_h called with no paths")
        raise ValidationError("At least one path is required.")
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (3,):
        raise ShapeError(f"Antenna offset must be a 3-vector, got shape {d.shape}.")
    total = 0j
    for path in paths:
        proj = float(d @ np.asarray(path.direction))
        large_scale = path.alpha * np.exp(-1j * 2.0 * np.pi * f0 * path.tau)
        shift = (2.0 * np.pi * f0 * proj / SPEED_OF_LIGHT
                 + 2.0 * np.pi * delta_f * path.tau
                 + 2.0 * np.pi * delta_f * proj / SPEED_OF_LIGHT)
        total += large_scale * np.exp(-1j * shift)
    return complex(total)


def q_h_grid(paths: Sequence[PathComponent], geometry: ArrayGeometry, grid: CarrierGrid) -> np.ndarray:
    """Evaluate q_h on every (antenna offset, subcarrier offset) pair."""
    offsets = geometry.offsets()
    out = np.empty((geometry.n_t, grid.n_c), dtype=np.complex128)
    for m in range(geometry.n_t):
        for n, delta_f in enumerate(grid.offsets):
            out[m, n] = q_h(paths, grid.f0, offsets[m], delta_f)
    return out


def sample_scenario(config: ScenarioConfig, rng: np.random.Generator) -> List[PathComponent]:
    """
    Draw one multipath realization.

    Path count is uniform over path_count_range, delays uniform on
    [0, max_delay], gains circularly-symmetric complex Gaussian with variance
    exp(-tau / delay_profile_decay), azimuths uniform on the sector of width
    azimuth_width centered on azimuth_center.
    """
    lo, hi = config.path_count_range
    n_paths = int(rng.integers(lo, hi + 1))
    taus = rng.uniform(0.0, config.max_delay, size=n_paths)
    variances = np.exp(-taus / config.delay_profile_decay)
    gains = np.sqrt(variances / 2.0) * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
    half = 0.5 * config.azimuth_width
    azimuths = rng.uniform(config.azimuth_center - half, config.azimuth_center + half, size=n_paths)
    paths = []
    for alpha, tau, phi in zip(gains, taus, azimuths):
        direction = np.array([np.cos(phi), np.sin(phi), 0.0])
        direction /= np.linalg.norm(direction)
        paths.append(PathComponent(complex(alpha), float(tau), tuple(direction)))
    return paths


def uniform_subset(n: int, n0: int) -> List[int]:
    """
    Evenly spread index subset {0, step, ..., (n0 - 1) * step}, step = n // n0.

    Raises:
        ValidationError: If not 1 <= n0 <= n
    """
    if not 1 <= n0 <= n:
        log_error(f"Invalid subset size n0={n0} for n={n}")
        raise ValidationError(f"Subset size must satisfy 1 <= n0 <= n, got n0={n0}, n={n}.")
    step = n // n0
    return [i * step for i in range(n0)]


def extract_known(h, subset: SubsetSpec) -> np.ndarray:
    """
    Known sub-matrix H[A x B]; works on a single matrix or a leading batch axis.

    Raises:
        ValidationError: If an index falls outside the matrix
    """
    entries = np.asarray(h)
    n_t, n_c = entries.shape[-2:]
    if subset.antenna_indices[-1] >= n_t or subset.subcarrier_indices[-1] >= n_c:
        log_error(f"Subset {subset} out of range for CSI shape {(n_t, n_c)}")
        raise ValidationError(f"Subset indices out of range for CSI of shape {(n_t, n_c)}.")
    rows = np.asarray(subset.antenna_indices)[:, None]
    cols = np.asarray(subset.subcarrier_indices)[None, :]
    return entries[..., rows, cols]


def _generate_sample(config: ScenarioConfig, geometry: ArrayGeometry, grid: CarrierGrid, index: int) -> np.ndarray:
    rng = np.random.default_rng([int(config.rng_seed), index])
    return assemble_csi(sample_scenario(config, rng), geometry, grid).entries


def generate_dataset(config: ScenarioConfig, n_samples: int, workers: int = 1) -> ChannelDataset:
    """
    Generate n_samples CSI matrices.

    Each sample uses its own generator seeded by (rng_seed, index), so the
    result does not depend on the number of workers.
    """
    if n_samples < 1:
        raise ValidationError(f"Sample count must be positive, got {n_samples}.")
    logger = get_logger()
    geometry, grid = config.geometry(), config.grid()
    logger.info(f"Generating {n_samples} samples ({config.n_t}x{config.n_c}, seed {config.rng_seed}, workers {workers})")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda i: _generate_sample(config, geometry, grid, i), range(n_samples)))
    else:
        samples = [_generate_sample(config, geometry, grid, i) for i in range(n_samples)]
    channels = np.stack(samples)
    scale = global_rms(channels)
    logger.info(f"Generated dataset with RMS {scale:.6g}")
    return ChannelDataset(channels=channels, scenario=config, scale=scale, seed=int(config.rng_seed))


def global_rms(channels: np.ndarray) -> float:
    """Root-mean-square magnitude over every complex entry."""
    return float(np.sqrt(np.mean(np.abs(channels) ** 2)))
