"""Datasets, the on-disk format, synthetic confounded data, and sample windows.

Flows live in a ``[τ, N, d]`` float32 array. A dataset directory holds::

    meta.cfg             grid shape, interval, start time, holidays, context names
    flows.stds           little-endian binary flows (see :func:`write_flows`)
    context.csv          optional observed categorical context columns
    truth_contexts.csv   optional ground truth written by the synthetic generator
"""

from __future__ import annotations

import configparser
import csv
import struct
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    InsufficientHistoryError,
    UnknownScenarioError,
    ValidationError,
    VersionError,
)
from .graph import CapacityTable, capacity, grid_adjacency, load_level, temporal_index

MAGIC = b"STDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


@dataclass(frozen=True, eq=False)
class Dataset:
    flows: np.ndarray
    interval_minutes: int
    start_timestamp: datetime
    grid_shape: tuple[int, int]
    holiday_dates: tuple[date, ...] = ()
    context_columns: dict = field(default_factory=dict)
    adjacency: np.ndarray | None = None

    def __post_init__(self):
        flows = np.ascontiguousarray(self.flows, dtype=np.float32)
        if flows.ndim != 3:
            raise ValidationError(f"flows must be [τ, N, d], got shape {flows.shape}")
        if not np.all(np.isfinite(flows)) or np.any(flows < 0):
            raise ValidationError("flows must be finite and non-negative")
        H, W = self.grid_shape
        if H * W != flows.shape[1]:
            raise ValidationError(f"grid {H}x{W} does not match N={flows.shape[1]}")
        if self.interval_minutes <= 0 or 1440 % self.interval_minutes:
            raise ValidationError("interval_minutes must divide a day")
        adj = grid_adjacency(H, W) if self.adjacency is None else np.asarray(self.adjacency, np.float32)
        if not np.array_equal(adj, adj.T) or np.any(np.diag(adj) != 0):
            raise ValidationError("adjacency must be symmetric with zero diagonal")
        cols = {k: np.asarray(v, dtype=np.int64) for k, v in self.context_columns.items()}
        for name, col in cols.items():
            if col.shape != (flows.shape[0],):
                raise ValidationError(f"context column {name!r} must have length τ")
        start = self.start_timestamp
        if isinstance(start, str):
            start = datetime.fromisoformat(start)
        flows.setflags(write=False)
        object.__setattr__(self, "flows", flows)
        object.__setattr__(self, "start_timestamp", start)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "context_columns", cols)
        object.__setattr__(self, "grid_shape", (int(H), int(W)))
        object.__setattr__(self, "holiday_dates", tuple(sorted(set(self.holiday_dates))))

    @property
    def steps(self) -> int:
        return self.flows.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.flows.shape[1]

    @property
    def channels(self) -> int:
        return self.flows.shape[2]

    @property
    def steps_per_day(self) -> int:
        return 1440 // self.interval_minutes

    def timestamp(self, step: int) -> datetime:
        return self.start_timestamp + timedelta(minutes=self.interval_minutes * int(step))

    @cached_property
    def holiday_mask(self) -> np.ndarray:
        """True on weekend days and listed holidays."""
        hols = set(self.holiday_dates)
        days = [self.timestamp(t).date() for t in range(self.steps)]
        return np.array([d.weekday() >= 5 or d in hols for d in days], dtype=bool)

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.flows, other.flows)
            and self.interval_minutes == other.interval_minutes
            and self.start_timestamp == other.start_timestamp
            and self.grid_shape == other.grid_shape
            and self.holiday_dates == other.holiday_dates
            and self.context_columns.keys() == other.context_columns.keys()
            and all(np.array_equal(v, other.context_columns[k]) for k, v in self.context_columns.items())
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.holiday_mask, other.holiday_mask)
        )


# --------------------------------------------------------------------------- codec


def write_flows(flows: np.ndarray, path) -> None:
    """Header ``STDS | u16 version | u32 τ, N, d`` then row-major float32 payload."""
    flows = np.asarray(flows, dtype="<f4")
    tau, n, d = flows.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, tau, n, d))
        fh.write(np.ascontiguousarray(flows).tobytes())


def read_flows(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: header truncated at byte offset {len(raw)} (need {_HEADER.size})")
    magic, version, tau, n, d = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: magic mismatch at byte offset 0: {magic!r} != {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unknown format version {version} at byte offset 4")
    expected = _HEADER.size + 4 * tau * n * d
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch at byte offset {min(len(raw), expected)} "
            f"(file has {len(raw)} bytes, header implies {expected})"
        )
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(tau, n, d).astype(np.float32)


def save_dataset(ds: Dataset, path, truth: "SynthTruth | None" = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = configparser.ConfigParser()
    meta["dataset"] = {
        "grid_shape": f"{ds.grid_shape[0]},{ds.grid_shape[1]}",
        "interval_minutes": str(ds.interval_minutes),
        "start_timestamp": ds.start_timestamp.isoformat(),
        "holidays": ",".join(d.isoformat() for d in ds.holiday_dates),
        "context_columns": ",".join(ds.context_columns),
    }
    with open(root / "meta.cfg", "w") as fh:
        meta.write(fh)
    write_flows(ds.flows, root / "flows.stds")
    if ds.context_columns:
        names = list(ds.context_columns)
        with open(root / "context.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            writer.writerows(zip(*(ds.context_columns[k].tolist() for k in names)))
    if truth is not None:
        truth.save(root / "truth_contexts.csv")
    return root


def load_dataset(path) -> Dataset:
    root = Path(path)
    meta = configparser.ConfigParser()
    if not meta.read(root / "meta.cfg"):
        raise FormatError(f"{root}: missing meta.cfg")
    try:
        sec = meta["dataset"]
        H, W = (int(v) for v in sec["grid_shape"].split(","))
        interval = int(sec["interval_minutes"])
        start = datetime.fromisoformat(sec["start_timestamp"])
        hols = tuple(date.fromisoformat(s) for s in sec.get("holidays", "").split(",") if s.strip())
        names = [s for s in sec.get("context_columns", "").split(",") if s.strip()]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{root}/meta.cfg: {exc}") from exc
    flows = read_flows(root / "flows.stds")
    columns = {}
    if names:
        with open(root / "context.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[int(v) for v in row] for row in reader], dtype=np.int64).reshape(-1, len(header))
        if header != names:
            raise FormatError(f"{root}/context.csv header {header} != meta columns {names}")
        columns = {name: rows[:, i] for i, name in enumerate(header)}
    return Dataset(flows, interval, start, (H, W), hols, columns)


# ---------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthConfig:
    grid_shape: tuple[int, int] = (8, 8)
    channels: int = 1
    days: int = 28
    interval_minutes: int = 30
    start: str = "2024-01-01T00:00:00"  # a Monday
    # invariant context: urban function types with their own daily profiles
    n_function_types: int = 3
    type_levels: tuple[float, ...] = (40.0, 90.0, 160.0)
    holiday_effect: float = 0.6
    # variant context: weather-like regimes switching every `block_steps`
    regime_names: tuple[str, ...] = ("clear", "rain", "storm")
    regime_multipliers: tuple[float, ...] = (1.0, 0.7, 0.4)
    regime_marginal: tuple[float, ...] = (0.6, 0.3, 0.1)
    block_steps: int = 6
    shift: float = 0.5
    spatial_mix: float = 0.3
    noise_scale: float = 0.5
    train_fraction: float = 0.7
    test_fraction: float = 0.2
    seed: int = 0

    @property
    def n_regimes(self) -> int:
        return len(self.regime_multipliers)

    def validate(self) -> None:
        H, W = self.grid_shape
        counts = dict(H=H, W=W, channels=self.channels, days=self.days,
                      n_function_types=self.n_function_types, block_steps=self.block_steps,
                      n_regimes=self.n_regimes)
        bad = [k for k, v in counts.items() if int(v) < 1]
        if bad:
            raise ConfigError(f"counts must be >= 1: {bad}")
        if self.interval_minutes <= 0 or 1440 % self.interval_minutes:
            raise ConfigError("interval_minutes must divide a day")
        if len(self.type_levels) < self.n_function_types:
            raise ConfigError("need one type_level per function type")
        if len(self.regime_marginal) != self.n_regimes or len(self.regime_names) != self.n_regimes:
            raise ConfigError("regime_marginal/regime_names must match regime_multipliers")
        if abs(sum(self.regime_marginal) - 1) > 1e-9 or min(self.regime_marginal) < 0:
            raise ConfigError("regime_marginal must be a probability vector")
        if not 0.0 <= self.shift <= 1.0:
            raise ConfigError(f"shift must be in [0, 1], got {self.shift}")
        if not 0.0 <= self.spatial_mix <= 1.0 or self.noise_scale < 0:
            raise ConfigError("spatial_mix must be in [0, 1] and noise_scale >= 0")
        if not (0 < self.train_fraction and 0 < self.test_fraction and self.train_fraction + self.test_fraction <= 1):
            raise ConfigError("train_fraction/test_fraction must be positive and sum to <= 1")


@dataclass(frozen=True)
class SynthTruth:
    """Evaluation-only record of the latent contexts that generated the flows."""

    regimes: np.ndarray  # [τ]
    function_types: np.ndarray  # [N]
    sensitivity: np.ndarray  # [N]
    train_marginal: np.ndarray
    test_marginal: np.ndarray
    train_end: int  # first step after the train segment
    test_start: int  # first step of the test segment

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "regime"])
            writer.writerows(enumerate(self.regimes.tolist()))


def shifted_marginal(base: Sequence[float], shift: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (train, test) regime marginals with total-variation distance ``shift``.

    Test mass moves toward the last (rarest) regime. If the base marginal
    already puts too much mass there, the train marginal drops that regime.
    """
    p = np.asarray(base, dtype=np.float64)
    if len(p) == 1:
        return p.copy(), p.copy()
    if shift > 1.0 - p[-1]:
        p = p.copy()
        p[-1] = 0.0
        p /= p.sum()
    e_last = np.zeros_like(p)
    e_last[-1] = 1.0
    s = shift / (1.0 - p[-1])
    return p, (1.0 - s) * p + s * e_last


def _allocate(p: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder integer allocation of ``total`` items to proportions ``p``."""
    raw = p * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


def _regime_segment(p: np.ndarray, length: int, block: int, rng) -> np.ndarray:
    n_blocks = -(-length // block)
    blocks = np.repeat(np.arange(len(p)), _allocate(p, n_blocks))
    rng.shuffle(blocks)
    return np.repeat(blocks, block)[:length]


def _bump(hour: np.ndarray, centre: float, width: float) -> np.ndarray:
    delta = (hour - centre + 12.0) % 24.0 - 12.0
    return np.exp(-0.5 * (delta / width) ** 2)


def _daily_profile(hour: np.ndarray, ftype: int, holiday: np.ndarray, holiday_effect: float) -> np.ndarray:
    """Unit-level daily shape of a function type; holidays flatten the commute peaks."""
    morning = (0.9, 0.5, 0.7)[ftype % 3]
    evening = (0.5, 0.9, 0.7)[ftype % 3]
    midday = (0.2, 0.3, 0.6)[ftype % 3]
    shift_h = 0.5 * (ftype // 3)
    work = (0.2 + morning * _bump(hour, 8.0 + shift_h, 1.5) + evening * _bump(hour, 18.0 + shift_h, 1.8)
            + midday * _bump(hour, 13.0, 3.0))
    leisure = 0.2 + (0.6 + 0.2 * (ftype % 3)) * _bump(hour, 14.0, 3.5)
    mix = np.where(holiday, holiday_effect, 0.0)
    return (1.0 - mix) * work + mix * leisure


def generate_synthetic(cfg: SynthConfig = SynthConfig()) -> tuple[Dataset, SynthTruth]:
    """Simulate flows confounded by a latent weather-like regime.

    Each node's demand is its function type's daily profile times a node
    scale, multiplied by ``regime_multiplier ** node_sensitivity``. Observed
    flow mixes the node's own demand with the previous step's demand of its
    neighbours, so the regime active at the target step drives both the
    history and the next value.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    H, W = cfg.grid_shape
    N, d = H * W, cfg.channels
    spd = 1440 // cfg.interval_minutes
    tau = cfg.days * spd
    start = datetime.fromisoformat(cfg.start)

    ftypes = rng.integers(0, cfg.n_function_types, size=N)
    node_scale = rng.uniform(0.6, 1.4, size=N) * np.asarray(cfg.type_levels)[ftypes]
    sensitivity = rng.uniform(0.5, 1.5, size=N)
    chan_scale = 1.0 - 0.25 * np.arange(d) / max(d, 1)
    chan_phase = 0.75 * np.arange(d)

    train_end = int(round(cfg.train_fraction * tau))
    test_start = tau - int(round(cfg.test_fraction * tau))
    p_train, p_test = shifted_marginal(cfg.regime_marginal, cfg.shift)
    regimes = np.concatenate([
        _regime_segment(p_train, train_end, cfg.block_steps, rng),
        _regime_segment(p_train, test_start - train_end, cfg.block_steps, rng),
        _regime_segment(p_test, tau - test_start, cfg.block_steps, rng),
    ])

    steps = np.arange(-1, tau)  # one extra step so t = 0 has a predecessor
    stamps = [start + timedelta(minutes=cfg.interval_minutes * int(t)) for t in steps]
    hour = np.array([s.hour + s.minute / 60.0 for s in stamps])
    holiday = np.array([s.weekday() >= 5 for s in stamps])
    demand = np.empty((len(steps), N, d))
    for f in range(cfg.n_function_types):
        nodes = ftypes == f
        for c in range(d):
            prof = _daily_profile(hour - chan_phase[c], f, holiday, cfg.holiday_effect)
            demand[:, nodes, c] = prof[:, None] * node_scale[nodes][None, :] * chan_scale[c]
    mult = np.asarray(cfg.regime_multipliers)[np.concatenate([regimes[:1], regimes])]
    demand *= (mult[:, None] ** sensitivity[None, :])[:, :, None]

    adj = grid_adjacency(H, W).astype(np.float64)
    deg = adj.sum(axis=1, keepdims=True)
    spread = np.divide(adj, deg, out=np.eye(N), where=deg > 0)
    prev = np.einsum("nm,tmc->tnc", spread, demand[:-1])
    flows = (1.0 - cfg.spatial_mix) * demand[1:] + cfg.spatial_mix * prev
    if cfg.noise_scale > 0:
        flows = flows + cfg.noise_scale * np.sqrt(flows) * rng.standard_normal(flows.shape)
    flows = np.clip(flows, 0.0, None).astype(np.float32)

    ds = Dataset(flows, cfg.interval_minutes, start, (H, W), (), {"weather": regimes})
    truth = SynthTruth(regimes, ftypes, sensitivity, p_train, p_test, train_end, test_start)
    return ds, truth


def regime_tv_distance(regimes: np.ndarray, n_regimes: int, a: slice, b: slice) -> float:
    pa = np.bincount(regimes[a], minlength=n_regimes) / len(regimes[a])
    pb = np.bincount(regimes[b], minlength=n_regimes) / len(regimes[b])
    return 0.5 * float(np.abs(pa - pb).sum())


# ------------------------------------------------------------------------ windows


@dataclass(frozen=True)
class WindowSpec:
    recent_steps: int = 8
    periodic_days: int = 3
    periodic_steps_per_day: int = 1

    @property
    def length(self) -> int:
        return self.periodic_days * self.periodic_steps_per_day + self.recent_steps

    def offsets(self, steps_per_day: int) -> np.ndarray:
        """Input step offsets relative to the target, oldest first."""
        if self.recent_steps < 1 or self.periodic_days < 0 or self.periodic_steps_per_day < 0:
            raise ValidationError(f"invalid window spec {self}")
        p = self.periodic_steps_per_day
        around = np.arange(-((p - 1) // 2), p // 2 + 1) if p else np.arange(0)
        periodic = [-day * steps_per_day + o for day in range(self.periodic_days, 0, -1) for o in around]
        recent = list(range(-self.recent_steps, 0))
        return np.asarray(periodic + recent, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Sample:
    flows: np.ndarray  # shared [τ, N, d] view of the source dataset
    input_indices: np.ndarray  # [T]
    target_time_index: int
    temporal_label: int
    load_label: np.ndarray  # [N, d]
    scenario_tags: frozenset

    @property
    def inputs(self) -> np.ndarray:
        return self.flows[self.input_indices]

    @property
    def target(self) -> np.ndarray:
        return self.flows[self.target_time_index]


def earliest_target(spec: WindowSpec, steps_per_day: int) -> int:
    return int(-spec.offsets(steps_per_day).min())


def split_sizes(n: int, ratios=(7, 1, 2)) -> tuple[int, int, int]:
    total = float(sum(ratios))
    n_train = int(np.floor(n * ratios[0] / total + 0.5))
    n_val = int(np.floor(n * ratios[1] / total + 0.5))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def make_windows(ds: Dataset, spec: WindowSpec = WindowSpec(), cp: CapacityTable | None = None,
                 ratios=(7, 1, 2)) -> list[Sample]:
    """One sample per admissible target step.

    Load labels need the training-set capacity; when ``cp`` is not given it is
    computed from the steps up to the last target that ``chrono_split`` will
    place in the training segment.
    """
    offsets = spec.offsets(ds.steps_per_day)
    first = int(-offsets.min())
    if first >= ds.steps:
        raise InsufficientHistoryError(
            f"window needs {first} steps of history but the dataset has {ds.steps} steps"
        )
    if cp is None:
        n_train, _, _ = split_sizes(ds.steps - first, ratios)
        cp = capacity(ds.flows[: first + max(n_train, 1)])
    hol = ds.holiday_mask
    samples = []
    for t in range(first, ds.steps):
        tags = {"holiday" if hol[t] else "workday"}
        tags.update(f"context:{name}={int(col[t])}" for name, col in ds.context_columns.items())
        samples.append(Sample(
            flows=ds.flows,
            input_indices=offsets + t,
            target_time_index=t,
            temporal_label=temporal_index(ds.timestamp(t), bool(hol[t])),
            load_label=load_level(ds.flows[t], cp),
            scenario_tags=frozenset(tags),
        ))
    return samples


def collate(samples: Sequence[Sample]) -> dict[str, np.ndarray]:
    """Stack samples into batch arrays (inputs [B,T,N,d], target [B,N,d], ...)."""
    flows = samples[0].flows
    idx = np.stack([s.input_indices for s in samples])
    t = np.array([s.target_time_index for s in samples])
    return {
        "inputs": flows[idx],
        "target": flows[t],
        "temporal": np.array([s.temporal_label for s in samples], dtype=np.int64),
        "load": np.stack([s.load_label for s in samples]),
        "time_index": t,
    }


def chrono_split(samples: Sequence[Sample], ratios=(7, 1, 2)) -> tuple[list, list, list]:
    """Contiguous chronological train/val/test segments, sizes rounded half up."""
    if not samples:
        raise ValidationError("cannot split an empty sample sequence")
    ordered = sorted(samples, key=lambda s: s.target_time_index)
    n_train, n_val, _ = split_sizes(len(ordered), ratios)
    return ordered[:n_train], ordered[n_train:n_train + n_val], ordered[n_train + n_val:]


# ---------------------------------------------------------------------- scenarios


def ood_filter(samples: Sequence[Sample], kind: str, clusters: np.ndarray | None = None
               ) -> tuple[list[Sample], np.ndarray | None]:
    """Select the samples of an evaluation scenario.

    ``kind`` is ``all``, ``workday``, ``holiday``, ``cluster:<id>`` or
    ``context:<name>=<value>``. Returns the samples and, for cluster
    scenarios, a boolean node mask; the mask is None otherwise.
    """
    if kind == "all":
        return list(samples), None
    if kind in ("workday", "holiday"):
        return [s for s in samples if kind in s.scenario_tags], None
    if kind.startswith("cluster:"):
        if clusters is None:
            raise UnknownScenarioError(f"{kind}: no cluster assignment supplied")
        try:
            c = int(kind.split(":", 1)[1])
        except ValueError as exc:
            raise UnknownScenarioError(f"malformed cluster scenario {kind!r}") from exc
        mask = np.asarray(clusters) == c
        if not mask.any():
            raise UnknownScenarioError(f"cluster {c} has no member nodes")
        return list(samples), mask
    if kind.startswith("context:") and "=" in kind:
        name = kind[len("context:"):].split("=", 1)[0]
        prefix = f"context:{name}="
        if not any(tag.startswith(prefix) for s in samples for tag in s.scenario_tags):
            raise UnknownScenarioError(f"no context column named {name!r}")
        return [s for s in samples if kind in s.scenario_tags], None
    raise UnknownScenarioError(f"unknown scenario {kind!r}")
