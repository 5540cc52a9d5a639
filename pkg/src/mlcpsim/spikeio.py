"""Spike-train dataset handling: loading, validation, writing, synthesis.

A dataset is a directory with a trial manifest and one event file per trial:

    manifest.csv          header ``trial_id,label,onset_us,duration_us``
    events/<trial_id>.csv header ``time_us,channel``
    meta.txt              ``key = value`` lines: channel_count, class_count,
                          plus free-form metadata

All files are UTF-8 with LF line endings and no quoting.  Timestamps are
integer microseconds from trial start.  Event rows are sorted non-decreasing
in time.  ``meta.txt`` is written by :func:`write_dataset` and read when
present; without it channel and class counts are inferred from the data.

The synthetic generator produces tuned inhomogeneous-Poisson trials as a
stand-in for recorded motor-cortex units: each neuron prefers one movement
class, fires at a baseline rate at rest and ramps to a tuned peak around
movement onset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

MANIFEST_NAME = "manifest.csv"
META_NAME = "meta.txt"
EVENTS_DIR = "events"

MANIFEST_HEADER = "trial_id,label,onset_us,duration_us"
EVENTS_HEADER = "time_us,channel"


class DatasetError(Exception):
    """Base error for dataset parsing/validation problems."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = None if path is None else str(path)
        self.line = line


class MissingManifestError(DatasetError):
    """The dataset directory has no manifest file."""


class BadTimestampError(DatasetError):
    """An event timestamp is negative or out of order."""


class ChannelRangeError(DatasetError):
    """An event names a channel outside the configured channel count."""


class LabelRangeError(DatasetError):
    """A trial label is outside [1, class_count]."""


class SpikeEvent(NamedTuple):
    """One spike: time in integer microseconds from trial start, channel index."""

    time: int
    channel: int


@dataclass
class Trial:
    """A labeled trial of spike events.

    ``onset`` is the movement-onset time in microseconds from trial start
    (nominally 1 s); ``duration`` the trial length.  Events are sorted
    non-decreasing in time.
    """

    id: str
    label: int
    onset: int
    duration: int
    events: list[SpikeEvent] = field(default_factory=list)

    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=np.int64)

    def channels(self) -> np.ndarray:
        return np.array([e.channel for e in self.events], dtype=np.int64)


@dataclass
class SpikeDataset:
    """A set of labeled trials over ``channel_count`` channels and ``class_count`` classes."""

    trials: list[Trial]
    channel_count: int
    class_count: int
    metadata: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        for trial in self.trials:
            if not (1 <= trial.label <= self.class_count):
                raise LabelRangeError(
                    f"trial {trial.id!r}: label {trial.label} outside [1, {self.class_count}]"
                )
            if not (0 <= trial.onset <= trial.duration):
                raise DatasetError(
                    f"trial {trial.id!r}: onset {trial.onset} outside [0, {trial.duration}]"
                )
            prev = -1
            for ev in trial.events:
                if ev.time < 0 or ev.time < prev:
                    raise BadTimestampError(
                        f"trial {trial.id!r}: bad event time {ev.time} after {prev}"
                    )
                if not (0 <= ev.channel < self.channel_count):
                    raise ChannelRangeError(
                        f"trial {trial.id!r}: channel {ev.channel} outside [0, {self.channel_count})"
                    )
                prev = ev.time


@dataclass
class SynthParams:
    """Parameters of the tuned-Poisson synthetic dataset generator.

    Rates are in Hz; ramp times are milliseconds relative to movement onset
    (negative = before onset).  Each neuron's preferred class is assigned
    round-robin; the peak rate is attenuated by a raised cosine of the
    circular class distance over ``tuning_width`` classes.
    """

    q: int = 30
    m: int = 12
    baseline_rate: float = 8.0
    peak_rate: float = 90.0
    tuning_width: float = 2.0
    ramp_start_ms: float = -300.0
    ramp_peak_ms: float = -100.0
    decay_start_ms: float = 100.0
    decay_end_ms: float = 300.0
    onset_ms: float = 1000.0
    trial_duration_ms: float = 2000.0
    trials_per_class: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.q < 1 or self.m < 1:
            raise ValueError("q and m must be >= 1")
        if not (self.peak_rate >= self.baseline_rate >= 0.0):
            raise ValueError("need peak_rate >= baseline_rate >= 0")
        if self.trials_per_class < 1:
            raise ValueError("trials_per_class must be >= 1")
        if not (self.ramp_start_ms <= self.ramp_peak_ms <= self.decay_start_ms <= self.decay_end_ms):
            raise ValueError("need ramp_start <= ramp_peak <= decay_start <= decay_end")
        if self.tuning_width <= 0:
            raise ValueError("tuning_width must be positive")


def class_distance(a: int, b: int, m: int) -> int:
    """Circular distance between class labels ``a`` and ``b`` on a ring of ``m``."""
    d = abs(a - b) % m
    return min(d, m - d)


def tuned_peak_rate(params: SynthParams, neuron_class: int, trial_class: int) -> float:
    """Peak firing rate of a neuron for a given trial class.

    Raised-cosine attenuation: full ``peak_rate`` at distance 0, falling to
    ``baseline_rate`` at ``tuning_width`` classes away and beyond.
    """
    d = class_distance(neuron_class, trial_class, params.m)
    u = min(d / params.tuning_width, 1.0)
    atten = 0.5 * (1.0 + math.cos(math.pi * u))
    return params.baseline_rate + (params.peak_rate - params.baseline_rate) * atten


def rate_at(params: SynthParams, peak: float, t_us: int) -> float:
    """Programmed firing rate (Hz) at time ``t_us`` for a neuron with the given tuned peak.

    The profile is trapezoidal around the movement onset: baseline, a linear
    rise over [ramp_start, ramp_peak], a hold at the tuned peak through
    decay_start, then a linear return to baseline by decay_end.
    """
    ramp_start = (params.onset_ms + params.ramp_start_ms) * 1000.0
    ramp_peak = (params.onset_ms + params.ramp_peak_ms) * 1000.0
    decay_start = (params.onset_ms + params.decay_start_ms) * 1000.0
    decay_end = (params.onset_ms + params.decay_end_ms) * 1000.0
    if t_us < ramp_start or t_us >= decay_end:
        return params.baseline_rate
    if t_us < ramp_peak:
        frac = (t_us - ramp_start) / (ramp_peak - ramp_start)
        return params.baseline_rate + (peak - params.baseline_rate) * frac
    if t_us < decay_start:
        return peak
    frac = (t_us - decay_start) / (decay_end - decay_start)
    return peak + (params.baseline_rate - peak) * frac


def _poisson_times(rng: np.random.Generator, params: SynthParams, peak: float) -> np.ndarray:
    """Inhomogeneous-Poisson event times (int us) for one neuron in one trial, by thinning."""
    duration_us = int(round(params.trial_duration_ms * 1000.0))
    rate_max = max(peak, params.baseline_rate)
    if rate_max <= 0.0 or duration_us <= 0:
        return np.empty(0, dtype=np.int64)
    n = rng.poisson(rate_max * duration_us * 1e-6)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    times = np.sort(rng.integers(0, duration_us, size=n))
    accept = rng.random(n) * rate_max
    rates = np.array([rate_at(params, peak, int(t)) for t in times])
    return times[accept < rates].astype(np.int64)


def gen_synthetic(params: SynthParams) -> SpikeDataset:
    """Generate a tuned-Poisson dataset, deterministic in ``params.seed``.

    Trials are generated class-major (``trials_per_class`` trials for class 1,
    then class 2, ...), neurons in index order within a trial, so the random
    stream consumption is fixed.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    duration_us = int(round(params.trial_duration_ms * 1000.0))
    onset_us = int(round(params.onset_ms * 1000.0))
    preferred = [(j % params.m) + 1 for j in range(params.q)]

    trials = []
    for cls in range(1, params.m + 1):
        for rep in range(params.trials_per_class):
            all_times = []
            all_channels = []
            for j in range(params.q):
                peak = tuned_peak_rate(params, preferred[j], cls)
                t = _poisson_times(rng, params, peak)
                all_times.append(t)
                all_channels.append(np.full(t.shape, j, dtype=np.int64))
            times = np.concatenate(all_times)
            channels = np.concatenate(all_channels)
            order = np.lexsort((channels, times))
            events = [SpikeEvent(int(t), int(c)) for t, c in zip(times[order], channels[order])]
            trials.append(
                Trial(
                    id=f"c{cls:02d}_r{rep:03d}",
                    label=cls,
                    onset=onset_us,
                    duration=duration_us,
                    events=events,
                )
            )
    metadata = {"source": "synthetic", "seed": str(params.seed)}
    ds = SpikeDataset(trials, channel_count=params.q, class_count=params.m, metadata=metadata)
    ds.validate()
    return ds


def _read_lines(path: Path) -> list[str]:
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _parse_int(value: str, what: str, path: Path, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise DatasetError(f"bad {what}: {value!r}", path, line) from None


def _parse_meta(path: Path) -> tuple[int | None, int | None, dict[str, str]]:
    q = m = None
    metadata: dict[str, str] = {}
    for i, line in enumerate(_read_lines(path), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DatasetError(f"bad meta line: {line!r}", path, i)
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key == "channel_count":
            q = _parse_int(value, "channel_count", path, i)
        elif key == "class_count":
            m = _parse_int(value, "class_count", path, i)
        else:
            metadata[key] = value
    return q, m, metadata


def parse_dataset(root_path: str | Path) -> SpikeDataset:
    """Load and validate a dataset directory.

    Raises a distinct :class:`DatasetError` subclass naming file and line for
    a missing manifest, unsorted or negative timestamps, channels outside the
    channel count, and labels outside the class count.
    """
    root = Path(root_path)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise MissingManifestError("manifest not found", manifest)

    meta_path = root / META_NAME
    q = m = None
    metadata: dict[str, str] = {}
    if meta_path.is_file():
        q, m, metadata = _parse_meta(meta_path)

    lines = _read_lines(manifest)
    if not lines or lines[0] != MANIFEST_HEADER:
        raise DatasetError(f"expected header {MANIFEST_HEADER!r}", manifest, 1)

    trials = []
    max_channel = -1
    max_label = 0
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DatasetError(f"expected 4 fields, got {len(parts)}", manifest, i)
        trial_id = parts[0]
        label = _parse_int(parts[1], "label", manifest, i)
        onset = _parse_int(parts[2], "onset_us", manifest, i)
        duration = _parse_int(parts[3], "duration_us", manifest, i)
        if m is not None and not (1 <= label <= m):
            raise LabelRangeError(f"label {label} outside [1, {m}]", manifest, i)
        if label < 1:
            raise LabelRangeError(f"label {label} below 1", manifest, i)
        max_label = max(max_label, label)

        events_path = root / EVENTS_DIR / f"{trial_id}.csv"
        if not events_path.is_file():
            raise DatasetError("event file not found", events_path)
        ev_lines = _read_lines(events_path)
        if not ev_lines or ev_lines[0] != EVENTS_HEADER:
            raise DatasetError(f"expected header {EVENTS_HEADER!r}", events_path, 1)
        events = []
        prev_time = -1
        for j, ev_line in enumerate(ev_lines[1:], start=2):
            if not ev_line:
                continue
            ev_parts = ev_line.split(",")
            if len(ev_parts) != 2:
                raise DatasetError(f"expected 2 fields, got {len(ev_parts)}", events_path, j)
            t = _parse_int(ev_parts[0], "time_us", events_path, j)
            ch = _parse_int(ev_parts[1], "channel", events_path, j)
            if t < 0:
                raise BadTimestampError(f"negative timestamp {t}", events_path, j)
            if t < prev_time:
                raise BadTimestampError(f"timestamp {t} after {prev_time}", events_path, j)
            if ch < 0 or (q is not None and ch >= q):
                raise ChannelRangeError(f"channel {ch} outside [0, {q})", events_path, j)
            max_channel = max(max_channel, ch)
            events.append(SpikeEvent(t, ch))
            prev_time = t
        trials.append(Trial(trial_id, label, onset, duration, events))

    if q is None:
        q = max(max_channel + 1, 1)
    if m is None:
        m = max(max_label, 1)
    ds = SpikeDataset(trials, channel_count=q, class_count=m, metadata=metadata)
    ds.validate()
    return ds


def write_dataset(dataset: SpikeDataset, root_path: str | Path) -> None:
    """Write a dataset directory (manifest, meta, per-trial event files).

    Output is deterministic: trial order is preserved, metadata keys are
    sorted, lines are LF-terminated.  Datasets written here round-trip
    byte-for-byte through :func:`parse_dataset`.
    """
    dataset.validate()
    root = Path(root_path)
    (root / EVENTS_DIR).mkdir(parents=True, exist_ok=True)

    manifest_lines = [MANIFEST_HEADER]
    for trial in dataset.trials:
        manifest_lines.append(f"{trial.id},{trial.label},{trial.onset},{trial.duration}")
    (root / MANIFEST_NAME).write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")

    meta_lines = [
        f"channel_count = {dataset.channel_count}",
        f"class_count = {dataset.class_count}",
    ]
    for key in sorted(dataset.metadata):
        value = dataset.metadata[key]
        if "\n" in key or "\n" in value:
            raise DatasetError(f"metadata entry {key!r} contains a newline")
        meta_lines.append(f"{key} = {value}")
    (root / META_NAME).write_text("\n".join(meta_lines) + "\n", encoding="utf-8")

    for trial in dataset.trials:
        ev_lines = [EVENTS_HEADER]
        for ev in trial.events:
            ev_lines.append(f"{ev.time},{ev.channel}")
        path = root / EVENTS_DIR / f"{trial.id}.csv"
        path.write_text("\n".join(ev_lines) + "\n", encoding="utf-8")
