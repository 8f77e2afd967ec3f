"""Glucose time-series preprocessing.

Takes raw per-patient glucose/insulin/carbohydrate series through the
steps needed before model training: unit conversion, meal accumulation,
resampling to a common 5-minute grid, gap filling, supervised windowing,
chronological train/validation/test splitting, and per-patient
standardization. Missing glucose readings are carried as NaN; insulin and
carbohydrate channels are event diaries, so absent entries mean zero.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CHANNELS = ("glucose", "insulin", "cho")
BASE_PERIOD_MINUTES = 5
HISTORY_MINUTES = 180
HORIZON_MINUTES = 30
MINUTES_PER_DAY = 1440


class SeriesError(ValueError):
    """Malformed or inconsistent patient series data."""


@dataclass
class PatientSeries:
    """One patient's aligned signals on a constant-period grid.

    glucose is mg/dL with NaN marking missing readings; insulin is in
    units (or pmol before conversion, see insulin_unit); cho is grams per
    step, already accumulated at meal starts unless loaded from a
    rate-style source.
    """

    patient_id: str
    dataset_tag: str
    sampling_period: int
    timestamps: np.ndarray
    glucose: np.ndarray
    insulin: np.ndarray
    cho: np.ndarray
    insulin_unit: str = "U"

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.glucose = np.asarray(self.glucose, dtype=float)
        self.insulin = np.asarray(self.insulin, dtype=float)
        self.cho = np.asarray(self.cho, dtype=float)
        n = len(self.timestamps)
        if not (len(self.glucose) == len(self.insulin) == len(self.cho) == n):
            raise SeriesError("channel lengths differ")
        if self.sampling_period <= 0:
            raise SeriesError("sampling_period must be positive")
        if n > 1:
            gaps = np.diff(self.timestamps)
            if np.any(gaps <= 0):
                raise SeriesError("timestamps must be strictly increasing")
            if np.any(gaps != self.sampling_period):
                raise SeriesError("timestamps must be evenly spaced at sampling_period")
        known = ~np.isnan(self.glucose)
        if np.any(~np.isfinite(self.glucose[known])) or np.any(self.glucose[known] <= 0):
            raise SeriesError("known glucose values must be finite and > 0")
        for name, arr in (("insulin", self.insulin), ("cho", self.cho)):
            if np.any(~np.isfinite(arr)) or np.any(arr < 0):
                raise SeriesError(f"{name} values must be finite and >= 0")

    def __len__(self):
        return len(self.timestamps)

    @property
    def steps_per_day(self) -> int:
        return MINUTES_PER_DAY // self.sampling_period


def load_csv(path, patient_id: str | None = None, dataset_tag: str = "") -> PatientSeries:
    """Load a series from CSV with columns timestamp_min, glucose_mgdl,
    insulin_u (or insulin_pmol), cho_g. Empty glucose cells become NaN;
    empty insulin/cho cells become 0."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SeriesError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        insulin_unit = "U"
        if "insulin_pmol" in header:
            insulin_unit = "pmol"
            insulin_col = header.index("insulin_pmol")
        elif "insulin_u" in header:
            insulin_col = header.index("insulin_u")
        else:
            raise SeriesError(f"{path}: missing insulin_u/insulin_pmol column")
        try:
            ts_col = header.index("timestamp_min")
            glu_col = header.index("glucose_mgdl")
            cho_col = header.index("cho_g")
        except ValueError as exc:
            raise SeriesError(f"{path}: missing column ({exc})") from None

        timestamps, glucose, insulin, cho = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                timestamps.append(int(row[ts_col]))
                cell = row[glu_col].strip()
                glucose.append(float(cell) if cell else np.nan)
                insulin.append(float(row[insulin_col]) if row[insulin_col].strip() else 0.0)
                cho.append(float(row[cho_col]) if row[cho_col].strip() else 0.0)
            except (ValueError, IndexError) as exc:
                raise SeriesError(f"{path}: line {line_no}: {exc}") from None

    timestamps = np.asarray(timestamps, dtype=np.int64)
    if len(timestamps) > 1:
        gaps = np.diff(timestamps)
        if np.any(gaps <= 0):
            bad = int(np.argmax(gaps <= 0)) + 2 + 1  # header + 1-based + next row
            raise SeriesError(f"{path}: line {bad}: timestamps not increasing")
        period = int(gaps[0])
    else:
        period = BASE_PERIOD_MINUTES
    return PatientSeries(
        patient_id=patient_id or path.stem,
        dataset_tag=dataset_tag,
        sampling_period=period,
        timestamps=timestamps - timestamps[0],
        glucose=glucose,
        insulin=insulin,
        cho=cho,
        insulin_unit=insulin_unit,
    )


def write_csv(series: PatientSeries, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    insulin_col = "insulin_pmol" if series.insulin_unit == "pmol" else "insulin_u"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_min", "glucose_mgdl", insulin_col, "cho_g"])
        for t, g, i, c in zip(series.timestamps, series.glucose, series.insulin, series.cho):
            writer.writerow([int(t), "" if np.isnan(g) else repr(float(g)),
                             repr(float(i)), repr(float(c))])


def convert_insulin_pmol_to_units(series: PatientSeries) -> PatientSeries:
    """Divide the insulin channel by 6000 (pmol -> units)."""
    if series.insulin_unit != "pmol":
        warnings.warn(f"{series.patient_id}: insulin already in units, skipping conversion")
        return series
    return replace(series, insulin=series.insulin / 6000.0, insulin_unit="U")


def accumulate_meal_cho(series: PatientSeries, meal_duration: int | None = None) -> PatientSeries:
    """Collapse rate-style carbohydrate entries (g/min) into meal totals.

    Each contiguous nonzero run is summed and placed on its first step;
    if meal_duration (minutes) is given, runs longer than that are treated
    as back-to-back meals and split at duration boundaries. Total grams
    are conserved.
    """
    cho = series.cho * series.sampling_period  # g/min over a step -> grams
    out = np.zeros_like(cho)
    max_run = None
    if meal_duration is not None:
        max_run = max(1, meal_duration // series.sampling_period)
    i = 0
    n = len(cho)
    while i < n:
        if cho[i] == 0.0:
            i += 1
            continue
        j = i
        while j < n and cho[j] != 0.0 and (max_run is None or j - i < max_run):
            j += 1
        out[i] = cho[i:j].sum()
        i = j
    return replace(series, cho=out)


def resample(series: PatientSeries, target_period: int) -> PatientSeries:
    """Resample to a new constant period.

    Downsampling aggregates glucose by (NaN-aware) mean and insulin/cho by
    sum; upsampling inserts steps with missing glucose and zero
    insulin/cho. Both directions conserve total insulin and cho. The
    target period must be a multiple or divisor of the current one.
    """
    period = series.sampling_period
    if target_period == period:
        return series
    if target_period % period == 0:
        factor = target_period // period
        n = len(series)
        n_bins = (n + factor - 1) // factor
        pad = n_bins * factor - n
        glucose = np.concatenate([series.glucose, np.full(pad, np.nan)]).reshape(n_bins, factor)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN bins
            glucose = np.nanmean(glucose, axis=1)
        insulin = np.concatenate([series.insulin, np.zeros(pad)]).reshape(n_bins, factor).sum(axis=1)
        cho = np.concatenate([series.cho, np.zeros(pad)]).reshape(n_bins, factor).sum(axis=1)
        timestamps = series.timestamps[0] + target_period * np.arange(n_bins)
    elif period % target_period == 0:
        factor = period // target_period
        n_new = (len(series) - 1) * factor + 1
        glucose = np.full(n_new, np.nan)
        insulin = np.zeros(n_new)
        cho = np.zeros(n_new)
        glucose[::factor] = series.glucose
        insulin[::factor] = series.insulin
        cho[::factor] = series.cho
        timestamps = series.timestamps[0] + target_period * np.arange(n_new)
    else:
        raise SeriesError(
            f"cannot resample period {period} to {target_period}: not a multiple/divisor")
    return replace(series, sampling_period=target_period, timestamps=timestamps,
                   glucose=glucose, insulin=insulin, cho=cho)


def clean_glucose_spikes(series: PatientSeries, max_delta: float = 40.0) -> PatientSeries:
    """Mark glucose readings missing after implausibly fast single-step jumps.

    A reading is dropped when the change from the previous known reading
    exceeds max_delta mg/dL per 5 minutes (scaled to the series period).
    """
    threshold = max_delta * series.sampling_period / 5.0
    glucose = series.glucose.copy()
    known = ~np.isnan(series.glucose)
    jump = np.zeros(len(glucose), dtype=bool)
    jump[1:] = known[1:] & known[:-1] & (
        np.abs(np.diff(np.where(known, series.glucose, 0.0))) > threshold)
    glucose[jump] = np.nan
    return replace(series, glucose=glucose)


def fill_glucose(series: PatientSeries) -> PatientSeries:
    """Fill missing glucose: linear interpolation inside, linear
    extrapolation from the two nearest known values at the edges."""
    glucose = series.glucose.copy()
    known = np.flatnonzero(~np.isnan(glucose))
    if len(known) < 2:
        raise SeriesError(f"{series.patient_id}: need >= 2 known glucose values to fill")
    if len(known) == len(glucose):
        return series
    idx = np.arange(len(glucose))
    filled = np.interp(idx, known, glucose[known])
    first, second = known[0], known[1]
    slope = (glucose[second] - glucose[first]) / (second - first)
    filled[:first] = glucose[first] + slope * (idx[:first] - first)
    last, prev = known[-1], known[-2]
    slope = (glucose[last] - glucose[prev]) / (last - prev)
    filled[last + 1:] = glucose[last] + slope * (idx[last + 1:] - last)
    return replace(series, glucose=filled)


@dataclass
class SampleSet:
    """Windowed supervised samples for one or more patients.

    history is (n, 3, H) in channel order glucose/insulin/cho; target is
    the glucose value horizon_steps after each window. target_step indexes
    the target back into the source series, which is how samples are
    assigned to chronological splits. raw_target keeps the mg/dL ground
    truth across standardization.
    """

    history: np.ndarray
    target: np.ndarray
    target_step: np.ndarray
    patients: list[str]
    patient_idx: np.ndarray
    history_steps: int
    horizon_steps: int
    standardizers: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    raw_target: np.ndarray | None = None
    domain_index: np.ndarray | None = None

    def __len__(self):
        return len(self.target)

    def patient_of(self, i: int) -> str:
        return self.patients[self.patient_idx[i]]

    def uids(self) -> list[tuple[str, int]]:
        return [(self.patients[p], int(t))
                for p, t in zip(self.patient_idx, self.target_step)]

    def take(self, indices) -> "SampleSet":
        indices = np.asarray(indices)
        return SampleSet(
            history=self.history[indices],
            target=self.target[indices],
            target_step=self.target_step[indices],
            patients=list(self.patients),
            patient_idx=self.patient_idx[indices],
            history_steps=self.history_steps,
            horizon_steps=self.horizon_steps,
            standardizers=dict(self.standardizers),
            raw_target=None if self.raw_target is None else self.raw_target[indices],
            domain_index=None if self.domain_index is None else self.domain_index[indices],
        )


def create_samples(series: PatientSeries, history_minutes: int = HISTORY_MINUTES,
                   ph: int = HORIZON_MINUTES) -> SampleSet:
    """Slide a fully-known history window over the series and pair it with
    the glucose value ph minutes ahead; windows with any missing history
    entry or an unknown target are discarded."""
    period = series.sampling_period
    if history_minutes % period or ph % period:
        raise SeriesError("history and horizon must be multiples of the sampling period")
    h = history_minutes // period
    horizon = ph // period
    n = len(series)
    if n < h + horizon:
        warnings.warn(f"{series.patient_id}: series too short for any sample")
        empty = np.empty((0, 3, h))
        return SampleSet(empty, np.empty(0), np.empty(0, dtype=np.int64),
                         [series.patient_id], np.empty(0, dtype=np.int64), h, horizon)

    stacked = np.stack([series.glucose, series.insulin, series.cho])  # (3, n)
    windows = np.lib.stride_tricks.sliding_window_view(stacked, h, axis=1)  # (3, n-h+1, h)
    ends = np.arange(h - 1, n - horizon)  # window end index t
    targets = series.glucose[ends + horizon]
    complete = ~np.isnan(windows[0, ends - h + 1]).any(axis=1) & ~np.isnan(targets)
    ends = ends[complete]
    history = np.ascontiguousarray(windows[:, ends - h + 1].transpose(1, 0, 2))
    return SampleSet(
        history=history.astype(float),
        target=targets[complete].astype(float),
        target_step=(ends + horizon).astype(np.int64),
        patients=[series.patient_id],
        patient_idx=np.zeros(len(ends), dtype=np.int64),
        history_steps=h,
        horizon_steps=horizon,
    )


@dataclass
class SplitSpec:
    """Chronological split policy: test days are cut from the series end,
    the remainder is partitioned into cv_folds contiguous validation
    blocks (each 1/cv_folds of it, 20% for the default 5 folds)."""

    test_days: int = 10
    test_days_overrides: dict[str, int] = field(default_factory=dict)
    valid_fraction: float = 0.2
    cv_folds: int = 5

    def __post_init__(self):
        if not 0 < self.valid_fraction < 1:
            raise ValueError("valid_fraction must be in (0, 1)")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if abs(self.valid_fraction - 1.0 / self.cv_folds) > 1e-9:
            raise ValueError("valid_fraction must equal 1/cv_folds")

    def test_days_for(self, dataset_tag: str) -> int:
        return self.test_days_overrides.get(dataset_tag, self.test_days)


@dataclass
class SplitIndices:
    """Step-index ranges: test is [test_start, n_steps); fold block k is
    [block_bounds[k], block_bounds[k+1]). Samples map in by target step."""

    n_steps: int
    test_start: int
    block_bounds: np.ndarray

    @property
    def cv_folds(self) -> int:
        return len(self.block_bounds) - 1

    def fold_ranges(self, fold: int) -> tuple[tuple[int, int], tuple[int, int]]:
        valid = (int(self.block_bounds[fold]), int(self.block_bounds[fold + 1]))
        return valid, (0, self.test_start)

    def sample_masks(self, samples: SampleSet, fold: int):
        """Boolean (train, valid, test) masks over samples, by target step."""
        step = samples.target_step
        test = step >= self.test_start
        lo, hi = int(self.block_bounds[fold]), int(self.block_bounds[fold + 1])
        valid = (step >= lo) & (step < hi)
        train = ~test & ~valid
        return train, valid, test

    def to_json(self) -> dict:
        return {"n_steps": self.n_steps, "test_start": self.test_start,
                "block_bounds": [int(b) for b in self.block_bounds]}


def split(series: PatientSeries, spec: SplitSpec,
          max_train_days: int | None = None) -> SplitIndices:
    """Chronological split: the last test_days become the test range and
    the remaining prefix is cut into cv_folds contiguous blocks.

    Day boundaries count back from the series end. max_train_days, when
    given, truncates the non-test prefix to its most recent whole days
    (scarce-data experiments)."""
    steps_per_day = series.steps_per_day
    test_steps = spec.test_days_for(series.dataset_tag) * steps_per_day
    n = len(series)
    non_test = n - test_steps
    if non_test < spec.cv_folds:
        raise SeriesError(
            f"{series.patient_id}: {n} steps cannot hold {test_steps} test steps "
            f"plus {spec.cv_folds} folds")
    start = 0
    if max_train_days is not None:
        start = max(0, non_test - max_train_days * steps_per_day)
    bounds = start + np.round(
        np.linspace(0, non_test - start, spec.cv_folds + 1)).astype(np.int64)
    return SplitIndices(n_steps=n, test_start=non_test, block_bounds=bounds)


def standardize(samples: SampleSet, train_indices) -> SampleSet:
    """Standardize each patient's channels to zero mean / unit variance
    using only that patient's training samples (population std); the
    target uses the glucose standardizer. Standardizers are stored for
    inversion. Raises if any training channel is degenerate."""
    train_indices = np.asarray(train_indices)
    if train_indices.dtype == bool:
        train_indices = np.flatnonzero(train_indices)
    if len(train_indices) == 0:
        raise SeriesError("empty training range for standardization")

    history = samples.history.copy()
    target = samples.target.copy()
    standardizers: dict[str, dict[str, tuple[float, float]]] = {}
    train_mask = np.zeros(len(samples), dtype=bool)
    train_mask[train_indices] = True
    for p, pid in enumerate(samples.patients):
        rows = samples.patient_idx == p
        train_rows = rows & train_mask
        if not train_rows.any():
            if rows.any():
                raise SeriesError(f"{pid}: no training samples to standardize against")
            continue
        per_channel = {}
        for c, channel in enumerate(CHANNELS):
            values = samples.history[train_rows, c, :]
            mean = float(values.mean())
            std = float(values.std())
            if std == 0.0:
                raise SeriesError(f"{pid}: channel {channel!r} is constant on the training set")
            per_channel[channel] = (mean, std)
            history[rows, c, :] = (history[rows, c, :] - mean) / std
        g_mean, g_std = per_channel["glucose"]
        target[rows] = (target[rows] - g_mean) / g_std
        standardizers[pid] = per_channel

    return SampleSet(
        history=history,
        target=target,
        target_step=samples.target_step.copy(),
        patients=list(samples.patients),
        patient_idx=samples.patient_idx.copy(),
        history_steps=samples.history_steps,
        horizon_steps=samples.horizon_steps,
        standardizers=standardizers,
        raw_target=samples.target.copy() if samples.raw_target is None else samples.raw_target.copy(),
        domain_index=None if samples.domain_index is None else samples.domain_index.copy(),
    )


def destandardize_glucose(samples: SampleSet, values: np.ndarray,
                          patient_id: str) -> np.ndarray:
    mean, std = samples.standardizers[patient_id]["glucose"]
    return np.asarray(values) * std + mean


def pool_samples(sets: list[SampleSet]) -> SampleSet:
    """Concatenate per-patient sets and assign contiguous domain indices
    in the given patient order."""
    if not sets:
        raise ValueError("nothing to pool")
    patients: list[str] = []
    for s in sets:
        if len(s.patients) != 1:
            raise ValueError("pool_samples expects single-patient sets")
        patients.append(s.patients[0])
    if len(set(patients)) != len(patients):
        raise ValueError("duplicate patient ids")
    h = sets[0].history_steps
    horizon = sets[0].horizon_steps
    standardizers = {}
    for s in sets:
        standardizers.update(s.standardizers)
    idx = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(sets)])
    return SampleSet(
        history=np.concatenate([s.history for s in sets]),
        target=np.concatenate([s.target for s in sets]),
        target_step=np.concatenate([s.target_step for s in sets]),
        patients=patients,
        patient_idx=idx,
        history_steps=h,
        horizon_steps=horizon,
        standardizers=standardizers,
        raw_target=np.concatenate([
            s.raw_target if s.raw_target is not None else s.target for s in sets]),
        domain_index=idx.copy(),
    )


def save_standardizers(path, standardizers: dict[str, dict[str, tuple[float, float]]]):
    payload = {pid: {ch: {"mean": m, "std": s} for ch, (m, s) in channels.items()}
               for pid, channels in standardizers.items()}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_standardizers(path) -> dict[str, dict[str, tuple[float, float]]]:
    payload = json.loads(Path(path).read_text())
    return {pid: {ch: (v["mean"], v["std"]) for ch, v in channels.items()}
            for pid, channels in payload.items()}
