"""Synthetic heterogeneous patient cohort generator.

Produces multi-patient, multi-dataset glucose/insulin/CHO series so every
transfer scenario can run at desk scale. A patient is a small discrete-time
glucose model: first-order relaxation toward a basal level, plus gamma-shaped
absorption responses to logged meals and boluses, plus Gaussian sensor noise.
Dataset-level parameter shifts create the between-source distribution
differences the transfer experiments need. No physiological fidelity is
claimed; the dynamics only have to be learnable and heterogeneous.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data
from .nn.seeds import stream

SIM_PERIOD = 5  # native simulation step, minutes
GLUCOSE_FLOOR = 20.0
GLUCOSE_CEIL = 600.0

# (low, high) draw ranges before dataset shifts are applied
BASE_RANGES = {
    "basal_glucose": (100.0, 140.0),
    "glucose_decay": (0.004, 0.012),       # 1/min
    "insulin_sensitivity": (25.0, 45.0),   # mg/dL per unit
    "carb_sensitivity": (2.8, 4.2),        # mg/dL per gram
    "insulin_peak_time": (50.0, 75.0),     # minutes
    "carb_peak_time": (30.0, 45.0),        # minutes
    "noise_std": (1.0, 2.5),               # mg/dL per step
}
BASE_MEALS = ((480, 50.0), (780, 70.0), (1140, 80.0))  # (minute of day, grams)
MEAL_SIZE_SPREAD = (0.8, 1.2)      # per-patient multiplier on all meals
BOLUS_BALANCE_SPREAD = (0.85, 1.15)  # bolus under/overdosing vs carb load


@dataclass
class PatientParams:
    patient_id: str
    basal_glucose: float
    glucose_decay: float
    insulin_sensitivity: float
    carb_sensitivity: float
    insulin_peak_time: float
    carb_peak_time: float
    noise_std: float
    meal_schedule: tuple[tuple[int, float], ...]
    bolus_per_gram: float
    meal_time_jitter: float = 20.0   # minutes, uniform
    meal_gram_jitter: float = 0.15   # fraction, uniform

    def __post_init__(self):
        for name in ("glucose_decay", "insulin_sensitivity", "carb_sensitivity",
                     "insulin_peak_time", "carb_peak_time", "bolus_per_gram"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 70.0 <= self.basal_glucose <= 180.0:
            raise ValueError(f"basal_glucose {self.basal_glucose} outside [70, 180]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.glucose_decay * SIM_PERIOD >= 1.0:
            raise ValueError("glucose_decay too fast for a stable 5-minute step")


@dataclass
class DatasetShift:
    """Offsets/scales applied on top of the base parameter ranges, emulating
    systematic differences between data sources."""

    dataset_tag: str
    sampling_period: int = SIM_PERIOD
    virtual: bool = False
    basal_offset: float = 0.0
    insulin_sens_scale: float = 1.0
    carb_sens_scale: float = 1.0
    meal_scale: float = 1.0
    noise_scale: float = 1.0
    decay_scale: float = 1.0
    peak_shift: float = 0.0

    def __post_init__(self):
        if self.sampling_period % SIM_PERIOD != 0:
            raise ValueError("sampling_period must be a multiple of 5 minutes")

    @classmethod
    def from_dict(cls, payload: dict) -> "DatasetShift":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - allowed
        if unknown:
            raise ValueError(f"unknown dataset shift fields: {sorted(unknown)}")
        if "dataset_tag" not in payload:
            raise ValueError("dataset shift missing field 'dataset_tag'")
        return cls(**payload)


def draw_population(shift: DatasetShift, n_patients: int, seed: int) -> list[PatientParams]:
    """Draw shift-adjusted patient parameters; deterministic per seed."""
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    rng = stream(seed, "population", shift.dataset_tag)
    out = []
    for i in range(n_patients):
        draws = {name: rng.uniform(lo, hi) for name, (lo, hi) in BASE_RANGES.items()}
        size = rng.uniform(*MEAL_SIZE_SPREAD) * shift.meal_scale
        balance = rng.uniform(*BOLUS_BALANCE_SPREAD)
        meals = tuple((minute, grams * size) for minute, grams in BASE_MEALS)
        carb_sens = draws["carb_sensitivity"] * shift.carb_sens_scale
        insulin_sens = draws["insulin_sensitivity"] * shift.insulin_sens_scale
        out.append(PatientParams(
            patient_id=f"{shift.dataset_tag}_p{i:02d}",
            basal_glucose=draws["basal_glucose"] + shift.basal_offset,
            glucose_decay=draws["glucose_decay"] * shift.decay_scale,
            insulin_sensitivity=insulin_sens,
            carb_sensitivity=carb_sens,
            insulin_peak_time=draws["insulin_peak_time"] + shift.peak_shift,
            carb_peak_time=draws["carb_peak_time"] + shift.peak_shift,
            noise_std=draws["noise_std"] * shift.noise_scale,
            meal_schedule=meals,
            bolus_per_gram=carb_sens / insulin_sens * balance,
        ))
    return out


def _absorption_kernel(peak_minutes: float) -> np.ndarray:
    """Gamma-shaped response k(t) ~ (t/tp) exp(1 - t/tp) on the 5-minute
    grid, truncated at 6x the peak and normalized to unit sum."""
    horizon = max(2, int(math.ceil(6.0 * peak_minutes / SIM_PERIOD)))
    t = SIM_PERIOD * np.arange(1, horizon + 1)
    k = (t / peak_minutes) * np.exp(1.0 - t / peak_minutes)
    return k / k.sum()


def simulate_patient(params: PatientParams, days: int, seed: int,
                     dataset_tag: str = "") -> data.PatientSeries:
    """Simulate one patient at 5-minute steps.

    Meals follow the daily schedule with jittered times/sizes; a bolus
    proportional to the meal grams is logged at each meal start. Glucose
    follows G[t+1] = G[t] + a(basal - G[t]) - isf*Ieff[t] + csf*Ceff[t] + noise,
    clamped to [20, 600] mg/dL, where Ieff/Ceff convolve the event logs
    with the absorption kernels.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    rng = stream(seed, "sim", params.patient_id)
    steps_per_day = data.MINUTES_PER_DAY // SIM_PERIOD
    n = days * steps_per_day

    insulin = np.zeros(n)
    cho = np.zeros(n)
    for day in range(days):
        for minute, grams in params.meal_schedule:
            jitter = rng.uniform(-params.meal_time_jitter, params.meal_time_jitter)
            at = day * steps_per_day + int(round((minute + jitter) / SIM_PERIOD))
            at = min(max(at, day * steps_per_day), n - 1)
            actual = grams * (1.0 + rng.uniform(-params.meal_gram_jitter,
                                                params.meal_gram_jitter))
            cho[at] += actual
            insulin[at] += actual * params.bolus_per_gram

    k_ins = _absorption_kernel(params.insulin_peak_time)
    k_cho = _absorption_kernel(params.carb_peak_time)
    ins_eff = np.convolve(insulin, k_ins)[:n]
    cho_eff = np.convolve(cho, k_cho)[:n]
    noise = rng.normal(0.0, params.noise_std, size=n) if params.noise_std > 0 else np.zeros(n)

    decay = params.glucose_decay * SIM_PERIOD
    glucose = np.empty(n)
    glucose[0] = params.basal_glucose
    for t in range(n - 1):
        delta = (decay * (params.basal_glucose - glucose[t])
                 - params.insulin_sensitivity * ins_eff[t]
                 + params.carb_sensitivity * cho_eff[t]
                 + noise[t])
        glucose[t + 1] = min(max(glucose[t] + delta, GLUCOSE_FLOOR), GLUCOSE_CEIL)

    return data.PatientSeries(
        patient_id=params.patient_id,
        dataset_tag=dataset_tag,
        sampling_period=SIM_PERIOD,
        timestamps=SIM_PERIOD * np.arange(n),
        glucose=glucose,
        insulin=insulin,
        cho=cho,
    )


@dataclass
class CohortSpec:
    datasets: list[DatasetShift]
    patients_per_dataset: int
    days: int
    seed: int = 0
    patients_overrides: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, payload: dict) -> "CohortSpec":
        for name in ("datasets", "patients_per_dataset", "days"):
            if name not in payload:
                raise ValueError(f"cohort spec missing field {name!r}")
        if not payload["datasets"]:
            raise ValueError("cohort spec needs at least one dataset")
        return cls(
            datasets=[DatasetShift.from_dict(d) for d in payload["datasets"]],
            patients_per_dataset=int(payload["patients_per_dataset"]),
            days=int(payload["days"]),
            seed=int(payload.get("seed", 0)),
            patients_overrides={k: int(v) for k, v in
                                payload.get("patients_overrides", {}).items()},
        )


def generate_cohort(spec: CohortSpec, seed: int | None = None) -> list[data.PatientSeries]:
    """Simulate every patient of every dataset; series are emitted at each
    dataset's sampling period (downsampled from the native 5-minute run)."""
    seed = spec.seed if seed is None else seed
    cohort = []
    for shift in spec.datasets:
        n = spec.patients_overrides.get(shift.dataset_tag, spec.patients_per_dataset)
        for params in draw_population(shift, n, seed):
            series = simulate_patient(params, spec.days, seed, dataset_tag=shift.dataset_tag)
            if shift.sampling_period != SIM_PERIOD:
                series = data.resample(series, shift.sampling_period)
            cohort.append(series)
    return cohort


def write_cohort(cohort: list[data.PatientSeries], spec: CohortSpec, seed: int,
                 out_dir) -> Path:
    """Write one CSV per patient plus a manifest describing the cohort."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    patients = []
    for series in cohort:
        name = f"{series.patient_id}.csv"
        data.write_csv(series, out_dir / name)
        patients.append({
            "patient_id": series.patient_id,
            "dataset_tag": series.dataset_tag,
            "path": name,
            "sampling_period": series.sampling_period,
        })
    manifest = {
        "seed": seed,
        "days": spec.days,
        "datasets": {
            s.dataset_tag: {"sampling_period": s.sampling_period, "virtual": s.virtual}
            for s in spec.datasets
        },
        "patients": patients,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    manifest = json.loads(path.read_text())
    manifest["_dir"] = str(path.parent)
    return manifest


def load_cohort(manifest: dict) -> dict[str, data.PatientSeries]:
    """Load every patient series referenced by a manifest, keyed by id."""
    base = Path(manifest["_dir"])
    out = {}
    for entry in manifest["patients"]:
        series = data.load_csv(base / entry["path"], patient_id=entry["patient_id"],
                               dataset_tag=entry["dataset_tag"])
        out[series.patient_id] = series
    return out
