"""Hourly load data: CSV ingestion, feature pipeline, splits, synthetic source.

The feature vector for forecasting day D+1 from history ending at day D is a
fixed 133-dimensional layout (see ``FEATURE_SLICES``):

    prev_day_load      24  previous day's hourly loads (normalized)
    prev_week_load     24  same weekday one week earlier (normalized)
    past_temp           2  day-D mean actual temperature, value and square
    forecast_temp      72  per-target-hour forecast temperature, powers 1..3
                           (grouped by power: 24 linear, 24 square, 24 cube)
    calendar            7  season one-hot (winter/spring/summer/fall),
                           holiday, weekend, daylight-saving flags for D+1
    sinusoids           4  sin/cos of hour-of-year at the first target hour
                           (period 365*24 h) and sin/cos of day-of-year
                           (period 365 d)

Loads and temperatures are normalized channel-wise with statistics computed
on the training portion only; calendar and sinusoid channels are already
bounded and enter raw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

CSV_HEADER = ["timestamp", "load_mw", "temp_actual_c", "temp_forecast_c", "is_holiday"]
MAX_GAP_HOURS = 3
HISTORY_DAYS = 7

FEATURE_SLICES = {
    "prev_day_load": slice(0, 24),
    "prev_week_load": slice(24, 48),
    "past_temp": slice(48, 50),
    "forecast_temp": slice(50, 122),
    "calendar": slice(122, 129),
    "sinusoids": slice(129, 133),
}
FEATURE_DIM = 133


class DataError(ValueError):
    """Malformed, gappy, or insufficient input data."""


@dataclass(frozen=True)
class HourlyRecord:
    timestamp: datetime
    load: float
    temp_actual: float
    temp_forecast: float
    is_holiday: bool


@dataclass(frozen=True)
class TrainingExample:
    """Feature vector paired with the normalized actual loads of the target day."""

    x: np.ndarray
    y_train: np.ndarray
    target_day: date


@dataclass(frozen=True)
class NormStats:
    """Mean and population standard deviation of one channel."""

    mean: float
    std: float


@dataclass(frozen=True)
class DatasetStats:
    load: NormStats
    temp_actual: NormStats
    temp_forecast: NormStats


@dataclass(frozen=True)
class DataSplits:
    train: list
    validation: list
    test: list


def compute_norm_stats(values: np.ndarray) -> NormStats:
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    std = float(values.std())
    if std == 0.0:
        raise DataError("zero standard deviation channel cannot be normalized")
    return NormStats(mean=mean, std=std)


def normalize(value, stats: NormStats):
    return (np.asarray(value, dtype=float) - stats.mean) / stats.std


def denormalize(value, stats: NormStats):
    return np.asarray(value, dtype=float) * stats.std + stats.mean


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv(path) -> list[HourlyRecord]:
    """Parse an hourly CSV, interpolating gaps of up to 3 missing hours."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataError(f"{path}: header {header!r} does not match {CSV_HEADER!r}")
        records: list[HourlyRecord] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts = datetime.fromisoformat(row[0].strip())
                rec = HourlyRecord(
                    timestamp=ts,
                    load=float(row[1]),
                    temp_actual=float(row[2]),
                    temp_forecast=float(row[3]),
                    is_holiday=row[4].strip() in ("1", "true", "True"),
                )
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
            if rec.load < 0:
                raise DataError(f"{path}:{lineno}: negative load {rec.load}")
            records.append(rec)
    if not records:
        raise DataError(f"{path}: no data rows")
    return _fill_gaps(records)


def _fill_gaps(records: list[HourlyRecord]) -> list[HourlyRecord]:
    hour = timedelta(hours=1)
    out = [records[0]]
    for rec in records[1:]:
        prev = out[-1]
        delta = rec.timestamp - prev.timestamp
        if delta == hour:
            out.append(rec)
            continue
        if delta <= timedelta(0):
            raise DataError(
                f"non-monotone or duplicated timestamp at {rec.timestamp.isoformat()}"
            )
        missing = int(delta / hour) - 1
        if missing > MAX_GAP_HOURS:
            raise DataError(
                f"gap of {missing} hours after {prev.timestamp.isoformat()} "
                f"exceeds the {MAX_GAP_HOURS}-hour interpolation limit"
            )
        for k in range(1, missing + 1):
            w = k / (missing + 1)
            ts = prev.timestamp + k * hour
            out.append(
                HourlyRecord(
                    timestamp=ts,
                    load=(1 - w) * prev.load + w * rec.load,
                    temp_actual=(1 - w) * prev.temp_actual + w * rec.temp_actual,
                    temp_forecast=(1 - w) * prev.temp_forecast + w * rec.temp_forecast,
                    is_holiday=prev.is_holiday if ts.date() == prev.timestamp.date() else rec.is_holiday,
                )
            )
        out.append(rec)
    return out


def write_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.timestamp.strftime("%Y-%m-%dT%H:00:00"),
                    repr(float(rec.load)),
                    repr(float(rec.temp_actual)),
                    repr(float(rec.temp_forecast)),
                    int(rec.is_holiday),
                ]
            )


# ---------------------------------------------------------------------------
# Calendar helpers (fixed-rule model, no timezone database)


def _nth_weekday(year: int, month: int, weekday: int, n: int) -> date:
    d = date(year, month, 1)
    offset = (weekday - d.weekday()) % 7
    return d + timedelta(days=offset + 7 * (n - 1))


def _last_weekday(year: int, month: int, weekday: int) -> date:
    if month == 12:
        d = date(year, 12, 31)
    else:
        d = date(year, month + 1, 1) - timedelta(days=1)
    return d - timedelta(days=(d.weekday() - weekday) % 7)


def is_dst(day: date) -> bool:
    """US-style daylight-saving window: 2nd Sunday of March to 1st of November."""
    return _nth_weekday(day.year, 3, 6, 2) <= day < _nth_weekday(day.year, 11, 6, 1)


def default_holidays(year: int) -> set[date]:
    return {
        date(year, 1, 1),
        _last_weekday(year, 5, 0),        # Memorial Day
        date(year, 7, 4),
        _nth_weekday(year, 9, 0, 1),      # Labor Day
        _nth_weekday(year, 11, 3, 4),     # Thanksgiving
        date(year, 12, 25),
    }


def season_one_hot(day: date) -> np.ndarray:
    """Meteorological seasons: winter, spring, summer, fall."""
    idx = {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1, 6: 2, 7: 2, 8: 2}.get(day.month, 3)
    onehot = np.zeros(4)
    onehot[idx] = 1.0
    return onehot


# ---------------------------------------------------------------------------
# Feature pipeline


@dataclass(frozen=True)
class DayRecords:
    day: date
    loads: np.ndarray
    temps_actual: np.ndarray
    temps_forecast: np.ndarray
    is_holiday: bool


def group_days(records: list[HourlyRecord]) -> list[DayRecords]:
    """Group an hourly series into complete midnight-aligned days."""
    days: list[DayRecords] = []
    by_day: dict[date, list[HourlyRecord]] = {}
    for rec in records:
        by_day.setdefault(rec.timestamp.date(), []).append(rec)
    for day in sorted(by_day):
        rows = by_day[day]
        if len(rows) != 24 or rows[0].timestamp.hour != 0:
            continue
        days.append(
            DayRecords(
                day=day,
                loads=np.array([r.load for r in rows]),
                temps_actual=np.array([r.temp_actual for r in rows]),
                temps_forecast=np.array([r.temp_forecast for r in rows]),
                is_holiday=any(r.is_holiday for r in rows),
            )
        )
    return days


def build_features(
    days: list[DayRecords], target_idx: int, stats: DatasetStats
) -> TrainingExample:
    """Assemble the feature vector for predicting ``days[target_idx]``."""
    if target_idx < HISTORY_DAYS:
        raise DataError(
            f"insufficient history: need {HISTORY_DAYS} days before the target"
        )
    target = days[target_idx]
    prev = days[target_idx - 1]
    week_ago = days[target_idx - HISTORY_DAYS]
    if (target.day - prev.day).days != 1 or (target.day - week_ago.day).days != 7:
        raise DataError(f"history for {target.day.isoformat()} is not contiguous")

    prev_load = normalize(prev.loads, stats.load)
    week_load = normalize(week_ago.loads, stats.load)

    t_bar = float(np.mean(normalize(prev.temps_actual, stats.temp_actual)))
    past_temp = np.array([t_bar, t_bar**2])

    t_hat = normalize(target.temps_forecast, stats.temp_forecast)
    forecast_temp = np.concatenate([t_hat, t_hat**2, t_hat**3])

    calendar = np.concatenate(
        [
            season_one_hot(target.day),
            [float(target.is_holiday)],
            [float(target.day.weekday() >= 5)],
            [float(is_dst(target.day))],
        ]
    )

    day_of_year = target.day.timetuple().tm_yday - 1
    hour_of_year = day_of_year * 24  # first target hour is midnight
    ang_h = 2.0 * math.pi * hour_of_year / (365.0 * 24.0)
    ang_d = 2.0 * math.pi * day_of_year / 365.0
    sinusoids = np.array([math.sin(ang_h), math.cos(ang_h), math.sin(ang_d), math.cos(ang_d)])

    x = np.concatenate([prev_load, week_load, past_temp, forecast_temp, calendar, sinusoids])
    assert x.shape == (FEATURE_DIM,)
    if not np.all(np.isfinite(x)):
        raise DataError(f"non-finite feature for target {target.day.isoformat()}")
    return TrainingExample(
        x=x, y_train=normalize(target.loads, stats.load), target_day=target.day
    )


def split(examples: list, seed: int) -> DataSplits:
    """Chronological 80/20 into pool/test, then a seeded 80/20 shuffle of the
    pool into train/validation."""
    n = len(examples)
    if n < 10:
        raise DataError(f"need at least 10 examples to split, got {n}")
    pool_size = int(0.8 * n)
    pool, test = examples[:pool_size], examples[pool_size:]
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(pool_size)
    train_size = int(0.8 * pool_size)
    train = [pool[i] for i in order[:train_size]]
    validation = [pool[i] for i in order[train_size:]]
    return DataSplits(train=train, validation=validation, test=test)


@dataclass(frozen=True)
class Dataset:
    examples: list[TrainingExample]
    stats: DatasetStats
    splits: DataSplits


def prepare_dataset(records: list[HourlyRecord], seed: int) -> Dataset:
    """Full pipeline: group, fit normalization on the training period only,
    featurize, and split.

    The chronological pool/test boundary is computed first so that the
    normalization statistics never see any record of the test period.
    """
    return prepare_dataset_with_stats(records, seed, stats=None)


def prepare_dataset_with_stats(
    records: list[HourlyRecord], seed: int, stats: DatasetStats | None
) -> Dataset:
    """Like :func:`prepare_dataset` but optionally reusing the normalization
    statistics a model was trained with (required when featurizing data for
    an already-fitted model)."""
    days = group_days(records)
    n_examples = len(days) - HISTORY_DAYS
    if n_examples < 10:
        raise DataError(f"need at least 10 target days, got {max(n_examples, 0)}")
    if stats is None:
        pool_size = int(0.8 * n_examples)
        first_test_day_idx = HISTORY_DAYS + pool_size
        train_days = days[:first_test_day_idx]
        stats = DatasetStats(
            load=compute_norm_stats(np.concatenate([d.loads for d in train_days])),
            temp_actual=compute_norm_stats(
                np.concatenate([d.temps_actual for d in train_days])
            ),
            temp_forecast=compute_norm_stats(
                np.concatenate([d.temps_forecast for d in train_days])
            ),
        )
    examples = [
        build_features(days, idx, stats)
        for idx in range(HISTORY_DAYS, len(days))
    ]
    return Dataset(examples=examples, stats=stats, splits=split(examples, seed))


# ---------------------------------------------------------------------------
# Synthetic data source


@dataclass(frozen=True)
class SynthProfile:
    """Knobs of the synthetic hourly load/temperature generator.

    Loads combine a yearly seasonal swing, a two-harmonic daily shape,
    weekend and holiday discounts, asymmetric heating/cooling temperature
    response, persistent relative noise with a summer volatility boost, and
    occasional afternoon demand bumps with an exponential tail.
    """

    base_load_mw: float = 800.0
    yearly_amp: float = 0.05
    daily_amp: float = 0.12
    daily_amp2: float = 0.04
    weekend_factor: float = 0.93
    holiday_factor: float = 0.89
    temp_mean_c: float = 13.0
    temp_yearly_amp_c: float = 14.0
    temp_daily_amp_c: float = 4.0
    temp_noise_c: float = 3.0
    temp_noise_rho: float = 0.97
    forecast_error_c: float = 1.1
    heating_coef: float = 0.50
    heating_ref_c: float = 16.0
    cooling_coef: float = 1.50
    cooling_ref_c: float = 20.0
    noise_rel: float = 0.010
    noise_rho: float = 0.95
    noise_pos_gain: float = 0.8
    noise_neg_gain: float = 1.2
    summer_noise_boost: float = 0.5
    spike_prob: float = 0.10
    spike_down_prob: float = 0.12
    spike_scale_rel: float = 0.02
    spike_down_scale_rel: float = 0.025
    use_holidays: bool = True
    start_year: int = 2012


def synth_generate(
    seed: int, n_years: int, profile: SynthProfile | None = None
) -> list[HourlyRecord]:
    """Deterministic synthetic hourly series spanning ``n_years`` calendar years."""
    if n_years < 1:
        raise ValueError("n_years must be >= 1")
    prof = profile or SynthProfile()
    rng = np.random.Generator(np.random.PCG64(seed))

    start = datetime(prof.start_year, 1, 1)
    end = datetime(prof.start_year + n_years, 1, 1)
    n_hours = int((end - start) / timedelta(hours=1))
    stamps = [start + timedelta(hours=i) for i in range(n_hours)]

    day_of_year = np.array([ts.timetuple().tm_yday - 1 for ts in stamps], dtype=float)
    hour = np.array([ts.hour for ts in stamps], dtype=float)
    weekday = np.array([ts.weekday() for ts in stamps])
    dates = [ts.date() for ts in stamps]
    holidays: set[date] = set()
    if prof.use_holidays:
        for year in range(prof.start_year, prof.start_year + n_years):
            holidays |= default_holidays(year)
    is_holiday = np.array([d in holidays for d in dates])

    # Temperature: yearly cycle peaking around Jul 20, small daily
    # cycle peaking mid-afternoon, persistent AR(1) weather noise.
    yearly_phase = 2.0 * math.pi * (day_of_year - 200.0) / 365.25
    temp = prof.temp_mean_c + prof.temp_yearly_amp_c * np.cos(yearly_phase)
    temp += prof.temp_daily_amp_c * np.cos(2.0 * math.pi * (hour - 15.0) / 24.0)
    weather = np.empty(n_hours)
    innov = rng.normal(0.0, prof.temp_noise_c * math.sqrt(1 - prof.temp_noise_rho**2), n_hours)
    acc = rng.normal(0.0, prof.temp_noise_c)
    for i in range(n_hours):
        acc = prof.temp_noise_rho * acc + innov[i]
        weather[i] = acc
    temp = temp + weather
    temp_forecast = temp + rng.normal(0.0, prof.forecast_error_c, n_hours)

    seasonal = 1.0 + prof.yearly_amp * np.cos(2.0 * math.pi * (day_of_year - 15.0) / 365.25)
    daily = (
        1.0
        + prof.daily_amp * np.cos(2.0 * math.pi * (hour - 18.0) / 24.0)
        + prof.daily_amp2 * np.cos(4.0 * math.pi * (hour - 9.0) / 24.0)
    )
    load = prof.base_load_mw * seasonal * daily
    load += prof.heating_coef * np.maximum(prof.heating_ref_c - temp, 0.0) ** 2
    load += prof.cooling_coef * np.maximum(temp - prof.cooling_ref_c, 0.0) ** 2
    load *= np.where(weekday >= 5, prof.weekend_factor, 1.0)
    load *= np.where(is_holiday, prof.holiday_factor, 1.0)

    # Persistent relative noise, more volatile in warm season and skewed to
    # the downside: occasional demand slumps are larger than surges.
    summer_weight = 0.5 * (1.0 - np.cos(yearly_phase))
    vol = prof.noise_rel * (1.0 + prof.summer_noise_boost * summer_weight)
    ar = np.empty(n_hours)
    innov = rng.normal(0.0, math.sqrt(1 - prof.noise_rho**2), n_hours)
    acc = rng.normal(0.0, 1.0)
    for i in range(n_hours):
        acc = prof.noise_rho * acc + innov[i]
        ar[i] = acc
    gain_p, gain_n = prof.noise_pos_gain, prof.noise_neg_gain
    skewed = gain_p * np.maximum(ar, 0.0) + gain_n * np.minimum(ar, 0.0)
    # center and rescale to unit standard deviation (moments of the
    # two-sided half-normal transform of a standard normal)
    phi0 = 1.0 / math.sqrt(2.0 * math.pi)
    mean_shift = (gain_p - gain_n) * phi0
    sd = math.sqrt((gain_p**2 + gain_n**2) / 2.0 - mean_shift**2)
    load = load * (1.0 + vol * (skewed - mean_shift) / sd)

    # Occasional daytime demand bumps and dips (exponential tails); dips are
    # a bit more frequent and larger, giving leptokurtic, mildly left-skewed
    # day-ahead surprises.
    n_days = n_hours // 24
    bump_shape = np.exp(-0.5 * ((np.arange(24) - 16.0) / 3.0) ** 2)
    dip_shape = np.exp(-0.5 * ((np.arange(24) - 13.0) / 4.0) ** 2)
    if prof.spike_prob > 0 and prof.spike_scale_rel > 0:
        spike_days = rng.random(n_days) < prof.spike_prob
        spike_amp = rng.exponential(prof.spike_scale_rel, n_days)
        for d in np.flatnonzero(spike_days):
            sl = slice(24 * d, 24 * (d + 1))
            load[sl] = load[sl] * (1.0 + spike_amp[d] * bump_shape)
    if prof.spike_down_prob > 0 and prof.spike_down_scale_rel > 0:
        dip_days = rng.random(n_days) < prof.spike_down_prob
        dip_amp = rng.exponential(prof.spike_down_scale_rel, n_days)
        for d in np.flatnonzero(dip_days):
            sl = slice(24 * d, 24 * (d + 1))
            load[sl] = load[sl] * np.maximum(1.0 - dip_amp[d] * dip_shape, 0.5)

    load = np.maximum(load, 1.0)
    return [
        HourlyRecord(
            timestamp=stamps[i],
            load=float(load[i]),
            temp_actual=float(temp[i]),
            temp_forecast=float(temp_forecast[i]),
            is_holiday=bool(is_holiday[i]),
        )
        for i in range(n_hours)
    ]
