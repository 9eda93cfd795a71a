"""Time-series profiles: CSV I/O and seeded synthetic weather days."""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

DAY_SECONDS = 86400
WEATHER = ("clear", "partly_cloudy", "overcast")


class ProfileError(ValueError):
    pass


class MissingProfileError(ProfileError):
    def __init__(self, name, path=None):
        self.name = name
        self.path = path
        super().__init__(f"missing profile {name!r}" + (f" ({path})" if path else ""))


@dataclass(frozen=True)
class TimeSeriesProfile:
    name: str
    start: datetime
    resolution: int
    values: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ProfileError("resolution must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return self.values.size

    def times(self) -> list:
        step = timedelta(seconds=self.resolution)
        return [self.start + k * step for k in range(len(self))]

    def day(self, d: date) -> np.ndarray:
        """Values for calendar day ``d``."""
        per_day = DAY_SECONDS // self.resolution
        offset = (datetime.combine(d, datetime.min.time()) - self.start).total_seconds()
        if offset % self.resolution:
            raise ProfileError(f"profile {self.name}: day {d} not aligned to resolution")
        k = int(offset // self.resolution)
        if k < 0 or k + per_day > len(self):
            raise ProfileError(f"profile {self.name} does not cover {d}")
        return self.values[k:k + per_day]


def read_profile_csv(path, name=None) -> TimeSeriesProfile:
    """Read ``timestamp,value`` rows; the spacing must be uniform with no gaps."""
    path = Path(path)
    if not path.exists():
        raise MissingProfileError(name or path.stem, path)
    stamps, vals = [], []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            if k == 0 and row[0].strip().lower() == "timestamp":
                continue
            try:
                stamps.append(datetime.fromisoformat(row[0].strip()))
                vals.append(float(row[1]))
            except (ValueError, IndexError):
                raise ProfileError(f"{path}: bad row {k + 1}: {row!r}") from None
    if len(stamps) < 2:
        raise ProfileError(f"{path}: need at least two samples")
    steps = {(b - a).total_seconds() for a, b in zip(stamps, stamps[1:])}
    if len(steps) != 1:
        raise ProfileError(f"{path}: non-uniform spacing or gaps")
    res = steps.pop()
    if res <= 0 or res != int(res):
        raise ProfileError(f"{path}: bad resolution {res}")
    return TimeSeriesProfile(name or path.stem, stamps[0], int(res), np.array(vals))


def write_profile_csv(profile: TimeSeriesProfile, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "value"])
        for t, v in zip(profile.times(), profile.values):
            w.writerow([t.isoformat(), repr(float(v))])


# ------------------------------------------------------------ synthetic days


def _hours(resolution):
    return np.arange(DAY_SECONDS // resolution) * resolution / 3600.0


def clear_sky(resolution=30, sunrise=6.5, sunset=18.5, peak=0.9) -> np.ndarray:
    """Smooth bell of PV output per unit of rating."""
    h = _hours(resolution)
    x = np.clip((h - sunrise) / (sunset - sunrise), 0.0, 1.0)
    return peak * np.sin(np.pi * x) ** 1.3


def cloud_factor(rng: np.random.Generator, n: int, resolution=30, mean_clear=600.0, mean_cloudy=300.0,
                 depth=(0.25, 0.65)) -> np.ndarray:
    """Clear/cloudy alternation with linear ramps; values in (0, 1]."""
    out = np.empty(n)
    k = 0
    level = 1.0
    cloudy = bool(rng.random() < 0.3)
    while k < n:
        mean = mean_cloudy if cloudy else mean_clear
        dwell = max(1, int(rng.exponential(mean) / resolution))
        target = rng.uniform(*depth) if cloudy else 1.0
        ramp = min(dwell, int(rng.integers(1, 4)))
        seg = np.full(dwell, target)
        seg[:ramp] = np.linspace(level, target, ramp + 1)[1:]
        out[k:k + dwell] = seg[: n - k]
        k += dwell
        level = target
        cloudy = not cloudy
    return out


def load_shape(resolution=30) -> np.ndarray:
    """Residential day with a morning shoulder and an evening peak; max 1."""
    h = _hours(resolution)
    shape = (0.42 + 0.18 * np.exp(-0.5 * ((h - 7.5) / 1.3) ** 2)
             + 0.58 * np.exp(-0.5 * ((h - 19.0) / 2.2) ** 2)
             + 0.05 * np.exp(-0.5 * ((h - 13.0) / 3.0) ** 2))
    return shape / shape.max()


def _rng(seed, d: date, tag: str):
    return np.random.default_rng([int(seed), d.toordinal(), zlib.crc32(tag.encode())])


def synthetic_day(pv_names, load_names, d: date, weather="partly_cloudy", seed=0, resolution=30) -> dict:
    """Per-name value arrays for one day.

    All PV units share one cloud field, each seeing it with its own lag of
    up to five minutes plus a little independent noise, so ramps sweep the
    feeder instead of hitting every unit at once.
    """
    if weather not in WEATHER:
        raise ProfileError(f"unknown weather class {weather!r}")
    n = DAY_SECONDS // resolution
    clear = clear_sky(resolution)
    field_rng = _rng(seed, d, "cloud-field")
    if weather == "clear":
        field = np.ones(n + 20)
    elif weather == "overcast":
        slow = np.convolve(field_rng.normal(0, 1, n + 80), np.ones(61) / 61, mode="same")[30:30 + n + 20]
        field = np.clip(0.3 + 0.3 * slow, 0.1, 0.6)
    else:
        field = cloud_factor(field_rng, n + 20, resolution)
    out = {}
    for name in sorted(set(pv_names)):
        rng = _rng(seed, d, "pv:" + name)
        lag = int(rng.integers(0, 11))
        noise = 1.0 + 0.02 * rng.standard_normal(n) if weather != "clear" else 1.0
        out[name] = np.clip(clear * field[lag:lag + n] * noise, 0.0, 1.0)
    base = load_shape(resolution)
    for name in sorted(set(load_names) - set(out)):
        rng = _rng(seed, d, "load:" + name)
        wiggle = np.convolve(rng.standard_normal(n), np.ones(21) / 21, mode="same")
        out[name] = base * rng.uniform(0.95, 1.05) * (1.0 + 0.03 * wiggle)
    return out
