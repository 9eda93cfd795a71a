"""Scenario definition and the key=value config format.

Example::

    feeder = feeder40            # bundled name or path relative to this file
    profiles = synthetic         # or a directory of <profile>.csv files
    controller = otc-full        # atc | vlc | otc-full | otc-simplified
    dates = 2015-03-14, 2015-03-15   (or 2015-03-14:2015-03-20)
    weather = partly_cloudy
    penetration = 150
    horizon_steps = 10
    w1 = 1
    w2 = 0.005
    seed = 7
    outdir = out/run1
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from .profiles import WEATHER

CONTROLLERS = ("atc", "vlc", "otc-full", "otc-simplified")


class ConfigError(ValueError):
    pass


def _parse_bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_dates(v):
    if isinstance(v, (list, tuple)):
        return tuple(d if isinstance(d, date) else date.fromisoformat(str(d).strip()) for d in v)
    s = str(v).strip()
    if ":" in s:
        a, b = (date.fromisoformat(x.strip()) for x in s.split(":", 1))
        if b < a:
            raise ValueError("date range ends before it starts")
        return tuple(a + timedelta(days=k) for k in range((b - a).days + 1))
    return tuple(date.fromisoformat(x.strip()) for x in s.split(",") if x.strip())


def _parse_optional_int(v):
    if v is None or str(v).strip().lower() in ("", "none", "device"):
        return None
    return int(v)


def _parse_optional_float(v):
    if v is None or str(v).strip().lower() in ("", "none"):
        return None
    return float(v)


@dataclass(frozen=True)
class Scenario:
    feeder: str = "feeder40"
    profiles: str = "synthetic"
    controller: str = "otc-full"
    dates: tuple = (date(2015, 3, 14),)
    weather: str = "partly_cloudy"
    penetration: float = 100.0
    horizon_steps: int = 10
    w1: float = 1.0
    w2: float = 0.005
    dto_max: int | None = None       # None: per-device value from the feeder file
    seed: int = 0
    outdir: str = "out"
    resolution: int = 30
    start_hour: float = 0.0
    stop_hour: float = 24.0
    candidate_k: int = 5
    commit_horizon: bool = False
    time_limit: float | None = None
    atc_vref: float = 0.99
    atc_band: float = 0.0167
    atc_delay: float = 60.0
    base_dir: str = "."

    def __post_init__(self):
        if not (isinstance(self.dates, tuple) and all(isinstance(d, date) for d in self.dates)):
            try:
                object.__setattr__(self, "dates", _parse_dates(self.dates))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad dates: {exc}") from None
        self.validate()

    def validate(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {', '.join(CONTROLLERS)}, got {self.controller!r}")
        if self.weather not in WEATHER:
            raise ConfigError(f"weather must be one of {', '.join(WEATHER)}")
        if not self.dates:
            raise ConfigError("no dates given")
        if self.penetration < 0:
            raise ConfigError("penetration must be non-negative")
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if self.w1 <= 0 or self.w2 < 0:
            raise ConfigError("weights must satisfy w1 > 0, w2 >= 0")
        if self.dto_max is not None and self.dto_max < 1:
            raise ConfigError("dto_max must be >= 1")
        if self.resolution <= 0 or 86400 % self.resolution:
            raise ConfigError("resolution must divide one day")
        if not 0 <= self.start_hour < self.stop_hour <= 24:
            raise ConfigError("need 0 <= start_hour < stop_hour <= 24")
        if (self.start_hour * 3600) % self.resolution or (self.stop_hour * 3600) % self.resolution:
            raise ConfigError("window bounds must fall on resolution steps")
        if self.candidate_k < 0:
            raise ConfigError("candidate_k must be >= 0")
        if self.atc_band <= 0 or self.atc_delay <= 0:
            raise ConfigError("ATC bandwidth and delay must be positive")

    def with_overrides(self, **kw) -> "Scenario":
        try:
            return dataclasses.replace(self, **{k: _coerce(k, v) for k, v in kw.items()})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def feeder_path(self) -> Path:
        from .fixtures import bundled_feeder_path

        bundled = bundled_feeder_path(self.feeder)
        if bundled is not None:
            return bundled
        p = Path(self.feeder)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def profile_dir(self) -> Path | None:
        if self.profiles == "synthetic":
            return None
        p = Path(self.profiles)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def steps_per_day(self) -> int:
        return int(round((self.stop_hour - self.start_hour) * 3600 / self.resolution))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dates"] = [x.isoformat() for x in self.dates]
        d.pop("base_dir")
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(Scenario) if f.name != "base_dir"}
_COERCE = {
    "dates": _parse_dates,
    "penetration": float,
    "horizon_steps": int,
    "w1": float,
    "w2": float,
    "dto_max": _parse_optional_int,
    "seed": int,
    "resolution": int,
    "start_hour": float,
    "stop_hour": float,
    "candidate_k": int,
    "commit_horizon": _parse_bool,
    "time_limit": _parse_optional_float,
    "atc_vref": float,
    "atc_band": float,
    "atc_delay": float,
}
KNOWN_KEYS = tuple(_FIELDS)


def _coerce(key, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(value, str):
        return value
    conv = _COERCE.get(key, str.strip)
    try:
        return conv(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None


def parse_overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
        out[k] = v.strip()
    return out


def parse_config_text(text: str, base_dir=".") -> dict:
    """Raw key/value pairs; ``#`` starts a comment, later keys override earlier."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        if k not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {k!r}")
        out[k] = v
    return out


def load_scenario(path=None, overrides=None, **extra) -> Scenario:
    """Config file, then ``overrides`` (key=value strings), then keyword values."""
    raw = {}
    base = "."
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw.update(parse_config_text(text))
        base = str(path.parent)
    if isinstance(overrides, dict):
        raw.update(overrides)
    else:
        raw.update(parse_overrides(overrides))
    raw.update({k: v for k, v in extra.items() if v is not None})
    try:
        values = {k: _coerce(k, v) for k, v in raw.items()}
        return Scenario(base_dir=base, **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
