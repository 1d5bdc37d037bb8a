"""Calendar features for date cells: components, weekday, and holiday flags.

Weekday and day distances come from the proleptic Gregorian civil-days
algorithm. Holiday flags cover a fixed set of eight regions with deterministic
rules: fixed dates, nth-weekday-of-month, and Western Easter offsets via the
Meeus/Jones/Butcher computus.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np

YEAR_MIN = 1950
YEAR_MAX = 2050
NUM_DAY_CLASSES = 31
NUM_MONTH_CLASSES = 12
NUM_YEAR_CLASSES = YEAR_MAX - YEAR_MIN + 1  # 101
NUM_WEEKDAY_CLASSES = 7

HOLIDAY_REGIONS = ("US", "UK", "DE", "FR", "CN", "JP", "IN", "BR")
NUM_HOLIDAY_REGIONS = len(HOLIDAY_REGIONS)


def days_from_civil(year: int, month: int, day: int) -> int:
    """Days since 1970-01-01 of a proleptic Gregorian civil date.

    Tolerates out-of-range day components (they extrapolate into adjacent
    months), which lets predicted (day, month, year) triples that do not form
    a real date still be compared by distance.
    """
    y = year - (month <= 2)
    era = (y if y >= 0 else y - 399) // 400
    yoe = y - era * 400
    doy = (153 * (month + (-3 if month > 2 else 9)) + 2) // 5 + day - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def weekday_monday0(date: datetime.date) -> int:
    """Day of week with Monday = 0 (1970-01-01 was a Thursday)."""
    return (days_from_civil(date.year, date.month, date.day) + 3) % 7


def easter_sunday(year: int) -> datetime.date:
    """Western Easter by the Meeus/Jones/Butcher computus."""
    a = year % 19
    b, c = divmod(year, 100)
    d, e = divmod(b, 4)
    f = (b + 8) // 25
    g = (b - f + 1) // 3
    h = (19 * a + b - d - g + 15) % 30
    i, k = divmod(c, 4)
    l = (32 + 2 * e + 2 * i - h - k) % 7
    m = (a + 11 * h + 22 * l) // 451
    month = (h + l - 7 * m + 114) // 31
    day = (h + l - 7 * m + 114) % 31 + 1
    return datetime.date(year, month, day)


def _nth_weekday(year: int, month: int, weekday: int, n: int) -> datetime.date:
    """nth (1-based) given weekday of a month; n = -1 means the last one."""
    if n > 0:
        first = datetime.date(year, month, 1)
        offset = (weekday - weekday_monday0(first)) % 7
        return first + datetime.timedelta(days=offset + 7 * (n - 1))
    last_day = (datetime.date(year + (month == 12), month % 12 + 1, 1) - datetime.timedelta(days=1))
    offset = (weekday_monday0(last_day) - weekday) % 7
    return last_day - datetime.timedelta(days=offset)


# Rule forms: ("fixed", month, day) | ("easter", day_offset) | ("nth", month, weekday, n).
# Weekdays are Monday = 0. The table is intentionally compact: major national
# holidays only, identical every year.
_HOLIDAY_RULES: dict[str, list[tuple]] = {
    "US": [
        ("fixed", 1, 1),
        ("nth", 5, 0, -1),   # Memorial Day
        ("fixed", 7, 4),
        ("nth", 9, 0, 1),    # Labor Day
        ("nth", 11, 3, 4),   # Thanksgiving
        ("fixed", 12, 25),
    ],
    "UK": [
        ("fixed", 1, 1),
        ("easter", -2),
        ("easter", 1),
        ("fixed", 12, 25),
        ("fixed", 12, 26),
    ],
    "DE": [
        ("fixed", 1, 1),
        ("easter", -2),
        ("easter", 1),
        ("fixed", 5, 1),
        ("fixed", 10, 3),
        ("fixed", 12, 25),
        ("fixed", 12, 26),
    ],
    "FR": [
        ("fixed", 1, 1),
        ("easter", 1),
        ("fixed", 5, 1),
        ("fixed", 5, 8),
        ("fixed", 7, 14),
        ("fixed", 8, 15),
        ("fixed", 11, 1),
        ("fixed", 11, 11),
        ("fixed", 12, 25),
    ],
    "CN": [
        ("fixed", 1, 1),
        ("fixed", 5, 1),
        ("fixed", 10, 1),
        ("fixed", 10, 2),
        ("fixed", 10, 3),
    ],
    "JP": [
        ("fixed", 1, 1),
        ("fixed", 2, 11),
        ("fixed", 4, 29),
        ("fixed", 5, 3),
        ("fixed", 5, 4),
        ("fixed", 5, 5),
        ("fixed", 11, 3),
        ("fixed", 11, 23),
    ],
    "IN": [
        ("fixed", 1, 26),
        ("fixed", 8, 15),
        ("fixed", 10, 2),
    ],
    "BR": [
        ("fixed", 1, 1),
        ("easter", -2),
        ("fixed", 4, 21),
        ("fixed", 5, 1),
        ("fixed", 9, 7),
        ("fixed", 10, 12),
        ("fixed", 11, 2),
        ("fixed", 11, 15),
        ("fixed", 12, 25),
    ],
}


def _is_holiday(date: datetime.date, region: str) -> bool:
    for rule in _HOLIDAY_RULES[region]:
        kind = rule[0]
        if kind == "fixed":
            if (date.month, date.day) == (rule[1], rule[2]):
                return True
        elif kind == "easter":
            if date == easter_sunday(date.year) + datetime.timedelta(days=rule[1]):
                return True
        elif kind == "nth":
            if date.month == rule[1] and date == _nth_weekday(date.year, rule[1], rule[2], rule[3]):
                return True
    return False


def holiday_flags(date: datetime.date) -> np.ndarray:
    return np.array([_is_holiday(date, r) for r in HOLIDAY_REGIONS], dtype=bool)


@dataclass(frozen=True)
class DateFeatures:
    day: int           # 1..31
    month: int         # 1..12
    year: int          # true year, unclipped
    day_of_week: int   # Monday = 0, from the true date
    holidays: np.ndarray  # bool per region, HOLIDAY_REGIONS order

    @property
    def day_class(self) -> int:
        return self.day - 1

    @property
    def month_class(self) -> int:
        return self.month - 1

    @property
    def year_class(self) -> int:
        # Clipped to the supported embedding range; the true year stays intact.
        return min(max(self.year, YEAR_MIN), YEAR_MAX) - YEAR_MIN


def date_features(date: datetime.date) -> DateFeatures:
    return DateFeatures(
        day=date.day,
        month=date.month,
        year=date.year,
        day_of_week=weekday_monday0(date),
        holidays=holiday_flags(date),
    )
