"""Hour-of-week base profiles per category for the synthetic generator.

The shipped table ``data/profiles.csv`` (columns category, hour_of_week,
weight) is produced by :func:`build_profile_table`: each category has a
weekday and a weekend daily curve made of a night floor plus Gaussian bumps
over local hours, scaled so the 168 weights average 1.
"""

from importlib import resources

import numpy as np
import pandas as pd

CATEGORIES = (
    "advertising", "android_download", "apple_cloud", "email", "gaming", "maps_navigation",
    "messaging", "music", "news", "productivity", "shopping", "social_media",
    "social_media_video", "sports", "travel", "video_streaming", "voip", "web_browsing",
    "weather",
)

# (floor, [(hour, width, height), ...]) for weekdays and weekends
_CURVES = {
    "advertising": ((0.2, [(13, 4, 1.0), (21, 2.5, 0.8)]), (0.2, [(15, 5, 1.0)])),
    "android_download": ((0.4, [(20, 3, 1.0), (3, 1.5, 0.6)]), (0.4, [(16, 5, 1.0)])),
    "apple_cloud": ((0.5, [(2, 2, 1.0), (12, 3, 0.5)]), (0.5, [(3, 2, 1.0)])),
    "email": ((0.1, [(9, 1.5, 1.2), (14, 2.5, 0.9)]), (0.1, [(11, 3, 0.4)])),
    "gaming": ((0.15, [(21, 2.5, 1.3), (17, 2, 0.5)]), (0.2, [(15, 4, 1.0), (22, 2, 1.0)])),
    "maps_navigation": ((0.05, [(8, 1, 1.2), (18, 1.3, 1.1)]), (0.05, [(12, 3, 0.8)])),
    "messaging": ((0.15, [(12, 3, 0.9), (20, 3, 1.0)]), (0.15, [(14, 4, 1.0)])),
    "music": ((0.1, [(8, 1.2, 1.0), (18, 1.5, 1.0)]), (0.1, [(14, 4, 0.9)])),
    "news": ((0.1, [(7, 1.2, 1.2), (12.5, 1, 0.7), (19, 1.5, 0.6)]), (0.1, [(10, 3, 1.0)])),
    "productivity": ((0.05, [(10, 2, 1.1), (15, 2, 1.0)]), (0.05, [(11, 3, 0.2)])),
    "shopping": ((0.1, [(13, 2, 0.7), (21, 2, 1.0)]), (0.1, [(15, 3, 1.2)])),
    "social_media": ((0.2, [(8, 1.5, 0.6), (13, 1.5, 0.7), (21, 2, 1.2)]),
                     (0.2, [(14, 4, 0.9), (22, 2, 1.0)])),
    "social_media_video": ((0.2, [(22, 2, 1.3), (13, 1.5, 0.5)]), (0.25, [(16, 4, 0.9), (23, 2, 1.1)])),
    "sports": ((0.1, [(20.5, 1.5, 1.0)]), (0.1, [(15, 2, 1.3), (21, 1.5, 1.1)])),
    "travel": ((0.1, [(11, 3, 0.8), (19, 2, 0.6)]), (0.1, [(10, 3, 1.0)])),
    "video_streaming": ((0.15, [(21.5, 2, 1.5)]), (0.2, [(15, 3, 0.8), (21.5, 2, 1.4)])),
    "voip": ((0.1, [(10, 2.5, 1.0), (18, 2, 0.9)]), (0.1, [(12, 3, 0.8), (19, 2, 0.6)])),
    "web_browsing": ((0.15, [(11, 3, 1.0), (20, 3, 0.9)]), (0.15, [(14, 5, 1.0)])),
    "weather": ((0.1, [(7, 1, 1.2), (18, 1.5, 0.5)]), (0.1, [(9, 2, 1.0)])),
}


def _daily(floor, bumps):
    h = np.arange(24, dtype=float)
    out = np.full(24, floor)
    for mu, sd, amp in bumps:
        # wrap around midnight
        d = np.minimum(np.abs(h - mu), 24 - np.abs(h - mu))
        out += amp * np.exp(-0.5 * (d / sd) ** 2)
    return out


def build_profile_table():
    rows = []
    for cat in CATEGORIES:
        weekday, weekend = _CURVES[cat]
        wd, we = _daily(*weekday), _daily(*weekend)
        week = np.concatenate([wd] * 5 + [we] * 2)
        week = week / week.mean()
        rows.extend((cat, i + 1, round(float(v), 9)) for i, v in enumerate(week))
    return pd.DataFrame(rows, columns=["category", "hour_of_week", "weight"])


def load_profiles():
    """{category: array of 168 weights}, hour of week 1 = Monday 00:00 local."""
    with resources.files("apptraffic.data").joinpath("profiles.csv").open("r") as fh:
        df = pd.read_csv(fh)
    out = {}
    for cat, grp in df.groupby("category", sort=True):
        grp = grp.sort_values("hour_of_week")
        out[cat] = grp["weight"].to_numpy(dtype=float)
    return out
