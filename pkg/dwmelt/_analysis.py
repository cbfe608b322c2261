from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ._errors import InsufficientDataError, ParameterError, ShapeError, TrackingError
from ._observables import TrajectoryRecord, correlator_sites

__all__ = (
    "SuperpositionPrediction",
    "shift_average",
    "superposed_profile",
    "two_hole_profile",
    "composed_profile",
    "superposed_zeta",
    "superposed_chi",
    "predict",
    "deviation",
    "front_velocity",
    "front_position",
    "beating_amplitude",
    "crossing_position",
    "profile_shift",
    "transit_time",
    "comparison_table",
)

Region = Union[slice, Sequence[int], np.ndarray, None]


def shift_average(profile: np.ndarray, d: int) -> np.ndarray:
    """
    ``(p[j] + p[j + d]) / 2``, with NaN where ``j + d`` falls off the chain.
    """
    p = np.asarray(profile, dtype=float)
    out = np.full(p.shape, np.nan)
    n = p.shape[0]
    for j in range(n):
        if 0 <= j + d < n:
            out[j] = 0.5 * (p[j] + p[j + d])
    return out


def superposed_profile(clean: TrajectoryRecord, d: int, time: float) -> np.ndarray:
    """
    Magnetization profile predicted for a defect run from the clean run.

    The defect state is modelled as an equal-weight superposition of the clean
    evolution and the clean evolution shifted by ``d`` sites (``d = 1`` for a hole,
    ``2`` for a spin flip), giving ``(p[j] + p[j + d]) / 2``.

    Parameters
    ----------
    clean
        The clean trajectory.
    d
        The shift in sites.
    time
        A sampled time of ``clean``.

    Returns
    -------
    :
        One value per site; NaN where ``j + d`` is outside the chain.
    """
    return shift_average(clean.at(time, "sz_profile"), d)


def two_hole_profile(clean: TrajectoryRecord, time: float) -> np.ndarray:
    """
    Prediction for two holes: the single-hole average applied twice,
    ``(p[j] + 2 p[j+1] + p[j+2]) / 4``.
    """
    return composed_profile(clean, (1, 1), time)


def composed_profile(
    clean: TrajectoryRecord, shifts: Sequence[int], time: float
) -> np.ndarray:
    """
    Prediction for several defects: one shifted average per defect, applied in turn.

    A hole and a spin flip (``shifts=(1, 2)``) give
    ``(p[j] + p[j+1] + p[j+2] + p[j+3]) / 4``; an empty ``shifts`` returns the clean
    profile.
    """
    p = clean.at(time, "sz_profile")
    for d in shifts:
        p = shift_average(p, d)
    return p


def _raw(clean: TrajectoryRecord, prefix: str, d: int, dx: int, time: float) -> float:
    key = f"{prefix}{d}"
    sample = clean.samples[clean.time_index(time)]
    if key not in sample:
        raise InsufficientDataError(
            f"The clean trajectory does not store `{key}`; record it with shift {d}."
        )
    dxs = list(clean.schedule.dx)
    if dx not in dxs:
        raise InsufficientDataError(f"The clean trajectory does not store dx={dx}.")
    return float(sample[key][dxs.index(dx)])


def superposed_zeta(
    clean: TrajectoryRecord,
    d: int,
    dx: int,
    time: float,
    convention: Literal["literal", "connected"] = "literal",
) -> float:
    """
    Predicted ``Sz``-``Sz`` correlator for a defect run.

    ``(<Sz_i Sz_j> + <Sz_{i+d} Sz_{j+d}>) / 2 + s (<Sz_i> + <Sz_{i+d}>)(<Sz_j> +
    <Sz_{j+d}>) / 4`` with clean-run values, where ``s = +1`` for
    ``convention="literal"`` and ``s = -1`` for ``convention="connected"``. Only the
    connected form reduces to the clean connected correlator at ``d = 0``.

    Raises
    ------
    InsufficientDataError
        If the raw products for shift 0 or ``d`` were not recorded.
    """
    if convention not in ("literal", "connected"):
        raise ParameterError(f"Unknown convention `{convention}`.")
    i, j = correlator_sites(clean.L, dx)
    if j + d >= clean.L:
        raise ShapeError(f"Shift {d} moves site {j} off the chain.")
    zz0 = _raw(clean, "zz_raw_d", 0, dx, time)
    zzd = _raw(clean, "zz_raw_d", d, dx, time)
    sz = clean.at(time, "sz_profile")
    sign = 1.0 if convention == "literal" else -1.0
    return 0.5 * (zz0 + zzd) + sign * 0.25 * (sz[i] + sz[i + d]) * (sz[j] + sz[j + d])


def superposed_chi(clean: TrajectoryRecord, d: int, dx: int, time: float) -> float:
    """
    Predicted ``Sx``-``Sx`` correlator: ``(<Sx_i Sx_j> + <Sx_{i+d} Sx_{j+d}>) / 2``.
    """
    return 0.5 * (_raw(clean, "xx_raw_d", 0, dx, time) + _raw(clean, "xx_raw_d", d, dx, time))


@dataclass(frozen=True)
class SuperpositionPrediction:
    """
    Shifted-average predictions built from a clean trajectory at one time.
    """

    source_hash: str
    d: int
    time: float
    observables: dict[str, np.ndarray] = field(default_factory=dict)


def predict(
    clean: TrajectoryRecord,
    d: int,
    time: float,
    convention: Literal["literal", "connected"] = "connected",
) -> SuperpositionPrediction:
    """
    All predictions the clean record supports at ``time``: ``sz_profile``, and
    ``zeta``/``chi`` over the recorded distances when their raw products exist.
    """
    obs: dict[str, np.ndarray] = {"sz_profile": superposed_profile(clean, d, time)}
    sample = clean.samples[clean.time_index(time)]
    dxs = clean.schedule.dx
    if "zz_raw_d0" in sample and f"zz_raw_d{d}" in sample:
        obs["zeta"] = np.array(
            [_or_nan(superposed_zeta, clean, d, dx, time, convention) for dx in dxs]
        )
    if "xx_raw_d0" in sample and f"xx_raw_d{d}" in sample:
        obs["chi"] = np.array(
            [_or_nan(superposed_chi, clean, d, dx, time) for dx in dxs]
        )
    return SuperpositionPrediction(clean.config_hash, d, time, obs)


def _or_nan(fn: Callable[..., float], *args: Any) -> float:
    try:
        return float(fn(*args))
    except (ShapeError, ParameterError):
        return float("nan")


def _select(x: np.ndarray, region: Region) -> np.ndarray:
    if region is None:
        return x
    return x[region]


def deviation(
    series_a: np.ndarray,
    series_b: np.ndarray,
    region: Region = None,
    norm: Literal["sup", "l2"] = "sup",
) -> float:
    """
    Distance between two series over a region.

    Entries where either series is NaN (undefined predictions) are skipped.

    Raises
    ------
    ShapeError
        If the series have different shapes.

    Example
    -------
    >>> deviation(np.array([1.0, 0.0]), np.array([0.0, 1.0]), norm="l2")
    1.4142135623730951
    """
    a = np.asarray(series_a, dtype=float)
    b = np.asarray(series_b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"Cannot compare series of shapes {a.shape} and {b.shape}.")
    diff = _select(a, region) - _select(b, region)
    diff = diff[~np.isnan(diff)]
    if diff.size == 0:
        return 0.0
    if norm == "sup":
        return float(np.max(np.abs(diff)))
    if norm == "l2":
        return float(np.sqrt(np.sum(diff**2)))
    raise ParameterError(f"Unknown norm `{norm}`; use 'sup' or 'l2'.")


Tracer = Literal["hole-density-peak", "magnetization-crossing"]


def _tracer_signal(traj: TrajectoryRecord, time: float, tracer: Tracer) -> np.ndarray:
    if tracer == "hole-density-peak":
        return 1.0 - traj.at(time, "density")
    if tracer == "magnetization-crossing":
        return 0.5 - traj.at(time, "sz_profile")
    raise ParameterError(f"Unknown tracer `{tracer}`.")


def front_position(signal: np.ndarray, direction: int = 1, min_height: float = 1e-3) -> float:
    """
    Position of the leading half-maximum edge of a non-negative bump.

    For ``direction=+1`` this is the rightmost point where the signal still reaches
    half of its maximum, interpolated linearly between sites; ``-1`` mirrors it.

    Raises
    ------
    TrackingError
        If the signal has no clear maximum or the edge reaches the chain end.
    """
    s = np.asarray(signal, dtype=float)
    if direction not in (1, -1):
        raise ParameterError("`direction` must be +1 or -1.")
    if direction == -1:
        return float(s.size - 1) - front_position(s[::-1], 1, min_height)
    peak = float(np.max(s))
    if not peak > min_height:
        raise TrackingError(f"No front to track: signal maximum {peak:.3g}.")
    half = 0.5 * peak
    above = np.flatnonzero(s >= half)
    j = int(above[-1])
    if j == s.size - 1:
        raise TrackingError("The front has reached the end of the chain.")
    return j + (s[j] - half) / (s[j] - s[j + 1])


def front_velocity(
    traj: TrajectoryRecord,
    tracer: Tracer = "hole-density-peak",
    window: Optional[tuple[float, float]] = None,
    direction: int = 1,
    min_travel: float = 5.0,
) -> float:
    """
    Speed of a propagating front, as the least-squares slope of its position.

    Parameters
    ----------
    traj
        A trajectory recording ``density`` (hole tracer) or ``sz_profile``.
    tracer
        ``"hole-density-peak"`` follows the hole density ``1 - n``;
        ``"magnetization-crossing"`` follows the spin deficit ``1/2 - Sz``.
    window
        ``(t_start, t_stop)`` of the fit; defaults to all samples after ``t = 0``.
    direction
        ``+1`` for the right-moving front, ``-1`` for the left-moving one.
    min_travel
        Minimum displacement in sites over the window.

    Returns
    -------
    :
        The absolute front velocity in sites per unit time.

    Raises
    ------
    TrackingError
        If the front cannot be followed or moves less than ``min_travel`` sites.
    """
    t0, t1 = window if window is not None else (0.0, float("inf"))
    times = [t for t in traj.times if t0 <= t <= t1 and t > 0]
    if len(times) < 2:
        raise TrackingError("At least two samples are needed inside the fit window.")
    xs = np.array(
        [front_position(_tracer_signal(traj, t, tracer), direction) for t in times]
    )
    if abs(xs[-1] - xs[0]) < min_travel:
        raise TrackingError(
            f"The front moved {abs(xs[-1] - xs[0]):.2f} sites; at least {min_travel} "
            "are needed for a velocity fit."
        )
    slope = np.polyfit(np.array(times), xs, 1)[0]
    return float(abs(slope))


def beating_amplitude(profile: np.ndarray, region: Region = None) -> float:
    """
    Strength of the nearest-neighbour alternation in a profile.

    ``|sum_j (-1)**j (p[j] - mean(p))| / n`` over the ``n`` sites of the region, so a
    profile ``(+a, -a, +a, -a)`` gives ``a`` and a constant profile gives 0.

    Raises
    ------
    ParameterError
        If the region has fewer than four sites.
    """
    p = _select(np.asarray(profile, dtype=float), region)
    p = p[~np.isnan(p)]
    n = p.size
    if n < 4:
        raise ParameterError("`region` must contain at least four sites.")
    signs = (-1.0) ** np.arange(n)
    return float(abs(np.sum(signs * (p - p.mean()))) / n)


def crossing_position(profile: np.ndarray, level: float = 0.0) -> float:
    """
    Interpolated position where a profile first drops through ``level``.

    Raises
    ------
    TrackingError
        If the profile never crosses the level from above.
    """
    p = np.asarray(profile, dtype=float)
    for j in range(p.size - 1):
        if p[j] > level >= p[j + 1]:
            return j + (p[j] - level) / (p[j] - p[j + 1])
    raise TrackingError(f"The profile does not cross {level} from above.")


def profile_shift(defect: np.ndarray, clean: np.ndarray) -> float:
    """
    Shift of the zero crossing of a defect profile relative to the clean one.
    """
    return crossing_position(defect) - crossing_position(clean)


def transit_time(L: int, site: int, t: float = 1.0) -> float:
    """
    Time after which a hole started at ``site`` has passed the wall:
    ``(L/2 - 1 - site) / (2 t) + 2 / t``.
    """
    return (L // 2 - 1 - site) / (2 * t) + 2 / t


def comparison_table(
    defect: TrajectoryRecord,
    clean: TrajectoryRecord,
    d: Union[int, Sequence[int]],
    key: Literal["sz_profile", "zeta", "chi"] = "sz_profile",
    times: Optional[Sequence[float]] = None,
) -> pd.DataFrame:
    """
    Long table of defect values against superposition predictions.

    Columns: ``time, key, index, defect, prediction, clean, deviation``. Correlator
    predictions use the connected convention.

    Parameters
    ----------
    defect
        The defect trajectory.
    clean
        The clean trajectory.
    d
        The shift of a single defect, or one shift per defect. Several shifts are
        composed with :func:`composed_profile` and only support ``sz_profile``.
    key
        The observable to compare.
    times
        Times to compare; defaults to the times both records share.

    Raises
    ------
    InsufficientDataError
        If the clean record cannot support a prediction for ``key``.
    """
    if defect.L != clean.L:
        raise ShapeError("Defect and clean runs must have the same length.")
    shifts = [int(d)] if isinstance(d, (int, np.integer)) else [int(x) for x in d]
    if len(shifts) != 1 and key != "sz_profile":
        raise InsufficientDataError(
            f"`{key}` can only be predicted for a single defect, got shifts {shifts}."
        )
    times = list(times) if times is not None else [t for t in defect.times if t in clean.times]
    rows = []
    for t in times:
        if len(shifts) == 1:
            prediction = predict(clean, shifts[0], t)
            if key not in prediction.observables:
                raise InsufficientDataError(f"No prediction for `{key}` can be built.")
            pred = prediction.observables[key]
        else:
            pred = composed_profile(clean, shifts, t)
        dv = defect.at(t, key)
        cv = clean.at(t, key)
        idx = defect.schedule.index_of(key, defect.L)
        for i, a, p, c in zip(idx, dv, pred, cv):
            rows.append((t, key, int(i), float(a), float(p), float(c), float(a - p)))
    return pd.DataFrame(
        rows, columns=["time", "key", "index", "defect", "prediction", "clean", "deviation"]
    )
