"""Per-track intruder state estimation.

The filter state is ``(cx, cy, vx, vy, ax, ay)`` in px, px/s and px/s^2 with a
constant-acceleration model driven by white-noise jerk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

INIT_VARIANCE = 1e4
NO_CLOSURE = math.inf


@dataclass(frozen=True)
class NoiseConfig:
    accel_psd: float = 10.0  # (px/s^2)^2 / Hz, white-noise jerk intensity
    meas_sigma: float = 2.0  # px

    def __post_init__(self):
        if not (self.accel_psd > 0 and self.meas_sigma > 0):
            raise ValueError("noise parameters must be positive")


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray
    P: np.ndarray
    last_update_s: float

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:4]

    @property
    def acceleration(self) -> np.ndarray:
        return self.x[4:6]


@dataclass(frozen=True)
class IntruderEstimate:
    angular_rate_dps: float
    tcpa_s: Optional[float]  # None: unknown, inf: not closing
    range_m: Optional[float]


def kf_init(center, t_s: float, noise: NoiseConfig = NoiseConfig()) -> KalmanState:
    """Start a filter at a first detection; motion terms get a broad prior."""
    x = np.zeros(6)
    x[:2] = center
    P = np.diag([noise.meas_sigma**2] * 2 + [INIT_VARIANCE] * 4)
    return KalmanState(x, P, float(t_s))


def transition(dt: float) -> np.ndarray:
    F1 = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    return _per_axis(F1)


def process_noise(dt: float, accel_psd: float) -> np.ndarray:
    """Exact discretisation of white-noise jerk for one axis, lifted to 2-D."""
    q = accel_psd * np.array(
        [
            [dt**5 / 20.0, dt**4 / 8.0, dt**3 / 6.0],
            [dt**4 / 8.0, dt**3 / 3.0, dt**2 / 2.0],
            [dt**3 / 6.0, dt**2 / 2.0, dt],
        ]
    )
    return _per_axis(q)


def _per_axis(m3: np.ndarray) -> np.ndarray:
    # state order is (px, py, vx, vy, ax, ay): axis k lives at indices k, k+2, k+4
    out = np.zeros((6, 6))
    for axis in (0, 1):
        idx = [axis, axis + 2, axis + 4]
        out[np.ix_(idx, idx)] = m3
    return out


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kf_predict(s: KalmanState, dt: float, noise: NoiseConfig = NoiseConfig()) -> KalmanState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return s
    F = transition(dt)
    P = F @ s.P @ F.T + process_noise(dt, noise.accel_psd)
    return KalmanState(F @ s.x, _sym(P), s.last_update_s + dt)


H = np.zeros((2, 6))
H[0, 0] = H[1, 1] = 1.0


def kf_update(s: KalmanState, meas_center, noise: NoiseConfig = NoiseConfig()) -> KalmanState:
    """Position measurement update in Joseph form."""
    z = np.asarray(meas_center, dtype=np.float64)
    R = np.eye(2) * noise.meas_sigma**2
    S = H @ s.P @ H.T + R
    K = np.linalg.solve(S, H @ s.P).T
    x = s.x + K @ (z - H @ s.x)
    I_KH = np.eye(6) - K @ H
    P = I_KH @ s.P @ I_KH.T + K @ R @ K.T
    return KalmanState(x, _sym(P), s.last_update_s)


def kf_step(
    s: KalmanState, meas_center, t_s: float, noise: NoiseConfig = NoiseConfig()
) -> KalmanState:
    """Predict to ``t_s`` then update with the measured center."""
    s = kf_predict(s, t_s - s.last_update_s, noise)
    return replace(kf_update(s, meas_center, noise), last_update_s=float(t_s))


def kf_transform(s: KalmanState, linear, translation) -> KalmanState:
    """Re-express the state after an image-plane affine map (ego-motion)."""
    A = np.asarray(linear, dtype=np.float64)
    T = np.kron(np.eye(3), A)
    x = T @ s.x
    x[:2] += translation
    return KalmanState(x, _sym(T @ s.P @ T.T), s.last_update_s)


def angular_rate(s: KalmanState, theta_dpp: float) -> float:
    """Bearing rate in deg/s from pixel velocity and degrees-per-pixel."""
    vx, vy = s.velocity
    return float(theta_dpp * math.hypot(vx, vy))


def tcpa_from_pair(t_i: float, a_i: float, t_j: float, a_j: float) -> float:
    """Time to closest approach from two box areas, seconds after ``t_j``.

    Returns ``inf`` when the box is not growing.
    """
    if a_i <= 0 or a_j <= 0:
        raise ValueError("box areas must be positive")
    if a_j <= a_i:
        return NO_CLOSURE
    return (t_j - t_i) / (-1.0 + math.sqrt(a_j / a_i))


def tcpa(
    times: Sequence[float],
    areas: Sequence[float],
    window_s: float = 1.0,
    smooth: int = 5,
) -> Optional[float]:
    """Time to closest approach from a box-area history.

    Areas are median-filtered over ``smooth`` frames (centered, so a constant
    closure history is reproduced exactly). The pair uses the newest smoothed
    snapshot ``j`` and the oldest one within ``window_s`` before it; the result
    is shifted from ``t_j`` to the newest raw timestamp.

    Returns ``None`` with fewer than two snapshots and ``inf`` for no closure.
    """
    times = np.asarray(times, dtype=np.float64)
    areas = np.asarray(areas, dtype=np.float64)
    n = len(times)
    if n != len(areas):
        raise ValueError("times and areas differ in length")
    if n < 2:
        return None
    half = min(max(smooth, 1) // 2, (n - 2) // 2)
    # candidate snapshots are those with a full centered median window
    j = n - 1 - half
    # small slack so a 1.0 s window at 10 Hz includes the frame 10 steps back
    slack = 1e-9 * max(1.0, abs(times[j]))
    i = int(np.searchsorted(times[: j + 1], times[j] - window_s - slack))
    i = min(max(i, half), j - 1)

    def smoothed(k: int) -> float:
        return float(np.median(areas[k - half : k + half + 1]))

    value = tcpa_from_pair(float(times[i]), smoothed(i), float(times[j]), smoothed(j))
    if math.isinf(value):
        return value
    # keep the estimate positive when the smoothing lag exceeds the remaining time
    return max(float(value - (times[-1] - times[j])), 1e-3)


def estimate_range(
    prev_range_m: Optional[float], new_log_distance: float, alpha_ema: float = 0.3
) -> float:
    """Fuse a new log-distance into a range estimate (meters).

    Exponential moving average in log space; the first observation
    (``prev_range_m is None``) is taken as-is.
    """
    if not 0 < alpha_ema <= 1:
        raise ValueError("alpha_ema must lie in (0, 1]")
    if prev_range_m is None:
        return math.exp(new_log_distance)
    if prev_range_m <= 0:
        raise ValueError("range must be positive")
    log_r = (1.0 - alpha_ema) * math.log(prev_range_m) + alpha_ema * float(new_log_distance)
    return math.exp(log_r)
