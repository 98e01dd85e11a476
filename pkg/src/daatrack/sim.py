"""Synthetic intruder encounters.

World frame: x and y horizontal, z up, meters. Headings are measured from +x
towards +y. The camera looks along the ownship's horizontal velocity (or its
``yaw_deg`` when hovering); image x grows to the right, image y downwards.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import BoundingBox, CameraModel, Detection, DetectionSource, FrameMeta

FEET = 0.3048


@dataclass(frozen=True)
class Trajectory:
    """Constant-speed motion, optionally turning at a constant rate in the horizontal plane."""

    position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    turn_rate_dps: float = 0.0
    yaw_deg: float = 0.0

    @property
    def ground_speed(self) -> float:
        return math.hypot(self.velocity[0], self.velocity[1])

    def heading0(self) -> float:
        if self.ground_speed > 0:
            return math.atan2(self.velocity[1], self.velocity[0])
        return math.radians(self.yaw_deg)

    def state(self, t: float) -> Tuple[np.ndarray, np.ndarray, float]:
        """Position, velocity and heading (rad) at time ``t``."""
        x0, y0, z0 = self.position
        vz = self.velocity[2]
        speed = self.ground_speed
        psi0 = self.heading0()
        omega = math.radians(self.turn_rate_dps)
        psi = psi0 + omega * t
        if omega == 0.0:
            dx, dy = self.velocity[0] * t, self.velocity[1] * t
        else:
            dx = speed / omega * (math.sin(psi) - math.sin(psi0))
            dy = -speed / omega * (math.cos(psi) - math.cos(psi0))
        pos = np.array([x0 + dx, y0 + dy, z0 + vz * t])
        vel = np.array([speed * math.cos(psi), speed * math.sin(psi), vz])
        return pos, vel, psi


@dataclass(frozen=True)
class EncounterScenario:
    ownship: Trajectory
    intruder: Trajectory
    duration_s: float
    camera: CameraModel = field(default_factory=CameraModel)
    characteristic_size_m: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not self.characteristic_size_m > 0:
            raise ValueError("characteristic_size_m must be positive")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")

    def frame_times(self) -> np.ndarray:
        n = int(math.floor(self.duration_s * self.camera.frame_rate_hz + 1e-9)) + 1
        return np.arange(n) / self.camera.frame_rate_hz


@dataclass(frozen=True)
class GroundTruth:
    box: BoundingBox
    range_m: float
    angular_rate_dps: float
    in_frame: bool = True

    @property
    def center(self) -> Tuple[float, float]:
        return self.box.center


def camera_axes(heading: float) -> np.ndarray:
    """Rows: forward, right, down unit vectors in the world frame."""
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0]])


def line_of_sight(scenario: EncounterScenario, t: float):
    """Relative position, its rate, camera axes and ownship yaw rate (rad/s)."""
    p_o, v_o, psi = scenario.ownship.state(t)
    p_i, v_i, _ = scenario.intruder.state(t)
    return p_i - p_o, v_i - v_o, camera_axes(psi), math.radians(scenario.ownship.turn_rate_dps)


def los_rate_dps(rel: np.ndarray, rel_dot: np.ndarray, yaw_rate: float) -> float:
    """Rotation rate of the line of sight as seen from the (yawing) camera."""
    r = float(np.linalg.norm(rel))
    u = rel / r
    du = (rel_dot - u * float(u @ rel_dot)) / r
    du = du - np.cross([0.0, 0.0, yaw_rate], u)
    return math.degrees(float(np.linalg.norm(du)))


def image_point(scenario: EncounterScenario, t: float) -> Optional[Tuple[float, float, float]]:
    """Pinhole projection ``(u, v, depth)``; None when the intruder is behind the camera."""
    rel, _, axes, _ = line_of_sight(scenario, t)
    fwd, right, down = axes @ rel
    if fwd <= 0:
        return None
    cam = scenario.camera
    f = cam.focal_px
    return (
        float(cam.width_px / 2.0 + f * right / fwd),
        float(cam.height_px / 2.0 + f * down / fwd),
        float(fwd),
    )


def project(scenario: EncounterScenario, t: float) -> Optional[GroundTruth]:
    """Ground-truth detection at time ``t``, or None when not visible.

    Boxes are square with side ``focal_px * size / range`` (at least 1 px).
    """
    if not 0.0 <= t <= scenario.duration_s + 1e-9:
        raise ValueError(f"t={t} outside [0, {scenario.duration_s}]")
    pt = image_point(scenario, t)
    if pt is None:
        return None
    u, v, _ = pt
    cam = scenario.camera
    if not (0.0 <= u < cam.width_px and 0.0 <= v < cam.height_px):
        return None
    rel, rel_dot, _, yaw_rate = line_of_sight(scenario, t)
    rng_m = float(np.linalg.norm(rel))
    side = max(1.0, cam.focal_px * scenario.characteristic_size_m / rng_m)
    return GroundTruth(
        box=BoundingBox(u, v, side, side),
        range_m=rng_m,
        angular_rate_dps=los_rate_dps(rel, rel_dot, yaw_rate),
    )


def bearing_angle_between(scenario: EncounterScenario, t0: float, t1: float) -> float:
    """Angle (deg) between camera-frame lines of sight at two times."""
    us = []
    for t in (t0, t1):
        rel, _, axes, _ = line_of_sight(scenario, t)
        u = axes @ rel
        us.append(u / np.linalg.norm(u))
    cosang = float(np.clip(us[0] @ us[1], -1.0, 1.0))
    return math.degrees(math.acos(cosang))


@dataclass(frozen=True)
class NoiseModel:
    """Sensor degradation applied to ground truth.

    Miss probability is logistic in range, ``miss_max / (1 + exp(-(r - mid) / scale))``;
    ``miss_midpoint_m=None`` disables misses. ``miss_prob_fn`` overrides the curve.
    """

    center_jitter_sigma_px: float = 0.5
    size_jitter_frac: float = 0.05
    miss_midpoint_m: Optional[float] = 1210.0
    miss_scale_m: float = 160.0
    miss_max: float = 1.0
    fp_rate_per_frame: float = 0.01
    log_distance_sigma: float = 0.08
    miss_prob_fn: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("center_jitter_sigma_px", "size_jitter_frac", "fp_rate_per_frame",
                     "log_distance_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.miss_max <= 1.0:
            raise ValueError("miss_max must lie in [0, 1]")
        if not self.miss_scale_m > 0:
            raise ValueError("miss_scale_m must be positive")

    def miss_prob(self, range_m: float) -> float:
        if self.miss_prob_fn is not None:
            return float(self.miss_prob_fn(range_m))
        if self.miss_midpoint_m is None:
            return 0.0
        z = (range_m - self.miss_midpoint_m) / self.miss_scale_m
        return self.miss_max / (1.0 + math.exp(-z)) if z > -700 else 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "center_jitter_sigma_px": self.center_jitter_sigma_px,
            "size_jitter_frac": self.size_jitter_frac,
            "miss_midpoint_m": self.miss_midpoint_m,
            "miss_scale_m": self.miss_scale_m,
            "miss_max": self.miss_max,
            "fp_rate_per_frame": self.fp_rate_per_frame,
            "log_distance_sigma": self.log_distance_sigma,
        }


NOISELESS = NoiseModel(
    center_jitter_sigma_px=0.0,
    size_jitter_frac=0.0,
    miss_midpoint_m=None,
    fp_rate_per_frame=0.0,
    log_distance_sigma=0.0,
)
CALIBRATED = NoiseModel()
NOISE_PROFILES: Dict[str, NoiseModel] = {"noiseless": NOISELESS, "calibrated": CALIBRATED}


@dataclass(frozen=True)
class LabeledFrame:
    meta: FrameMeta
    gt: Optional[GroundTruth]
    observed: Tuple[Detection, ...]


def _true_detection(gt, prev_center, noise, rng, frame_index) -> Detection:
    jit = noise.center_jitter_sigma_px
    cx, cy = gt.box.cx, gt.box.cy
    if jit > 0:
        cx, cy = cx + jit * rng.standard_normal(), cy + jit * rng.standard_normal()
    side = gt.box.w
    if noise.size_jitter_frac > 0:
        side = side * (1.0 + noise.size_jitter_frac * rng.standard_normal())
    side = max(1.0, side)
    if prev_center is None:
        offset = (0.0, 0.0)
    else:
        offset = (gt.box.cx - prev_center[0], gt.box.cy - prev_center[1])
        if jit > 0:
            offset = (offset[0] + jit * rng.standard_normal(), offset[1] + jit * rng.standard_normal())
    log_d = math.log(gt.range_m)
    if noise.log_distance_sigma > 0:
        log_d += noise.log_distance_sigma * rng.standard_normal()
    conf = min(1.0, max(0.05, 1.0 - 0.5 * noise.miss_prob(gt.range_m)))
    return Detection(
        box=BoundingBox(cx, cy, side, side),
        confidence=conf,
        track_offset=offset,
        log_distance=log_d,
        frame_index=frame_index,
        source=DetectionSource.SIMULATOR,
    )


def _false_positive(camera: CameraModel, rng, frame_index) -> Detection:
    side = float(rng.uniform(2.0, 12.0))
    return Detection(
        box=BoundingBox(
            float(rng.uniform(0, camera.width_px)), float(rng.uniform(0, camera.height_px)), side, side
        ),
        confidence=float(rng.uniform(0.2, 0.7)),
        track_offset=(float(2.0 * rng.standard_normal()), float(2.0 * rng.standard_normal())),
        log_distance=math.log(float(rng.uniform(300.0, 3000.0))),
        frame_index=frame_index,
        source=DetectionSource.SIMULATOR,
        is_false_positive=True,
    )


def run_encounter(scenario: EncounterScenario, noise: NoiseModel = CALIBRATED) -> List[LabeledFrame]:
    """Render the labelled detection stream for one encounter; deterministic in ``scenario.seed``."""
    rng = np.random.default_rng(scenario.seed)
    cam = scenario.camera
    frames = []
    dt = cam.frame_period_s
    for k, t in enumerate(scenario.frame_times()):
        t = float(t)
        gt = project(scenario, t)
        observed = []
        if gt is not None and rng.random() >= noise.miss_prob(gt.range_m):
            prev = image_point(scenario, t - dt) if k > 0 else None
            prev_center = prev[:2] if prev is not None else None
            observed.append(_true_detection(gt, prev_center, noise, rng, k))
        for _ in range(int(rng.poisson(noise.fp_rate_per_frame)) if noise.fp_rate_per_frame else 0):
            observed.append(_false_positive(cam, rng, k))
        frames.append(LabeledFrame(FrameMeta(k, t, cam), gt, tuple(observed)))
    return frames


def head_on_template(
    R0_m: float,
    closure_mps: float,
    offset_m: float = 0.0,
    duration_s: float = 120.0,
    camera: CameraModel = CameraModel(),
    seed: int = 0,
    ownship_speed_mps: Optional[float] = None,
    vertical_offset_m: float = 0.0,
    characteristic_size_m: float = 10.0,
) -> EncounterScenario:
    """Converging straight-line encounter.

    Ownship flies level along +x from the origin; the intruder starts ``R0_m``
    away, displaced by ``offset_m`` laterally (and ``vertical_offset_m`` up),
    and closes at ``closure_mps``. The miss distance at CPA is the norm of the
    two offsets, reached at ``along / closure`` seconds.
    """
    miss = math.hypot(offset_m, vertical_offset_m)
    if R0_m < miss:
        raise ValueError("initial range smaller than the miss distance")
    if closure_mps < 0:
        raise ValueError("closure speed must be non-negative")
    along = math.sqrt(R0_m**2 - miss**2)
    own = closure_mps / 2.0 if ownship_speed_mps is None else ownship_speed_mps
    return EncounterScenario(
        ownship=Trajectory(velocity=(own, 0.0, 0.0)),
        intruder=Trajectory(
            position=(along, offset_m, vertical_offset_m),
            velocity=(own - closure_mps, 0.0, 0.0),
        ),
        duration_s=duration_s,
        camera=camera,
        characteristic_size_m=characteristic_size_m,
        seed=seed,
    )


def sample_encounters(
    n: int,
    seed: int = 0,
    camera: CameraModel = CameraModel(),
    r0_range: Tuple[float, float] = (1800.0, 2600.0),
    closure_range: Tuple[float, float] = (40.0, 90.0),
    offset_range: Tuple[float, float] = (30.0, 200.0),
) -> List[EncounterScenario]:
    """Random head-on encounters that end one second short of CPA."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        r0 = float(rng.uniform(*r0_range))
        closure = float(rng.uniform(*closure_range))
        offset = float(rng.uniform(*offset_range)) * (1 if rng.random() < 0.5 else -1)
        vertical = float(rng.uniform(-50.0, 50.0))
        along = math.sqrt(r0**2 - offset**2 - vertical**2)
        duration = min(120.0, along / closure - 1.0)
        out.append(
            head_on_template(
                r0, closure, offset, duration, camera, seed=int(rng.integers(2**31)),
                vertical_offset_m=vertical,
            )
        )
    return out


# --- config files -----------------------------------------------------------

def _vec(text: str) -> Tuple[float, float, float]:
    parts = [float(p) for p in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError(f"expected three components, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def scenario_from_config(
    path: Union[str, Path], seed: Optional[int] = None, template: Optional[str] = None
) -> Tuple[EncounterScenario, Dict[str, float]]:
    """Load a scenario INI file.

    Sections: ``[scenario]`` (template = head_on | custom, duration_s,
    intruder_size_m, seed), ``[camera]``, ``[head_on]`` (r0_m, closure_mps,
    offset_m, vertical_offset_m, ownship_speed_mps), ``[ownship]`` and
    ``[intruder]`` (position, velocity as "x, y, z"; turn_rate_dps; yaw_deg),
    and an optional ``[noise]`` whose keys override the noise profile.
    ``template`` overrides the file's choice. Returns the scenario and the raw
    noise overrides.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario config not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    sc = cp["scenario"] if cp.has_section("scenario") else {}
    template = template or sc.get("template", "head_on")
    duration = float(sc.get("duration_s", 120.0))
    size = float(sc.get("intruder_size_m", 10.0))
    seed = int(sc.get("seed", 0)) if seed is None else seed

    cam_kwargs = {}
    if cp.has_section("camera"):
        for key, conv in (("width_px", int), ("height_px", int), ("hfov_deg", float),
                          ("vfov_deg", float), ("frame_rate_hz", float)):
            if key in cp["camera"]:
                cam_kwargs[key] = conv(cp["camera"][key])
    camera = CameraModel(**cam_kwargs)

    if template == "head_on":
        ho = cp["head_on"] if cp.has_section("head_on") else {}
        speed = ho.get("ownship_speed_mps")
        scenario = head_on_template(
            R0_m=float(ho.get("r0_m", 2000.0)),
            closure_mps=float(ho.get("closure_mps", 60.0)),
            offset_m=float(ho.get("offset_m", 100.0)),
            duration_s=duration,
            camera=camera,
            seed=seed,
            ownship_speed_mps=float(speed) if speed is not None else None,
            vertical_offset_m=float(ho.get("vertical_offset_m", 0.0)),
            characteristic_size_m=size,
        )
    elif template == "custom":
        def traj(section: str) -> Trajectory:
            s = cp[section]
            return Trajectory(
                position=_vec(s.get("position", "0 0 0")),
                velocity=_vec(s.get("velocity", "0 0 0")),
                turn_rate_dps=float(s.get("turn_rate_dps", 0.0)),
                yaw_deg=float(s.get("yaw_deg", 0.0)),
            )
        scenario = EncounterScenario(
            ownship=traj("ownship"),
            intruder=traj("intruder"),
            duration_s=duration,
            camera=camera,
            characteristic_size_m=size,
            seed=seed,
        )
    else:
        raise ValueError(f"unknown scenario template {template!r}")

    overrides = {}
    if cp.has_section("noise"):
        overrides = {k: float(v) for k, v in cp["noise"].items()}
    return scenario, overrides


def noise_with_overrides(base: NoiseModel, overrides: Dict[str, float]) -> NoiseModel:
    known = set(base.to_dict())
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown noise keys: {sorted(unknown)}")
    return replace(base, **overrides)
