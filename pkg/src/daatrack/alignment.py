"""Background ego-motion model between consecutive frames.

An :class:`AffineTransform` maps pixel coordinates of the previous frame to
the current frame. A :class:`FlowField` samples that motion on a coarse grid
(1/32 of the input) together with a per-cell confidence.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

FLOW_STRIDE = 32
DEFAULT_DET_BOUNDS = (0.5, 2.0)
DEFAULT_CONF_THRESHOLD = 0.5


class AlignmentError(ValueError):
    """The frame pair cannot be aligned (too little or degenerate support)."""


@dataclass(frozen=True)
class AffineTransform:
    """``(x, y) -> (a*x + b*y + tx, c*x + d*y + ty)``."""

    a: float = 1.0
    b: float = 0.0
    tx: float = 0.0
    c: float = 0.0
    d: float = 1.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls()

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(tx=dx, ty=dy)

    @classmethod
    def from_matrix(cls, m) -> "AffineTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(*(float(v) for v in m[:2, :3].reshape(-1)))

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, self.tx, self.c, self.d, self.ty])

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.a, self.b, self.tx], [self.c, self.d, self.ty], [0.0, 0.0, 1.0]]
        )

    @property
    def linear(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def is_plausible(self, bounds: Tuple[float, float] = DEFAULT_DET_BOUNDS) -> bool:
        lo, hi = bounds
        return lo < abs(self.det) < hi

    def apply(self, points) -> np.ndarray:
        """Map an (..., 2) array of points."""
        p = np.asarray(points, dtype=np.float64)
        x, y = p[..., 0], p[..., 1]
        return np.stack(
            [self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty], axis=-1
        )

    def __call__(self, point) -> Tuple[float, float]:
        x, y = point
        return (self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty)

    def compose(self, first: "AffineTransform") -> "AffineTransform":
        """Transform equal to applying ``first`` and then ``self``."""
        return AffineTransform.from_matrix(self.matrix @ first.matrix)

    def inverse(self) -> "AffineTransform":
        det = self.det
        if det == 0:
            raise AlignmentError("singular affine transform")
        a, b, c, d = self.d / det, -self.b / det, -self.c / det, self.a / det
        return AffineTransform(
            a, b, -(a * self.tx + b * self.ty), c, d, -(c * self.tx + d * self.ty)
        )


@dataclass
class FlowField:
    offsets: np.ndarray  # (2, grid_h, grid_w), pixels
    confidence: np.ndarray  # (grid_h, grid_w), [0, 1]
    stride: int = FLOW_STRIDE

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.offsets.ndim != 3 or self.offsets.shape[0] != 2:
            raise ValueError("offsets must have shape (2, H, W)")
        if self.confidence.shape != self.offsets.shape[1:]:
            raise ValueError("confidence must match the offset grid")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("flow offsets must be finite")
        if self.confidence.size and (
            self.confidence.min() < 0.0 or self.confidence.max() > 1.0
        ):
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def grid_shape(self) -> Tuple[int, int]:
        """(grid_w, grid_h)."""
        return self.offsets.shape[2], self.offsets.shape[1]

    def cell_centers(self) -> np.ndarray:
        """Full-resolution pixel coordinates of each cell center, shape (H, W, 2)."""
        grid_w, grid_h = self.grid_shape
        ys, xs = np.mgrid[0:grid_h, 0:grid_w]
        return np.stack([(xs + 0.5) * self.stride, (ys + 0.5) * self.stride], axis=-1)


def flow_grid_shape(width_px: int, height_px: int, stride: int = FLOW_STRIDE) -> Tuple[int, int]:
    return math.ceil(width_px / stride), math.ceil(height_px / stride)


@dataclass(frozen=True)
class AlignCropSpec:
    """Fixed crop below the horizon, anchored at the bottom center of the frame."""

    width: int = 2048
    height: int = 1280

    def origin(self, image_w: int, image_h: int) -> Tuple[int, int]:
        if image_w < self.width or image_h < self.height:
            raise ValueError(
                f"image {image_w}x{image_h} smaller than {self.width}x{self.height} crop"
            )
        return (image_w - self.width) // 2, image_h - self.height

    def apply(self, img: np.ndarray) -> np.ndarray:
        h, w = img.shape[:2]
        x0, y0 = self.origin(w, h)
        return img[y0 : y0 + self.height, x0 : x0 + self.width]


def sample_affine(
    rng: np.random.Generator,
    scale_sigma: float = 0.01,
    rot_sigma_deg: float = 0.5,
    trans_sigma_px: float = 5.0,
    center: Tuple[float, float] = (0.0, 0.0),
    det_bounds: Tuple[float, float] = DEFAULT_DET_BOUNDS,
    max_tries: int = 1000,
) -> AffineTransform:
    """Random similarity transform about ``center`` for augmentation.

    Scale ~ N(1, scale_sigma), rotation ~ N(0, rot_sigma_deg), each translation
    component ~ N(0, trans_sigma_px). Draws violating ``det_bounds`` are redrawn.
    """
    for _ in range(max_tries):
        s = 1.0 + scale_sigma * rng.standard_normal()
        theta = math.radians(rot_sigma_deg * rng.standard_normal())
        dx, dy = trans_sigma_px * rng.standard_normal(2)
        cos, sin = math.cos(theta), math.sin(theta)
        a, b, c, d = s * cos, -s * sin, s * sin, s * cos
        cx, cy = center
        t = AffineTransform(
            a, b, cx - a * cx - b * cy + dx, c, d, cy - c * cx - d * cy + dy
        )
        if t.is_plausible(det_bounds):
            return t
    raise AlignmentError("could not sample a transform inside the determinant bounds")


def affine_to_flow(
    t: AffineTransform, grid_w: int, grid_h: int, stride: int = FLOW_STRIDE
) -> FlowField:
    """Dense flow ``t(p) - p`` at each cell center, with unit confidence."""
    flow = FlowField(np.zeros((2, grid_h, grid_w)), np.ones((grid_h, grid_w)), stride)
    p = flow.cell_centers()
    flow.offsets = np.moveaxis(t.apply(p) - p, -1, 0)
    return flow


def _support(flow: FlowField, conf_threshold: float):
    mask = flow.confidence >= conf_threshold
    pts = flow.cell_centers()[mask]
    dst = pts + np.moveaxis(flow.offsets, 0, -1)[mask]
    w = flow.confidence[mask]
    keep = w > 0
    return pts[keep], dst[keep], w[keep]


def fit_affine(
    flow: FlowField,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    det_bounds: Optional[Tuple[float, float]] = DEFAULT_DET_BOUNDS,
) -> AffineTransform:
    """Confidence-weighted least-squares affine fit to a flow field.

    Cells below ``conf_threshold`` are ignored. Raises :class:`AlignmentError`
    when fewer than three non-collinear cells remain or when the fitted
    determinant falls outside ``det_bounds``.
    """
    src, dst, w = _support(flow, conf_threshold)
    if len(src) < 3:
        raise AlignmentError(f"only {len(src)} confident flow cells")
    # normalise coordinates for conditioning
    mean = np.average(src, axis=0, weights=w)
    centered = src - mean
    scale = math.sqrt(np.average((centered**2).sum(axis=1), weights=w))
    if scale == 0:
        raise AlignmentError("flow support collapses to a single point")
    q = centered / scale
    sw = np.sqrt(w)[:, None]
    design = np.column_stack([q, np.ones(len(q))])
    sv = np.linalg.svd(design[:, :2] * sw, compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise AlignmentError("flow support is collinear")
    sol, *_ = np.linalg.lstsq(design * sw, dst * sw, rcond=None)
    # dst = [q, 1] @ sol with q = (p - mean) / scale
    lin = sol[:2].T / scale
    trans = sol[2] - lin @ mean
    t = AffineTransform(lin[0, 0], lin[0, 1], trans[0], lin[1, 0], lin[1, 1], trans[1])
    if det_bounds is not None and not t.is_plausible(det_bounds):
        raise AlignmentError(f"implausible fitted determinant {t.det:.4g}")
    return t


def residual_rms(
    flow: FlowField, t: AffineTransform, conf_threshold: float = DEFAULT_CONF_THRESHOLD
) -> float:
    """Confidence-weighted RMS distance between flow endpoints and ``t``."""
    src, dst, w = _support(flow, conf_threshold)
    if len(src) == 0:
        raise AlignmentError("no confident flow cells")
    r2 = ((t.apply(src) - dst) ** 2).sum(axis=1)
    return float(math.sqrt(np.average(r2, weights=w)))


def alignment_objective(pred: FlowField, gt: FlowField) -> float:
    """Mean over cells of predicted confidence times squared flow error.

    The per-cell error is the sum of squares of both flow components.
    """
    if pred.offsets.shape != gt.offsets.shape:
        raise ValueError("flow fields must share a grid")
    sq = ((pred.offsets - gt.offsets) ** 2).sum(axis=0)
    return float((pred.confidence * sq).sum() / sq.size)


def warp_image(img: np.ndarray, t: AffineTransform) -> np.ndarray:
    """Resample ``img`` so content at ``p`` moves to ``t(p)``.

    Inverse-mapped bilinear sampling; output pixels whose source falls outside
    the input are 0. Integer inputs are rounded back to their dtype.
    """
    src = np.asarray(img)
    data = src.astype(np.float64)
    h, w = data.shape
    inv = t.inverse()
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv.a * xs + inv.b * ys + inv.tx
    sy = inv.c * xs + inv.d * ys + inv.ty
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.intp)
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.intp)
    fx = np.where(valid, sx - x0, 0.0)
    fy = np.where(valid, sy - y0, 0.0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    out = (
        data[y0, x0] * (1 - fx) * (1 - fy)
        + data[y0, x1] * fx * (1 - fy)
        + data[y1, x0] * (1 - fx) * fy
        + data[y1, x1] * fx * fy
    )
    out = np.where(valid, out, 0.0)
    if np.issubdtype(src.dtype, np.integer):
        info = np.iinfo(src.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(src.dtype)
    return out.astype(src.dtype, copy=False)


def compensate_center(prev_center, t: AffineTransform) -> Tuple[float, float]:
    """Move a previous-frame center into current-frame coordinates."""
    return t(prev_center)


@dataclass
class TrainingPair:
    source: np.ndarray
    target: np.ndarray
    transform: Optional[AffineTransform]
    kind: str  # "synthetic" or "consecutive"


def is_synthetic_slot(index: int, synthetic_fraction: float = 0.75) -> bool:
    """Deterministic schedule: any run of n pairs holds round(f*n) +- 1 synthetic ones."""
    return math.floor((index + 1) * synthetic_fraction) > math.floor(index * synthetic_fraction)


def training_pairs(
    frames: Sequence[np.ndarray],
    rng: np.random.Generator,
    n_pairs: int,
    synthetic_fraction: float = 0.75,
    target_fn: Optional[Callable[[np.ndarray, np.ndarray], AffineTransform]] = None,
    **affine_kwargs,
) -> Iterator[TrainingPair]:
    """Yield alignment training pairs.

    Synthetic pairs warp a frame with :func:`sample_affine` about the image
    center and carry that transform as target. Consecutive pairs take two
    neighbouring frames; their target comes from ``target_fn`` (a classical
    flow estimator) or is ``None`` when none is given.
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    for k in range(n_pairs):
        if is_synthetic_slot(k, synthetic_fraction):
            img = frames[int(rng.integers(len(frames)))]
            h, w = img.shape
            t = sample_affine(rng, center=(w / 2.0, h / 2.0), **affine_kwargs)
            yield TrainingPair(img, warp_image(img, t), t, "synthetic")
        else:
            i = int(rng.integers(len(frames) - 1))
            prev, cur = frames[i], frames[i + 1]
            target = target_fn(prev, cur) if target_fn is not None else None
            yield TrainingPair(prev, cur, target, "consecutive")


# --- grayscale fixtures ---------------------------------------------------

GRAY_MAGIC = b"DAAGRAY\x00"
_GRAY_HEADER = struct.Struct("<8sII")


def write_gray(path: Union[str, Path], img: np.ndarray) -> None:
    """8-bit row-major image behind a 16-byte header (magic, width, height)."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 image")
    h, w = img.shape
    Path(path).write_bytes(_GRAY_HEADER.pack(GRAY_MAGIC, w, h) + img.tobytes(order="C"))


def write_pgm(path: Union[str, Path], img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 image")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes(order="C"))


def _read_pgm(data: bytes) -> np.ndarray:
    tokens: List[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace before raster
    w, h, maxval = (int(t) for t in tokens)
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).copy()


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Read a grayscale fixture in the raw-header format or binary PGM (P5)."""
    data = Path(path).read_bytes()
    if data[:8] == GRAY_MAGIC:
        _, w, h = _GRAY_HEADER.unpack_from(data)
        if len(data) != _GRAY_HEADER.size + w * h:
            raise ValueError("truncated grayscale image")
        return np.frombuffer(data, dtype=np.uint8, offset=_GRAY_HEADER.size).reshape(h, w).copy()
    if data[:2] == b"P5":
        return _read_pgm(data)
    raise ValueError(f"unrecognised image format in {path}")
