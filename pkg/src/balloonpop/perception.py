"""Balloon detection from a binary outline mask.

The mask stands in for the segmentation network output: 1-px balloon
outlines widened by a 3x3 dilation at 480x270. Components are extracted,
points are sampled on each one, a circle is fitted by minimizing the spread
of point-to-center distances, and the metric center follows from the known
balloon radius.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, pixel_ray

MASK_WIDTH = 480
MASK_HEIGHT = 270

_EIGHT = np.ones((3, 3), dtype=bool)


class DegenerateFit(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    min_component_pixels: int = 12
    sample_count: int = 64
    lambda_radius: float = 150.0
    lambda_res: float = 1.0
    R_real: float = 0.3
    max_aspect: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.sample_count < 3:
            raise ValueError("sample_count must be >= 3")
        for name in ("lambda_radius", "lambda_res", "R_real"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_component_pixels < 1:
            raise ValueError("min_component_pixels must be >= 1")


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    R_mean: float
    r_norm: float
    n_points: int


@dataclass(frozen=True)
class Detection:
    fit: CircleFit
    P_m: np.ndarray
    component_size: int = 0


def connected_components(mask: np.ndarray, min_pixels: int = 1):
    """8-connected components with at least ``min_pixels`` pixels, largest first.

    Each component is an (n, 2) int array of (row, col) in scan order.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    sizes = np.bincount(labels.ravel())
    keep = [k for k in range(1, n + 1) if sizes[k] >= min_pixels]
    # stable sort keeps label (scan) order among equal sizes
    keep.sort(key=lambda k: -sizes[k])
    if not keep:
        return []
    slices = ndimage.find_objects(labels)
    out = []
    for k in keep:
        sl = slices[k - 1]
        rr, cc = np.nonzero(labels[sl] == k)
        out.append(np.column_stack([rr + sl[0].start, cc + sl[1].start]))
    return out


def outline_pixels(component: np.ndarray) -> np.ndarray:
    """Undo the 3x3 widening of an outline component.

    Erodes the component with the same structuring element. Falls back to the
    full component when erosion leaves too little to fit (tiny or broken rings).
    """
    r0, c0 = component.min(axis=0)
    h, w = component.max(axis=0) - (r0, c0) + 1
    patch = np.zeros((h + 2, w + 2), dtype=bool)
    patch[component[:, 0] - r0 + 1, component[:, 1] - c0 + 1] = True
    core = ndimage.binary_erosion(patch, structure=_EIGHT)
    rr, cc = np.nonzero(core)
    if len(rr) < max(8, len(component) // 6):
        return component
    return np.column_stack([rr + r0 - 1, cc + c0 - 1])


def sample_contour_points(component: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Take ``n`` pixels at a uniform stride through the component's pixel list.

    The list is ordered by angle about the component centroid (ties keep scan
    order), so strides on a ring are spread evenly around it; plain scan order
    aliases with the row structure of some radii. Returns (n, 2) float points
    as (u, v) = (col, row). A seed-driven offset shifts the stride; components
    smaller than ``n`` are sampled with repetition.
    """
    if n < 3:
        raise ValueError("need at least 3 samples")
    m = len(component)
    if m == 0:
        raise ValueError("empty component")
    rel = component - component.mean(axis=0)
    order = np.argsort(np.arctan2(rel[:, 0], rel[:, 1]), kind="stable")
    offset = np.random.default_rng(seed).random()
    idx = np.floor((offset + np.arange(n)) * (m / n)).astype(int) % m
    pts = component[order[idx]]
    return np.column_stack([pts[:, 1], pts[:, 0]]).astype(float)


def residual(points: np.ndarray, c) -> float:
    """Sum of squared deviations of point distances from their mean."""
    d = np.hypot(points[:, 0] - c[0], points[:, 1] - c[1])
    return float(np.sum((d - d.mean()) ** 2))


def _kasa(points: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    A = np.column_stack([2.0 * x, 2.0 * y, np.ones_like(x)])
    b = x * x + y * y
    sol, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if rank < 3 or sv[-1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateFit("points are collinear or coincident")
    return sol[:2]


def fit_circle(points, max_iter: int = 50, tol: float = 1e-9) -> CircleFit:
    """Center minimizing sum (|x_i - c| - R_mean(c))^2, by Gauss-Newton from a Kasa start."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise DegenerateFit("need at least 3 points")
    c = _kasa(pts)
    for _ in range(max_iter):
        diff = pts - c
        d = np.hypot(diff[:, 0], diff[:, 1])
        d = np.maximum(d, 1e-12)
        u = diff / d[:, None]
        e = d - d.mean()
        Jm = u.mean(axis=0) - u
        H = Jm.T @ Jm
        try:
            step = np.linalg.solve(H, -Jm.T @ e)
        except np.linalg.LinAlgError as exc:
            raise DegenerateFit("singular normal equations") from exc
        c = c + step
        if math.hypot(step[0], step[1]) < tol:
            break
    if not np.all(np.isfinite(c)):
        raise DegenerateFit("fit diverged")
    d = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
    R = float(d.mean())
    if R < 1e-9:
        raise DegenerateFit("zero radius")
    r = float(np.sum((d - R) ** 2))
    return CircleFit(center=c, R_mean=R, r_norm=math.sqrt(r / len(pts)), n_points=len(pts))


def validate(fit: CircleFit, cfg: DetectorConfig) -> bool:
    return fit.R_mean < cfg.lambda_radius and fit.r_norm < cfg.lambda_res


def estimate_3d(fit: CircleFit, intr: CameraIntrinsics, R_real: float) -> np.ndarray:
    """Camera-frame balloon center from its pixel radius and known metric radius."""
    cu, cv = fit.center
    p1 = pixel_ray(intr, (cu, cv))
    p2 = pixel_ray(intr, (cu + fit.R_mean, cv))
    cos_a = float(p1 @ p2 / (np.linalg.norm(p1) * np.linalg.norm(p2)))
    alpha = math.acos(min(1.0, max(-1.0, cos_a)))
    if alpha <= 0.0:
        raise DegenerateFit("zero angular radius")
    s = R_real / math.tan(alpha)
    return s * p1


def _aspect_ok(component: np.ndarray, max_aspect: float) -> bool:
    extent = component.max(axis=0) - component.min(axis=0) + 1
    return max(extent) <= max_aspect * min(extent)


def detect(mask: np.ndarray, intr: CameraIntrinsics, cfg: DetectorConfig):
    """Full pipeline from outline mask to camera-frame balloon detections.

    ``intr`` must already be expressed at mask resolution.
    """
    out = []
    for k, comp in enumerate(connected_components(mask, cfg.min_component_pixels)):
        if not _aspect_ok(comp, cfg.max_aspect):
            continue
        pts = sample_contour_points(outline_pixels(comp), cfg.sample_count, seed=cfg.seed + k)
        try:
            fit = fit_circle(pts)
        except DegenerateFit:
            continue
        if not validate(fit, cfg) or not intr.contains(fit.center):
            continue
        try:
            P = estimate_3d(fit, intr, cfg.R_real)
        except DegenerateFit:
            continue
        if P[2] <= 0.0:
            continue
        out.append(Detection(fit=fit, P_m=P, component_size=len(comp)))
    return out


def write_pgm(path, mask: np.ndarray) -> None:
    m = np.asarray(mask)
    data = np.where(m != 0, 255, 0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    pos += 1
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError("truncated PGM payload")
    return data.reshape(h, w) != 0
