"""Synthetic keypoint perception: heatmaps in, hole-position uncertainty out.

Pipeline per episode: render one noisy heatmap per cuboid keypoint around the
biased object pose, fit a 2D Gaussian to each peak, sample keypoint sets from
the fits, solve each set for a pose, map the hole offset through every pose
hypothesis into the world, and summarize the spread as an axis-aligned region
centered on the mean hole estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (CameraIntrinsics, Cuboid, Pose, project_points,
                       quat_conjugate, quat_to_matrix)
from .pnp import DegenerateConfiguration, PnPDivergence, solve_pnp
from .regions import Region

COV_REGULARIZER = 1e-6
RESAMPLE_FACTOR = 10


class KeypointOutOfImage(ValueError):
    """A biased keypoint projects outside the image bounds."""


class NoPeak(ValueError):
    """Heatmap maximum below the detection threshold."""


class TooManyFailures(RuntimeError):
    """Pose hypothesis resampling budget exhausted."""


@dataclass
class PerceptionConfig:
    """Camera rig, object geometry, and noise model for the synthetic detector."""

    image_width: int = 320
    image_height: int = 240
    focal: float = 420.0
    camera_position: tuple = (0.5, 0.5, 0.72)
    camera_target: tuple = (0.0, 0.0, 0.0)
    cuboid_half_extents: tuple = (0.06, 0.06, 0.045)
    hole_offset: tuple = (0.02, -0.015, 0.045)
    blob_std: float = 3.0
    pixel_noise_std: float = 0.02
    bias_low: float = 0.025
    bias_high: float = 0.035
    n_hypotheses: int = 50
    template_half_extents: tuple = (0.022, 0.022, 0.022)
    inflation: float = 1.0
    peak_window_radius: int = 7
    peak_threshold: float = 0.1

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=self.focal, fy=self.focal,
                                cx=self.image_width / 2.0, cy=self.image_height / 2.0,
                                width=self.image_width, height=self.image_height)

    def cuboid(self) -> Cuboid:
        return Cuboid(np.asarray(self.cuboid_half_extents))

    def camera_pose(self) -> Pose:
        return look_at_pose(np.asarray(self.camera_position, dtype=float),
                            np.asarray(self.camera_target, dtype=float))


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose with +z toward the target and +y down in the image."""
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with target")
    z = forward / norm
    x = np.cross(z, np.asarray(up, dtype=float))
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        raise ValueError("view direction parallel to the up vector")
    x = x / xn
    y = np.cross(z, x)
    r = np.column_stack([x, y, z])
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = position
    return Pose.from_matrix(m)


def sample_bias(rng, low: float, high: float) -> np.ndarray:
    """Horizontal world-frame translation bias, magnitude uniform in [low, high].

    The detector's systematic error is modeled as a miss parallel to the
    support surface: with a calibrated camera and a known box size the depth
    is well constrained, while the lateral placement is not, and a lateral
    miss larger than the hole clearance is exactly the failure mode that
    breaks the pure model-based policy.
    """
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(phi), np.sin(phi), 0.0]) * rng.uniform(low, high)


def render_heatmaps(pose_cam: Pose, bias, cuboid: Cuboid, cam: CameraIntrinsics,
                    blob_std: float, pixel_noise_std: float, rng) -> np.ndarray:
    """One unit-amplitude Gaussian blob per keypoint, plus iid pixel noise.

    The blobs are centered at the keypoints of the pose translated by `bias`
    (the systematic detector error); returns float32 (9, H, W).
    """
    biased = Pose(pose_cam.quaternion, pose_cam.translation + np.asarray(bias, dtype=float))
    uv = project_points(biased, cam, cuboid.keypoints())
    inside = ((uv[:, 0] >= 0) & (uv[:, 0] < cam.width)
              & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height))
    if not np.all(inside):
        bad = int(np.nonzero(~inside)[0][0])
        raise KeypointOutOfImage(f"keypoint {bad} projects to {uv[bad]} outside "
                                 f"{cam.width}x{cam.height}")

    us = np.arange(cam.width, dtype=float)
    vs = np.arange(cam.height, dtype=float)
    inv_two_var = 1.0 / (2.0 * blob_std * blob_std)
    maps = np.empty((uv.shape[0], cam.height, cam.width), dtype=np.float32)
    for k, (u0, v0) in enumerate(uv):
        gu = np.exp(-((us - u0) ** 2) * inv_two_var)
        gv = np.exp(-((vs - v0) ** 2) * inv_two_var)
        maps[k] = np.outer(gv, gu).astype(np.float32)
    if pixel_noise_std > 0:
        noise = rng.standard_normal(size=maps.shape).astype(np.float32)
        maps += np.float32(pixel_noise_std) * noise
    return maps


@dataclass
class PeakFit:
    mean: np.ndarray        # (u, v) pixels
    covariance: np.ndarray  # (2, 2) pixels^2


def fit_peak(heatmap, window_radius: int = 7, threshold: float = 0.1) -> PeakFit:
    """Intensity-weighted moments in a square window around the argmax.

    Negative (noise) intensities are clamped to zero for the weighting; the
    covariance gets a 1e-6 diagonal regularizer so downstream Cholesky
    factorization never fails.
    """
    hm = np.asarray(heatmap, dtype=float)
    peak_flat = int(np.argmax(hm))
    v0, u0 = np.unravel_index(peak_flat, hm.shape)
    if hm[v0, u0] < threshold:
        raise NoPeak(f"max intensity {hm[v0, u0]:.4f} below threshold {threshold}")

    v_lo = max(0, v0 - window_radius)
    v_hi = min(hm.shape[0], v0 + window_radius + 1)
    u_lo = max(0, u0 - window_radius)
    u_hi = min(hm.shape[1], u0 + window_radius + 1)
    window = np.clip(hm[v_lo:v_hi, u_lo:u_hi], 0.0, None)

    vv, uu = np.mgrid[v_lo:v_hi, u_lo:u_hi]
    total = float(window.sum())
    if total <= 0:
        raise NoPeak("window has no positive mass")
    mu_u = float((window * uu).sum() / total)
    mu_v = float((window * vv).sum() / total)
    du = uu - mu_u
    dv = vv - mu_v
    cov = np.array([
        [float((window * du * du).sum() / total), float((window * du * dv).sum() / total)],
        [float((window * du * dv).sum() / total), float((window * dv * dv).sum() / total)],
    ])
    cov += COV_REGULARIZER * np.eye(2)
    return PeakFit(mean=np.array([mu_u, mu_v]), covariance=cov)


def sample_keypoint_sets(fits, n: int, rng) -> np.ndarray:
    """Draw n full keypoint sets from the per-keypoint Gaussian fits: (n, K, 2)."""
    if n < 1:
        raise ValueError("need at least one sample")
    k = len(fits)
    out = np.empty((n, k, 2))
    for j, fit in enumerate(fits):
        chol = np.linalg.cholesky(fit.covariance)
        eps = rng.standard_normal((n, 2))
        out[:, j, :] = fit.mean + eps @ chol.T
    return out


def pose_hypotheses(fits, n: int, cuboid: Cuboid, cam: CameraIntrinsics, rng) -> list:
    """n pose solutions from independently sampled keypoint sets.

    The fit means are solved first and that pose warm-starts every per-set
    solve, keeping the hypotheses in one basin; sets whose solve diverges are
    thrown away and redrawn, up to 10n total attempts; running out raises
    TooManyFailures.
    """
    if n < 2:
        raise ValueError("need at least two hypotheses for a spread estimate")
    points = cuboid.keypoints()
    mean_pixels = np.array([fit.mean for fit in fits])
    try:
        warm_start = solve_pnp(points, mean_pixels, cam).pose
    except (PnPDivergence, DegenerateConfiguration):
        warm_start = None
    hypotheses = []
    attempts = 0
    budget = RESAMPLE_FACTOR * n
    while len(hypotheses) < n:
        if attempts >= budget:
            raise TooManyFailures(f"{attempts} PnP attempts for {len(hypotheses)}/{n} hypotheses")
        attempts += 1
        pixels = sample_keypoint_sets(fits, 1, rng)[0]
        try:
            result = solve_pnp(points, pixels, cam, initial_pose=warm_start)
        except (PnPDivergence, DegenerateConfiguration):
            continue
        hypotheses.append(result.pose)
    return hypotheses


@dataclass
class HoleEstimate:
    mean: np.ndarray     # world frame, meters
    std: np.ndarray      # per-axis sample std (n-1 denominator)
    samples: np.ndarray  # (n, 3) world-frame hole points


def hole_estimate(hypotheses, hole_offset, cam_to_world: Pose) -> HoleEstimate:
    """Map the body-frame hole offset through every hypothesis into the world."""
    if len(hypotheses) < 2:
        raise ValueError("need at least two hypotheses")
    offset = np.asarray(hole_offset, dtype=float)
    samples = np.empty((len(hypotheses), 3))
    for i, pose in enumerate(hypotheses):
        samples[i] = cam_to_world.transform(pose.transform(offset))
    return HoleEstimate(mean=samples.mean(axis=0),
                        std=samples.std(axis=0, ddof=1),
                        samples=samples)


def build_uncertain_region(estimate: HoleEstimate, template_half_extents,
                           inflation: float = 1.0) -> Region:
    """Template region centered on the estimate, inflated by k sigma per axis."""
    if inflation < 0:
        raise ValueError("inflation must be nonnegative")
    template = np.asarray(template_half_extents, dtype=float)
    return Region(center=estimate.mean.copy(),
                  half_extents=template + inflation * estimate.std)


@dataclass
class PerceptionProducts:
    """Everything an episode needs from one perception pass."""

    bias: np.ndarray
    fits: list
    estimate: HoleEstimate
    region: Region


def run_perception(box_pose_world: Pose, config: PerceptionConfig, rng) -> PerceptionProducts:
    """Full pipeline for one episode; all randomness drawn from `rng`."""
    cam = config.camera()
    cuboid = config.cuboid()
    cam_to_world = config.camera_pose()
    pose_cam = cam_to_world.inverse().compose(box_pose_world)

    bias = sample_bias(rng, config.bias_low, config.bias_high)
    # render_heatmaps shifts the camera-frame pose, so rotate the world bias
    # into the camera frame first
    bias_cam = quat_to_matrix(quat_conjugate(cam_to_world.quaternion)) @ bias
    maps = render_heatmaps(pose_cam, bias_cam, cuboid, cam,
                           config.blob_std, config.pixel_noise_std, rng)
    fits = [fit_peak(maps[k], config.peak_window_radius, config.peak_threshold)
            for k in range(maps.shape[0])]
    hypotheses = pose_hypotheses(fits, config.n_hypotheses, cuboid, cam, rng)
    estimate = hole_estimate(hypotheses, config.hole_offset, cam_to_world)
    region = build_uncertain_region(estimate, config.template_half_extents, config.inflation)
    return PerceptionProducts(bias=bias, fits=fits, estimate=estimate, region=region)
