"""Pose recovery from 2D-3D correspondences: linear init plus Gauss-Newton.

The linear stage is a direct linear transform on normalized image coordinates
(intrinsics divided out), orthonormalized by SVD and sign-fixed so the point
cloud sits in front of the camera.  Refinement minimizes pixel reprojection
error over the 6-DoF pose with plain Gauss-Newton; each accepted step must not
increase the RMS (up to 10 halvings), so the residual history is monotone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, quat_from_matrix, quat_from_rotvec, quat_multiply

MAX_ITERATIONS = 100
STEP_NORM_TOL = 1e-10
MAX_HALVINGS = 10
DIVERGENCE_RMS_PX = 50.0
RANK_RATIO_TOL = 1e-9


class PnPDivergence(RuntimeError):
    """Refined solution still reprojects with RMS above the divergence gate."""


class DegenerateConfiguration(RuntimeError):
    """Correspondences do not constrain the pose (rank-deficient linear system)."""


@dataclass
class PnPResult:
    pose: Pose
    rms: float
    rms_history: list = field(default_factory=list)
    iterations: int = 0


def _reprojection_residual(pose: Pose, cam: CameraIntrinsics, points, pixels):
    """Stacked pixel residuals (2N,), or None if any point falls behind the camera."""
    p = pose.transform(points)
    if np.any(p[:, 2] <= 1e-6):
        return None, None
    u = cam.fx * p[:, 0] / p[:, 2] + cam.cx
    v = cam.fy * p[:, 1] / p[:, 2] + cam.cy
    res = np.empty(points.shape[0] * 2)
    res[0::2] = u - pixels[:, 0]
    res[1::2] = v - pixels[:, 1]
    return res, p


def _rms(res) -> float:
    # RMS over per-point 2D errors, in pixels
    e = res.reshape(-1, 2)
    return float(np.sqrt(np.mean(np.sum(e * e, axis=1))))


def solve_dlt(points, pixels, cam: CameraIntrinsics) -> Pose:
    """Linear pose estimate from >= 6 correspondences on normalized coordinates."""
    points = np.asarray(points, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    n = points.shape[0]
    if n < 6:
        raise ValueError(f"need at least 6 correspondences, got {n}")
    xn = (pixels[:, 0] - cam.cx) / cam.fx
    yn = (pixels[:, 1] - cam.cy) / cam.fy

    a = np.zeros((2 * n, 12))
    xyz1 = np.hstack([points, np.ones((n, 1))])
    a[0::2, 0:4] = xyz1
    a[0::2, 8:12] = -xn[:, None] * xyz1
    a[1::2, 4:8] = xyz1
    a[1::2, 8:12] = -yn[:, None] * xyz1

    _, s, vt = np.linalg.svd(a)
    if s[0] <= 0 or s[10] / s[0] < RANK_RATIO_TOL:
        raise DegenerateConfiguration(
            f"linear system rank-deficient (singular value ratio {s[10] / max(s[0], 1e-300):.2e})")
    m = vt[-1].reshape(3, 4)

    best = None
    for sign in (1.0, -1.0):
        r_raw = sign * m[:, :3]
        u, sv, vt_r = np.linalg.svd(r_raw)
        d = np.sign(np.linalg.det(u @ vt_r))
        r = u @ np.diag([1.0, 1.0, d]) @ vt_r
        scale = float(np.mean(sv))
        if scale < 1e-12:
            continue
        t = sign * m[:, 3] / scale
        depth = (points @ r.T + t)[:, 2]
        score = float(np.sum(depth > 0))
        if best is None or score > best[0]:
            best = (score, r, t)
    if best is None or best[0] == 0:
        raise DegenerateConfiguration("no cheirality-consistent linear solution")
    _, r, t = best
    return Pose(quat_from_matrix(r), t)


def _jacobian(pose: Pose, cam: CameraIntrinsics, points, p_cam):
    """Jacobian of pixel residuals wrt (rotation increment, translation): (2N, 6)."""
    n = points.shape[0]
    j = np.zeros((2 * n, 6))
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    inv_z = 1.0 / z
    # d(pixel)/d(camera point)
    du = np.stack([cam.fx * inv_z, np.zeros(n), -cam.fx * x * inv_z * inv_z], axis=1)
    dv = np.stack([np.zeros(n), cam.fy * inv_z, -cam.fy * y * inv_z * inv_z], axis=1)
    # the increment left-multiplies the rotation only (translation updates
    # additively), so d(p_cam)/d(theta) = -[R x]_x with R x = p_cam - t
    rx = p_cam - pose.translation
    for i in range(n):
        px, py, pz = rx[i]
        skew = np.array([[0.0, -pz, py],
                         [pz, 0.0, -px],
                         [-py, px, 0.0]])
        dp_dtheta = -skew
        j[2 * i, :3] = du[i] @ dp_dtheta
        j[2 * i, 3:] = du[i]
        j[2 * i + 1, :3] = dv[i] @ dp_dtheta
        j[2 * i + 1, 3:] = dv[i]
    return j


def refine_gauss_newton(pose: Pose, cam: CameraIntrinsics, points, pixels) -> PnPResult:
    """Gauss-Newton on the 6-DoF pose; quaternion renormalized every update."""
    points = np.asarray(points, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    res, p_cam = _reprojection_residual(pose, cam, points, pixels)
    if res is None:
        raise DegenerateConfiguration("initial pose places points behind the camera")
    rms = _rms(res)
    history = [rms]
    iterations = 0

    for _ in range(MAX_ITERATIONS):
        j = _jacobian(pose, cam, points, p_cam)
        jtj = j.T @ j
        jtr = j.T @ res
        try:
            delta = np.linalg.solve(jtj, -jtr)
        except np.linalg.LinAlgError:
            delta, *_ = np.linalg.lstsq(jtj, -jtr, rcond=None)
        step_norm = float(np.linalg.norm(delta))
        if step_norm < STEP_NORM_TOL:
            break
        iterations += 1

        accepted = False
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            d = delta * scale
            q_new = quat_multiply(quat_from_rotvec(d[:3]), pose.quaternion)
            q_new = q_new / np.linalg.norm(q_new)
            cand = Pose(q_new, pose.translation + d[3:])
            cand_res, cand_p = _reprojection_residual(cand, cam, points, pixels)
            if cand_res is not None:
                cand_rms = _rms(cand_res)
                if cand_rms <= rms:
                    pose, res, p_cam, rms = cand, cand_res, cand_p, cand_rms
                    accepted = True
                    break
            scale *= 0.5
        if not accepted:
            break
        history.append(rms)
        if step_norm < STEP_NORM_TOL:
            break

    return PnPResult(pose=pose, rms=rms, rms_history=history, iterations=iterations)


def solve_pnp(points, pixels, cam: CameraIntrinsics,
              initial_pose: Pose | None = None) -> PnPResult:
    """Full pipeline: DLT initialization then Gauss-Newton refinement.

    The algebraic DLT estimate degrades badly once pixel noise is a few percent
    of the object's projected size, and Gauss-Newton cannot always recover from
    an initialization hundreds of millimeters off.  When `initial_pose` is
    given, refinement also runs from that warm start and the lower-RMS result
    wins, so callers solving many perturbed variants of one problem stay in the
    correct basin.

    Raises DegenerateConfiguration for unconstraining input and PnPDivergence
    when the refined reprojection RMS exceeds the 50 px gate.
    """
    points = np.asarray(points, dtype=float)
    pixels = np.asarray(pixels, dtype=float)
    result = None
    dlt_error = None
    try:
        init = solve_dlt(points, pixels, cam)
        result = refine_gauss_newton(init, cam, points, pixels)
    except DegenerateConfiguration as exc:
        dlt_error = exc
    if initial_pose is not None:
        warm = refine_gauss_newton(initial_pose, cam, points, pixels)
        if result is None or warm.rms < result.rms:
            result = warm
    if result is None:
        raise dlt_error
    if result.rms > DIVERGENCE_RMS_PX:
        raise PnPDivergence(f"reprojection RMS {result.rms:.1f} px exceeds "
                            f"{DIVERGENCE_RMS_PX:.0f} px")
    return result
