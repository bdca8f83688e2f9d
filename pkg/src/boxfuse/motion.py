"""Vehicle motion models: closed-form pose forwarding, inverse estimation, RK4 oracle.

Three models are supported: constant planar velocity, unicycle (signed speed
plus yaw rate), and kinematic bicycle (signed speed, slip angle, rear-axle
arm). The turning closed forms are evaluated in chord form,

    position += speed * t * sinc(dphi / 2) * unit(mean direction),

which is algebraically identical to the usual speed/rate arc expressions but
stays finite and smooth through zero turn rate, so no straight-motion branch
is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Box3D, Pose, normalize_angle

HALF_PI = 0.5 * math.pi

MODEL_NAMES = ("cv", "unicycle", "bicycle")


def _sinc(z: float) -> float:
    """sin(z)/z, finite at zero."""
    if abs(z) < 1e-2:
        z2 = z * z
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return math.sin(z) / z


def _dsinc(z: float) -> float:
    """Derivative of sin(z)/z; the series avoids cancellation near zero."""
    if abs(z) < 1e-2:
        z2 = z * z
        return z * (-1.0 / 3.0 + z2 / 30.0 - z2 * z2 / 840.0)
    return (math.cos(z) - math.sin(z) / z) / z


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class ConstantVelocity:
    """Planar constant-velocity motion (m/s); heading is carried unchanged."""

    vx: float
    vy: float

    def __post_init__(self) -> None:
        _require_finite("vx", self.vx)
        _require_finite("vy", self.vy)


@dataclass(frozen=True)
class Unicycle:
    """Single-axle motion: signed speed along the heading (m/s), yaw rate (rad/s)."""

    speed: float
    yaw_rate: float

    def __post_init__(self) -> None:
        _require_finite("speed", self.speed)
        _require_finite("yaw_rate", self.yaw_rate)


@dataclass(frozen=True)
class Bicycle:
    """Two-axle motion: signed speed (m/s), slip angle between velocity and
    heading (rad, within [-pi/2, pi/2]), center-to-rear-axle distance (m)."""

    speed: float
    slip: float
    rear_axle: float

    def __post_init__(self) -> None:
        _require_finite("speed", self.speed)
        _require_finite("slip", self.slip)
        _require_finite("rear_axle", self.rear_axle)
        if not -HALF_PI <= self.slip <= HALF_PI:
            raise ValueError(f"slip must lie in [-pi/2, pi/2], got {self.slip!r}")
        if self.rear_axle <= 0.0:
            raise ValueError("rear_axle must be positive")


MotionParams = ConstantVelocity | Unicycle | Bicycle


def model_name(params: MotionParams) -> str:
    """Short tag for a parameter variant: "cv", "unicycle" or "bicycle"."""
    if isinstance(params, ConstantVelocity):
        return "cv"
    if isinstance(params, Unicycle):
        return "unicycle"
    if isinstance(params, Bicycle):
        return "bicycle"
    raise TypeError(f"unknown motion parameters {type(params).__name__}")


def _forward_unicycle_raw(x, y, heading, speed, yaw_rate, t):
    dphi = yaw_rate * t
    half = 0.5 * dphi
    chord = speed * t * _sinc(half)
    mean = heading + half
    return x + chord * math.cos(mean), y + chord * math.sin(mean), heading + dphi


def _forward_bicycle_raw(x, y, heading, speed, slip, rear_axle, t):
    dphi = speed * math.sin(slip) / rear_axle * t
    half = 0.5 * dphi
    chord = speed * t * _sinc(half)
    mean = heading + slip + half
    return x + chord * math.cos(mean), y + chord * math.sin(mean), heading + dphi


def forward_cv(pose: Pose, params: ConstantVelocity, t: float) -> Pose:
    """Advance a pose t seconds at constant planar velocity (t may be negative)."""
    return Pose(pose.x + params.vx * t, pose.y + params.vy * t, pose.heading)


def forward_unicycle(pose: Pose, params: Unicycle, t: float) -> Pose:
    """Advance a pose t seconds under the unicycle model.

    The heading turns by yaw_rate * t and the position moves along the chord
    of the circular arc; zero yaw rate reduces to straight motion along the
    heading.
    """
    x, y, heading = _forward_unicycle_raw(
        pose.x, pose.y, pose.heading, params.speed, params.yaw_rate, t
    )
    return Pose(x, y, normalize_angle(heading))


def forward_bicycle(pose: Pose, params: Bicycle, t: float) -> Pose:
    """Advance a pose t seconds under the kinematic bicycle model.

    Velocity leads the heading by the slip angle and the heading turns at
    speed * sin(slip) / rear_axle; zero slip reduces to straight motion.
    """
    x, y, heading = _forward_bicycle_raw(
        pose.x, pose.y, pose.heading, params.speed, params.slip, params.rear_axle, t
    )
    return Pose(x, y, normalize_angle(heading))


def forward(pose: Pose, params: MotionParams, t: float) -> Pose:
    """Dispatch to the closed-form forward model for the parameter variant."""
    if isinstance(params, ConstantVelocity):
        return forward_cv(pose, params, t)
    if isinstance(params, Unicycle):
        return forward_unicycle(pose, params, t)
    if isinstance(params, Bicycle):
        return forward_bicycle(pose, params, t)
    raise TypeError(f"unknown motion parameters {type(params).__name__}")


def forward_box(box: Box3D, params: MotionParams, t: float) -> Box3D:
    """Advance a box's planar pose (x, y, yaw); z and size are carried unchanged."""
    if t == 0.0:
        return box
    return box.with_bev_pose(forward(box.bev_pose, params, t))


def inverse_cv(p0: Pose, pt: Pose, t: float) -> ConstantVelocity:
    """Finite-difference velocity estimate from a pose pair over gap t."""
    if t == 0.0:
        raise ValueError("zero time gap")
    return ConstantVelocity((pt.x - p0.x) / t, (pt.y - p0.y) / t)


def inverse_unicycle(p0: Pose, pt: Pose, t: float) -> Unicycle:
    """Closed-form unicycle estimate from a pose pair over gap t.

    Yaw rate is the wrapped heading change over t; speed is the chord velocity
    projected on the initial heading, scaled by dphi/sin(dphi). Exact on any
    pair produced by the unicycle forward model with |heading change| < pi.
    """
    if t == 0.0:
        raise ValueError("zero time gap")
    dphi = normalize_angle(pt.heading - p0.heading)
    vx = (pt.x - p0.x) / t
    vy = (pt.y - p0.y) / t
    along = vx * math.cos(p0.heading) + vy * math.sin(p0.heading)
    scale = _sinc(dphi)
    if scale == 0.0:
        raise ValueError("heading change of pi is ambiguous for the unicycle inverse")
    return Unicycle(along / scale, dphi / t)


@dataclass(frozen=True)
class FitReport:
    """Gauss-Newton summary: update count, final loss 0.5*r.r, convergence flag."""

    iterations: int
    loss: float
    converged: bool


class FitDivergence(RuntimeError):
    """Raised when Gauss-Newton exhausts its iteration budget.

    Carries the best iterate seen (`best`) and its report (`report`).
    """

    def __init__(self, message: str, best: "Bicycle", report: FitReport) -> None:
        super().__init__(message)
        self.best = best
        self.report = report


def _bicycle_residual(p0: Pose, pt: Pose, t, speed, slip, rear_axle) -> np.ndarray:
    px, py, pheading = _forward_bicycle_raw(p0.x, p0.y, p0.heading, speed, slip, rear_axle, t)
    # heading residual is wrap-aware so the fit survives the +-pi seam
    return np.array([pt.x - px, pt.y - py, normalize_angle(pt.heading - pheading)])


def _bicycle_seeds(p0: Pose, pt: Pose, t: float, rear_axle: float) -> list[tuple[float, float]]:
    """Candidate (speed, slip) starts for the bicycle fit.

    The chord between the poses determines slip and speed exactly once the
    heading-change winding is fixed: slip = chord direction - heading -
    dphi/2 and speed = |chord| / (t * sinc(dphi/2)). Only windings whose slip
    lands inside [-pi/2, pi/2] are kept; wrong windings leave a large rate
    residual and lose the loss ranking, and windings beyond +-1 are excluded
    outright (they encode extra full turns between the samples, which a single
    pose pair cannot distinguish from the minimal motion). A unicycle-projected
    seed backs up the near-degenerate cases.
    """
    seeds: list[tuple[float, float]] = []
    dx = pt.x - p0.x
    dy = pt.y - p0.y
    chord = math.hypot(dx, dy)
    wrapped = normalize_angle(pt.heading - p0.heading)
    if chord > 1e-12:
        direction = math.atan2(dy, dx)
        for k in (-1, 0, 1):
            dphi = wrapped + 2.0 * math.pi * k
            slip = normalize_angle(direction - p0.heading - 0.5 * dphi)
            if abs(slip) > HALF_PI:
                continue
            denom = t * _sinc(0.5 * dphi)
            if denom == 0.0:
                continue
            seeds.append((chord / denom, slip))
    else:
        seeds.append((0.0, 0.0))
    uni = inverse_unicycle(p0, pt, t)
    if abs(uni.speed) > 0.1:
        ratio = uni.yaw_rate * rear_axle / uni.speed
        seeds.append((uni.speed, math.asin(min(1.0, max(-1.0, ratio)))))
    else:
        seeds.append((uni.speed, 0.0))
    return seeds


def _bicycle_jacobian(p0: Pose, t, speed, slip, rear_axle) -> np.ndarray:
    """Jacobian of the pose residual with respect to (speed, slip).

    Derivatives of the chord-form forward model; finite for every slip value,
    including zero.
    """
    sb = math.sin(slip)
    cb = math.cos(slip)
    dphi = speed * sb / rear_axle * t
    half = 0.5 * dphi
    s = _sinc(half)
    ds = _dsinc(half)
    mean = p0.heading + slip + half
    cm = math.cos(mean)
    sm = math.sin(mean)
    chord = speed * t * s
    ddphi_dv = sb * t / rear_axle
    ddphi_db = speed * cb * t / rear_axle
    dchord_dv = t * s + speed * t * ds * 0.5 * ddphi_dv
    dchord_db = speed * t * ds * 0.5 * ddphi_db
    dmean_dv = 0.5 * ddphi_dv
    dmean_db = 1.0 + 0.5 * ddphi_db
    dx_dv = dchord_dv * cm - chord * sm * dmean_dv
    dx_db = dchord_db * cm - chord * sm * dmean_db
    dy_dv = dchord_dv * sm + chord * cm * dmean_dv
    dy_db = dchord_db * sm + chord * cm * dmean_db
    # residual = target - prediction, hence the sign flip
    return -np.array([[dx_dv, dx_db], [dy_dv, dy_db], [ddphi_dv, ddphi_db]])


def inverse_bicycle(
    p0: Pose,
    pt: Pose,
    t: float,
    rear_axle: float,
    init: Bicycle | None = None,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> tuple[Bicycle, FitReport]:
    """Estimate bicycle (speed, slip) from a pose pair by Gauss-Newton.

    rear_axle is held fixed; only speed and slip are optimized. Unless `init`
    is given, the solve starts from the lowest-loss candidate among the direct
    chord inversions and a unicycle-projected estimate. Each update solves the
    2x2 normal equations (damped when ill-conditioned), clamps slip to
    [-pi/2, pi/2], and halves the step while it increases the loss. Iteration
    stops once the loss improvement drops below `tol`; exceeding `max_iter`
    raises FitDivergence carrying the best iterate.
    """
    if t == 0.0:
        raise ValueError("zero time gap")
    if rear_axle <= 0.0:
        raise ValueError("rear_axle must be positive")
    if init is not None:
        seeds = [(init.speed, init.slip)]
    else:
        seeds = _bicycle_seeds(p0, pt, t, rear_axle)
    scored = []
    for cand_speed, cand_slip in seeds:
        cand_slip = min(HALF_PI, max(-HALF_PI, cand_slip))
        cand_r = _bicycle_residual(p0, pt, t, cand_speed, cand_slip, rear_axle)
        scored.append((0.5 * float(cand_r @ cand_r), cand_speed, cand_slip, cand_r))
    # among near-tied losses prefer the slowest motion: a pose pair cannot
    # tell the minimal interpretation from one with extra winding
    min_loss = min(s[0] for s in scored)
    cutoff = min_loss + 1e-9 + 1e-6 * min_loss
    loss, speed, slip, r = min(
        (s for s in scored if s[0] <= cutoff), key=lambda s: abs(s[1])
    )
    best_speed, best_slip, best_loss = speed, slip, loss
    for iteration in range(1, max_iter + 1):
        jac = _bicycle_jacobian(p0, t, speed, slip, rear_axle)
        normal = jac.T @ jac
        grad = jac.T @ r
        if not np.isfinite(normal).all() or np.linalg.cond(normal) > 1e12:
            normal = normal + 1e-6 * max(float(np.trace(normal)), 1e-6) * np.eye(2)
        try:
            step = np.linalg.solve(normal, grad)
        except np.linalg.LinAlgError:
            normal = normal + 1e-6 * max(float(np.trace(normal)), 1e-6) * np.eye(2)
            step = np.linalg.solve(normal, grad)
        prev_loss = loss
        scale = 1.0
        while True:
            cand_speed = speed - scale * float(step[0])
            cand_slip = min(HALF_PI, max(-HALF_PI, slip - scale * float(step[1])))
            cand_r = _bicycle_residual(p0, pt, t, cand_speed, cand_slip, rear_axle)
            cand_loss = 0.5 * float(cand_r @ cand_r)
            if cand_loss <= prev_loss:
                break
            if scale < 1e-6:
                # no step length improves: stay put and let the loop terminate
                cand_speed, cand_slip, cand_r, cand_loss = speed, slip, r, loss
                break
            scale *= 0.5
        speed, slip, r, loss = cand_speed, cand_slip, cand_r, cand_loss
        if loss < best_loss:
            best_speed, best_slip, best_loss = speed, slip, loss
        if prev_loss - loss < tol:
            return Bicycle(speed, slip, rear_axle), FitReport(iteration, loss, True)
    raise FitDivergence(
        f"no convergence after {max_iter} iterations (loss {best_loss:.3e})",
        Bicycle(best_speed, best_slip, rear_axle),
        FitReport(max_iter, best_loss, False),
    )


def estimate_params_from_track(
    times: Sequence[float],
    poses: Sequence[Pose],
    model: str,
    rear_axle: float | None = None,
) -> list[MotionParams]:
    """Per-pose motion parameters estimated from a time-ordered track.

    Interior poses use the straddling pair (i-1, i+1); the endpoints fall back
    to their single adjacent pair. `model` selects the inverse ("cv",
    "unicycle" or "bicycle"); the bicycle inverse additionally needs the fixed
    rear_axle arm.
    """
    if len(times) != len(poses):
        raise ValueError("times and poses must have equal length")
    n = len(poses)
    if n < 2:
        raise ValueError("need at least two poses")
    for a, b in zip(times, times[1:]):
        if b <= a:
            raise ValueError("timestamps must strictly increase")
    if model not in MODEL_NAMES:
        raise ValueError(f"unknown model {model!r}")
    if model == "bicycle" and (rear_axle is None or rear_axle <= 0.0):
        raise ValueError("bicycle estimation needs a positive rear_axle")
    out: list[MotionParams] = []
    for i in range(n):
        if i == 0:
            j0, j1 = 0, 1
        elif i == n - 1:
            j0, j1 = n - 2, n - 1
        else:
            j0, j1 = i - 1, i + 1
        dt = times[j1] - times[j0]
        if model == "cv":
            out.append(inverse_cv(poses[j0], poses[j1], dt))
        elif model == "unicycle":
            out.append(inverse_unicycle(poses[j0], poses[j1], dt))
        else:
            out.append(inverse_bicycle(poses[j0], poses[j1], dt, rear_axle)[0])
    return out


def numeric_forward(pose: Pose, params: MotionParams, t: float, step: float = 1e-4) -> Pose:
    """RK4 integration of the model ODE; the independent oracle for the closed forms.

    Integrates in n = ceil(|t|/step) equal sub-steps (backwards for negative t).
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    if t == 0.0:
        return pose
    if isinstance(params, ConstantVelocity):
        vx, vy = params.vx, params.vy

        def deriv(phi: float) -> tuple[float, float, float]:
            return vx, vy, 0.0

    elif isinstance(params, Unicycle):
        v, w = params.speed, params.yaw_rate

        def deriv(phi: float) -> tuple[float, float, float]:
            return v * math.cos(phi), v * math.sin(phi), w

    elif isinstance(params, Bicycle):
        v = params.speed
        lead = params.slip
        rate = params.speed * math.sin(params.slip) / params.rear_axle

        def deriv(phi: float) -> tuple[float, float, float]:
            return v * math.cos(phi + lead), v * math.sin(phi + lead), rate

    else:
        raise TypeError(f"unknown motion parameters {type(params).__name__}")
    n = max(1, math.ceil(abs(t) / step))
    h = t / n
    x, y, phi = pose.x, pose.y, pose.heading
    for _ in range(n):
        d1x, d1y, d1p = deriv(phi)
        d2x, d2y, d2p = deriv(phi + 0.5 * h * d1p)
        d3x, d3y, d3p = deriv(phi + 0.5 * h * d2p)
        d4x, d4y, d4p = deriv(phi + h * d3p)
        sixth = h / 6.0
        x += sixth * (d1x + 2.0 * (d2x + d3x) + d4x)
        y += sixth * (d1y + 2.0 * (d2y + d3y) + d4y)
        phi += sixth * (d1p + 2.0 * (d2p + d3p) + d4p)
    return Pose(x, y, normalize_angle(phi))


def numeric_forward_batch(
    poses: np.ndarray,
    model: str,
    params: np.ndarray,
    t: np.ndarray,
    step: float = 1e-4,
) -> np.ndarray:
    """Vectorized RK4 oracle over N independent draws.

    poses is (N, 3) rows of (x, y, heading); params columns depend on the
    model: cv (vx, vy), unicycle (speed, yaw_rate), bicycle (speed, slip,
    rear_axle). Every draw is integrated with the same number of sub-steps,
    sized so no draw exceeds `step`. Returns an (N, 3) array; headings are not
    normalized.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    poses = np.asarray(poses, dtype=float)
    params = np.asarray(params, dtype=float)
    t = np.asarray(t, dtype=float)
    if model == "cv":
        vx, vy = params[:, 0], params[:, 1]

        def deriv(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            return vx, vy, np.zeros_like(phi)

    elif model == "unicycle":
        v, w = params[:, 0], params[:, 1]

        def deriv(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            return v * np.cos(phi), v * np.sin(phi), w

    elif model == "bicycle":
        v, lead = params[:, 0], params[:, 1]
        rate = v * np.sin(params[:, 1]) / params[:, 2]

        def deriv(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            return v * np.cos(phi + lead), v * np.sin(phi + lead), rate

    else:
        raise ValueError(f"unknown model {model!r}")
    n = max(1, int(np.ceil(np.max(np.abs(t)) / step))) if t.size else 1
    h = t / n
    sixth = h / 6.0
    x = poses[:, 0].copy()
    y = poses[:, 1].copy()
    phi = poses[:, 2].copy()
    for _ in range(n):
        d1x, d1y, d1p = deriv(phi)
        d2x, d2y, d2p = deriv(phi + 0.5 * h * d1p)
        d3x, d3y, d3p = deriv(phi + 0.5 * h * d2p)
        d4x, d4y, d4p = deriv(phi + h * d3p)
        x += sixth * (d1x + 2.0 * (d2x + d3x) + d4x)
        y += sixth * (d1y + 2.0 * (d2y + d3y) + d4y)
        phi += sixth * (d1p + 2.0 * (d2p + d3p) + d4p)
    return np.stack([x, y, phi], axis=1)
