"""Position estimation from range-difference sets.

Two estimators on purpose: an extended Kalman filter with a constant
velocity model does the real-time tracking, and a grid-seeded nonlinear
least-squares solver provides cold starts plus an independent check on the
filter (both minimize the same range-difference residuals, so on static,
noise-free input they must agree).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT
from .timebase import TdoaSet

log = logging.getLogger(__name__)

DEFAULT_SIGMA_ACCEL = 1.0  # m/s^2, white acceleration driving the motion model
DEFAULT_SIGMA_T = 1e-10  # s, per-timestamp noise driving measurement covariance

_GRID_STEP = 0.1  # m, coarse search resolution
_REFINE_TOL = 1e-6  # m, local refinement stops below this step size
_EPS_DIST = 1e-12  # m, guards unit vectors at anchor positions


class SolverError(RuntimeError):
    """Position estimation failure."""


class AmbiguityError(SolverError):
    """The objective has several comparable minima (degenerate geometry).

    ``candidates`` holds (x, y, objective) for each distinct minimum found.
    """

    def __init__(self, candidates: Sequence[tuple[float, float, float]]) -> None:
        self.candidates = tuple(candidates)
        spots = "; ".join(f"({x:.3f}, {y:.3f}) obj={o:.3g}" for x, y, o in self.candidates)
        super().__init__(f"ambiguous geometry, comparable minima at: {spots}")


@dataclass(frozen=True)
class Fix:
    """One position estimate for one blink."""

    tag_id: str
    blink_seq: int
    x: float
    y: float
    vx: float
    vy: float
    pos_std: float  # meters, from the covariance diagonal
    residual_norm: float  # meters, innovation magnitude at update time


@dataclass
class EkfState:
    """Constant-velocity filter state: x = [x, y, vx, vy].

    ``Q`` is the per-step process noise; measurement noise is built per
    update from ``sigma_t`` because the number of range differences varies
    blink to blink.
    """

    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    dt: float
    sigma_t: float = DEFAULT_SIGMA_T


def transition_matrix(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = dt
    f[1, 3] = dt
    return f


def process_noise(dt: float, sigma_accel: float = DEFAULT_SIGMA_ACCEL) -> np.ndarray:
    """Discrete white-noise-acceleration covariance for the CV model."""
    q = sigma_accel**2
    dt2, dt3, dt4 = dt * dt, dt**3, dt**4
    out = np.zeros((4, 4))
    out[0, 0] = out[1, 1] = q * dt4 / 4.0
    out[0, 2] = out[2, 0] = out[1, 3] = out[3, 1] = q * dt3 / 2.0
    out[2, 2] = out[3, 3] = q * dt2
    return out


def measurement_covariance(m: int, sigma_t: float) -> np.ndarray:
    """Covariance of m range differences sharing the reference's arrival
    noise: (c * sigma_t)^2 * (I + 1 1^T)."""
    v = (SPEED_OF_LIGHT * sigma_t) ** 2
    return v * (np.eye(m) + np.ones((m, m)))


def make_tracker_state(
    position: Sequence[float],
    *,
    dt: float,
    sigma_accel: float = DEFAULT_SIGMA_ACCEL,
    sigma_t: float = DEFAULT_SIGMA_T,
    pos_var: float = 0.25,
    vel_var: float = 1.0,
) -> EkfState:
    """Fresh filter state at a known position with zero velocity."""
    x = np.array([position[0], position[1], 0.0, 0.0], dtype=float)
    p = np.diag([pos_var, pos_var, vel_var, vel_var]).astype(float)
    return EkfState(x=x, P=p, Q=process_noise(dt, sigma_accel), dt=dt, sigma_t=sigma_t)


def ekf_predict(state: EkfState) -> EkfState:
    """Propagate the state one blink period ahead (no control input)."""
    f = transition_matrix(state.dt)
    x = f @ state.x
    p = f @ state.P @ f.T + state.Q
    p = 0.5 * (p + p.T)
    return EkfState(x=x, P=p, Q=state.Q, dt=state.dt, sigma_t=state.sigma_t)


def _range_diff_rows(
    pos: np.ndarray,
    meas: TdoaSet,
    anchors: Mapping[str, tuple[float, float]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Predicted range differences, their Jacobian rows (wrt x, y), and the
    measured values; rows with a coincident anchor are dropped."""
    ref = np.asarray(anchors[meas.reference_anchor], dtype=float)
    d_ref = float(np.hypot(*(pos - ref)))
    if d_ref < _EPS_DIST:
        return None
    u_ref = (pos - ref) / d_ref
    h, rows, z = [], [], []
    for anchor_id, diff in meas.measurements:
        p_i = np.asarray(anchors[anchor_id], dtype=float)
        d_i = float(np.hypot(*(pos - p_i)))
        if d_i < _EPS_DIST:
            continue
        h.append(d_i - d_ref)
        rows.append((pos - p_i) / d_i - u_ref)
        z.append(diff)
    if not h:
        return None
    return np.array(h), np.array(rows), np.array(z)


def ekf_update(
    state: EkfState,
    meas: TdoaSet,
    anchors: Mapping[str, tuple[float, float]],
) -> tuple[EkfState, Fix]:
    """Fold one TDoA set into the state and emit the resulting fix.

    A singular innovation covariance (or a tag sitting exactly on the
    reference anchor) skips the update and reports the predicted state.
    """
    parts = _range_diff_rows(state.x[:2], meas, anchors)
    if parts is None:
        log.warning(
            "update skipped for %s #%d: no usable measurement rows",
            meas.tag_id, meas.blink_seq,
        )
        return state, _fix_from_state(state, meas, math.nan)
    h, rows, z = parts
    m = len(h)
    jac = np.zeros((m, 4))
    jac[:, :2] = rows
    innovation = z - h
    s = jac @ state.P @ jac.T + measurement_covariance(m, state.sigma_t)
    try:
        gain = np.linalg.solve(s, jac @ state.P).T
    except np.linalg.LinAlgError:
        log.warning(
            "update skipped for %s #%d: singular innovation covariance",
            meas.tag_id, meas.blink_seq,
        )
        return state, _fix_from_state(state, meas, float(np.linalg.norm(innovation)))
    x = state.x + gain @ innovation
    p = (np.eye(4) - gain @ jac) @ state.P
    p = 0.5 * (p + p.T)
    new_state = EkfState(x=x, P=p, Q=state.Q, dt=state.dt, sigma_t=state.sigma_t)
    return new_state, _fix_from_state(new_state, meas, float(np.linalg.norm(innovation)))


def _fix_from_state(state: EkfState, meas: TdoaSet, residual: float) -> Fix:
    pos_var = max(float(state.P[0, 0] + state.P[1, 1]), 0.0)
    return Fix(
        tag_id=meas.tag_id,
        blink_seq=meas.blink_seq,
        x=float(state.x[0]),
        y=float(state.x[1]),
        vx=float(state.x[2]),
        vy=float(state.x[3]),
        pos_std=math.sqrt(pos_var),
        residual_norm=residual,
    )


# ---------------------------------------------------------------------------
# Independent nonlinear least squares


def _objective_terms(
    meas: TdoaSet, anchors: Mapping[str, tuple[float, float]]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ref = np.asarray(anchors[meas.reference_anchor], dtype=float)
    others = np.array([anchors[a] for a, _ in meas.measurements], dtype=float)
    diffs = np.array([d for _, d in meas.measurements], dtype=float)
    return ref, others, diffs


def _objective_grid(xs, ys, ref, others, diffs):
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    d_ref = np.hypot(gx - ref[0], gy - ref[1])
    total = np.zeros_like(gx)
    for p_i, d in zip(others, diffs):
        r = np.hypot(gx - p_i[0], gy - p_i[1]) - d_ref - d
        total += r * r
    return total


def _residuals_and_jacobian(pos, ref, others, diffs):
    delta_ref = pos - ref
    d_ref = max(float(np.hypot(*delta_ref)), _EPS_DIST)
    delta = pos - others
    d_i = np.maximum(np.hypot(delta[:, 0], delta[:, 1]), _EPS_DIST)
    res = d_i - d_ref - diffs
    jac = delta / d_i[:, None] - delta_ref / d_ref
    return res, jac


def _refine(pos, ref, others, diffs, tol=_REFINE_TOL, max_iter=80):
    """Damped Gauss-Newton descent on the sum of squared residuals."""
    p = np.asarray(pos, dtype=float).copy()
    res, jac = _residuals_and_jacobian(p, ref, others, diffs)
    obj = float(res @ res)
    lam = 0.0
    for _ in range(max_iter):
        jtj = jac.T @ jac
        g = jac.T @ res
        try:
            step = np.linalg.solve(jtj + lam * np.eye(2), -g)
        except np.linalg.LinAlgError:
            lam = max(lam * 10.0, 1e-9)
            continue
        if not np.all(np.isfinite(step)):
            break
        cand = p + step
        cand_res, cand_jac = _residuals_and_jacobian(cand, ref, others, diffs)
        cand_obj = float(cand_res @ cand_res)
        if cand_obj <= obj:
            p, res, jac, obj = cand, cand_res, cand_jac, cand_obj
            lam = 0.0
            if float(np.hypot(*step)) < tol:
                break
        else:
            lam = max(lam * 10.0, 1e-9)
            if lam > 1e6:
                break
    return p, obj


def ls_solve(
    meas: TdoaSet,
    anchors: Mapping[str, tuple[float, float]],
    init: Sequence[float] | None = None,
    *,
    grid_step: float = _GRID_STEP,
    ambiguity_ratio: float = 2.0,
) -> np.ndarray:
    """Minimize the squared range-difference error over the plane.

    Without ``init`` the solver grid-searches the anchor bounding box
    (padded, so mirror solutions of degenerate layouts are visible) and
    refines every local basin; several comparable minima raise
    ``AmbiguityError``.  With ``init`` it refines locally from there.
    """
    if len(meas.measurements) < 3:
        raise ValueError("need at least 3 range differences for a planar fix")
    ref, others, diffs = _objective_terms(meas, anchors)

    if init is not None:
        pos, _ = _refine(np.asarray(init, dtype=float), ref, others, diffs)
        return pos

    pts = np.vstack([others, ref[None, :]])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = max(1.0, 0.25 * float(np.hypot(*(hi - lo))))
    xs = np.arange(lo[0] - pad, hi[0] + pad + grid_step / 2, grid_step)
    ys = np.arange(lo[1] - pad, hi[1] + pad + grid_step / 2, grid_step)
    grid = _objective_grid(xs, ys, ref, others, diffs)

    # Local minima of the coarse grid seed the refinement.
    interior = grid[1:-1, 1:-1]
    neighbors = [
        grid[:-2, 1:-1], grid[2:, 1:-1], grid[1:-1, :-2], grid[1:-1, 2:],
        grid[:-2, :-2], grid[:-2, 2:], grid[2:, :-2], grid[2:, 2:],
    ]
    is_min = np.ones_like(interior, dtype=bool)
    for n in neighbors:
        is_min &= interior <= n
    ii, jj = np.nonzero(is_min)
    order = np.argsort(interior[ii, jj])[:8]
    seeds = [(xs[i + 1], ys[j + 1]) for i, j in zip(ii[order], jj[order])]
    if not seeds:
        seeds = [tuple(pts.mean(axis=0))]

    candidates: list[tuple[np.ndarray, float]] = []
    for seed in seeds:
        pos, obj = _refine(np.asarray(seed, dtype=float), ref, others, diffs)
        merged = False
        for idx, (held, held_obj) in enumerate(candidates):
            if float(np.hypot(*(held - pos))) < 1e-3:
                if obj < held_obj:
                    candidates[idx] = (pos, obj)
                merged = True
                break
        if not merged:
            candidates.append((pos, obj))
    candidates.sort(key=lambda c: c[1])
    best_pos, best_obj = candidates[0]
    rivals = [
        (float(p[0]), float(p[1]), o)
        for p, o in candidates
        if o <= ambiguity_ratio * best_obj + 1e-12
    ]
    if len(rivals) > 1:
        raise AmbiguityError(rivals)
    return best_pos


# ---------------------------------------------------------------------------
# Tracking


@dataclass(frozen=True)
class TrackerConfig:
    """Knobs for the blink-to-blink tracker."""

    dt: float = 0.1  # nominal blink period, seconds
    sigma_accel: float = DEFAULT_SIGMA_ACCEL
    sigma_t: float = DEFAULT_SIGMA_T
    init_pos_var: float = 0.25  # m^2
    init_vel_var: float = 1.0  # (m/s)^2
    gap_reset: int = 10  # missed blinks before the track is abandoned


def track(
    sets: Sequence[TdoaSet],
    anchors: Mapping[str, tuple[float, float]],
    cfg: TrackerConfig = TrackerConfig(),
) -> list[Fix]:
    """Run the EKF over one tag's TDoA sets (ascending blink_seq).

    Tracks initialize from ``ls_solve`` with zero velocity, predict once per
    elapsed blink period, and re-initialize after a gap of more than
    ``gap_reset`` blinks.  Sets whose cold start is ambiguous are skipped.
    """
    fixes: list[Fix] = []
    state: EkfState | None = None
    last_seq: int | None = None
    for meas in sets:
        if state is not None and last_seq is not None:
            gap = meas.blink_seq - last_seq
            if gap > cfg.gap_reset:
                state = None
        if state is None:
            try:
                pos = ls_solve(meas, anchors)
            except (AmbiguityError, ValueError) as exc:
                log.warning(
                    "track init skipped for %s #%d: %s", meas.tag_id, meas.blink_seq, exc
                )
                continue
            state = make_tracker_state(
                pos,
                dt=cfg.dt,
                sigma_accel=cfg.sigma_accel,
                sigma_t=cfg.sigma_t,
                pos_var=cfg.init_pos_var,
                vel_var=cfg.init_vel_var,
            )
            last_seq = meas.blink_seq
            fixes.append(_fix_from_state(state, meas, 0.0))
            continue
        for _ in range(meas.blink_seq - last_seq):
            state = ekf_predict(state)
        state, fix = ekf_update(state, meas, anchors)
        last_seq = meas.blink_seq
        fixes.append(fix)
    return fixes
