"""Forward integration of the full system and of reduced LV systems.

Wraps the compiled kernels with typed configuration and trajectory
objects, convergence checks against a target equilibrium, and CSV
export of sampled trajectories.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import ModelParameters, state_dim, validate

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "lv_integrate",
    "converged_to",
    "trajectory_csv",
    "write_trajectory_csv",
]

_STATUS_NAMES = {
    kernels.STATUS_CONVERGED: "converged",
    kernels.STATUS_MAX_TIME: "max_time",
    kernels.STATUS_UNDERFLOW: "failed",
    kernels.STATUS_NONFINITE: "failed",
    kernels.STATUS_MAX_STEPS: "failed",
}

_FAIL_REASON = {
    kernels.STATUS_UNDERFLOW: "step size underflow",
    kernels.STATUS_NONFINITE: "non-finite derivative or state",
    kernels.STATUS_MAX_STEPS: "max_steps exceeded",
}


class IntegrationError(RuntimeError):
    """Integration failed; carries the last good time and state."""

    def __init__(self, reason: str, t_last: float, y_last: np.ndarray):
        super().__init__(f"{reason} at t = {t_last!r}")
        self.reason = reason
        self.t_last = t_last
        self.y_last = y_last


@dataclass
class IntegratorConfig:
    """Tolerances and stopping rules for the adaptive integrator.

    convergence_eps / convergence_window: the run is declared converged
    once the componentwise diameter of the state over the trailing
    `convergence_window` time units drops below `convergence_eps`.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_time: float = 5000.0
    max_steps: int = 5_000_000
    convergence_eps: float = 1e-9
    convergence_window: float = 50.0

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_time", "convergence_eps",
                     "convergence_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rel_tol < 1e-13:
            raise ValueError("rel_tol must be >= 1e-13")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    def to_dict(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "max_time": self.max_time,
            "max_steps": self.max_steps,
            "convergence_eps": self.convergence_eps,
            "convergence_window": self.convergence_window,
        }


@dataclass
class Trajectory:
    """Sampled solution with integrator metadata.

    times are strictly increasing; states are clamped to the orthant
    (negative round-off below 1e-12 zeroed, counted in meta["clamped"]).
    status is one of "converged", "max_time", "failed".
    """

    times: np.ndarray
    states: np.ndarray
    status: str
    meta: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


def _default_samples(max_time: float, count: int = 1001) -> np.ndarray:
    return np.linspace(0.0, max_time, count)


def _run_kernel(kind, y0, c1, c2, m1, m2, mig, sample_times, config):
    ts = np.asarray(sample_times, dtype=np.float64)
    if ts.ndim != 1 or (np.diff(ts) <= 0).any() or (ts < 0).any():
        raise ValueError("sample_times must be strictly increasing and >= 0")
    raw = kernels.dopri54(
        int(kind), np.asarray(y0, dtype=np.float64),
        np.ascontiguousarray(c1, dtype=np.float64),
        np.ascontiguousarray(c2, dtype=np.float64),
        np.ascontiguousarray(m1, dtype=np.float64),
        np.ascontiguousarray(m2, dtype=np.float64),
        np.ascontiguousarray(mig, dtype=np.float64),
        ts, config.rel_tol, config.abs_tol, config.max_time,
        config.max_steps, config.convergence_eps, config.convergence_window,
    )
    samples, n_filled, t_end, y_end, status, n_acc, n_rej, n_clamp = raw

    times = ts[:n_filled]
    states = samples[:n_filled]
    if n_filled == 0 or times[-1] < t_end:
        times = np.append(times, t_end)
        states = np.vstack([states, y_end]) if n_filled else y_end[None, :]
    meta = {
        "steps_accepted": int(n_acc),
        "steps_rejected": int(n_rej),
        "clamped": int(n_clamp),
        "t_end": float(t_end),
        "window": float(config.convergence_window),
    }
    name = _STATUS_NAMES[int(status)]
    if name == "failed":
        meta["failure"] = _FAIL_REASON[int(status)]
    return Trajectory(times, states, name, meta), int(status)


def integrate(params: ModelParameters, initial, config: IntegratorConfig,
              sample_times=None) -> Trajectory:
    """Integrate the full system forward from `initial` (in Gamma).

    Dense output is evaluated at `sample_times` (default: 1001 evenly
    spaced points over [0, max_time]); the terminal state is always
    included.  Integration stops at convergence (trailing-window
    criterion), at max_time, or on failure; a failure raises
    IntegrationError with the last good state attached.
    """
    bad = validate(params)
    if bad:
        raise ValueError("invalid parameters: " + "; ".join(map(str, bad)))
    y0 = np.asarray(initial, dtype=np.float64)
    if y0.shape != (state_dim(params),):
        raise ValueError(
            f"initial state has shape {y0.shape}, expected ({state_dim(params)},)"
        )
    if (y0 < 0).any():
        raise ValueError("initial state must be nonnegative")
    if sample_times is None:
        sample_times = _default_samples(config.max_time)
    traj, status = _run_kernel(
        kernels.KIND_FULL, y0, params.birth, params.death,
        params.beta_diag, params.theta, params.migration,
        sample_times, config,
    )
    if traj.status == "failed":
        raise IntegrationError(traj.meta["failure"], traj.meta["t_end"],
                               traj.states[-1])
    return traj


def lv_integrate(growth, beta, migration, initial,
                 config: IntegratorConfig, sample_times=None) -> np.ndarray:
    """Integrate the reduced p-dimensional LV system; return the terminal state.

    Used as the fallback/oracle for the LV equilibrium: by global
    stability the terminal state approximates the attracting
    equilibrium once the convergence window criterion fires.
    """
    growth = np.asarray(growth, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mig = np.asarray(migration, dtype=np.float64)
    y0 = np.asarray(initial, dtype=np.float64)
    if (y0 < 0).any():
        raise ValueError("initial state must be nonnegative")
    if sample_times is None:
        sample_times = np.array([config.max_time])
    p = growth.shape[0]
    empty = np.zeros((p, 0))
    traj, status = _run_kernel(
        kernels.KIND_LV, y0, growth, beta, empty, empty, mig,
        sample_times, config,
    )
    if traj.status == "failed":
        raise IntegrationError(traj.meta["failure"], traj.meta["t_end"],
                               traj.states[-1])
    return traj.final_state


def converged_to(trajectory: Trajectory, target, eps: float) -> bool:
    """Did the trajectory settle at `target`?

    True iff the final state and every sampled state in the trailing
    convergence window are within eps of the target in infinity norm,
    relative to max(1, ||target||_inf).  The window length is read from
    trajectory.meta (fallback 50 time units).
    """
    if trajectory.status == "failed":
        return False
    tvec = np.asarray(
        target.to_flat() if hasattr(target, "to_flat") else target,
        dtype=np.float64,
    )
    scale = max(1.0, np.abs(tvec).max())
    window = trajectory.meta.get("window", 50.0)
    t_end = trajectory.final_time
    mask = trajectory.times >= t_end - window
    tail = trajectory.states[mask]
    dist = np.abs(tail - tvec[None, :]).max()
    return bool(dist <= eps * scale)


def trajectory_csv(trajectory: Trajectory, patches: int, strains: int) -> str:
    """Render a trajectory as CSV text.

    Header: t,S_1,T_1_1,...,T_1_n,...,S_p,...,T_p_n.  Values carry full
    double precision (17 significant digits).
    """
    cols = ["t"]
    for l in range(1, patches + 1):
        cols.append(f"S_{l}")
        cols.extend(f"T_{l}_{k}" for k in range(1, strains + 1))
    expected = 1 + (strains + 1) * patches
    if trajectory.states.shape[1] + 1 != expected:
        raise ValueError("trajectory width does not match patches/strains")
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for t, row in zip(trajectory.times, trajectory.states):
        buf.write(("%.17g" % t) + ","
                  + ",".join("%.17g" % v for v in row) + "\n")
    return buf.getvalue()


def write_trajectory_csv(path, trajectory: Trajectory,
                         patches: int, strains: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trajectory_csv(trajectory, patches, strains))
