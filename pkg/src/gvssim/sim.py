"""Fixed-step explicit Euler simulation of the closed-chain system under the
projected task-space controllers: scenario definitions, desired-trajectory
generation, the per-step pipeline, trace recording, and the metric suite.

Each step runs: closure correction -> kinematics -> constraints -> dynamics
assembly -> task references -> sliding variable -> control law -> tension
allocation and saturation -> constrained accelerations -> Euler update of
(q, qd) and the parameter estimate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import constraints as con
from . import control as ctl
from . import dynamics as dyn
from . import kinematics as kin
from .model import SystemModel
from .regressor import control_regressor

REGULATION_TARGET = np.array([0.3156, 0.0182, 0.3316])

# time-varying reference: two harmonics in x and z, one in y (meters, rad)
TRACKING_AMPLITUDES = np.array(
    [
        [0.000107, 0.00008],
        [-0.01554, 0.0],
        [-0.000344, -0.000257],
    ]
)
TRACKING_PHASES = np.array(
    [
        [1.517, 1.458],
        [1.534, 0.0],
        [1.533, 1.492],
    ]
)
TRACKING_OFFSETS = np.array([0.3146, -0.005173, 0.3323])


@dataclass(frozen=True)
class TrajectorySpec:
    """Set-point or multi-harmonic sinusoidal task-space reference."""

    kind: str
    setpoint: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    phases: np.ndarray | None = None
    offsets: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("setpoint", "fourier"):
            raise ValueError(f"unknown trajectory kind '{self.kind}'")
        if self.kind == "setpoint" and self.setpoint is None:
            raise ValueError("setpoint trajectory needs a target")
        if self.kind == "fourier" and (
            self.amplitudes is None or self.phases is None or self.offsets is None
        ):
            raise ValueError("fourier trajectory needs amplitudes, phases, offsets")


def regulation_trajectory(target=REGULATION_TARGET) -> TrajectorySpec:
    return TrajectorySpec(kind="setpoint", setpoint=np.asarray(target, dtype=float))


def tracking_trajectory() -> TrajectorySpec:
    return TrajectorySpec(
        kind="fourier",
        amplitudes=TRACKING_AMPLITUDES.copy(),
        phases=TRACKING_PHASES.copy(),
        offsets=TRACKING_OFFSETS.copy(),
    )


def desired(trajectory: TrajectorySpec, t: float):
    """Desired position and velocity at time t."""
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    if trajectory.kind == "setpoint":
        return trajectory.setpoint.copy(), np.zeros(3)
    a, phi, c = trajectory.amplitudes, trajectory.phases, trajectory.offsets
    k = np.arange(1, a.shape[1] + 1, dtype=float)
    arg = k[None, :] * t + phi
    x_d = np.sum(a * np.sin(arg), axis=1) + c
    xd_dot = np.sum(a * k[None, :] * np.cos(arg), axis=1)
    return x_d, xd_dot


@dataclass
class Scenario:
    """Everything one run needs besides the model."""

    name: str
    controller: str
    gains: ctl.Gains
    trajectory: TrajectorySpec
    dt: float
    horizon: float
    record_stride: int = 10
    baumgarte_alpha: float = con.BAUMGARTE_ALPHA
    baumgarte_beta: float = con.BAUMGARTE_BETA
    constraint_projection: bool = True
    settle: bool = True

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("time step must be positive")
        if self.horizon < 0.0:
            raise ValueError("horizon must be nonnegative")
        if self.record_stride < 1:
            raise ValueError("record stride must be at least 1")
        if self.controller not in ctl.VARIANTS:
            raise ValueError(f"unknown controller variant '{self.controller}'")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class StepRecord:
    t: float
    x: np.ndarray
    x_d: np.ndarray
    e: np.ndarray
    e_norm: float
    u_raw: np.ndarray
    u: np.ndarray
    S: np.ndarray
    theta_hat: np.ndarray
    V: float
    phi_norm: float
    aqd_norm: float
    ps_residual: float
    lam: np.ndarray
    alloc_residual: float
    constraint_rank: int
    task_cond: float
    step_time: float


@dataclass
class Metrics:
    controller: str
    rmse_mm: float
    tv_e_mm: float
    tv_s_mm: float
    saturation_events: int
    mean_step_time_ms: float
    rtf: float
    dt: float
    horizon: float
    n_steps: int

    def to_dict(self) -> dict:
        return {
            "controller": self.controller,
            "rmse_mm": self.rmse_mm,
            "tv_e_mm": self.tv_e_mm,
            "tv_s_mm": self.tv_s_mm,
            "saturation_events": self.saturation_events,
            "mean_step_time_ms": self.mean_step_time_ms,
            "rtf": self.rtf,
            "dt": self.dt,
            "horizon": self.horizon,
            "n_steps": self.n_steps,
        }


@dataclass
class RunResult:
    scenario: Scenario
    records: list[StepRecord]
    metrics: Metrics
    series: dict = field(repr=False, default_factory=dict)
    final_q: np.ndarray | None = None
    final_qd: np.ndarray | None = None


class SimulationAbort(RuntimeError):
    """Non-finite state encountered; carries the last healthy record."""

    def __init__(self, message, last_record=None, step=None):
        super().__init__(message)
        self.last_record = last_record
        self.step = step


def settle_static(model: SystemModel, q_guess=None, tol: float = 1e-10,
                  max_iter: int = 200):
    """Static equilibrium on the closure manifold: solves K q = F_g + A^T lam
    together with Phi(q) = 0 by an inexact Newton iteration."""
    q = con.assemble_closure(model, model.anchor_q if q_guess is None else q_guess)
    n = model.n_coords
    nc = model.n_constraints
    lam = np.zeros(nc)
    K = model.stiffness
    zeros = np.zeros(n)
    for _ in range(max_iter):
        cache = kin.forward_kinematics(model, q, zeros)
        A, _, Phi = con.constraint_jacobian(model, cache)
        F_g = dyn.gravity_force(model, cache, model.theta_true)
        r1 = K @ q - F_g - A.T @ lam
        r2 = Phi
        if max(np.max(np.abs(r1)), np.max(np.abs(r2))) < tol:
            return q, lam
        kkt = np.zeros((n + nc, n + nc))
        kkt[:n, :n] = K
        kkt[:n, n:] = -A.T
        kkt[n:, :n] = A
        step = np.linalg.solve(kkt, np.concatenate((r1, r2)))
        q -= step[:n]
        lam -= step[n:]
    raise RuntimeError("static settle did not converge")


def initial_state(model: SystemModel, settle: bool = True):
    """Closure-consistent start: anchor configuration, optionally settled to
    static equilibrium, at rest."""
    if settle:
        q, _ = settle_static(model)
    else:
        q = con.assemble_closure(model, model.anchor_q)
    return q, np.zeros(model.n_coords)


def _correct_closure(model, q, qd, cache, tol=1e-10, max_iter=2):
    """Project the configuration back onto the closure manifold if the
    position residual has drifted; returns possibly updated state and cache."""
    for _ in range(max_iter):
        A, _, Phi = con.constraint_jacobian(model, cache)
        if np.linalg.norm(Phi) <= tol:
            break
        step, *_ = np.linalg.lstsq(A, Phi, rcond=con.SVD_RELATIVE_TOL)
        q = q - step
        cache = kin.forward_kinematics(model, q, qd)
    return q, cache


def step(model: SystemModel, scenario: Scenario, state, ctrl: ctl.ControllerState,
         t: float):
    """One pipeline pass; returns (state', ctrl', record)."""
    t0 = time.perf_counter()
    q, qd = state
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    gains = scenario.gains

    cache = kin.forward_kinematics(model, q, qd)
    q, cache = _correct_closure(model, q, qd, cache)
    cd = con.constraint_data(model, cache)
    d = dyn.assemble_dynamics(model, cache, model.theta_true)
    if scenario.constraint_projection:
        qd = con.project_velocity(d.M, cd.A, qd)

    x, J_task = kin.task_from_cache(model, cache)
    x_d, xd_dot = desired(scenario.trajectory, t)
    e = x_d - x

    x_r_dot = ctl.reference_velocity(x, xd_dot, x_d, gains.Lambda,
                                     gains.ref_velocity_max)
    qd_r, qdd_r, ref_diag = ctl.joint_reference(
        J_task, cd.P, x_r_dot, ctrl.qd_r_prev, scenario.dt
    )
    s = qd - qd_r
    ps_residual = float(np.linalg.norm(cd.P @ s - s))

    Y = control_regressor(model, cache, qd_r, qdd_r)
    tau_p = ctl.control_law(
        ctrl.variant, q, qd, d.K, d.D, cd.P, Y, ctrl.theta_hat, s, gains.Ks,
        F_ext=d.F_ext if np.any(d.F_ext) else None,
    )
    u_raw, alloc_residual = ctl.tension_allocation(cd.P, model.tendon_matrix, tau_p)
    u = ctl.saturate(u_raw, gains.tension_bound)
    tau = model.tendon_matrix @ u

    qdd, lam = con.constrained_accel(
        model, d, cd, q, qd, tau,
        alpha=scenario.baumgarte_alpha, beta=scenario.baumgarte_beta,
    )

    theta_hat = ctrl.theta_hat
    if ctrl.variant == "adaptive":
        theta_hat = ctl.adaptation_step(theta_hat, Y, cd.P, s, gains.Gamma,
                                        scenario.dt)

    q_next = q + scenario.dt * qd
    qd_next = qd + scenario.dt * qdd

    V = ctl.lyapunov_value(d.M, s, ctrl.theta_hat, model.theta_true,
                           gains.Gamma_inv)
    record = StepRecord(
        t=t,
        x=x,
        x_d=x_d,
        e=e,
        e_norm=float(np.linalg.norm(e)),
        u_raw=u_raw,
        u=u,
        S=dyn.tendon_displacements(model, q),
        theta_hat=ctrl.theta_hat.copy(),
        V=V,
        phi_norm=float(np.linalg.norm(cd.Phi)),
        aqd_norm=float(np.linalg.norm(cd.A @ qd)),
        ps_residual=ps_residual,
        lam=lam,
        alloc_residual=alloc_residual,
        constraint_rank=cd.rank,
        task_cond=ref_diag["task_cond"],
        step_time=time.perf_counter() - t0,
    )
    new_ctrl = ctl.ControllerState(
        variant=ctrl.variant, theta_hat=theta_hat, qd_r_prev=qd_r
    )
    if not (np.all(np.isfinite(q_next)) and np.all(np.isfinite(qd_next))):
        raise SimulationAbort("state became non-finite", last_record=record)
    return (q_next, qd_next), new_ctrl, record


def count_saturation_events(u_raw: np.ndarray, bound: float) -> int:
    """Transitions into saturation, counted per channel."""
    if len(u_raw) == 0:
        return 0
    at_bound = np.abs(u_raw) >= bound
    enters = at_bound[1:] & ~at_bound[:-1]
    return int(np.sum(enters) + np.sum(at_bound[0]))


def _compute_metrics(scenario, controller, series, wall_time, step_times):
    n_steps = len(series["e_norm"])
    e = np.asarray(series["e_norm"])
    s_norm = np.linalg.norm(np.asarray(series["S"]), axis=1) if n_steps else np.array([])
    rmse_mm = float(np.sqrt(np.mean(e**2)) * 1e3) if n_steps else 0.0
    tv_e = float(np.sum(np.abs(np.diff(e))) * 1e3) if n_steps > 1 else 0.0
    tv_s = float(np.sum(np.abs(np.diff(s_norm))) * 1e3) if n_steps > 1 else 0.0
    sat = count_saturation_events(np.asarray(series["u_raw"]),
                                  scenario.gains.tension_bound)
    mean_ms = float(np.mean(step_times) * 1e3) if len(step_times) else 0.0
    rtf = float(scenario.horizon / wall_time) if wall_time > 0 else 0.0
    return Metrics(
        controller=controller,
        rmse_mm=rmse_mm,
        tv_e_mm=tv_e,
        tv_s_mm=tv_s,
        saturation_events=sat,
        mean_step_time_ms=mean_ms,
        rtf=rtf,
        dt=scenario.dt,
        horizon=scenario.horizon,
        n_steps=n_steps,
    )


def run(model: SystemModel, scenario: Scenario, q0=None, qd0=None) -> RunResult:
    """Simulate one scenario from the settled (or provided) initial state."""
    if q0 is None:
        q, qd = initial_state(model, settle=scenario.settle)
    else:
        q = np.asarray(q0, dtype=float).copy()
        qd = (np.zeros(model.n_coords) if qd0 is None
              else np.asarray(qd0, dtype=float).copy())
    ctrl = ctl.ControllerState(
        variant=scenario.controller, theta_hat=model.theta_nominal
    )
    n_steps = scenario.n_steps
    records: list[StepRecord] = []
    series = {
        "t": np.zeros(n_steps),
        "e_norm": np.zeros(n_steps),
        "u_raw": np.zeros((n_steps, len(model.tendons))),
        "u": np.zeros((n_steps, len(model.tendons))),
        "S": np.zeros((n_steps, len(model.tendons))),
        "V": np.zeros(n_steps),
        "phi_norm": np.zeros(n_steps),
        "aqd_norm": np.zeros(n_steps),
        "ps_residual": np.zeros(n_steps),
    }
    step_times = np.zeros(n_steps)
    wall0 = time.perf_counter()
    state = (q, qd)
    for k in range(n_steps):
        t = k * scenario.dt
        try:
            state, ctrl, rec = step(model, scenario, state, ctrl, t)
        except SimulationAbort as abort:
            abort.step = k
            raise
        series["t"][k] = t
        series["e_norm"][k] = rec.e_norm
        series["u_raw"][k] = rec.u_raw
        series["u"][k] = rec.u
        series["S"][k] = rec.S
        series["V"][k] = rec.V
        series["phi_norm"][k] = rec.phi_norm
        series["aqd_norm"][k] = rec.aqd_norm
        series["ps_residual"][k] = rec.ps_residual
        step_times[k] = rec.step_time
        if k % scenario.record_stride == 0:
            records.append(rec)
    wall_time = time.perf_counter() - wall0
    metrics = _compute_metrics(scenario, scenario.controller, series, wall_time,
                               step_times)
    return RunResult(
        scenario=scenario,
        records=records,
        metrics=metrics,
        series=series,
        final_q=state[0],
        final_qd=state[1],
    )


def compare(model: SystemModel, scenario: Scenario, variants=ctl.VARIANTS):
    """Run every controller variant under identical settings and initial
    state; returns {variant: RunResult}."""
    q0, qd0 = initial_state(model, settle=scenario.settle)
    out = {}
    for variant in variants:
        scn = replace(scenario, name=f"{scenario.name}_{variant}",
                      controller=variant)
        out[variant] = run(model, scn, q0=q0, qd0=qd0)
    return out


def regulation_scenario(controller="adaptive", dt=3.5e-4, horizon=20.0,
                        gains=None, **kwargs) -> Scenario:
    return Scenario(
        name="regulation",
        controller=controller,
        gains=gains or ctl.regulation_gains(),
        trajectory=regulation_trajectory(),
        dt=dt,
        horizon=horizon,
        **kwargs,
    )


def tracking_scenario(controller="adaptive", dt=4e-4, horizon=20.0,
                      gains=None, **kwargs) -> Scenario:
    return Scenario(
        name="tracking",
        controller=controller,
        gains=gains or ctl.tracking_gains(),
        trajectory=tracking_trajectory(),
        dt=dt,
        horizon=horizon,
        **kwargs,
    )
