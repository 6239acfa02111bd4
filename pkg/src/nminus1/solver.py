"""Newton-Raphson AC power flow in polar coordinates, plus current recovery."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import AdmittanceMatrix, GridCase, Topology, branch_admittances, build_ybus, is_slack_connected


class PowerFlowError(RuntimeError):
    pass


class NonConvergence(PowerFlowError):
    def __init__(self, iterations: int, max_mismatch: float):
        super().__init__(f"no convergence after {iterations} iterations (max mismatch {max_mismatch:.3e} pu)")
        self.iterations = iterations
        self.max_mismatch = max_mismatch


class SingularJacobian(PowerFlowError):
    pass


class IslandedGrid(PowerFlowError):
    pass


PIVOT_THRESHOLD = 1e-12


@dataclass(frozen=True)
class PFState:
    vm: np.ndarray
    va: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 20
    flat_start: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class PFSolution:
    state: PFState
    p: np.ndarray
    q: np.ndarray
    inj_current: np.ndarray
    br_i_or: np.ndarray
    br_i_ex: np.ndarray
    iterations: int
    max_mismatch: float
    mismatch_history: tuple[float, ...] = ()


def compute_power_injections(ybus: AdmittanceMatrix, state: PFState) -> tuple[np.ndarray, np.ndarray]:
    """Net active/reactive injections from the polar power-flow equations."""
    g, b = ybus.g, ybus.b
    theta = state.va[:, None] - state.va[None, :]
    cos, sin = np.cos(theta), np.sin(theta)
    vv = state.vm[:, None] * state.vm[None, :]
    p = np.sum(vv * (g * cos + b * sin), axis=1)
    q = np.sum(vv * (g * sin - b * cos), axis=1)
    return p, q


def _scheduled(case: GridCase) -> tuple[np.ndarray, np.ndarray]:
    return case.column("pg") - case.column("pd"), case.column("qg") - case.column("qd")


def compute_mismatch(case: GridCase, ybus: AdmittanceMatrix, state: PFState) -> np.ndarray:
    """Scheduled minus calculated power: dP over PV+PQ buses, then dQ over PQ buses."""
    p_sched, q_sched = _scheduled(case)
    p, q = compute_power_injections(ybus, state)
    pvpq = np.r_[case.pv, case.pq]
    return np.r_[p_sched[pvpq] - p[pvpq], q_sched[case.pq] - q[case.pq]]


def build_jacobian(ybus: AdmittanceMatrix, state: PFState, pv: np.ndarray, pq: np.ndarray) -> np.ndarray:
    """Jacobian of :func:`compute_mismatch` with respect to (angles of PV+PQ, magnitudes of PQ).

    The mismatch is scheduled minus calculated power, so this is the negated
    classical power-flow Jacobian.
    """
    y = ybus.y
    v = state.v
    i_bus = y @ v
    vnorm = np.exp(1j * state.va)
    # dS/dVa and dS/dVm of calculated S = V conj(Y V)
    ds_dva = 1j * v[:, None] * np.conj(np.diag(i_bus) - y * v[None, :])
    ds_dvm = v[:, None] * np.conj(y * vnorm[None, :]) + np.diag(np.conj(i_bus) * vnorm)

    pvpq = np.r_[pv, pq]
    j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
    j12 = ds_dvm.real[np.ix_(pvpq, pq)]
    j21 = ds_dva.imag[np.ix_(pq, pvpq)]
    j22 = ds_dvm.imag[np.ix_(pq, pq)]
    return -np.block([[j11, j12], [j21, j22]])


def flat_start(case: GridCase) -> PFState:
    vm = np.where(case.column("kind") == 1, 1.0, case.column("vm_setpoint"))
    va = np.full(case.n_bus, case.buses[case.slack].va_slack)
    return PFState(vm=vm, va=va)


def _newton_step(jac: np.ndarray, f: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(jac, check_finite=False)
    if jac.size and np.min(np.abs(np.diag(lu))) < PIVOT_THRESHOLD:
        raise SingularJacobian(f"LU pivot below {PIVOT_THRESHOLD:g}")
    return scipy.linalg.lu_solve((lu, piv), f, check_finite=False)


def newton_raphson_solve(
    case: GridCase,
    topo: Topology | None = None,
    opts: SolverOptions | None = None,
    initial: PFState | None = None,
) -> PFSolution:
    """Solve the AC power flow; the slack bus absorbs the power balance.

    Raises :class:`IslandedGrid` if some bus cannot reach the slack,
    :class:`SingularJacobian` or :class:`NonConvergence` on numerical failure.
    """
    topo = case.full_topology() if topo is None else topo
    opts = opts or SolverOptions()
    if not is_slack_connected(case, topo):
        raise IslandedGrid("topology leaves buses disconnected from the slack bus")

    ybus = build_ybus(case, topo)
    pv, pq = case.pv, case.pq
    pvpq = np.r_[pv, pq]
    n_ang = len(pvpq)
    state = initial if (initial is not None and not opts.flat_start) else flat_start(case)
    vm, va = state.vm.copy(), state.va.copy()

    iterations = 0
    history = []
    while True:
        state = PFState(vm=vm, va=va)
        f = compute_mismatch(case, ybus, state)
        err = float(np.max(np.abs(f))) if f.size else 0.0
        history.append(err)
        if not np.isfinite(err):
            raise NonConvergence(iterations, err)
        if err < opts.tolerance:
            break
        if iterations >= opts.max_iterations:
            raise NonConvergence(iterations, err)
        dx = _newton_step(build_jacobian(ybus, state, pv, pq), f)
        va = va.copy()
        vm = vm.copy()
        va[pvpq] -= dx[:n_ang]
        vm[pq] -= dx[n_ang:]
        iterations += 1

    p, q = compute_power_injections(ybus, state)
    br_or, br_ex = branch_currents(case, topo, state)
    return PFSolution(
        state=state,
        p=p,
        q=q,
        inj_current=bus_injection_currents(ybus, state),
        br_i_or=br_or,
        br_i_ex=br_ex,
        iterations=iterations,
        max_mismatch=err,
        mismatch_history=tuple(history),
    )


def branch_currents(case: GridCase, topo: Topology, state: PFState) -> tuple[np.ndarray, np.ndarray]:
    """Current magnitudes at the origin and end of every branch; zero when out of service."""
    yff, yft, ytf, ytt = branch_admittances(case)
    v = state.v
    vf, vt = v[case.from_idx], v[case.to_idx]
    on = topo.as_array()
    i_or = np.where(on, np.abs(yff * vf + yft * vt), 0.0)
    i_ex = np.where(on, np.abs(ytf * vf + ytt * vt), 0.0)
    return i_or, i_ex


def bus_injection_currents(ybus: AdmittanceMatrix, state: PFState) -> np.ndarray:
    return np.abs(ybus.y @ state.v)


def solution_to_currents(
    case: GridCase, topo: Topology, p: np.ndarray, q: np.ndarray, vm: np.ndarray, va: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convert a per-bus (P, Q, Vm, theta) prediction to (I_i, I_or, I_ex).

    Only the voltages matter; P and Q are accepted so a full bus-state
    vector can be passed through unchanged.
    """
    state = PFState(vm=np.asarray(vm, dtype=float), va=np.asarray(va, dtype=float))
    br_or, br_ex = branch_currents(case, topo, state)
    inj = bus_injection_currents(build_ybus(case, topo), state)
    return inj, br_or, br_ex
