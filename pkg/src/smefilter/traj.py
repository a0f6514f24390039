"""Trajectory and ensemble orchestration, plus convergence and continuity
diagnostics.

A trajectory is a pure function of ``(model, scheme, dt, T, rho0, seed)``:
the driving record is generated online from the filtered state itself
(``dy_n = m_(n-1) dt + kappa dnu_n`` with ``dnu ~ N(0, dt)`` for diffusion,
per-step Bernoulli counts for jumps) and returned alongside the states so
that offline replays can cross-check the run.  Ensembles run trajectories
sequentially with seeds ``base_seed + i`` and merge by index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import (
    DensityState,
    MeasurementRecord,
    NonFiniteStateError,
    PathwiseIntegrator,
    RobustStepper,
    _normalized_density,
    _robust_advance,
    em_normalized,
    pathwise_filter,
    robust_filter,
)
from .jump import (
    CountingRecord,
    _sme_advance,
    count_probability,
    jump_pathwise_solve,
    sample_counting_record,
)
from .linalg import dagger, max_abs
from .model import BlochVector, DiffusionModel, JumpModel, purity

SCHEMES = ("robust", "em", "pathwise")


@dataclass(frozen=True)
class TrajectoryResult:
    """One filtered run: uniform time grid, normalized states, Bloch path for
    2x2 systems, the driving record, and the seed that produced it."""

    times: np.ndarray
    states: list[DensityState]
    bloch: list[BlochVector] | None
    record: MeasurementRecord | CountingRecord
    seed: int
    scheme: str


@dataclass(frozen=True)
class EnsembleResult:
    """Aggregate of independent trajectories: the mean normalized state path,
    the final-time states and Bloch vectors per trajectory, and final-time
    Bloch statistics."""

    n_traj: int
    times: np.ndarray
    mean_rho_path: list[np.ndarray]
    final_states: list[DensityState]
    final_bloch: list[BlochVector]
    summary: dict
    base_seed: int
    scheme: str


def master_rhs(H, L, rho) -> np.ndarray:
    """Deterministic mean evolution:
    ``-i[H, rho] + L rho L^dag - (L^dag L rho + rho L^dag L) / 2``."""
    Hm = np.asarray(H, dtype=complex)
    Lm = np.asarray(L, dtype=complex)
    ldl = dagger(Lm) @ Lm
    return (
        -1j * (Hm @ rho - rho @ Hm)
        + Lm @ rho @ dagger(Lm)
        - 0.5 * (ldl @ rho + rho @ ldl)
    )


def master_propagate(H, L, rho0, dt: float, n_steps: int) -> list[np.ndarray]:
    """RK4 integration of the mean evolution; the deterministic oracle that
    ensemble averages are checked against."""
    from .ode import rk4_step

    def f(_t, rho):
        return master_rhs(H, L, rho)

    state = np.asarray(rho0, dtype=complex)
    out = [state.copy()]
    for k in range(n_steps):
        state = rk4_step(f, k * dt, state, dt)
        out.append(state.copy())
    return out


def _bloch_fast(rho: np.ndarray) -> BlochVector:
    """Bloch coordinates without validation (hot path; tests check agreement
    with the validating converter)."""
    return BlochVector(
        x=2.0 * float(rho[1, 0].real),
        y=2.0 * float(rho[1, 0].imag),
        z=float((rho[0, 0] - rho[1, 1]).real),
    )


def _bloch_path(states: list[DensityState]) -> list[BlochVector] | None:
    if states[0].rho.shape[0] != 2:
        return None
    return [_bloch_fast(s.rho) for s in states]


def _run_diffusion_trajectory(model, scheme, dt, n, rho0, seed, substeps) -> TrajectoryResult:
    rng = np.random.default_rng(seed)
    dnu = rng.normal(0.0, np.sqrt(dt), n)
    if scheme == "em":
        states, record = em_normalized(model, dt, dnu, rho0)
    elif scheme == "robust":
        rho = _normalized_density(rho0)
        stepper = RobustStepper(model, dt)
        l_sum = model.L + dagger(model.L)
        states = [DensityState(rho, 0.0, 0.0)]
        dys = np.empty(n)
        log_lam = 0.0
        for k in range(n):
            m = float(np.einsum("ij,ji->", l_sum, rho).real)
            dy = m * dt + model.kappa * dnu[k]
            rho, dlog = _robust_advance(stepper, rho, dy, (k + 1) * dt)
            log_lam += dlog
            dys[k] = dy
            states.append(DensityState(rho, log_lam, (k + 1) * dt))
        record = MeasurementRecord(dt, dys)
    elif scheme == "pathwise":
        rho = _normalized_density(rho0)
        integrator = PathwiseIntegrator(model, dt, substeps)
        l_sum = model.L + dagger(model.L)
        states = [DensityState(rho, 0.0, 0.0)]
        dys = np.empty(n)
        r = rho.copy()
        y = 0.0
        for k in range(n):
            m = float(np.einsum("ij,ji->", l_sum, rho).real)
            dy = m * dt + model.kappa * dnu[k]
            r = integrator.advance(r, float(k * dt), y, dy)
            if not np.isfinite(r).all():
                raise NonFiniteStateError(float((k + 1) * dt), "pathwise state blew up")
            y += dy
            state = integrator.recover_state(r, y, float((k + 1) * dt), float((k + 1) * dt))
            rho = state.rho
            dys[k] = dy
            states.append(state)
        record = MeasurementRecord(dt, dys)
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return TrajectoryResult(
        times=record.times,
        states=states,
        bloch=_bloch_path(states),
        record=record,
        seed=int(seed),
        scheme=scheme,
    )


def _run_jump_trajectory(model, scheme, dt, n, rho0, seed, substeps) -> TrajectoryResult:
    if scheme == "robust":
        raise ValueError("scheme 'robust' applies to diffusion models; use 'em' or 'pathwise'")
    if scheme == "em":
        rng = np.random.default_rng(seed)
        uniforms = rng.random(n)
        rho = _normalized_density(rho0)
        counts = np.zeros(n, dtype=int)
        states = [DensityState(rho, 0.0, 0.0)]
        log_lam = 0.0
        for k in range(n):
            p = count_probability(model, rho, dt, k * dt)
            dn = 1 if uniforms[k] < p else 0
            counts[k] = dn
            rho, dlog = _sme_advance(model, rho, dn, dt)
            log_lam += dlog
            states.append(DensityState(rho, log_lam, (k + 1) * dt))
        record = CountingRecord(dt, counts)
    elif scheme == "pathwise":
        record = sample_counting_record(model, rho0, dt, n * dt, seed)
        _, states = jump_pathwise_solve(model, record, _normalized_density(rho0), substeps)
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return TrajectoryResult(
        times=record.times,
        states=states,
        bloch=_bloch_path(states),
        record=record,
        seed=int(seed),
        scheme=scheme,
    )


def run_trajectory(model, scheme: str, dt: float, T: float, rho0, seed: int, substeps: int = 4) -> TrajectoryResult:
    """Run one trajectory, generating the driving record online.

    Replaying the returned record offline through the matching filter
    (``robust_filter``, ``pathwise_filter``, or ``jump_pathwise_solve``)
    reproduces the same states bit for bit, since both paths share the same
    steppers.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if T < dt:
        raise ValueError(f"T = {T} must be at least dt = {dt}")
    n = int(round(T / dt))
    if isinstance(model, DiffusionModel):
        return _run_diffusion_trajectory(model, scheme, dt, n, rho0, seed, substeps)
    if isinstance(model, JumpModel):
        return _run_jump_trajectory(model, scheme, dt, n, rho0, seed, substeps)
    raise TypeError(f"expected DiffusionModel or JumpModel, got {type(model).__name__}")


def run_ensemble(
    model,
    scheme: str,
    dt: float,
    T: float,
    rho0,
    n_traj: int,
    base_seed: int,
    substeps: int = 4,
) -> EnsembleResult:
    """Run ``n_traj`` independent trajectories with seeds ``base_seed + i``;
    aggregates the mean state path and final-time Bloch statistics."""
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    sum_rho = None
    times = None
    final_states: list[DensityState] = []
    final_bloch: list[BlochVector] = []
    for i in range(n_traj):
        res = run_trajectory(model, scheme, dt, T, rho0, base_seed + i, substeps)
        if sum_rho is None:
            times = res.times
            sum_rho = np.stack([s.rho for s in res.states]).astype(complex)
        else:
            sum_rho += np.stack([s.rho for s in res.states])
        final_states.append(res.states[-1])
        final_bloch.append(res.bloch[-1] if res.bloch is not None else _bloch_fast(res.states[-1].rho))
    mean_rho_path = [sum_rho[k] / n_traj for k in range(sum_rho.shape[0])]
    coords = {
        "x": np.array([b.x for b in final_bloch]),
        "y": np.array([b.y for b in final_bloch]),
        "z": np.array([b.z for b in final_bloch]),
    }
    summary = {
        "final_bloch_mean": {c: float(v.mean()) for c, v in coords.items()},
        "final_bloch_stddev": {c: float(v.std()) for c, v in coords.items()},
        "mean_purity": float(np.mean([purity(s.rho) for s in final_states])),
    }
    return EnsembleResult(
        n_traj=n_traj,
        times=times,
        mean_rho_path=mean_rho_path,
        final_states=final_states,
        final_bloch=final_bloch,
        summary=summary,
        base_seed=int(base_seed),
        scheme=scheme,
    )


def steady_state_stats(ensemble: EnsembleResult, threshold: float = 0.6, bins: int = 41) -> dict:
    """Fixed-bin histograms of the final-time Bloch coordinates over [-1, 1],
    the fraction of trajectories beyond ``threshold`` in |x| and |z|, and the
    mean purity."""
    coords = {
        "x": np.array([b.x for b in ensemble.final_bloch]),
        "y": np.array([b.y for b in ensemble.final_bloch]),
        "z": np.array([b.z for b in ensemble.final_bloch]),
    }
    histograms = {}
    for name, vals in coords.items():
        counts, edges = np.histogram(vals, bins=bins, range=(-1.0, 1.0))
        histograms[name] = {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}
    return {
        "threshold": float(threshold),
        "bins": int(bins),
        "histograms": histograms,
        "fraction_abs_x_above": float(np.mean(np.abs(coords["x"]) > threshold)),
        "fraction_abs_z_above": float(np.mean(np.abs(coords["z"]) > threshold)),
        "mean_purity": float(np.mean([purity(s.rho) for s in ensemble.final_states])),
    }


@dataclass(frozen=True)
class ConvergenceRow:
    delta: float
    sup_error: float
    w_sliding: float
    w_initial: float


def convergence_report(
    model,
    y_fine: MeasurementRecord,
    deltas,
    rho0=None,
    oracle_substeps: int = 8,
) -> list[ConvergenceRow]:
    """Error of the implicit filter at each step size against the fine
    pathwise-ODE oracle run on the same record.

    Each ``delta`` must be an integer multiple of the fine step.  The record's
    modulus of continuity over windows of width ``delta`` is reported in two
    readings: ``w_sliding`` maximizes over all windows, ``w_initial`` only
    over the first one.
    """
    if rho0 is None:
        rho0 = np.eye(model.dim, dtype=complex) / model.dim
    oracle = pathwise_filter(model, y_fine, rho0, oracle_substeps)
    rows = []
    for delta in deltas:
        ratio = delta / y_fine.dt
        factor = int(round(ratio))
        if factor < 1 or abs(ratio - factor) > 1e-9:
            raise ValueError(f"delta {delta} is not an integer multiple of the fine step {y_fine.dt}")
        approx = robust_filter(model, y_fine.coarsen(factor), rho0)
        sup_error = max(
            max_abs(approx[i].rho - oracle[i * factor].rho) for i in range(len(approx))
        )
        rows.append(
            ConvergenceRow(
                delta=float(delta),
                sup_error=float(sup_error),
                w_sliding=y_fine.modulus_of_continuity(delta, "sliding"),
                w_initial=y_fine.modulus_of_continuity(delta, "initial"),
            )
        )
    return rows


@dataclass(frozen=True)
class LipschitzRow:
    epsilon: float
    sup_gap_rho: float
    sup_gap_rho_tilde: float
    ratio: float


def lipschitz_report(model, record: MeasurementRecord, epsilons, rho0=None) -> list[LipschitzRow]:
    """Response of the filter to record perturbations of sup-norm ``eps``.

    The perturbation has a fixed shape (one sine arch over the record span,
    sup-norm 1) scaled by ``eps``; the gap is reported for both the
    normalized and the unnormalized states, and ``ratio`` is the normalized
    gap per unit ``eps``.
    """
    if rho0 is None:
        rho0 = np.eye(model.dim, dtype=complex) / model.dim
    base = robust_filter(model, record, rho0)
    base_tilde = [s.rho_tilde() for s in base]
    shape = np.sin(2.0 * np.pi * (record.times - record.t0) / record.duration)
    shape_inc = np.diff(shape)
    rows = []
    for eps in epsilons:
        if eps < 0.0:
            raise ValueError(f"epsilon must be nonnegative, got {eps}")
        if eps == 0.0:
            rows.append(LipschitzRow(0.0, 0.0, 0.0, 0.0))
            continue
        perturbed = MeasurementRecord(record.dt, record.increments + eps * shape_inc, record.t0)
        other = robust_filter(model, perturbed, rho0)
        gap_rho = max(max_abs(a.rho - b.rho) for a, b in zip(base, other))
        gap_tilde = max(max_abs(x - b.rho_tilde()) for x, b in zip(base_tilde, other))
        rows.append(LipschitzRow(float(eps), float(gap_rho), float(gap_tilde), float(gap_rho / eps)))
    return rows
