"""Evolutions driven by a counting (photon-detection) record.

The counting analog of the diffusion machinery: explicit steppers for the
normalized and linear (unnormalized) jump equations, a Bernoulli sampler for
records whose count intensity ``eta lam tr(C rho C^dag)`` tracks the evolving
state, and the pathwise route where the gauge ``A = C^(-N_t)`` is piecewise
constant and the gauge-frame state ``r`` follows an ordinary differential
equation between counts, continuous across them.

Within one step the drift substep is applied first, then the count map; the
two orders differ only at higher order in ``dt``, and a fixed convention
keeps runs deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffusion import (
    DensityState,
    NonFiniteStateError,
    PathwiseState,
    _normalized_density,
    recover,
)
from .linalg import as_square, dagger, require_hermitian
from .ode import rk4_step


class InvalidCountingRecordError(ValueError):
    """A count appears where the jump map annihilates the state."""


@dataclass(frozen=True)
class CountingRecord:
    """Uniformly sampled counting record: per-step increments ``dN in {0, 1}``
    over steps of width ``dt`` starting at ``t0``."""

    dt: float
    counts: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        c = np.asarray(self.counts)
        if c.ndim != 1:
            raise ValueError(f"counts must be one-dimensional, got shape {c.shape}")
        c = c.astype(int)
        if c.size and not np.isin(c, (0, 1)).all():
            raise ValueError("count increments must all be 0 or 1")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def n_steps(self) -> int:
        return int(self.counts.size)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def cumulative_counts(self) -> np.ndarray:
        """Nondecreasing count ``N`` at the grid points, ``N[0] = 0``."""
        n = np.zeros(self.n_steps + 1, dtype=int)
        np.cumsum(self.counts, out=n[1:])
        return n

    @property
    def jump_times(self) -> np.ndarray:
        """Times at which a count is registered (step end times)."""
        return self.times[1:][self.counts == 1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def write_counting_record(path, record: CountingRecord, comments: Sequence[str] = ()) -> None:
    """Write a record as CSV with header ``t,dN`` (times are interval ends)."""
    times = record.times
    lines = [
        "# format: counting-record v1",
        f"# dt: {record.dt:.17g}",
        f"# t0: {record.t0:.17g}",
    ]
    lines += [f"# {c}" for c in comments]
    lines.append("t,dN")
    lines += [f"{times[i + 1]:.17g},{int(dn)}" for i, dn in enumerate(record.counts)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_counting_record(path) -> CountingRecord:
    """Read a CSV written by :func:`write_counting_record`."""
    dt = None
    t0 = None
    times: list[float] = []
    values: list[int] = []
    saw_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                body = s[1:].strip()
                if body.startswith("dt:"):
                    dt = float(body[3:])
                elif body.startswith("t0:"):
                    t0 = float(body[3:])
                continue
            if not saw_header:
                if s != "t,dN":
                    raise ValueError(f"expected header 't,dN', got {s!r}")
                saw_header = True
                continue
            t_str, dn_str = s.split(",")
            times.append(float(t_str))
            values.append(int(dn_str))
    if not saw_header:
        raise ValueError("file contains no 't,dN' header")
    if dt is None:
        if len(times) < 2:
            raise ValueError("cannot infer dt: need a '# dt:' comment or at least two rows")
        dt = times[1] - times[0]
    if t0 is None:
        t0 = (times[0] - dt) if times else 0.0
    return CountingRecord(dt, np.array(values, dtype=int), t0)


@dataclass
class JumpGauge:
    """Piecewise-constant gauge ``A = C^(-N)``, updated only when a count
    arrives; owned by a single trajectory."""

    c: np.ndarray
    c_inv: np.ndarray
    count: int
    a: np.ndarray
    a_inv: np.ndarray

    @classmethod
    def identity(cls, model) -> "JumpGauge":
        if model.C_inv is None:
            raise ValueError(
                "jump operator C is not invertible: the gauge C^(-N) is undefined"
            )
        n = model.dim
        return cls(
            c=model.C,
            c_inv=model.C_inv,
            count=0,
            a=np.eye(n, dtype=complex),
            a_inv=np.eye(n, dtype=complex),
        )

    def advance(self) -> None:
        """Register one count: ``A -> A C^-1`` and ``A^-1 -> C A^-1``."""
        self.a = self.a @ self.c_inv
        self.a_inv = self.c @ self.a_inv
        self.count += 1


def _sme_advance(model, rho: np.ndarray, dn: int, dt: float):
    """Drift-then-count Euler update of the normalized state.

    Also returns the log of the step's normalization factor, i.e. the trace
    growth the matching linear (unnormalized) step would have produced:
    the drift multiplies the trace by ``1 + dt eta lam (1 - tr(J rho))`` and a
    count multiplies it by ``tr(J rho)`` of the post-drift state.
    """
    C, G, lam, eta = model.C, model.G, model.lam, model.eta
    j_rho = C @ rho @ dagger(C)
    tr_j = float(np.trace(j_rho).real)
    drift = -(G @ rho) - (rho @ dagger(G)) + (1.0 - eta) * lam * j_rho + eta * lam * tr_j * rho
    out = rho + dt * drift
    dlog = float(np.log1p(dt * eta * lam * (1.0 - tr_j)))
    if dn:
        j_out = C @ out @ dagger(C)
        tr_jo = float(np.trace(j_out).real)
        if not np.isfinite(tr_jo) or tr_jo <= 1e-300:
            raise InvalidCountingRecordError(
                f"count arrived where tr(C rho C^dag) = {tr_jo:.3e}: record is invalid for this model"
            )
        dlog += float(np.log(tr_jo / float(np.trace(out).real)))
        out = j_out / tr_jo
    tr = float(np.trace(out).real)
    if not np.isfinite(tr) or tr <= 0.0 or not np.isfinite(out).all():
        raise NonFiniteStateError(message="normalized jump state blew up")
    return (0.5 / tr) * (out + out.conj().T), dlog


def jump_sme_step(model, rho, dn: int, dt: float) -> np.ndarray:
    """One explicit Euler step of the normalized counting-record equation:
    drift ``[-G rho - rho G^dag + (1-eta) lam J rho + eta lam rho tr(J rho)] dt``
    followed, when ``dn = 1``, by the count map ``rho -> J rho / tr(J rho)``,
    then renormalization."""
    if dn not in (0, 1):
        raise ValueError(f"dn must be 0 or 1, got {dn}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    out, _ = _sme_advance(model, as_square(rho), int(dn), float(dt))
    return out


def jump_unnorm_step(model, rho_tilde, dn: int, dt: float) -> np.ndarray:
    """One explicit Euler step of the linear counting-record equation:
    ``rho~ += [-G rho~ - rho~ G^dag + (1-eta) lam J rho~ + eta lam rho~] dt``,
    then ``rho~ -> J rho~`` when ``dn = 1``."""
    if dn not in (0, 1):
        raise ValueError(f"dn must be 0 or 1, got {dn}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    rt = as_square(rho_tilde)
    C, G, lam, eta = model.C, model.G, model.lam, model.eta
    drift = -(G @ rt) - (rt @ dagger(G)) + (1.0 - eta) * lam * (C @ rt @ dagger(C)) + eta * lam * rt
    out = rt + dt * drift
    if dn:
        out = C @ out @ dagger(C)
    if not np.isfinite(out).all():
        raise NonFiniteStateError(message="unnormalized jump state blew up")
    return out


def count_probability(model, rho, dt: float, t: float | None = None) -> float:
    """Per-step count probability ``eta lam tr(C rho C^dag) dt``.

    Raises when the probability reaches 0.1: the per-step Bernoulli
    approximation of the point process degrades there, so decrease ``dt``.
    """
    tr_j = float(np.trace(model.C @ rho @ dagger(model.C)).real)
    p = model.eta * model.lam * tr_j * dt
    if p >= 0.1:
        at = "" if t is None else f" at t = {t:.6g}"
        raise ValueError(f"per-step count probability {p:.3f} >= 0.1{at}; use a smaller dt")
    return p


def sample_counting_record(model, rho0, dt: float, T: float, seed: int, t0: float = 0.0) -> CountingRecord:
    """Sample a counting record with per-step probability
    ``p_n = eta lam tr(C rho C^dag) dt`` computed from the concurrently
    evolved normalized state; deterministic given the seed (one uniform is
    drawn per step, a count registers when ``u < p``)."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(round(T / dt))
    if n < 1:
        raise ValueError(f"time length {T} covers no full step of dt = {dt}")
    rng = np.random.default_rng(seed)
    uniforms = rng.random(n)
    rho = _normalized_density(rho0)
    counts = np.zeros(n, dtype=int)
    for k in range(n):
        p = count_probability(model, rho, dt, t0 + k * dt)
        dn = 1 if uniforms[k] < p else 0
        counts[k] = dn
        rho, _ = _sme_advance(model, rho, dn, dt)
    return CountingRecord(dt, counts, t0)


def jump_pathwise_solve(model, record: CountingRecord, r0, substeps: int = 4):
    """Integrate the gauge-frame flow along a counting record.

    Between counts the gauge is constant and ``r`` obeys
    ``dr/dt = -S r - r S^dag + (1-eta) lam C r C^dag + eta lam r`` with
    ``S = A G A^-1``; at each count only the gauge advances (``r`` itself is
    continuous).  Returns the ``r`` path and the recovered normalized states
    ``rho = A^-1 r A^-dag / tr`` with ``log_lambda = log tr``.

    Requires an invertible jump operator; the model builder records this.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    gauge = JumpGauge.identity(model)
    r = require_hermitian(r0, "r0").copy()
    if float(np.trace(r).real) <= 0.0:
        raise ValueError("r0 must have positive trace")
    C, G, lam, eta = model.C, model.G, model.lam, model.eta
    cd = dagger(C)

    def make_rhs(gauge_state: JumpGauge):
        s = gauge_state.a @ G @ gauge_state.a_inv
        sd = dagger(s)

        def rhs(_t, rr):
            return -(s @ rr) - (rr @ sd) + (1.0 - eta) * lam * (C @ rr @ cd) + eta * lam * rr

        return rhs

    rhs = make_rhs(gauge)
    h = record.dt / substeps
    times = record.times

    def recovered_state(t: float) -> DensityState:
        rec = recover(gauge.a_inv, r)
        return DensityState(0.5 * (rec.rho + dagger(rec.rho)), rec.log_lambda, t)

    r_path = [PathwiseState(r.copy(), float(times[0]))]
    recovered = [recovered_state(float(times[0]))]
    for k, dn in enumerate(record.counts):
        for _ in range(substeps):
            r = rk4_step(rhs, 0.0, r, h)
        r = 0.5 * (r + dagger(r))
        if not np.isfinite(r).all():
            raise NonFiniteStateError(float(times[k + 1]), "gauge-frame jump state blew up")
        if dn:
            gauge.advance()
            rhs = make_rhs(gauge)
        r_path.append(PathwiseState(r.copy(), float(times[k + 1])))
        recovered.append(recovered_state(float(times[k + 1])))
    return r_path, recovered


def jump_pathwise_schrodinger_rhs(model, a_t, a_t_inv, phi) -> np.ndarray:
    """Pure-state reduction of the gauge-frame flow,
    ``dphi/dt = (-A G A^-1 + (lam/2) I) phi``; valid only for eta = 1."""
    if abs(model.eta - 1.0) > 1e-12:
        raise ValueError(
            f"jump pathwise Schrodinger reduction requires eta = 1, got eta = {model.eta}"
        )
    op = -(a_t @ model.G @ a_t_inv) + 0.5 * model.lam * np.eye(model.dim, dtype=complex)
    return op @ np.asarray(phi, dtype=complex)
