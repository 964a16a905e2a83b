"""Comb-instrument-state (CIS) sets, their Choi representations and constraint checks.

Conventions used throughout the package:

* Comb isometry ``V[t]`` is stored as a ``(d_out[t]*d_anc[t+1]) x (d_in[t]*d_anc[t])``
  matrix with orthonormal columns. Input basis is ``i_t (x) a_t``, output basis is
  ``o_t (x) a_{t+1}``.
* Instrument branch ``W_x`` at slot ``t`` maps ``o_t`` to ``i_{t+1} (x) e_x``; the
  branches of one instrument are stacked vertically into a single Stiefel point.
* A state is a purification ``S`` of shape ``(d_in[0]*d_ref, 1)`` on ``i_0 (x) r``.
* Choi operators are ordered (output, input) and use the transposed-input rule
  ``A(rho) = Tr_in[A (1 (x) rho^T)]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .stiefel import orthonormality_residual
from .tensor import DimensionError, frobenius_norm, partial_trace

PAULIS = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


class ProfileError(ValueError):
    """Inconsistent or infeasible dimension profile."""


class UnsupportedDimensionError(ValueError):
    pass


def parse_ancillas(spec: str | Sequence[int], n_steps: int) -> tuple[int, ...]:
    """Parse a dash string like ``"1-2-3"`` into ``n_steps + 1`` ancilla dimensions.

    Missing trailing entries repeat the last one, so ``"1-2"`` with two steps
    gives ``(1, 2, 2)``.
    """
    if isinstance(spec, str):
        try:
            dims = [int(s) for s in spec.strip().split("-")]
        except ValueError as exc:
            raise ProfileError(f"bad ancilla string {spec!r}") from exc
    else:
        dims = [int(s) for s in spec]
    if not dims or len(dims) > n_steps + 1:
        raise ProfileError(f"ancilla spec {spec!r} does not fit {n_steps} steps")
    dims += [dims[-1]] * (n_steps + 1 - len(dims))
    return tuple(dims)


@dataclass(frozen=True)
class DimensionProfile:
    """All dimensions of a CIS set.

    ``d_in`` has ``n_steps + 1`` entries: ``d_in[t]`` enters comb slot ``t`` and
    ``d_in[n_steps]`` is the output of the last instrument. ``d_env[t][v][x]`` is
    the environment dimension of branch ``x`` of instrument ``v`` at slot ``t``.
    """

    n_steps: int
    d_in: tuple
    d_out: tuple
    d_anc: tuple
    d_env: tuple
    d_ref: tuple

    def __post_init__(self):
        n = self.n_steps
        if n < 1:
            raise ProfileError("need at least one time step")
        if len(self.d_in) != n + 1 or len(self.d_out) != n or len(self.d_anc) != n + 1:
            raise ProfileError("d_in/d_anc need n_steps+1 entries, d_out needs n_steps")
        if len(self.d_env) != n or not self.d_ref:
            raise ProfileError("need instrument sets for every slot and at least one state")
        flat = list(self.d_in) + list(self.d_out) + list(self.d_anc) + list(self.d_ref)
        flat += [d for slot in self.d_env for ins in slot for d in ins]
        if any(int(d) < 1 for d in flat):
            raise ProfileError("all dimensions must be >= 1")
        if self.d_anc[0] != 1:
            raise ProfileError("the initial comb ancilla must be trivial (d_anc[0] = 1)")
        for t in range(n):
            if self.d_out[t] * self.d_anc[t + 1] < self.d_in[t] * self.d_anc[t]:
                raise ProfileError(f"slot {t}: no isometry from dim "
                                   f"{self.d_in[t] * self.d_anc[t]} into {self.d_out[t] * self.d_anc[t + 1]}")
            if not self.d_env[t] or any(len(ins) < 1 for ins in self.d_env[t]):
                raise ProfileError(f"slot {t}: empty instrument set or instrument without branches")

    @classmethod
    def uniform(cls, n_steps: int, d: int = 2, ancillas: str | Sequence[int] = "1",
                n_instruments: int = 12, n_branches: int = 2, d_env: int = 1,
                n_states: int = 4, d_ref: int = 1) -> "DimensionProfile":
        env = tuple(tuple((d_env,) * n_branches for _ in range(n_instruments)) for _ in range(n_steps))
        return cls(n_steps, (d,) * (n_steps + 1), (d,) * n_steps, parse_ancillas(ancillas, n_steps),
                   env, (d_ref,) * n_states)

    @property
    def n_states(self) -> int:
        return len(self.d_ref)

    def n_instruments(self, t: int) -> int:
        return len(self.d_env[t])

    def n_branches(self, t: int, v: int) -> int:
        return len(self.d_env[t][v])

    def comb_shape(self, t: int) -> tuple[int, int]:
        return self.d_out[t] * self.d_anc[t + 1], self.d_in[t] * self.d_anc[t]

    def instrument_shape(self, t: int, v: int) -> tuple[int, int]:
        return sum(self.d_in[t + 1] * e for e in self.d_env[t][v]), self.d_out[t]

    def state_shape(self, u: int) -> tuple[int, int]:
        return self.d_in[0] * self.d_ref[u], 1

    def factor_shapes(self) -> list[tuple[int, int]]:
        """Shapes of the flattened product point: comb, then instruments (t, v), then states."""
        shapes = [self.comb_shape(t) for t in range(self.n_steps)]
        shapes += [self.instrument_shape(t, v) for t in range(self.n_steps)
                   for v in range(self.n_instruments(t))]
        shapes += [self.state_shape(u) for u in range(self.n_states)]
        return shapes

    def to_dict(self) -> dict:
        return {"n_steps": self.n_steps, "d_in": list(self.d_in), "d_out": list(self.d_out),
                "d_anc": list(self.d_anc), "d_env": [[list(i) for i in s] for s in self.d_env],
                "d_ref": list(self.d_ref)}

    @classmethod
    def from_dict(cls, doc: dict) -> "DimensionProfile":
        return cls(int(doc["n_steps"]), tuple(doc["d_in"]), tuple(doc["d_out"]), tuple(doc["d_anc"]),
                   tuple(tuple(tuple(i) for i in s) for s in doc["d_env"]), tuple(doc["d_ref"]))


@dataclass(frozen=True)
class Comb:
    isometries: tuple
    d_in: tuple
    d_out: tuple
    d_anc: tuple

    @property
    def n_steps(self) -> int:
        return len(self.isometries)


@dataclass(frozen=True)
class Instrument:
    """Stinespring blocks of all branches of one instrument, stacked vertically."""

    stack: np.ndarray
    d_sys_out: int
    d_env: tuple

    def __post_init__(self):
        rows = sum(self.d_sys_out * e for e in self.d_env)
        if self.stack.shape[0] != rows:
            raise DimensionError(f"stack has {self.stack.shape[0]} rows, branches need {rows}")

    @property
    def d_sys_in(self) -> int:
        return self.stack.shape[1]

    @property
    def n_branches(self) -> int:
        return len(self.d_env)

    @property
    def branches(self) -> list[np.ndarray]:
        out, row = [], 0
        for e in self.d_env:
            n = self.d_sys_out * e
            out.append(self.stack[row:row + n])
            row += n
        return out

    @classmethod
    def from_branches(cls, ws: Sequence[np.ndarray], d_sys_out: int,
                      d_env: Sequence[int] | None = None) -> "Instrument":
        ws = [np.asarray(w, dtype=complex) for w in ws]
        if d_env is None:
            d_env = [w.shape[0] // d_sys_out for w in ws]
        return cls(np.vstack(ws), d_sys_out, tuple(d_env))


@dataclass(frozen=True)
class StatePrep:
    purification: np.ndarray
    d_sys: int
    d_ref: int


@dataclass(frozen=True)
class CISSet:
    profile: DimensionProfile
    comb: Comb
    instruments: tuple  # instruments[t][v] -> Instrument
    states: tuple

    def to_point(self) -> list[np.ndarray]:
        point = list(self.comb.isometries)
        point += [ins.stack for slot in self.instruments for ins in slot]
        point += [s.purification for s in self.states]
        return point

    @classmethod
    def from_point(cls, profile: DimensionProfile, point: Sequence[np.ndarray]) -> "CISSet":
        point = [np.asarray(x, dtype=complex) for x in point]
        shapes = profile.factor_shapes()
        if len(point) != len(shapes) or any(x.shape != s for x, s in zip(point, shapes)):
            raise DimensionError("product point does not match the dimension profile")
        n = profile.n_steps
        comb = Comb(tuple(point[:n]), profile.d_in[:n], profile.d_out, profile.d_anc)
        k = n
        slots = []
        for t in range(n):
            row = []
            for v in range(profile.n_instruments(t)):
                row.append(Instrument(point[k], profile.d_in[t + 1], profile.d_env[t][v]))
                k += 1
            slots.append(tuple(row))
        states = tuple(StatePrep(point[k + u], profile.d_in[0], profile.d_ref[u])
                       for u in range(profile.n_states))
        return cls(profile, comb, tuple(slots), states)

    def replace_instruments(self, instruments) -> "CISSet":
        return CISSet(self.profile, self.comb, tuple(tuple(s) for s in instruments), self.states)

    def replace_states(self, states) -> "CISSet":
        return CISSet(self.profile, self.comb, self.instruments, tuple(states))

    def replace_comb(self, isometries) -> "CISSet":
        c = self.comb
        return CISSet(self.profile, Comb(tuple(isometries), c.d_in, c.d_out, c.d_anc),
                      self.instruments, self.states)


def comb_factor_indices(profile: DimensionProfile) -> list[int]:
    return list(range(profile.n_steps))


def instrument_factor_index(profile: DimensionProfile, t: int, v: int) -> int:
    return profile.n_steps + sum(profile.n_instruments(s) for s in range(t)) + v


def state_factor_index(profile: DimensionProfile, u: int) -> int:
    return profile.n_steps + sum(profile.n_instruments(s) for s in range(profile.n_steps)) + u


# --- states ---------------------------------------------------------------

def state_density(s: StatePrep) -> np.ndarray:
    psi = s.purification.reshape(-1)
    return partial_trace(np.outer(psi, psi.conj()), [s.d_sys, s.d_ref], 1)


def state_from_density(rho: np.ndarray, d_ref: int | None = None) -> StatePrep:
    """Purify ``rho`` on ``sys (x) ref`` using its eigendecomposition."""
    w, u = np.linalg.eigh(rho)
    w = np.clip(w, 0, None)
    d = rho.shape[0]
    d_ref = d_ref or d
    order = np.argsort(w)[::-1][:d_ref]
    psi = np.zeros((d, d_ref), dtype=complex)
    for k, j in enumerate(order):
        psi[:, k] = np.sqrt(w[j]) * u[:, j]
    psi /= np.linalg.norm(psi)
    return StatePrep(psi.reshape(-1, 1), d, d_ref)


# --- instruments ----------------------------------------------------------

def kraus_tensor(w: np.ndarray, d_sys_out: int) -> np.ndarray:
    """Branch block ``W`` as a tensor ``K[s, e, o]``."""
    return w.reshape(d_sys_out, -1, w.shape[1])


def apply_branch(w: np.ndarray, d_sys_out: int, rho: np.ndarray) -> np.ndarray:
    """Tr_e[W rho W^dag]."""
    d_env = w.shape[0] // d_sys_out
    return partial_trace(w @ rho @ w.conj().T, [d_sys_out, d_env], 1)


def branch_choi(w: np.ndarray, d_sys_out: int) -> np.ndarray:
    """Choi operator on (i_{t+1}, o_t) of rho -> Tr_e[W rho W^dag]."""
    k = kraus_tensor(np.asarray(w, dtype=complex), d_sys_out)
    s, _, o = k.shape
    return np.einsum("sej,tek->sjtk", k, k.conj()).reshape(s * o, s * o)


def apply_choi(a: np.ndarray, d_out: int, d_in: int, rho: np.ndarray) -> np.ndarray:
    """Tr_in[A (1 (x) rho^T)] for a Choi operator ordered (output, input)."""
    return partial_trace(a @ np.kron(np.eye(d_out), rho.T), [d_out, d_in], 1)


def check_instrument(ins: Instrument) -> dict:
    """CP floor (smallest Choi eigenvalue over branches) and TP residual."""
    chois = [branch_choi(w, ins.d_sys_out) for w in ins.branches]
    floor = min(float(np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0]) for a in chois)
    total = sum(partial_trace(a, [ins.d_sys_out, ins.d_sys_in], 0) for a in chois)
    return {"cp_floor": floor, "tp_residual": frobenius_norm(total - np.eye(ins.d_sys_in))}


# --- combs ----------------------------------------------------------------

def _comb_operator(c: Comb, upto_t: int) -> np.ndarray:
    """The chained isometry as a tensor K[O, a_t, I] with O = o_0..o_{t-1}, I = i_0..i_{t-1}."""
    k = np.ones((1, 1, 1), dtype=complex)
    for s in range(upto_t):
        v = c.isometries[s].reshape(c.d_out[s], c.d_anc[s + 1], c.d_in[s], c.d_anc[s])
        k = np.einsum("pqia,OaI->OpqIi", v, k)
        o, p, q, i, j = k.shape
        k = k.reshape(o * p, q, i * j)
    return k


def comb_choi(c: Comb, upto_t: int) -> np.ndarray:
    """Choi operator of the first ``upto_t`` slots, ordered (o_0..o_{t-1}, i_0..i_{t-1})."""
    if not 1 <= upto_t <= c.n_steps:
        raise ValueError(f"upto_t must lie in [1, {c.n_steps}]")
    k = _comb_operator(c, upto_t)
    o, _, i = k.shape
    return np.einsum("OaI,PaJ->OIPJ", k, k.conj()).reshape(o * i, o * i)


def check_causality(c: Comb) -> list[float]:
    """Residuals ||Tr_{o_t} Y(t+1) - 1_{i_t} (x) Y(t)||_F for t = 0..N-1."""
    residuals = []
    prev = np.ones((1, 1, 1, 1), dtype=complex)  # Y(0) as [O, I, O', I']
    for t in range(c.n_steps):
        y = comb_choi(c, t + 1)
        o_prev, i_prev = prev.shape[0], prev.shape[1]
        do, di = c.d_out[t], c.d_in[t]
        y = y.reshape(o_prev, do, i_prev, di, o_prev, do, i_prev, di)
        reduced = np.einsum("AoBiCoDj->ABiCDj", y)
        expected = np.einsum("ABCD,ij->ABiCDj", prev, np.eye(di))
        residuals.append(frobenius_norm(reduced - expected))
        prev = y.reshape(o_prev * do, i_prev * di, o_prev * do, i_prev * di)
    return residuals


def comb_rank(c: Comb, upto_t: int, rel_tol: float = 1e-10) -> int:
    sv = np.linalg.svd(comb_choi(c, upto_t), compute_uv=False)
    return int(np.sum(sv > rel_tol * sv[0]))


# --- whole-set validation -------------------------------------------------

def check_state(s: StatePrep) -> dict:
    rho = state_density(s)
    return {"psd_floor": float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]),
            "trace_residual": abs(np.trace(rho).real - 1.0)}


def validate_cis(cis: CISSet) -> dict:
    """Worst-case residuals of every physicality constraint.

    ``max_residual`` aggregates causality, trace preservation, state trace and
    negative parts of the CP/PSD floors.
    """
    causal = check_causality(cis.comb)
    ins_reports = [check_instrument(ins) for slot in cis.instruments for ins in slot]
    st_reports = [check_state(s) for s in cis.states]
    comb_floor = min(float(np.linalg.eigvalsh(comb_choi(cis.comb, cis.comb.n_steps))[0]), 0.0)
    out = {
        "causality": max(causal),
        "comb_cp_floor": comb_floor,
        "instrument_tp": max(r["tp_residual"] for r in ins_reports),
        "instrument_cp_floor": min(r["cp_floor"] for r in ins_reports),
        "state_trace": max(r["trace_residual"] for r in st_reports),
        "state_psd_floor": min(r["psd_floor"] for r in st_reports),
    }
    out["max_residual"] = max(out["causality"], out["instrument_tp"], out["state_trace"],
                              -out["comb_cp_floor"], -out["instrument_cp_floor"],
                              -out["state_psd_floor"])
    return out


def max_orthonormality_residual(point: Sequence[np.ndarray]) -> float:
    return max(orthonormality_residual(x) for x in point)


# --- Pauli transfer matrices ----------------------------------------------

def ptm_of_map(apply, d: int = 2) -> np.ndarray:
    if d != 2:
        raise UnsupportedDimensionError("PTMs are implemented for qubits only")
    r = np.empty((4, 4))
    for k, pk in enumerate(PAULIS):
        out = apply(pk)
        for j, pj in enumerate(PAULIS):
            r[j, k] = 0.5 * np.trace(pj @ out).real
    return r


def ptm_of_branch(w: np.ndarray, d_sys_out: int) -> np.ndarray:
    if d_sys_out != 2 or w.shape[1] != 2:
        raise UnsupportedDimensionError("PTMs are implemented for qubit branches only")
    return ptm_of_map(lambda rho: apply_branch(w, d_sys_out, rho))


def ptm_differences(a: Sequence[Sequence[Instrument]], b: Sequence[Sequence[Instrument]]) -> list[tuple]:
    """Per-branch ``(slot, instrument, branch, ||PTM_a - PTM_b||_F)`` rows."""
    if len(a) != len(b):
        raise DimensionError("instrument sets have different numbers of slots")
    rows = []
    for t, (sa, sb) in enumerate(zip(a, b)):
        if len(sa) != len(sb):
            raise DimensionError(f"slot {t}: instrument counts differ")
        for v, (ia, ib) in enumerate(zip(sa, sb)):
            if ia.n_branches != ib.n_branches:
                raise DimensionError(f"slot {t}, instrument {v}: branch counts differ")
            for x, (wa, wb) in enumerate(zip(ia.branches, ib.branches)):
                diff = ptm_of_branch(wa, ia.d_sys_out) - ptm_of_branch(wb, ib.d_sys_out)
                rows.append((t, v, x, frobenius_norm(diff)))
    return rows


def delta_ptm(a, b) -> float:
    """Mean Frobenius PTM difference over all slots, instruments and branches."""
    rows = ptm_differences(a, b)
    return float(np.mean([r[3] for r in rows])) if rows else 0.0
