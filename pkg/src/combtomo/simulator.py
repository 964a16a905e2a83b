"""Forward simulation: intermediate-state recursion, synthetic CIS sets and datasets."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

from .cis import (PAULIS, CISSet, Comb, DimensionProfile, Instrument, ProfileError, StatePrep,
                  UnsupportedDimensionError, state_density)
from .stiefel import random_stiefel
from .tensor import DimensionError, partial_trace

AXES = {"x": 1, "y": 2, "z": 3}


@dataclass(frozen=True)
class OutcomeSequence:
    u: int
    v: tuple
    x: tuple

    def __post_init__(self):
        if len(self.v) != len(self.x) or not self.v:
            raise ValueError("instrument and outcome sequences must be non-empty and equally long")

    @property
    def length(self) -> int:
        return len(self.v)


@dataclass(frozen=True)
class ExperimentRecord:
    sequence: OutcomeSequence
    value: float
    kind: str = "exact"
    shots: int = 0


@dataclass
class Dataset:
    records: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)


# --- recursion --------------------------------------------------------------

def step_comb(eta: np.ndarray, v: np.ndarray) -> np.ndarray:
    """eta on (i_t, a_t) -> V eta V^dag on (o_t, a_{t+1})."""
    if v.shape[1] != eta.shape[0]:
        raise DimensionError(f"isometry {v.shape} cannot act on state of size {eta.shape[0]}")
    return v @ eta @ v.conj().T


def step_instrument(eta: np.ndarray, w: np.ndarray, d_sys_out: int, d_anc: int) -> np.ndarray:
    """Apply one branch to the system factor of eta on (o_t, a) and trace its environment."""
    d_sys_in = w.shape[1]
    if eta.shape[0] != d_sys_in * d_anc:
        raise DimensionError(f"state of size {eta.shape[0]} is not ({d_sys_in} x {d_anc})")
    d_env = w.shape[0] // d_sys_out
    lifted = np.kron(w, np.eye(d_anc))  # (s, e, a) <- (o, a)
    out = lifted @ eta @ lifted.conj().T
    return partial_trace(out, [d_sys_out, d_env, d_anc], 1)


def _check_sequence(cis: CISSet, seq: OutcomeSequence) -> None:
    p = cis.profile
    if not 0 <= seq.u < p.n_states:
        raise IndexError(f"state index {seq.u} out of range")
    if seq.length > p.n_steps:
        raise IndexError(f"sequence of length {seq.length} exceeds {p.n_steps} steps")
    for t, (v, x) in enumerate(zip(seq.v, seq.x)):
        if not 0 <= v < p.n_instruments(t):
            raise IndexError(f"slot {t}: instrument {v} out of range")
        if not 0 <= x < p.n_branches(t, v):
            raise IndexError(f"slot {t}: outcome {x} out of range for instrument {v}")


def intermediate_states(cis: CISSet, seq: OutcomeSequence) -> list[tuple[np.ndarray, np.ndarray]]:
    """(eta_in, eta_out) for every slot of the sequence."""
    _check_sequence(cis, seq)
    p = cis.profile
    eta = state_density(cis.states[seq.u])
    out = []
    for t, (v, x) in enumerate(zip(seq.v, seq.x)):
        eta_in = step_comb(eta, cis.comb.isometries[t])
        w = cis.instruments[t][v].branches[x]
        eta = step_instrument(eta_in, w, p.d_in[t + 1], p.d_anc[t + 1])
        out.append((eta_in, eta))
    return out


def probability(cis: CISSet, seq: OutcomeSequence) -> float:
    eta = intermediate_states(cis, seq)[-1][1]
    return float(np.trace(eta).real)


def prefix_distribution(cis: CISSet, u: int, v_seq: Sequence[int], length: int) -> dict:
    """Probabilities of every outcome tuple of the given prefix length."""
    v_seq = tuple(v_seq[:length])
    p = cis.profile
    if not 1 <= length <= p.n_steps or len(v_seq) != length:
        raise IndexError(f"prefix length {length} invalid")
    ranges = [range(p.n_branches(t, v)) for t, v in enumerate(v_seq)]
    return {xs: probability(cis, OutcomeSequence(u, v_seq, xs)) for xs in itertools.product(*ranges)}


# --- synthetic instruments ----------------------------------------------------

def rotation(axis: str, angle: float) -> np.ndarray:
    """exp(-i angle sigma_axis / 2)."""
    return expm(-0.5j * angle * PAULIS[AXES[axis.lower()]])


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S = np.diag([1, 1j])
# single-qubit Clifford representatives modulo Paulis: I, H, S, HS, SH, HSH
_CLIFFORD_REPS = (np.eye(2, dtype=complex), _H, _S, _H @ _S, _S @ _H, _H @ _S @ _H)
# basis change taking Z, X, Y eigenbases to the computational basis
_BASIS_TO_Z = {"z": np.eye(2, dtype=complex), "x": _H, "y": _H @ _S.conj().T}
BASES = ("z", "x", "y")


def clifford_group() -> list[np.ndarray]:
    """The 24 single-qubit Cliffords; the first six are the coset representatives."""
    return [pauli @ rep for pauli in PAULIS for rep in _CLIFFORD_REPS]


def measurement_instrument(basis: str, unitary: np.ndarray | None = None) -> Instrument:
    """Unitary followed by a projective measurement; outcome x leaves the projected state."""
    u_b = _BASIS_TO_Z[basis]
    c = np.eye(2) if unitary is None else unitary
    ws = []
    for x in range(2):
        ket = u_b.conj().T[:, [x]]
        ws.append(ket @ ket.conj().T @ c)
    return Instrument.from_branches(ws, 2)


def standard_instrument_set(d: int = 2) -> list[Instrument]:
    """72 two-outcome instruments: each Clifford followed by a Z, X or Y measurement.

    Instrument ``3*c + b`` uses Clifford ``c`` and basis ``BASES[b]``.
    """
    if d != 2:
        raise UnsupportedDimensionError("the standard instrument set is defined for qubits")
    return [measurement_instrument(b, c) for c in clifford_group() for b in BASES]


def perturb_instrument(ins: Instrument, axis: str, angle: float, part: str = "input") -> Instrument:
    """Rotate an instrument by exp(-i angle sigma/2).

    ``part="input"`` composes every branch with the rotation on the system input
    (W -> W R); ``part="frame"`` conjugates the branch (W -> (R (x) 1_e) W R^dag),
    which for a bare measurement tilts the measured projectors.
    """
    if ins.d_sys_in != 2:
        raise UnsupportedDimensionError("perturbations are defined for qubit instruments")
    r = rotation(axis, angle)
    if part == "input":
        return Instrument(ins.stack @ r, ins.d_sys_out, ins.d_env)
    if part == "frame":
        ws = [np.kron(r, np.eye(e)) @ w @ r.conj().T for w, e in zip(ins.branches, ins.d_env)]
        return Instrument.from_branches(ws, ins.d_sys_out, ins.d_env)
    raise ValueError(f"unknown perturbation part {part!r}")


def perturb_state(s: StatePrep, axis: str, angle: float) -> StatePrep:
    r = np.kron(rotation(axis, angle), np.eye(s.d_ref))
    return StatePrep(r @ s.purification, s.d_sys, s.d_ref)


def standard_states(n_states: int = 4) -> list[StatePrep]:
    """|0>, |1>, |+>, |+i> (cycled) as pure purifications with trivial reference."""
    kets = [np.array([1, 0]), np.array([0, 1]), np.array([1, 1]) / np.sqrt(2),
            np.array([1, 1j]) / np.sqrt(2)]
    return [StatePrep(np.asarray(kets[u % 4], dtype=complex).reshape(2, 1), 2, 1)
            for u in range(n_states)]


def random_comb(profile: DimensionProfile, seed=None) -> Comb:
    for t in range(profile.n_steps):
        rows, cols = profile.comb_shape(t)
        if rows < cols:
            raise ProfileError(f"slot {t}: infeasible comb dimensions")
    rng = np.random.default_rng(seed)
    isos = tuple(random_stiefel(*profile.comb_shape(t), seed=rng) for t in range(profile.n_steps))
    return Comb(isos, profile.d_in[:profile.n_steps], profile.d_out, profile.d_anc)


def random_cis(profile: DimensionProfile, seed=None) -> CISSet:
    """A CIS set with every factor drawn uniformly on its Stiefel manifold."""
    rng = np.random.default_rng(seed)
    point = [random_stiefel(*shape, seed=rng) for shape in profile.factor_shapes()]
    return CISSet.from_point(profile, point)


@dataclass
class Perturbation:
    """Which parts of the nominal set are rotated, and by how much."""

    angle: float = 0.5
    axis: str = "x"
    states: tuple = (0,)
    unitary_instruments: tuple = (1, 2)
    measurement_instruments: tuple = (0,)


def standard_cis(profile: DimensionProfile, comb: Comb,
                 perturbation: Perturbation | None = None) -> CISSet:
    """Qubit CIS set built from the first instruments of the 72-element set.

    Every slot uses the same (optionally perturbed) instruments, as a physical
    device would.
    """
    if any(d != 2 for d in profile.d_in + profile.d_out):
        raise UnsupportedDimensionError("standard CIS sets are qubit-only")
    full = standard_instrument_set()
    states = standard_states(profile.n_states)
    pert = perturbation
    slots = []
    for t in range(profile.n_steps):
        n = profile.n_instruments(t)
        if n > len(full) or any(len(profile.d_env[t][v]) != 2 or set(profile.d_env[t][v]) != {1}
                                for v in range(n)):
            raise ProfileError("standard instruments need <= 72 two-branch instruments with d_env = 1")
        row = list(full[:n])
        if pert is not None and pert.angle != 0:
            for v in pert.unitary_instruments:
                if v < n:
                    row[v] = perturb_instrument(row[v], pert.axis, pert.angle, "input")
            for v in pert.measurement_instruments:
                if v < n:
                    row[v] = perturb_instrument(row[v], pert.axis, pert.angle, "frame")
        slots.append(tuple(row))
    if pert is not None and pert.angle != 0:
        states = [perturb_state(s, pert.axis, pert.angle) if u in pert.states else s
                  for u, s in enumerate(states)]
    if any(s.d_ref != r for s, r in zip(states, profile.d_ref)):
        states = [StatePrep(np.kron(s.purification, _e0(r)), 2, r) for s, r in zip(states, profile.d_ref)]
    return CISSet(profile, comb, tuple(slots), tuple(states))


def _e0(d: int) -> np.ndarray:
    e = np.zeros((d, 1), dtype=complex)
    e[0, 0] = 1
    return e


# --- datasets ---------------------------------------------------------------

@dataclass
class Scheme:
    """Which (state, instrument tuple, prefix length) groups are measured.

    ``max_tuples=None`` enumerates every instrument tuple; otherwise at most
    that many (state, tuple) groups are drawn uniformly per prefix length.
    """

    max_tuples: int | None = None
    prefix_lengths: tuple | None = None  # None: all lengths 1..N
    seed: int = 0


def experiment_groups(profile: DimensionProfile, scheme: Scheme) -> list[tuple[int, tuple]]:
    lengths = scheme.prefix_lengths or tuple(range(1, profile.n_steps + 1))
    groups = []
    rng = np.random.default_rng([scheme.seed, 7919])
    for length in lengths:
        if not 1 <= length <= profile.n_steps:
            raise ValueError(f"prefix length {length} out of range")
        sizes = [profile.n_states] + [profile.n_instruments(t) for t in range(length)]
        total = int(np.prod(sizes))
        if scheme.max_tuples is None or scheme.max_tuples >= total:
            flat = range(total)
        else:
            flat = np.sort(rng.choice(total, size=scheme.max_tuples, replace=False))
        for k in flat:
            idx = np.unravel_index(int(k), sizes)
            groups.append((int(idx[0]), tuple(int(i) for i in idx[1:])))
    return groups


def group_distribution(cis: CISSet, u: int, v_seq: tuple) -> dict:
    return prefix_distribution(cis, u, v_seq, len(v_seq))


def _group_records(cis, index, u, v_seq, shots, seed):
    dist = group_distribution(cis, u, v_seq)
    outcomes = list(dist)
    if shots:
        probs = np.clip(np.array([dist[o] for o in outcomes]), 0, None)
        rng = np.random.default_rng([seed, index])
        counts = rng.multinomial(shots, probs / probs.sum())
        return [ExperimentRecord(OutcomeSequence(u, v_seq, o), int(c) / shots, "frequency", shots)
                for o, c in zip(outcomes, counts)]
    return [ExperimentRecord(OutcomeSequence(u, v_seq, o), dist[o]) for o in outcomes]


def generate_dataset(cis: CISSet, scheme: Scheme | None = None, shots: int | None = None,
                     seed: int = 0, executor=None) -> Dataset:
    """Exact probabilities (``shots=None``) or multinomial frequencies per group.

    Each group draws from its own stream seeded by ``(seed, group index)``, so an
    ``executor`` may evaluate groups in any order without changing the output.
    """
    if shots is not None and shots <= 0:
        raise ValueError("frequency mode needs a positive shot count")
    scheme = scheme or Scheme(seed=seed)
    groups = experiment_groups(cis.profile, scheme)
    args = [(cis, k, u, v, shots or 0, seed) for k, (u, v) in enumerate(groups)]
    if executor is None:
        chunks = [_group_records(*a) for a in args]
    else:
        chunks = list(executor.map(_group_records, *zip(*args))) if args else []
    records = [r for chunk in chunks for r in chunk]
    meta = {"seed": seed, "shots": shots or 0, "kind": "frequency" if shots else "exact",
            "max_tuples": scheme.max_tuples, "scheme_seed": scheme.seed, "groups": len(groups)}
    return Dataset(records, meta)


def group_sums(data: Dataset) -> dict:
    sums: dict = {}
    for r in data.records:
        key = (r.sequence.u, r.sequence.v)
        sums[key] = sums.get(key, 0.0) + r.value
    return sums


def iter_sequences(data: Dataset) -> Iterable[OutcomeSequence]:
    return (r.sequence for r in data.records)
