"""Least-squares CIS reconstruction by Riemannian ADAM on the product Stiefel manifold.

Loss and gradient are evaluated on a prefix tree of the dataset: every distinct
(state, instrument prefix, outcome prefix) is a node, intermediate states are
propagated level by level in batches, and the adjoint sweep runs the same tree
backwards. Gradients use the convention G = 2 dF/d(conj X), so the directional
derivative of the loss along a perturbation D is Re Tr(G^dag D).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cis import (CISSet, DimensionProfile, comb_factor_indices, instrument_factor_index,
                  state_factor_index)
from .simulator import Dataset, Scheme, generate_dataset, random_cis
from .stiefel import (AdamConfig, AdamState, NumericError, adam_step, cayley_retract,
                      orthonormality_residual, project_tangent, random_stiefel,
                      riemannian_grad_norm)

log = logging.getLogger(__name__)


@dataclass
class LossReport:
    total: float
    by_length: dict
    n_records: int


def _scatter(targets: np.ndarray, n_targets: int) -> sp.csr_matrix:
    n = len(targets)
    return sp.csr_matrix((np.ones(n), (targets, np.arange(n))), shape=(n_targets, n))


class Evaluator:
    """Loss and Euclidean gradient of one dataset, compiled for a fixed profile."""

    def __init__(self, profile: DimensionProfile, data: Dataset):
        self.profile = profile
        p = profile
        if not data.records:
            raise ValueError("empty dataset")
        self.depth = max(r.sequence.length for r in data.records)
        if self.depth > p.n_steps:
            raise IndexError("dataset sequences are longer than the profile allows")
        # branch tables: slot t -> flat index of (v, x)
        self.branch_index = []
        self.branch_list = []
        for t in range(p.n_steps):
            table, items = {}, []
            for v in range(p.n_instruments(t)):
                for x in range(p.n_branches(t, v)):
                    table[(v, x)] = len(items)
                    items.append((v, x))
            self.branch_index.append(table)
            self.branch_list.append(items)
        self.e_max = [max(max(ins) for ins in p.d_env[t]) for t in range(p.n_steps)]

        node_maps = [dict() for _ in range(self.depth)]
        parents = [[] for _ in range(self.depth)]
        branches = [[] for _ in range(self.depth)]

        def node(u, v, x):
            level = len(v) - 1
            key = (u, v, x)
            found = node_maps[level].get(key)
            if found is not None:
                return found
            par = u if level == 0 else node(u, v[:-1], x[:-1])
            idx = len(parents[level])
            node_maps[level][key] = idx
            parents[level].append(par)
            try:
                branches[level].append(self.branch_index[level][(v[-1], x[-1])])
            except KeyError:
                raise IndexError(f"slot {level}: instrument/outcome {(v[-1], x[-1])} not in profile")
            return idx

        rec_level, rec_node, target = [], [], []
        for r in data.records:
            s = r.sequence
            if not 0 <= s.u < p.n_states:
                raise IndexError(f"state index {s.u} out of range")
            rec_level.append(s.length - 1)
            rec_node.append(node(s.u, tuple(s.v), tuple(s.x)))
            target.append(r.value)
        self.rec_level = np.asarray(rec_level)
        self.rec_node = np.asarray(rec_node)
        self.target = np.asarray(target, dtype=float)
        self.n_records = len(target)
        self.level_records = [np.flatnonzero(self.rec_level == t) for t in range(self.depth)]

        # Nodes with children need their full outgoing state; leaves only need traces.
        self.parents, self.branches, self.internal = [], [], []
        self.int_parent_scatter, self.int_branch_scatter = [], []
        n_par = p.n_states
        for t in range(self.depth):
            par = np.asarray(parents[t], dtype=np.int64)
            br = np.asarray(branches[t], dtype=np.int64)
            if t + 1 < self.depth:
                internal = np.unique(parents[t + 1])
                remap = np.full(len(par), -1, dtype=np.int64)
                remap[internal] = np.arange(len(internal))
                parents[t + 1] = remap[np.asarray(parents[t + 1], dtype=np.int64)]
            else:
                internal = np.zeros(0, dtype=np.int64)
            self.parents.append(par)
            self.branches.append(br)
            self.internal.append(internal)
            self.int_parent_scatter.append(_scatter(par[internal], n_par))
            self.int_branch_scatter.append(_scatter(br[internal], len(self.branch_list[t])))
            n_par = len(internal)
        self.n_par = [p.n_states] + [len(i) for i in self.internal[:-1]]

    # -- helpers -----------------------------------------------------------

    def _lifted_kraus(self, point, t):
        """Kraus operators of every branch at slot t, lifted by the ancilla: (b, e, s*a, o*a)."""
        p = self.profile
        s_dim, o_dim, a_dim = p.d_in[t + 1], p.d_out[t], p.d_anc[t + 1]
        e_max = self.e_max[t]
        ks = np.zeros((len(self.branch_list[t]), s_dim, e_max, o_dim), dtype=complex)
        b = 0
        for v in range(p.n_instruments(t)):
            stack = point[instrument_factor_index(p, t, v)]
            row = 0
            for e in p.d_env[t][v]:
                n = s_dim * e
                ks[b, :, :e, :] = stack[row:row + n].reshape(s_dim, e, o_dim)
                row += n
                b += 1
        lifted = np.einsum("bseo,ac->besaoc", ks, np.eye(a_dim))
        return lifted.reshape(len(ks), e_max, s_dim * a_dim, o_dim * a_dim)

    def _kraus_grad_to_stacks(self, g_lifted, t, grads):
        p = self.profile
        s_dim, o_dim, a_dim = p.d_in[t + 1], p.d_out[t], p.d_anc[t + 1]
        g = g_lifted.reshape(len(g_lifted), self.e_max[t], s_dim, a_dim, o_dim, a_dim)
        gk = np.einsum("besaoa->bseo", g)
        b = 0
        for v in range(p.n_instruments(t)):
            parts = []
            for e in p.d_env[t][v]:
                parts.append(gk[b, :, :e, :].reshape(s_dim * e, o_dim))
                b += 1
            grads[instrument_factor_index(p, t, v)] = np.vstack(parts)

    # -- main entry point --------------------------------------------------

    def probabilities(self, point: Sequence[np.ndarray]) -> np.ndarray:
        """Model probability of every record, in dataset order."""
        return self._forward(point)[0]

    def _forward(self, point):
        p = self.profile
        s_idx = [state_factor_index(p, u) for u in range(p.n_states)]
        s_mats = [point[i].reshape(p.d_in[0], p.d_ref[u]) for u, i in enumerate(s_idx)]
        eta_prev = np.stack([m @ m.conj().T for m in s_mats])
        cache = []
        probs = []
        for t in range(self.depth):
            v_mat = point[t]
            eta_in = v_mat @ eta_prev @ v_mat.conj().T
            n_par, dim, _ = eta_in.shape
            eta_flat = eta_in.reshape(n_par, dim * dim)
            kl = self._lifted_kraus(point, t)
            effects = np.sum(kl.conj().transpose(0, 1, 3, 2) @ kl, axis=1)
            eff_flat = effects.reshape(len(kl), dim * dim)
            # Tr(M eta) = sum(M * eta^T) and eta^T = conj(eta) for Hermitian eta
            traces = (eta_flat.conj() @ eff_flat.T).real
            probs.append(traces[self.parents[t], self.branches[t]])
            internal = self.internal[t]
            kn = ke = None
            if len(internal):
                kn = kl[self.branches[t][internal]]
                ke = kn @ eta_in[self.parents[t][internal]][:, None]
                eta_out = np.einsum("nexy,nezy->nxz", ke, kn.conj())
            cache.append((eta_prev, eta_flat, kl, eff_flat, kn, ke))
            if len(internal):
                eta_prev = eta_out
        model = np.empty(self.n_records)
        for t in range(self.depth):
            recs = self.level_records[t]
            model[recs] = probs[t][self.rec_node[recs]]
        return model, cache, s_idx, s_mats

    def evaluate(self, point: Sequence[np.ndarray], gradient: bool = True):
        """Return ``(LossReport, grads)``; ``grads`` is None unless requested."""
        model, cache, s_idx, s_mats = self._forward(point)
        if not np.all(np.isfinite(model)):
            bad = int(np.flatnonzero(~np.isfinite(model))[0])
            raise NumericError(f"non-finite probability for record {bad}")
        resid = model - self.target
        sq = resid**2
        by_length = {t + 1: float(np.sum(sq[self.level_records[t]])) for t in range(self.depth)}
        report = LossReport(float(np.sum(sq)), by_length, self.n_records)
        if not gradient:
            return report, None

        grads = [np.zeros_like(x) for x in point]
        lam_children = None
        for t in reversed(range(self.depth)):
            eta_prev_t, eta_flat, kl, eff_flat, kn, ke = cache[t]
            n_par, n_b = self.n_par[t], len(kl)
            dim = kl.shape[3]
            recs = self.level_records[t]
            nodes = self.rec_node[recs]
            # record terms: dF/d eta_out = 2 (p - p_data) 1
            coef = sp.csr_matrix((2.0 * resid[recs], (self.parents[t][nodes], self.branches[t][nodes])),
                                 shape=(n_par, n_b))
            lam_in = (coef @ eff_flat).reshape(n_par, dim, dim)
            weighted = (coef.T @ eta_flat).reshape(n_b, 1, dim, dim)
            g_branch = 2.0 * (kl @ weighted)
            if lam_children is not None:
                n = len(lam_children)
                g_node = 2.0 * (lam_children[:, None] @ ke)
                g_branch = g_branch + (self.int_branch_scatter[t] @ g_node.reshape(n, -1)).reshape(g_branch.shape)
                lam_node = np.sum(kn.conj().transpose(0, 1, 3, 2) @ (lam_children[:, None] @ kn), axis=1)
                lam_in = lam_in + (self.int_parent_scatter[t] @ lam_node.reshape(n, -1)).reshape(lam_in.shape)
            self._kraus_grad_to_stacks(g_branch, t, grads)
            v_mat = point[t]
            grads[t] = 2.0 * np.sum(lam_in @ v_mat @ eta_prev_t, axis=0)
            lam_children = v_mat.conj().T @ lam_in @ v_mat
        for u, (i, m) in enumerate(zip(s_idx, s_mats)):
            grads[i] = (2.0 * lam_children[u] @ m).reshape(-1, 1)
        for k, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in factor {k}")
        return report, grads


def loss(cis: CISSet, data: Dataset) -> LossReport:
    return Evaluator(cis.profile, data).evaluate(cis.to_point(), gradient=False)[0]


def euclidean_gradient(cis: CISSet, data: Dataset) -> list[np.ndarray]:
    return Evaluator(cis.profile, data).evaluate(cis.to_point())[1]


# --- optimizer driver -------------------------------------------------------

@dataclass
class OptimizerConfig:
    gamma1: float = 0.9
    gamma2: float = 0.999
    eps: float = 1e-8
    tau0: float = 0.1
    max_iterations: int = 20000
    gradient_norm_tolerance: float = 1e-5
    loss_tolerance: float | None = None
    log_every: int = 0
    seed: int = 0
    projected_second_moment: bool = False
    amsgrad: bool = False
    tau_decay: float | None = None
    # reject a step whose loss exceeds reject_ratio times the previous loss; None disables
    reject_ratio: float | None = None

    def __post_init__(self):
        if self.reject_ratio is not None and self.reject_ratio < 1:
            raise ValueError("reject_ratio must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.gradient_norm_tolerance <= 0 or (self.loss_tolerance is not None and self.loss_tolerance <= 0):
            raise ValueError("tolerances must be positive")

    def adam(self) -> AdamConfig:
        return AdamConfig(self.gamma1, self.gamma2, self.tau0, self.eps, self.projected_second_moment,
                          self.amsgrad, self.tau_decay)


@dataclass
class ReconstructionResult:
    cis: CISSet
    loss_trace: list = field(default_factory=list)
    grad_trace: list = field(default_factory=list)
    time_trace: list = field(default_factory=list)
    iterations: int = 0
    reason: str = "max_iters"
    wall_time: float = 0.0
    detail: str = ""

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else float("nan")

    @property
    def final_grad_norm(self) -> float:
        return self.grad_trace[-1] if self.grad_trace else float("nan")


MANIFOLD_DRIFT_LIMIT = 1e-9
REJECT_SHRINK = 0.5
REJECT_REGROW = 1.02


def reconstruct(data: Dataset, profile: DimensionProfile, init: Sequence[np.ndarray] | CISSet,
                cfg: OptimizerConfig | None = None, active: Sequence[int] | None = None,
                evaluator: Evaluator | None = None) -> ReconstructionResult:
    """Minimise the squared-error loss over the factors listed in ``active`` (default all).

    Stops when the Riemannian gradient norm of the active factors falls below
    ``cfg.gradient_norm_tolerance`` or after ``cfg.max_iterations`` updates.
    With ``cfg.reject_ratio`` set, a step that raises the loss by more than that
    factor is undone, the first moments are reset and the step cap halved;
    accepted steps let the cap regrow.
    Rejected steps count towards the budget but do not enter the traces.
    """
    cfg = cfg or OptimizerConfig()
    point = list(init.to_point() if isinstance(init, CISSet) else init)
    point = [np.array(x, dtype=complex) for x in point]
    active = list(range(len(point))) if active is None else list(active)
    ev = evaluator or Evaluator(profile, data)
    state = AdamState.zeros([point[k] for k in active], cfg.adam())
    result = ReconstructionResult(CISSet.from_point(profile, point))
    start = time.perf_counter()
    it = 0
    prev = None
    while True:
        try:
            report, grads = ev.evaluate(point)
        except NumericError as exc:
            result.reason, result.detail = "numeric_failure", str(exc)
            break
        rejected = prev is not None and report.total > cfg.reject_ratio * prev[1].total
        if rejected:
            point, report, grads, snap = prev
            state.restore(snap)
            state.scale *= REJECT_SHRINK
            # momentum restart: the retried step follows the plain projected gradient
            state.m = [np.zeros_like(m) for m in state.m]
        act_pts = [point[k] for k in active]
        act_grads = [grads[k] for k in active]
        if not rejected:
            if prev is not None:
                state.scale = min(1.0, state.scale * REJECT_REGROW)
            gnorm = riemannian_grad_norm(act_pts, act_grads)
            result.loss_trace.append(report.total)
            result.grad_trace.append(gnorm)
            result.time_trace.append(1e3 * (time.perf_counter() - start))
            if cfg.log_every and it % cfg.log_every == 0:
                log.info("iter %d loss %.3e grad %.3e", it, report.total, gnorm)
            if gnorm < cfg.gradient_norm_tolerance or (cfg.loss_tolerance is not None
                                                       and report.total < cfg.loss_tolerance):
                result.reason = "converged"
                break
        if it >= cfg.max_iterations:
            result.reason = "max_iters"
            break
        if cfg.reject_ratio is not None:
            prev = (list(point), report, grads, state.snapshot())
        try:
            new_pts, state = adam_step(act_pts, act_grads, state)
        except NumericError as exc:
            result.reason, result.detail = "numeric_failure", str(exc)
            break
        point = list(point)
        for k, x in zip(active, new_pts):
            point[k] = x
        it += 1
        if it % 100 == 0:
            drift = max(orthonormality_residual(point[k]) for k in active)
            if drift > MANIFOLD_DRIFT_LIMIT:
                result.reason = "numeric_failure"
                result.detail = f"manifold drift {drift:.3e} at iteration {it}"
                break
    result.iterations = it
    result.wall_time = time.perf_counter() - start
    result.cis = CISSet.from_point(profile, point)
    return result


def init_strategy(kind: str, profile: DimensionProfile, seed=0, nominal: CISSet | None = None,
                  truth: CISSet | None = None, angle: float | None = None) -> list[np.ndarray]:
    """Starting point: ``random``, ``prior`` (a nominal set) or ``truth_perturbed``."""
    kind = kind.replace("-", "_")
    if kind == "random":
        rng = np.random.default_rng(seed)
        return [random_stiefel(*shape, seed=rng) for shape in profile.factor_shapes()]
    if kind in ("prior", "from_prior"):
        if nominal is None:
            raise ValueError("prior initialisation needs nominal CIS values")
        return [x.copy() for x in nominal.to_point()]
    if kind == "truth_perturbed":
        if truth is None or angle is None:
            raise ValueError("truth_perturbed initialisation needs the ground truth and an angle")
        return perturb_point(truth.to_point(), angle, seed)
    raise ValueError(f"unknown init strategy {kind!r}")


def perturb_point(point: Sequence[np.ndarray], angle: float, seed=0) -> list[np.ndarray]:
    """One Cayley step along a seeded random tangent direction per factor.

    The direction is scaled so the step moves each factor by ``angle`` in
    Frobenius norm to first order.
    """
    rng = np.random.default_rng(seed)
    out = []
    for x in point:
        g = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
        d = project_tangent(x, g)
        # first-order Cayley displacement per unit step is d - x d^dag x
        nrm = np.linalg.norm(d - x @ d.conj().T @ x)
        if angle == 0 or nrm == 0:
            out.append(x.copy())
        else:
            out.append(cayley_retract(x, d / nrm, angle))
    return out


def iqct_baseline(data: Dataset, profile: DimensionProfile, nominal: CISSet,
                  cfg: OptimizerConfig | None = None, init_comb: Sequence[np.ndarray] | None = None,
                  evaluator: Evaluator | None = None) -> ReconstructionResult:
    """Comb-only reconstruction with instruments and states frozen at ``nominal``."""
    point = [x.copy() for x in nominal.to_point()]
    if init_comb is not None:
        point[:profile.n_steps] = [np.array(v, dtype=complex) for v in init_comb]
    return reconstruct(data, profile, point, cfg, active=comb_factor_indices(profile),
                       evaluator=evaluator)


def benchmark_iteration(profiles: Sequence[DimensionProfile], repetitions: int,
                        scheme: Scheme | None = None, seed: int = 0) -> list[dict]:
    """Mean wall time of one loss+gradient evaluation for each profile."""
    rows = []
    if repetitions <= 0:
        return rows
    for prof in profiles:
        cis = random_cis(prof, seed)
        data = generate_dataset(cis, scheme or Scheme(seed=seed), seed=seed)
        ev = Evaluator(prof, data)
        point = random_cis(prof, seed + 1).to_point()
        ev.evaluate(point)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            ev.evaluate(point)
            times.append(time.perf_counter() - t0)
        rows.append({"ancillas": "-".join(map(str, prof.d_anc)), "n_steps": prof.n_steps,
                     "records": ev.n_records, "repetitions": repetitions,
                     "mean_ms": 1e3 * float(np.mean(times)), "std_ms": 1e3 * float(np.std(times))})
    return rows
