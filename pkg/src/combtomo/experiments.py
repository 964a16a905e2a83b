"""Reference experiments: exact recovery from a perturbed truth and full-vs-iQCT comparisons."""
from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .cis import (CISSet, DimensionProfile, comb_factor_indices, delta_ptm, max_orthonormality_residual,
                  ptm_of_branch)
from .config import ConfigError, RunConfig
from .simulator import Perturbation, generate_dataset, random_comb, standard_cis
from .tomography import Evaluator, OptimizerConfig, init_strategy, perturb_point, reconstruct

def make_models(cfg: RunConfig, seed: int, n_steps=None, ancillas=None, angle=None):
    """Nominal and perturbed ground-truth sets sharing one random comb."""
    profile = cfg.profile.build(n_steps, ancillas)
    comb = random_comb(profile, seed)
    nominal = standard_cis(profile, comb)
    truth = standard_cis(profile, comb, cfg.experiment.perturbation.build(angle))
    return nominal, truth


def simulate(cfg: RunConfig, model: CISSet, seed: int, threads: int = 1):
    scheme = cfg.experiment.scheme(seed)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return generate_dataset(model, scheme, cfg.experiment.shots, seed, executor=pool)
    return generate_dataset(model, scheme, cfg.experiment.shots, seed)


def initial_point(kind, angle, profile, seed, nominal=None, truth=None, mode="full"):
    if kind == "truth_perturbed":
        if truth is None:
            raise ConfigError("truth-perturbed init needs --truth")
        point = perturb_point(truth.to_point(), angle, seed)
    elif kind == "prior":
        if nominal is None:
            raise ConfigError("prior init needs --nominal")
        # design values for instruments and states; the comb is unknown a priori
        point = init_strategy("prior", profile, nominal=nominal)
        point[:profile.n_steps] = list(random_comb(profile, seed).isometries)
    else:
        point = init_strategy("random", profile, seed=seed)
    if mode == "iqct":
        if nominal is None:
            raise ConfigError("iqct mode needs --nominal")
        comb = point[:profile.n_steps]
        point = [x.copy() for x in nominal.to_point()]
        point[:profile.n_steps] = comb
    return point


# settings of the exact-recovery experiment; see README for how they were chosen
RECOVERY_OPTIMIZER = OptimizerConfig(gamma1=0.99, tau0=0.005, reject_ratio=1.0, max_iterations=20000,
                                     gradient_norm_tolerance=1e-7)


# matched budget of the full-versus-iQCT comparison
COMPARISON_OPTIMIZER = OptimizerConfig(max_iterations=1500)


def instrument_distances(recon: CISSet, target: CISSet, targets) -> float:
    """Summed PTM distance over the listed instruments of every slot."""
    total = 0.0
    for t, slot in enumerate(recon.instruments):
        for v in targets:
            if v >= len(slot):
                continue
            for wa, wb in zip(slot[v].branches, target.instruments[t][v].branches):
                d = recon.profile.d_in[t + 1]
                total += float(np.linalg.norm(ptm_of_branch(wa, d) - ptm_of_branch(wb, d)))
    return total


def recovery_run(seed: int, angle: float = 0.05, optimizer: OptimizerConfig | None = None,
                 ancillas: str = "1-2-2", n_instruments: int = 12, perturbation: float = 0.5) -> dict:
    """Reconstruct from exact data, starting a tangent step ``angle`` away from the truth."""
    profile = DimensionProfile.uniform(2, ancillas=ancillas, n_instruments=n_instruments)
    pert = Perturbation(angle=perturbation)
    comb = random_comb(profile, seed)
    truth = standard_cis(profile, comb, pert)
    nominal = standard_cis(profile, comb)
    data = generate_dataset(truth)
    init = init_strategy("truth_perturbed", profile, seed=seed, truth=truth, angle=angle)
    res = reconstruct(data, profile, init, optimizer or RECOVERY_OPTIMIZER)
    targets = sorted(set(pert.unitary_instruments) | set(pert.measurement_instruments))
    to_truth = instrument_distances(res.cis, truth, targets)
    to_nominal = instrument_distances(res.cis, nominal, targets)
    return {"seed": seed, "reason": res.reason, "iterations": res.iterations,
            "final_loss": res.final_loss, "grad_norm": res.final_grad_norm,
            "delta_ptm": delta_ptm(res.cis.instruments, truth.instruments),
            "distance_ratio": to_truth / to_nominal if to_nominal > 0 else float("inf"),
            "orthonormality": max_orthonormality_residual(res.cis.to_point()),
            "wall_time": res.wall_time}


def comparison_cell(ancillas: str, n_steps: int, angle: float, seed: int, iterations: int | None = None,
                    max_tuples: int | None = 200, n_instruments: int = 12,
                    optimizer: OptimizerConfig | None = None) -> dict:
    """Full-CIS and comb-only (iQCT) reconstructions on the same data and budget.

    Both start from the design values of instruments and states with the same
    random comb.
    """
    cfg = RunConfig()
    cfg.profile = dataclasses.replace(cfg.profile, n_instruments=n_instruments)
    cfg.experiment.max_tuples = max_tuples
    nominal, truth = make_models(cfg, seed, n_steps, ancillas, angle)
    data = simulate(cfg, truth, seed)
    profile = truth.profile
    opt = optimizer or COMPARISON_OPTIMIZER
    if iterations is not None:
        opt = dataclasses.replace(opt, max_iterations=iterations)
    ev = Evaluator(profile, data)
    out = {"ancillas": ancillas, "n_steps": n_steps, "angle": angle, "seed": seed, "records": len(data)}
    start = time.perf_counter()
    for method in ("full", "iqct"):
        point = initial_point("prior", None, profile, seed + 1, nominal, truth, method)
        active = comb_factor_indices(profile) if method == "iqct" else None
        res = reconstruct(data, profile, point, opt, active=active, evaluator=ev)
        out[f"{method}_loss"] = res.final_loss
        out[f"{method}_reason"] = res.reason
    out["wall_time"] = time.perf_counter() - start
    return out
