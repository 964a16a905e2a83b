import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from combtomo.cis import (CISSet, Comb, DimensionProfile, Instrument, StatePrep,
                          check_instrument, validate_cis)
from combtomo.simulator import (OutcomeSequence, Perturbation, Scheme, clifford_group,
                                experiment_groups, generate_dataset, group_sums,
                                intermediate_states, measurement_instrument, perturb_instrument,
                                prefix_distribution, probability, random_cis, random_comb,
                                rotation, standard_cis, standard_instrument_set, standard_states,
                                step_comb, step_instrument)
from combtomo.tensor import DimensionError

from conftest import choi_oracle, crandn

KET0 = np.array([[1], [0]], dtype=complex)
PLUS = np.array([[1], [1]], dtype=complex) / np.sqrt(2)


def random_density(rng, d):
    m = crandn(rng, d, d)
    rho = m @ m.conj().T
    return rho / np.trace(rho)


def single_slot(instrument, ket=KET0, comb=None):
    prof = DimensionProfile(1, (2, 2), (2,), (1, 1), ((tuple(instrument.d_env),),), (1,))
    comb = comb if comb is not None else Comb((np.eye(2, dtype=complex),), (2,), (2,), (1, 1))
    return CISSet(prof, comb, ((instrument,),), (StatePrep(ket, 2, 1),))


def test_step_comb_examples(rng):
    eta = random_density(rng, 2)
    assert np.allclose(step_comb(eta, np.eye(2)), eta)
    x = np.array([[0, 1], [1, 0]])
    assert np.allclose(step_comb(KET0 @ KET0.T, x), np.diag([0, 1]))
    from combtomo.stiefel import random_stiefel
    v = random_stiefel(6, 2, seed=3)
    assert abs(np.trace(step_comb(eta, v)) - np.trace(eta)) < 1e-12
    with pytest.raises(DimensionError):
        step_comb(eta, random_stiefel(6, 3, seed=3))


def test_step_instrument_examples(rng):
    eta = random_density(rng, 4)
    assert np.allclose(step_instrument(eta, np.eye(2), 2, 2), eta)
    z = measurement_instrument("z")
    out = step_instrument(PLUS @ PLUS.conj().T, z.branches[0], 2, 1)
    assert np.allclose(out, 0.5 * np.diag([1, 0]))
    ins = Instrument(__import__("combtomo.stiefel", fromlist=["x"]).random_stiefel(12, 2, seed=1),
                     2, (1, 2, 3))
    total = sum(np.trace(step_instrument(eta, w, 2, 2)) for w in ins.branches)
    assert abs(total - 1) < 1e-12


def test_probability_examples():
    assert np.isclose(probability(single_slot(measurement_instrument("z")),
                                  OutcomeSequence(0, (0,), (0,))), 1.0)
    cis = single_slot(measurement_instrument("x"))
    for x in (0, 1):
        assert np.isclose(probability(cis, OutcomeSequence(0, (0,), (x,))), 0.5)
    with pytest.raises(IndexError):
        probability(cis, OutcomeSequence(0, (0,), (2,)))
    with pytest.raises(IndexError):
        probability(cis, OutcomeSequence(1, (0,), (0,)))


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("ancillas,n_steps", [("1-2-2", 2), ("1-3", 1), ("1-2-3", 2)])
def test_probability_matches_choi_oracle(seed, ancillas, n_steps):
    prof = DimensionProfile.uniform(n_steps, ancillas=ancillas, n_instruments=2, d_env=2,
                                    n_states=2, d_ref=2)
    cis = random_cis(prof, seed)
    rng = np.random.default_rng(seed)
    for _ in range(4):
        length = int(rng.integers(1, n_steps + 1))
        seq = OutcomeSequence(int(rng.integers(2)), tuple(rng.integers(2, size=length)),
                              tuple(rng.integers(2, size=length)))
        assert abs(probability(cis, seq) - choi_oracle(cis, seq)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_prefix_normalization_and_marginalization(seed, n_steps):
    prof = DimensionProfile.uniform(n_steps, ancillas="1-2", n_instruments=3, d_env=2)
    cis = random_cis(prof, seed)
    v_seq = tuple(np.random.default_rng(seed).integers(3, size=n_steps))
    for length in range(1, n_steps + 1):
        dist = prefix_distribution(cis, 1, v_seq, length)
        assert abs(sum(dist.values()) - 1) < 1e-10
        assert min(dist.values()) > -1e-12
        if length < n_steps:
            longer = prefix_distribution(cis, 1, v_seq, length + 1)
            for xs, p in dist.items():
                assert abs(p - sum(longer[xs + (y,)] for y in range(2))) < 1e-10


def test_prefix_distribution_example():
    cis = single_slot(measurement_instrument("z"))
    dist = prefix_distribution(cis, 0, (0,), 1)
    assert dist == pytest.approx({(0,): 1.0, (1,): 0.0})


@pytest.mark.parametrize("seed", range(5))
def test_intermediate_states_are_subnormalized_states(seed):
    prof = DimensionProfile.uniform(3, ancillas="1-2-3-3", n_instruments=2)
    cis = random_cis(prof, seed)
    for xs in itertools.product(range(2), repeat=3):
        for pair in intermediate_states(cis, OutcomeSequence(0, (0, 1, 0), xs)):
            for eta in pair:
                assert np.allclose(eta, eta.conj().T, atol=1e-12)
                assert np.linalg.eigvalsh(eta)[0] >= -1e-12
                assert -1e-12 <= np.trace(eta).real <= 1 + 1e-12


def test_standard_instrument_set():
    inst = standard_instrument_set()
    assert len(inst) == 72 and all(i.n_branches == 2 for i in inst)
    assert all(check_instrument(i)["tp_residual"] < 1e-12 for i in inst)
    assert len(clifford_group()) == 24
    # Cliffords are distinct up to global phase
    overlaps = [abs(np.trace(a.conj().T @ b)) / 2 for a, b in itertools.combinations(clifford_group(), 2)]
    assert max(overlaps) < 1 - 1e-9
    assert np.isclose(probability(single_slot(inst[0]), OutcomeSequence(0, (0,), (0,))), 1.0)


def test_measurement_instrument_is_projective():
    for basis, ket in [("x", PLUS), ("y", np.array([[1], [1j]]) / np.sqrt(2))]:
        cis = single_slot(measurement_instrument(basis), ket)
        assert np.isclose(probability(cis, OutcomeSequence(0, (0,), (0,))), 1.0)


def test_perturbation_examples():
    z = measurement_instrument("z")
    same = perturb_instrument(z, "x", 0.0)
    assert np.array_equal(same.stack, z.stack)
    tilted = perturb_instrument(z, "x", 0.5)
    p0 = probability(single_slot(tilted), OutcomeSequence(0, (0,), (0,)))
    assert np.isclose(p0, np.cos(0.25) ** 2)
    assert check_instrument(tilted)["tp_residual"] < 1e-12
    framed = perturb_instrument(z, "y", 0.7, part="frame")
    assert check_instrument(framed)["tp_residual"] < 1e-12
    with pytest.raises(ValueError):
        perturb_instrument(z, "x", 0.1, part="middle")


def test_rotation():
    assert np.allclose(rotation("x", np.pi), -1j * np.array([[0, 1], [1, 0]]))
    assert np.allclose(rotation("z", 0.0), np.eye(2))


def test_random_comb_examples():
    prof = DimensionProfile.uniform(2, ancillas="1-1-1")
    comb = random_comb(prof, 0)
    for v in comb.isometries:
        assert v.shape == (2, 2) and np.allclose(v @ v.conj().T, np.eye(2))
    prof = DimensionProfile.uniform(2, ancillas="1-2-3")
    comb = random_comb(prof, 0)
    assert [v.shape for v in comb.isometries] == [(4, 2), (6, 4)]
    again = random_comb(prof, 0)
    assert all(np.array_equal(a, b) for a, b in zip(comb.isometries, again.isometries))


def test_standard_cis_is_valid():
    prof = DimensionProfile.uniform(2, ancillas="1-2-2", n_instruments=12)
    cis = standard_cis(prof, random_comb(prof, 1), Perturbation(angle=1.0))
    assert validate_cis(cis)["max_residual"] < 1e-10
    nominal = standard_cis(prof, cis.comb)
    assert not np.allclose(cis.instruments[0][1].stack, nominal.instruments[0][1].stack)
    assert np.array_equal(cis.instruments[0][5].stack, nominal.instruments[0][5].stack)
    assert not np.allclose(cis.states[0].purification, nominal.states[0].purification)
    assert np.array_equal(cis.states[1].purification, standard_states(4)[1].purification)


def test_exact_dataset_groups_sum_to_one():
    prof = DimensionProfile.uniform(2, ancillas="1-2-2", n_instruments=3)
    data = generate_dataset(random_cis(prof, 2))
    assert len(experiment_groups(prof, Scheme())) == 4 * 3 + 4 * 9
    sums = np.array(list(group_sums(data).values()))
    assert np.max(np.abs(sums - 1)) < 1e-10
    assert all(r.kind == "exact" for r in data.records)


def test_subsampled_scheme_is_seeded():
    prof = DimensionProfile.uniform(2, n_instruments=12)
    a = experiment_groups(prof, Scheme(max_tuples=20, seed=3))
    b = experiment_groups(prof, Scheme(max_tuples=20, seed=3))
    c = experiment_groups(prof, Scheme(max_tuples=20, seed=4))
    assert a == b and a != c and len(a) == 40


def test_frequency_mode_concentrates():
    prof = DimensionProfile.uniform(2, ancillas="1-2-2", n_instruments=3)
    cis = random_cis(prof, 7)
    exact = generate_dataset(cis)
    freq = generate_dataset(cis, shots=10**6, seed=1)
    for e, f in zip(exact.records, freq.records):
        assert e.sequence == f.sequence
        assert abs(e.value - f.value) < 5e-3
        assert f.kind == "frequency"
        assert abs(f.value * f.shots - round(f.value * f.shots)) < 1e-6
    assert all(abs(s - 1) < 1e-12 for s in group_sums(freq).values())


def test_shot_noise_rate():
    prof = DimensionProfile.uniform(1, ancillas="1-2", n_instruments=3)
    cis = random_cis(prof, 8)
    exact = np.array([r.value for r in generate_dataset(cis).records])
    errors = []
    for shots in (10**3, 10**4, 10**5, 10**6):
        devs = [np.sqrt(np.mean((np.array([r.value for r in generate_dataset(cis, shots=shots, seed=s).records])
                                 - exact) ** 2)) for s in range(20)]
        errors.append(np.mean(devs))
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    # each tenfold increase in shots shrinks the error by about sqrt(10)
    assert np.all((ratios > 2.0) & (ratios < 5.0))


def test_datasets_are_deterministic():
    prof = DimensionProfile.uniform(2, n_instruments=3)
    cis = random_cis(prof, 0)
    a = generate_dataset(cis, shots=1000, seed=5)
    b = generate_dataset(cis, shots=1000, seed=5)
    assert a.records == b.records
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(4) as pool:
        c = generate_dataset(cis, shots=1000, seed=5, executor=pool)
    assert a.records == c.records


def test_frequency_mode_rejects_bad_shots():
    prof = DimensionProfile.uniform(1, n_instruments=1)
    with pytest.raises(ValueError):
        generate_dataset(random_cis(prof, 0), shots=0)
