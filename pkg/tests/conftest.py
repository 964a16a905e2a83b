import numpy as np
import pytest


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def choi_oracle(cis, seq):
    """Outcome probability as Tr[Y Omega^T], contracted directly from Choi operators.

    Omega is laid out on (o_0..o_{L-1}, i_0..i_{L-1}) to match ``comb_choi``: the
    state sits on i_0, branch t on (i_{t+1}, o_t), and the last branch only
    enters through its effect on o_{L-1}.
    """
    from combtomo.cis import branch_choi, comb_choi, state_density

    p = cis.profile
    length = seq.length
    lo, hi = "abcdefghijklmnop", "ABCDEFGHIJKLMNOP"
    terms = [lo[length] + hi[length]]
    operands = [state_density(cis.states[seq.u])]
    for t, (v, x) in enumerate(zip(seq.v, seq.x)):
        s, o = p.d_in[t + 1], p.d_out[t]
        a = branch_choi(cis.instruments[t][v].branches[x], s).reshape(s, o, s, o)
        if t == length - 1:
            terms.append(lo[t] + hi[t])
            operands.append(np.einsum("sosq->oq", a))
        else:
            terms.append(lo[length + t + 1] + lo[t] + hi[length + t + 1] + hi[t])
            operands.append(a)
    n = 2 * length
    omega = np.einsum(",".join(terms) + "->" + lo[:n] + hi[:n], *operands)
    dim = int(round(np.sqrt(omega.size)))
    omega = omega.reshape(dim, dim)
    return float(np.trace(comb_choi(cis.comb, length) @ omega.T).real)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
