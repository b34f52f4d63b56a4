import math

import pytest

from scawb.lfsr import DEFAULT_SEEDS, InvalidLfsrState, LfsrBank, lfsr_step, orbit, orbit_period


def bits_step(state):
    """Reference step on an explicit bit list, bit1 first."""
    bits = [(state >> i) & 1 for i in range(5)]
    fed = bits[3] ^ bits[4]
    new = [fed] + bits[:4]
    return sum(b << i for i, b in enumerate(new))


def enumerate_cycles():
    seen, cycles = set(), []
    for s in range(1, 32):
        if s in seen:
            continue
        path, cur = [], s
        while cur not in path:
            path.append(cur)
            cur = bits_step(cur)
        cycles.append(path[path.index(cur):])
        seen.update(path)
    return cycles


@pytest.mark.parametrize("s, t", [(0b00001, 0b00010), (0b11000, 0b10000)])
def test_step_examples(s, t):
    assert lfsr_step(s) == t


def test_step_matches_bit_list_oracle_everywhere():
    for s in range(1, 32):
        assert lfsr_step(s) == bits_step(s)


def test_zero_and_oversized_states_rejected():
    for bad in (0, 32, -1):
        with pytest.raises(InvalidLfsrState):
            lfsr_step(bad)


def test_orbit_structure_matches_enumeration():
    cycles = enumerate_cycles()
    assert sorted(len(c) for c in cycles) == [3, 7, 21]
    for cycle in cycles:
        for s in cycle:
            assert orbit_period(s) == len(cycle)
            assert set(orbit(s)) == set(cycle)


def test_zero_state_unreachable():
    for s in range(1, 32):
        cur = s
        for _ in range(64):
            cur = lfsr_step(cur)
            assert cur != 0


def test_default_bank_period_and_tables():
    bank = LfsrBank(DEFAULT_SEEDS)
    expected = math.lcm(*(orbit_period(s) for s in DEFAULT_SEEDS))
    assert bank.period == expected
    assert bank.states(0) == DEFAULT_SEEDS
    assert bank.states(bank.period) == DEFAULT_SEEDS
    hw = bank.hamming_weight_table()
    toggles = bank.toggle_table()
    for t in range(bank.period):
        st = bank.states(t)
        nxt = bank.states(t + 1)
        assert hw[t] == sum(bin(v).count("1") for v in st)
        assert toggles[t] == sum(bin(a ^ b).count("1") for a, b in zip(st, nxt))


def test_activity_wraps_with_period():
    bank = LfsrBank([1])
    act = bank.activity([0, 5], 50, "weight")
    table = bank.hamming_weight_table()
    assert act.shape == (2, 50)
    assert act[1, 0] == table[5]
    assert act[0, bank.period] == act[0, 0]
    with pytest.raises(ValueError):
        bank.activity([0], 4, "bogus")
