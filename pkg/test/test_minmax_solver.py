import itertools
import random
import time

import numpy as np
import pytest

from app.exceptions import Infeasible
from app.services.minmax_solver import solve_minmax


def oracle(compat: np.ndarray) -> int:
    """Smallest achievable max load, by exhaustive search with load pruning"""
    n, m = compat.shape
    options = [[j for j in range(m) if compat[i, j]] for i in range(n)]
    best = n
    loads = [0] * m

    def search(i: int, current: int) -> None:
        nonlocal best
        if current >= best:
            return
        if i == n:
            best = current
            return
        for j in options[i]:
            loads[j] += 1
            search(i + 1, max(current, loads[j]))
            loads[j] -= 1

    search(0, 0)
    return best


def exhaustive(compat: np.ndarray) -> int:
    n, m = compat.shape
    best = None
    for choice in itertools.product(range(m), repeat=n):
        if all(compat[i, j] for i, j in enumerate(choice)):
            peak = max(np.bincount(choice, minlength=m))
            best = peak if best is None else min(best, peak)
    return best


def check_solution(compat: np.ndarray, solution) -> None:
    assert (solution.x.sum(axis=1) == 1).all()
    assert not (solution.x & ~compat).any()
    assert solution.x.sum(axis=0).max() == solution.M


def test_oracle_agrees_with_full_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(50):
        compat = rng.random((6, 3)) < 0.6
        if not compat.any(axis=1).all():
            continue
        assert oracle(compat) == exhaustive(compat)


def test_random_instances_match_the_oracle():
    rng = random.Random(2024)
    started = time.monotonic()
    solved = 0
    for _ in range(500):
        n, m = rng.randint(0, 10), rng.randint(1, 4)
        density = rng.choice([0.3, 0.5, 0.8, 1.0])
        compat = np.array([[rng.random() < density for _ in range(m)] for _ in range(n)], dtype=bool).reshape(n, m)
        empty = [i for i in range(n) if not compat[i].any()]
        if empty:
            with pytest.raises(Infeasible) as excinfo:
                solve_minmax(compat)
            assert excinfo.value.rows == empty
            continue
        solution = solve_minmax(compat)
        check_solution(compat, solution)
        assert solution.M == (oracle(compat) if n else 0)
        solved += 1
    assert solved > 100
    assert time.monotonic() - started < 10


def test_eight_by_three_against_full_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(10):
        compat = rng.random((8, 3)) < 0.7
        compat[:, 0] |= ~compat.any(axis=1)
        solution = solve_minmax(compat)
        check_solution(compat, solution)
        assert solution.M == exhaustive(compat)


def test_forced_assignment():
    compat = np.array([[True, False]] * 4)
    solution = solve_minmax(compat)
    assert solution.assignment() == [0, 0, 0, 0]
    assert solution.M == 4


def test_balanced_when_unconstrained():
    solution = solve_minmax(np.ones((10, 5), dtype=bool))
    assert solution.M == 2
    assert list(solution.loads()) == [2, 2, 2, 2, 2]


def test_empty_task_list():
    solution = solve_minmax(np.zeros((0, 2), dtype=bool))
    assert solution.M == 0
    assert solution.assignment() == []


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        solve_minmax(np.ones((3, 0), dtype=bool))
    with pytest.raises(ValueError):
        solve_minmax([True, False])
