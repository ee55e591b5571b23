"""
Exact min-max-load assignment under capability constraints

Minimizes the largest number of tasks any robot receives. The problem is a
bounded bipartite b-matching: for a candidate bound M, a feasible assignment
exists iff the flow network

    source -(1)-> task_i -(1)-> robot_j -(M)-> sink

carries a flow of n. Binary search over M finds the smallest feasible bound.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import networkx as nx
import numpy as np
from networkx.algorithms.flow import edmonds_karp

from app.exceptions import Infeasible

logger = logging.getLogger(__name__)

SOURCE, SINK = "source", "sink"


@dataclass
class AssignmentMatrix:
    """x[i, j] is True when task i goes to robot j; M is the achieved max load"""
    x: np.ndarray
    M: int

    def assignment(self) -> List[int]:
        """Robot column chosen for each task row"""
        return [int(j) for j in np.argmax(self.x, axis=1)] if self.x.shape[0] else []

    def loads(self) -> np.ndarray:
        return self.x.sum(axis=0)


def _assign_within(compat: np.ndarray, bound: int) -> Optional[np.ndarray]:
    """Assignment with every column load <= bound, or None"""
    n, m = compat.shape
    network = nx.DiGraph()
    for i in range(n):
        network.add_edge(SOURCE, ("task", i), capacity=1)
        for j in np.flatnonzero(compat[i]):
            network.add_edge(("task", i), ("robot", int(j)), capacity=1)
    for j in range(m):
        network.add_edge(("robot", j), SINK, capacity=bound)

    value, flows = nx.maximum_flow(network, SOURCE, SINK, flow_func=edmonds_karp)
    if value < n:
        return None
    x = np.zeros((n, m), dtype=bool)
    for i in range(n):
        for (_, j), units in flows[("task", i)].items():
            if units:
                x[i, j] = True
    return x


def solve_minmax(compatibility) -> AssignmentMatrix:
    """
    Solve min M s.t. every task gets exactly one compatible robot and no robot
    gets more than M tasks

    Args:
        compatibility: n x m boolean matrix, rows are tasks, columns robots

    Returns:
        AssignmentMatrix with the optimal M

    Raises:
        Infeasible: If some row has no compatible robot (rows listed on the error)
        ValueError: If the matrix is not two-dimensional or has no columns
    """
    compat = np.asarray(compatibility, dtype=bool)
    if compat.ndim != 2:
        raise ValueError("compatibility must be a 2-D matrix")
    n, m = compat.shape
    if m < 1:
        raise ValueError("at least one robot column is required")
    if n == 0:
        return AssignmentMatrix(x=np.zeros((0, m), dtype=bool), M=0)

    empty_rows = [int(i) for i in np.flatnonzero(~compat.any(axis=1))]
    if empty_rows:
        raise Infeasible([f"row {i}" for i in empty_rows], rows=empty_rows)

    low, high = math.ceil(n / m), n
    best = _assign_within(compat, high)
    while low < high:
        middle = (low + high) // 2
        x = _assign_within(compat, middle)
        if x is not None:
            high, best = middle, x
        else:
            low = middle + 1

    logger.debug(f"min-max solved n={n} m={m} M={low}")
    return AssignmentMatrix(x=best, M=int(best.sum(axis=0).max()))
