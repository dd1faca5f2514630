"""Fixed quadrature rules on the reference interval [0, 1].

Node and weight values are hard-coded closed forms (three small rules plus a
two-point trapezoid for the anchors-only configuration) and validated at
construction by a monomial exactness sweep, which is easier to audit than
root-finding. Reference weights sum to 1, so an interval integral is
``h * sum_i w_i f(tau_i)`` with ``tau_i = t - h * u_i``: reference positions
map to times in descending order, matching the sampler's t -> t - h direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GAUSS_LEGENDRE_3 = "GaussLegendre3"
GAUSS_LOBATTO_4 = "GaussLobatto4"
SIMPSON_3 = "Simpson3"
TRAPEZOID_2 = "Trapezoid2"

RULE_KINDS = (GAUSS_LEGENDRE_3, GAUSS_LOBATTO_4, SIMPSON_3, TRAPEZOID_2)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Named node/weight set on [0, 1] with a declared exactness degree."""

    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int
    includes_endpoints: bool

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=np.float64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-D arrays of equal length")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if self.nodes[0] < 0.0 or self.nodes[-1] > 1.0:
            raise ValueError("nodes must lie within [0, 1]")
        if abs(float(self.weights.sum()) - 1.0) > 1e-14:
            raise ValueError("weights must sum to 1 within 1e-14")
        has_ends = self.nodes[0] == 0.0 and self.nodes[-1] == 1.0
        if has_ends != self.includes_endpoints:
            raise ValueError("includes_endpoints flag does not match the nodes")

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def interior_count(self) -> int:
        """Number of nodes strictly inside (0, 1)."""
        return int(np.sum((self.nodes > 0.0) & (self.nodes < 1.0)))


def make_rule(kind: str) -> QuadratureRule:
    """Construct one of the named rules; validates its exactness degree."""
    if kind == GAUSS_LEGENDRE_3:
        r = math.sqrt(3.0 / 5.0)
        rule = QuadratureRule(
            kind,
            nodes=[(1.0 - r) / 2.0, 0.5, (1.0 + r) / 2.0],
            weights=[5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            exactness_degree=5,
            includes_endpoints=False,
        )
    elif kind == GAUSS_LOBATTO_4:
        c = 1.0 / math.sqrt(5.0)
        rule = QuadratureRule(
            kind,
            nodes=[0.0, (1.0 - c) / 2.0, (1.0 + c) / 2.0, 1.0],
            weights=[1.0 / 12.0, 5.0 / 12.0, 5.0 / 12.0, 1.0 / 12.0],
            exactness_degree=5,
            includes_endpoints=True,
        )
    elif kind == SIMPSON_3:
        rule = QuadratureRule(
            kind,
            nodes=[0.0, 0.5, 1.0],
            weights=[1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0],
            exactness_degree=3,
            includes_endpoints=True,
        )
    elif kind == TRAPEZOID_2:
        rule = QuadratureRule(
            kind,
            nodes=[0.0, 1.0],
            weights=[0.5, 0.5],
            exactness_degree=1,
            includes_endpoints=True,
        )
    else:
        raise ValueError(f"unknown quadrature rule kind {kind!r}; known: {RULE_KINDS}")
    measured = exactness_check(rule)
    if measured != rule.exactness_degree:
        raise AssertionError(
            f"{kind}: measured exactness {measured} != declared {rule.exactness_degree}"
        )
    return rule


def map_nodes(rule: QuadratureRule, t: float, h: float) -> np.ndarray:
    """Map reference nodes onto the interval [t-h, t], descending in time.

    Reference position u goes to tau = t - h*u, so endpoint rules place their
    first node exactly at t and their last exactly at t-h.
    """
    if h <= 0.0:
        raise ValueError(f"interval size must be positive, got h={h}")
    return t - h * rule.nodes


def apply(rule: QuadratureRule, values, h: float) -> np.ndarray:
    """Integral estimate ``h * sum_i w_i values_i`` (values may be vectors per node)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != rule.n_nodes:
        raise ValueError(
            f"{rule.kind} needs {rule.n_nodes} node values, got {values.shape[0]}"
        )
    return h * np.tensordot(rule.weights, values, axes=(0, 0))


def exactness_check(rule: QuadratureRule, tol: float = 1e-12, max_degree: int = 12) -> int:
    """Largest d such that the rule integrates all monomials u^0..u^d on [0,1]
    within ``tol`` absolute. Must equal ``rule.exactness_degree``."""
    best = -1
    for d in range(max_degree + 1):
        estimate = float(rule.weights @ rule.nodes**d)
        if abs(estimate - 1.0 / (d + 1)) > tol:
            break
        best = d
    return best
