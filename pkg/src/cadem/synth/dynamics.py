"""Nonlinear network dynamics and the Syn4 graph-classification collection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..graph import LayerGraph, MultiplexGraph, adjacency_matrix, is_connected, spectral_radius


def _population(x, a):
    return -x ** 3 + a @ (x ** 2)


def _regulatory_dd(x, a):
    r = np.cbrt(x)
    return -x + a @ (r / (1.0 + r))


def _epidemic(x, a):
    return -x + (1.0 - x) * (a @ x)


def _biochemical(x, a):
    return 1.0 - x - x * (a @ x)


def _mutualistic(x, a):
    x2 = x * x
    return x * (1.0 - x) + x * (a @ (x2 / (1.0 + x2)))


def _regulatory_da(x, a):
    x2 = x * x
    return -x + a @ (x2 / (1.0 + x2))


RHS = {
    "population": _population,
    "regulatory_dd": _regulatory_dd,
    "epidemic": _epidemic,
    "biochemical": _biochemical,
    "mutualistic": _mutualistic,
    "regulatory_da": _regulatory_da,
}


def _beta_2_2(rng, n):
    # Beta(2,2) = G1 / (G1 + G2) with Gamma(2) draws, each a sum of two exponentials
    g1 = rng.exponential(size=n) + rng.exponential(size=n)
    g2 = rng.exponential(size=n) + rng.exponential(size=n)
    return g1 / (g1 + g2)


INITIAL_STATE = {
    "population": lambda rng, n: rng.normal(0.0, 0.5, size=n),
    "regulatory_dd": lambda rng, n: rng.uniform(0.0, 0.5, size=n),
    "epidemic": lambda rng, n: rng.uniform(0.0, 0.4, size=n),
    "biochemical": _beta_2_2,
    "mutualistic": lambda rng, n: rng.uniform(0.0, 0.6, size=n),
    "regulatory_da": lambda rng, n: rng.uniform(0.0, 0.6, size=n),
}


@dataclass(frozen=True)
class DynamicsClass:
    name: str
    dynamics: tuple[str, str]
    T: int
    dt: float
    coupling: float


CLASSES = (
    DynamicsClass("degree_driven", ("population", "regulatory_dd"), 250, 0.04, 1.0),
    DynamicsClass("homogeneous", ("epidemic", "biochemical"), 300, 0.04, 1.2),
    DynamicsClass("degree_avert", ("mutualistic", "regulatory_da"), 100, 0.02, 0.2),
)

SUBCLASSES = tuple(d for c in CLASSES for d in c.dynamics)


def scaled_adjacency(edges, n_nodes: int, coupling: float) -> sp.csr_matrix:
    """``coupling * A / rho(A)``; an edgeless graph stays zero."""
    a = adjacency_matrix(edges, n_nodes)
    rho = spectral_radius(a)
    if rho == 0.0:
        return a
    return (coupling / rho) * a


def integrate_dynamics(rhs, a_scaled, x0, T: int, dt: float, trajectory: bool = False):
    """Forward Euler ``x <- x + dt * rhs(x)`` for ``T`` steps.

    ``rhs`` is a dynamics name or a callable ``f(x, A)``.  Returns the final
    state, plus the ``(T + 1) x M`` trajectory when asked.
    """
    if dt <= 0:
        raise ValueError("step size must be positive")
    if T < 1:
        raise ValueError("need at least one step")
    name = rhs if isinstance(rhs, str) else getattr(rhs, "__name__", "rhs")
    f = RHS[rhs] if isinstance(rhs, str) else rhs
    x = np.asarray(x0, dtype=np.float64).ravel().copy()
    traj = [x.copy()] if trajectory else None
    for step in range(1, T + 1):
        # divergence is detected below, so numpy's overflow warnings add nothing
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + dt * f(x, a_scaled)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"{name} dynamics diverged at step {step}")
        if trajectory:
            traj.append(x.copy())
    if trajectory:
        return x, np.stack(traj)
    return x


def trajectory_features(traj: np.ndarray) -> np.ndarray:
    """Per node: final state, temporal mean and temporal variance."""
    return np.stack([traj[-1], traj.mean(axis=0), traj.var(axis=0)], axis=1)


def connected_er(m: int, p: float, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
    iu, ju = np.triu_indices(m, k=1)
    for _ in range(max_tries):
        keep = rng.random(iu.size) < p
        edges = np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)
        if is_connected(edges, m):
            return edges
    raise RuntimeError(f"no connected ER graph (M={m}, p={p}) after {max_tries} draws")


def simulate_layer(dynamics: str, edges, m: int, cls: DynamicsClass, rng) -> np.ndarray:
    a = scaled_adjacency(edges, m, cls.coupling)
    x0 = INITIAL_STATE[dynamics](rng, m)
    _, traj = integrate_dynamics(dynamics, a, x0, cls.T, cls.dt, trajectory=True)
    return trajectory_features(traj)


def gen_syn4(n_base: int = 30, M: int = 100, p_er: float = 0.08, classes=None,
             seed: int = 0) -> list[MultiplexGraph]:
    """One 2-layer multiplex per (base graph, dynamics class).

    Both layers share the base topology; layer 1 runs the class's first
    dynamics and layer 2 its second, each from its own random initial state.
    Graph labels: ``class``, ``subclass`` (per layer) and ``base_graph``.
    """
    if not 0.0 <= p_er <= 1.0:
        raise ValueError("p_er must lie in [0, 1]")
    chosen = CLASSES if classes is None else tuple(c for c in CLASSES if c.name in set(classes))
    if not chosen:
        raise ValueError(f"no known dynamics class in {classes}")
    rng = np.random.default_rng(seed)
    bases = [connected_er(M, p_er, rng) for _ in range(n_base)]
    out = []
    for b, edges in enumerate(bases):
        for cls in chosen:
            ci = CLASSES.index(cls)
            layers = [LayerGraph(edges=edges, features=simulate_layer(d, edges, M, cls, rng))
                      for d in cls.dynamics]
            meta = {
                "variant": "syn4",
                "class": ci,
                "class_name": cls.name,
                "subclass": [SUBCLASSES.index(d) for d in cls.dynamics],
                "dynamics": list(cls.dynamics),
                "base_graph": b,
                "T": cls.T,
                "dt": cls.dt,
                "coupling": cls.coupling,
                "p_er": p_er,
                "seed": seed,
            }
            out.append(MultiplexGraph(layers=layers, labels={}, metadata=meta))
    return out
