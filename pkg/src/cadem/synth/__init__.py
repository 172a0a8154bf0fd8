"""Synthetic multiplex benchmarks with ground-truth labels."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .dynamics import (CLASSES, INITIAL_STATE, RHS, SUBCLASSES, DynamicsClass, connected_er,
                       gen_syn4, integrate_dynamics, scaled_adjacency, trajectory_features)
from .sbm import gen_syn1, gen_syn2, sbm_edges, syn2_edge_probability
from .spectral import (band_pass, center_nodes, cosine_taper, gen_syn3, low_pass,
                       spectral_filter, spiral_points)

_DEFAULTS = {
    "syn1": {"M": 100, "N": 3},
    "syn2": {"M": 1000, "N": 3},
    "syn3": {"M": 600, "N": 2},
    "syn4": {"M": 100, "N": 2},
}

_PROB_KEYS = ("p_intra", "p_inter", "gamma", "reassign", "p_er")


@dataclass
class SynSpec:
    """Generator name, sizes, seed and variant-specific keyword parameters."""

    variant: str
    M: int | None = None
    N: int | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in _DEFAULTS:
            raise ValueError(f"unknown synthetic variant {self.variant!r}")
        d = _DEFAULTS[self.variant]
        self.M = d["M"] if self.M is None else int(self.M)
        self.N = d["N"] if self.N is None else int(self.N)
        if self.M < 2 or self.N < 1:
            raise ValueError("need M >= 2 and N >= 1")
        for k in _PROB_KEYS:
            if k in self.params and not 0.0 <= float(self.params[k]) <= 1.0:
                raise ValueError(f"{k} must lie in [0, 1]")
        if self.variant == "syn4" and self.N != 2:
            raise ValueError("syn4 multiplex samples have exactly two layers")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynSpec":
        d = dict(d)
        variant = d.pop("variant")
        base = {k: d.pop(k) for k in ("M", "N", "seed") if k in d}
        params = dict(d.pop("params", {}))
        params.update(d)
        return cls(variant=variant, params=params, **base)


def generate(spec: SynSpec):
    """A :class:`MultiplexGraph` (syn1-3) or a list of them (syn4)."""
    p = dict(spec.params)
    if spec.variant == "syn1":
        return gen_syn1(M=spec.M, N=spec.N, seed=spec.seed, **p)
    if spec.variant == "syn2":
        return gen_syn2(M=spec.M, N=spec.N, seed=spec.seed, **p)
    if spec.variant == "syn3":
        return gen_syn3(M=spec.M, N=spec.N, seed=spec.seed, **p)
    return gen_syn4(M=spec.M, seed=spec.seed, **p)


__all__ = [
    "CLASSES", "INITIAL_STATE", "RHS", "SUBCLASSES", "DynamicsClass", "SynSpec", "band_pass",
    "center_nodes", "connected_er", "cosine_taper", "gen_syn1", "gen_syn2", "gen_syn3", "gen_syn4",
    "generate", "integrate_dynamics", "low_pass", "sbm_edges", "scaled_adjacency",
    "spectral_filter", "spiral_points", "syn2_edge_probability", "trajectory_features",
]
