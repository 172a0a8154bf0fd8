import math
from collections import Counter

import numpy as np
import pytest

from cadem.graph import canonical_edges, is_connected, laplacian
from cadem.synth import (CLASSES, RHS, SUBCLASSES, SynSpec, band_pass, center_nodes, cosine_taper,
                         gen_syn1, gen_syn2, gen_syn3, gen_syn4, generate, integrate_dynamics,
                         low_pass, scaled_adjacency, spectral_filter, syn2_edge_probability)
from cadem.synth.sbm import block_probabilities

from oracles import euler_reference


# --- Syn1 / Syn2 ----------------------------------------------------------

def _count_within(edges, labels):
    e = np.asarray(edges)
    return int(np.sum(labels[e[:, 0]] == labels[e[:, 1]]))


def test_syn1_cliques_when_deterministic_blocks():
    g = gen_syn1(M=30, p_intra=1.0, p_inter=0.0, seed=1)
    for ell, layer in enumerate(g.layers):
        lab = g.labels[f"layer{ell}"]
        sizes = Counter(lab.tolist())
        assert len(layer.edges) == sum(n * (n - 1) // 2 for n in sizes.values())
        assert _count_within(layer.edges, lab) == len(layer.edges)


def test_syn1_intra_edges_within_binomial_bounds():
    for seed in range(20):
        g = gen_syn1(seed=seed)
        for ell, layer in enumerate(g.layers):
            lab = g.labels[f"layer{ell}"]
            pairs = sum(n * (n - 1) // 2 for n in Counter(lab.tolist()).values())
            mean, sd = 0.7 * pairs, math.sqrt(pairs * 0.7 * 0.3)
            assert abs(_count_within(layer.edges, lab) - mean) <= 3 * sd


def test_syn1_final_labels():
    g = gen_syn1(final_mix=(1.0, 0.0, 0.0), seed=3)
    assert np.array_equal(g.labels["final"], g.labels["layer0"])
    g = gen_syn1(seed=3)
    src = g.labels["final_source"]
    picked = np.stack([g.labels[f"layer{i}"] for i in range(3)])[src, np.arange(100)]
    assert np.array_equal(g.labels["final"], picked)
    with pytest.raises(ValueError):
        gen_syn1(final_mix=(0.5, 0.5))


def test_syn1_identity_features():
    g = gen_syn1(M=12, seed=0)
    assert all(np.array_equal(l.features, np.eye(12)) for l in g.layers)


def test_syn2_edge_probability_formula():
    probs = block_probabilities(3, 0.3, 0.01)
    assert syn2_edge_probability(0, 0, 0, 1, 0.5, probs, probs) == pytest.approx(0.155)


def test_syn2_gamma_one_uses_shared_labels():
    g = gen_syn2(M=300, gamma=1.0, seed=2)
    shared = g.labels["shared"]
    pairs = sum(n * (n - 1) // 2 for n in Counter(shared.tolist()).values())
    sd = math.sqrt(pairs * 0.3 * 0.7)
    for layer in g.layers:
        assert abs(_count_within(layer.edges, shared) - 0.3 * pairs) <= 3 * sd


def test_syn2_gamma_zero_follows_private_labels():
    g = gen_syn2(M=300, gamma=0.0, seed=4)
    for ell, layer in enumerate(g.layers):
        priv = g.labels[f"private{ell}"]
        pairs = sum(n * (n - 1) // 2 for n in Counter(priv.tolist()).values())
        sd = math.sqrt(pairs * 0.3 * 0.7)
        assert abs(_count_within(layer.edges, priv) - 0.3 * pairs) <= 3 * sd


def test_syn2_reassignment_fraction():
    g = gen_syn2(M=400, seed=0)
    for ell in range(3):
        changed = np.mean(g.labels[f"private{ell}"] != g.labels["shared"])
        # half are redrawn uniformly over 3 communities, a third of those keep their label
        assert abs(changed - 0.5 * 2 / 3) < 0.08


def test_generators_deterministic():
    for spec in (SynSpec("syn1", seed=5), SynSpec("syn2", M=120, seed=5),
                 SynSpec("syn3", M=120, params={"K_nn": 8}, seed=5)):
        a, b = generate(spec), generate(spec)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.edges, lb.edges)
            assert np.array_equal(la.features, lb.features)
    a = gen_syn4(n_base=1, M=20, p_er=0.3, seed=9)
    b = gen_syn4(n_base=1, M=20, p_er=0.3, seed=9)
    assert all(np.array_equal(x.layers[1].features, y.layers[1].features) for x, y in zip(a, b))


def test_synspec_validation_and_round_trip():
    s = SynSpec.from_dict({"variant": "syn2", "M": 50, "seed": 1, "params": {"gamma": 0.25}})
    assert s.N == 3 and s.params == {"gamma": 0.25}
    assert SynSpec.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        SynSpec("syn2", params={"gamma": 1.5})
    with pytest.raises(ValueError):
        SynSpec("syn5")
    with pytest.raises(ValueError):
        SynSpec("syn4", N=3)


# --- Syn3 -----------------------------------------------------------------

def test_spectral_filter_cases():
    edges = np.array([[0, 1], [1, 2], [2, 3], [0, 3]])
    evals, evecs = np.linalg.eigh(laplacian(edges, 4))
    evals = np.clip(evals, 0, None)
    assert np.allclose(spectral_filter(evals, evecs, low_pass, np.ones(4)), 1.0)
    atom = spectral_filter(evals, evecs, band_pass, np.eye(4)[1])
    assert abs(atom.mean()) < 1e-9


def test_band_pass_two_node_closed_form():
    evals, evecs = np.linalg.eigh(laplacian([[0, 1]], 2))
    out = spectral_filter(evals, evecs, band_pass, np.array([1.0, 0.0]))
    g2 = 2 * math.exp(-4)
    assert np.allclose(out, [g2 / 2, -g2 / 2], atol=1e-15)


def test_taper_and_centers():
    assert cosine_taper(np.array([0.0]), 3)[0] == 1.0
    assert np.all(np.diff(cosine_taper(np.arange(4.0), 3)) < 0)
    c0, c1 = center_nodes(600, 3, 0, 2), center_nodes(600, 3, 1, 2)
    assert c0.tolist() == [67, 267, 467] and c1.tolist() == [133, 333, 533]


def test_syn3_structure():
    g = gen_syn3(seed=0)
    assert g.n_layers == 2 and g.n_features == 1
    assert np.array_equal(g.layers[0].edges, g.layers[1].edges)
    for ell in range(2):
        lab = g.labels[f"layer{ell}"]
        assert set(np.unique(lab)) == {0, 1}
        assert np.all(lab[g.metadata["centers"][ell]] == 1)
    assert g.metadata["t"] == pytest.approx(20.0 / g.metadata["lambda_max"])
    # layers differ only in the private atoms
    diff = g.layers[0].features - g.layers[1].features
    assert abs(diff.mean()) < 1e-9


def test_syn3_jacobi_matches_numpy():
    a = gen_syn3(M=80, K_nn=6, seed=1)
    b = gen_syn3(M=80, K_nn=6, seed=1, eig="jacobi")
    for la, lb in zip(a.layers, b.layers):
        assert np.allclose(la.features, lb.features, atol=1e-8)


def test_syn3_disconnected_raises(monkeypatch):
    import cadem.synth.spectral as spectral
    monkeypatch.setattr(spectral, "knn_graph", lambda pts, k: np.array([[0, 1], [2, 3]]))
    with pytest.raises(ValueError, match="disconnected"):
        gen_syn3(M=6, K_nn=1)


# --- dynamics -------------------------------------------------------------

def _scalar_rhs(name):
    def nb(x, a, i, f):
        return sum(a[i][j] * f(x[j]) for j in range(len(x)))

    table = {
        "population": lambda i, x, a: -x[i] ** 3 + nb(x, a, i, lambda v: v * v),
        "regulatory_dd": lambda i, x, a: -x[i] + nb(x, a, i, lambda v: v ** (1 / 3) / (1 + v ** (1 / 3))),
        "epidemic": lambda i, x, a: -x[i] + (1 - x[i]) * nb(x, a, i, lambda v: v),
        "biochemical": lambda i, x, a: 1 - x[i] - x[i] * nb(x, a, i, lambda v: v),
        "mutualistic": lambda i, x, a: x[i] * (1 - x[i]) + x[i] * nb(x, a, i, lambda v: v * v / (1 + v * v)),
        "regulatory_da": lambda i, x, a: -x[i] + nb(x, a, i, lambda v: v * v / (1 + v * v)),
    }
    return table[name]


def ode_worst_error(dt=1e-3, t_end=1.0, seed=0) -> dict:
    """Per dynamics: |integrator - fine-step scalar reference| on a 2-node pair."""
    rng = np.random.default_rng(seed)
    out = {}
    for name in SUBCLASSES:
        a = scaled_adjacency([[0, 1]], 2, 1.0)
        x0 = rng.uniform(0.1, 0.5, 2)
        ours = integrate_dynamics(name, a, x0, int(round(t_end / dt)), dt)
        ref = euler_reference(_scalar_rhs(name), a.toarray().tolist(), x0, t_end, dt / 10)
        out[name] = float(np.max(np.abs(ours - ref)))
    return out


def test_ode_matches_fine_step_reference():
    errs = ode_worst_error()
    assert all(e < 1e-3 for e in errs.values()), errs


def test_isolated_biochemical_converges():
    a = scaled_adjacency(np.zeros((0, 2)), 1, 1.2)
    x = integrate_dynamics("biochemical", a, [0.3], 300, 0.04)
    assert abs(x[0] - 1.0) < 1e-3


def test_epidemic_zero_fixed_point():
    a = scaled_adjacency([[0, 1], [1, 2]], 3, 1.2)
    assert np.all(integrate_dynamics("epidemic", a, np.zeros(3), 300, 0.04) == 0)


def test_integrator_oracles():
    x0 = np.array([0.2, -0.7])
    assert np.array_equal(integrate_dynamics(lambda x, a: 0 * x, None, x0, 10, 0.1), x0)
    x = integrate_dynamics(lambda x, a: -x, None, [1.0], 250, 0.04)
    assert x[0] == pytest.approx(0.96 ** 250, rel=1e-12)


def test_regulatory_da_three_steps_by_hand():
    a = np.array([[0.0, 0.2], [0.2, 0.0]])
    x = [0.3, 0.6]
    dt = 0.02
    for _ in range(3):
        h = [v * v / (1 + v * v) for v in x]
        x = [x[0] + dt * (-x[0] + 0.2 * h[1]), x[1] + dt * (-x[1] + 0.2 * h[0])]
    got = integrate_dynamics("regulatory_da", a, [0.3, 0.6], 3, dt)
    assert np.allclose(got, x, atol=1e-15)


def test_integrator_errors():
    with pytest.raises(ValueError):
        integrate_dynamics("epidemic", None, [0.1], 10, 0.0)
    with pytest.raises(FloatingPointError, match="population"):
        integrate_dynamics("population", np.array([[0.0]]), [-10.0], 200, 1.0)


def test_scaled_adjacency_radius():
    from cadem.graph import spectral_radius
    a = scaled_adjacency([[0, 1], [1, 2], [0, 2], [2, 3]], 4, 0.2)
    assert spectral_radius(a) == pytest.approx(0.2, abs=1e-8)


def test_syn4_collection():
    graphs = gen_syn4(n_base=3, M=30, p_er=0.2, seed=0)
    assert len(graphs) == 9
    assert set(RHS) == set(SUBCLASSES)
    by_base = {}
    for g in graphs:
        assert g.n_layers == 2 and g.n_features == 3
        assert is_connected(g.layers[0].edges, 30)
        assert np.array_equal(g.layers[0].edges, g.layers[1].edges)
        by_base.setdefault(g.metadata["base_graph"], []).append(g)
        cls = CLASSES[g.metadata["class"]]
        assert [SUBCLASSES[s] for s in g.metadata["subclass"]] == list(cls.dynamics)
    for members in by_base.values():
        assert len(members) == 3
        e0 = canonical_edges(members[0].layers[0].edges)
        assert all(np.array_equal(canonical_edges(m.layers[0].edges), e0) for m in members)
