"""Dual GCN encoders, prediction heads, pooling and the attention combiner."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import SparseMatrix, Value

# features sparser than this go through the sparse product path
SPARSE_FEATURE_DENSITY = 0.2


def init_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class ModelConfig:
    n_layers: int
    n_features: int
    hidden: int = 64
    dim: int = 8
    activation: str = "relu"
    combine: str = "concat"
    seed: int = 0


class CademModel:
    """Per-layer common/private GCN encoders plus the ``phi`` and ``psi`` heads.

    Layer ``l`` owns four weight matrices: ``gcn_c``/``gcn_p`` (F x H) and
    ``proj_c``/``proj_p`` (H x d).  ``phi`` maps a pooled private embedding
    to layer logits; ``psi`` maps a concatenated (private, common) pair.
    """

    def __init__(self, config: ModelConfig):
        if config.n_layers < 1:
            raise ValueError("model needs at least one layer")
        if config.combine != "concat":
            raise ValueError("only concatenation is supported for combining private and common")
        self.config = config
        rng = np.random.default_rng(config.seed)
        f, h, d, n = config.n_features, config.hidden, config.dim, config.n_layers
        self.gcn_c, self.gcn_p, self.proj_c, self.proj_p = [], [], [], []
        for ell in range(n):
            self.gcn_c.append(ad.parameter(init_uniform(rng, f, h), f"gcn_c{ell}"))
            self.proj_c.append(ad.parameter(init_uniform(rng, h, d), f"proj_c{ell}"))
            self.gcn_p.append(ad.parameter(init_uniform(rng, f, h), f"gcn_p{ell}"))
            self.proj_p.append(ad.parameter(init_uniform(rng, h, d), f"proj_p{ell}"))
        n_out = max(n, 2)
        self.phi_w = ad.parameter(init_uniform(rng, d, n_out), "phi_w")
        self.phi_b = ad.parameter(rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), (1, n_out)), "phi_b")
        self.psi_w = ad.parameter(init_uniform(rng, 2 * d, n_out), "psi_w")
        self.psi_b = ad.parameter(rng.uniform(-1 / np.sqrt(2 * d), 1 / np.sqrt(2 * d), (1, n_out)), "psi_b")

    @property
    def n_layers(self) -> int:
        return self.config.n_layers

    @property
    def dim(self) -> int:
        return self.config.dim

    def head_params(self) -> list[Value]:
        return [self.phi_w, self.phi_b, self.psi_w, self.psi_b]

    def encoder_params(self) -> list[Value]:
        out = []
        for ell in range(self.n_layers):
            out += [self.gcn_c[ell], self.proj_c[ell], self.gcn_p[ell], self.proj_p[ell]]
        return out

    def parameters(self) -> list[Value]:
        return self.encoder_params() + self.head_params()

    def phi(self, h_private: Value) -> Value:
        return ad.matmul(h_private, self.phi_w) + self.phi_b

    def psi(self, h_private: Value, h_common: Value) -> Value:
        return ad.matmul(ad.concat_cols([h_private, h_common]), self.psi_w) + self.psi_b


def _feature_product(features, weight: Value, dropout: float, rng, train: bool) -> Value:
    """``X @ W`` with optional inverted feature dropout on X."""
    if isinstance(features, SparseMatrix):
        s = features
        if train and dropout > 0.0:
            keep = rng.random(s.nnz) >= dropout
            s = SparseMatrix(s.n_rows, s.n_cols, s.rows[keep], s.cols[keep],
                             s.weights[keep] / (1.0 - dropout))
        return ad.sparse_dense_matmul(s, weight)
    x = np.asarray(features, dtype=np.float64)
    if train and dropout > 0.0:
        x = x * ((rng.random(x.shape) >= dropout) / (1.0 - dropout))
    return ad.matmul(Value(x), weight)


def prepare_features(features):
    """Pick the sparse path for low-density feature matrices."""
    if isinstance(features, SparseMatrix):
        return features
    x = np.asarray(features, dtype=np.float64)
    if np.count_nonzero(x) <= SPARSE_FEATURE_DENSITY * x.size:
        return SparseMatrix.from_dense(x)
    return x


def encode(model: CademModel, layer: int, adj: SparseMatrix, features,
           train: bool = False, dropout: float = 0.0,
           rng: np.random.Generator | None = None) -> tuple[Value, Value]:
    """Common and private node embeddings of one layer.

    ``C = relu(A_hat X W_c) W'_c`` and likewise for ``P``.  Both branches
    share a single propagation by stacking their GCN weights side by side.
    """
    n_feat = features.shape[1]
    if n_feat != model.config.n_features:
        raise ad.ShapeError(f"layer features have {n_feat} columns, model expects {model.config.n_features}")
    if adj.n_rows != features.shape[0]:
        raise ad.ShapeError(f"adjacency {adj.shape} does not match {features.shape[0]} feature rows")
    if train and dropout > 0.0 and rng is None:
        raise ValueError("dropout in train mode needs an rng")
    h = model.config.hidden
    w = ad.concat_cols([model.gcn_c[layer], model.gcn_p[layer]])
    xw = _feature_product(features, w, dropout, rng, train)
    hidden = ad.relu(ad.sparse_dense_matmul(adj, xw))
    common = ad.matmul(ad.col_slice(hidden, 0, h), model.proj_c[layer])
    private = ad.matmul(ad.col_slice(hidden, h, 2 * h), model.proj_p[layer])
    return common, private


def encode_layer(model: CademModel, layer: int, graph, train: bool = False,
                 dropout: float = 0.0, rng: np.random.Generator | None = None) -> tuple[Value, Value]:
    """Encode a :class:`~cadem.graph.LayerGraph` with layer ``layer``'s encoders."""
    return encode(model, layer, graph.normalized_adj, prepare_features(graph.features),
                  train=train, dropout=dropout, rng=rng)


def pooling_matrix(sizes, mode: str = "add") -> SparseMatrix:
    """Sparse (n_graphs x total_nodes) matrix pooling consecutive row blocks."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if np.any(sizes < 1):
        raise ValueError("every pooled graph needs at least one node")
    graph_id = np.repeat(np.arange(sizes.size), sizes)
    cols = np.arange(int(sizes.sum()))
    if mode in ("add", "sum"):
        w = np.ones(cols.size)
    elif mode == "mean":
        w = 1.0 / sizes[graph_id]
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return SparseMatrix(sizes.size, cols.size, graph_id, cols, w)


def pool_graph(embeddings: Value, mode: str = "add") -> Value:
    """Reduce an M x d embedding to 1 x d."""
    return ad.sparse_dense_matmul(pooling_matrix([embeddings.shape[0]], mode), embeddings)


class MHACombiner:
    """Multi-head attention over per-node token sets, heads averaged.

    Each head projects tokens to queries/keys of width ``d / heads`` and to
    values of width ``d``.  Attention runs across the token slots of each
    node independently; the per-head outputs are averaged and then the
    token outputs are averaged into one d-vector per node.
    """

    def __init__(self, dim: int, heads: int = 4, seed: int = 0):
        if dim % heads:
            raise ValueError(f"embedding dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.key_dim = dim // heads
        rng = np.random.default_rng(seed)
        self.wq = [ad.parameter(init_uniform(rng, dim, self.key_dim), f"mha_q{h}") for h in range(heads)]
        self.wk = [ad.parameter(init_uniform(rng, dim, self.key_dim), f"mha_k{h}") for h in range(heads)]
        self.wv = [ad.parameter(init_uniform(rng, dim, dim), f"mha_v{h}") for h in range(heads)]

    def parameters(self) -> list[Value]:
        return self.wq + self.wk + self.wv

    def __call__(self, tokens) -> Value:
        tokens = [t if isinstance(t, Value) else Value(t) for t in tokens]
        if not tokens:
            raise ValueError("combiner needs at least one token")
        n_tok = len(tokens)
        inv = 1.0 / np.sqrt(self.key_dim)
        total = None
        for h in range(self.heads):
            q = [ad.matmul(t, self.wq[h]) for t in tokens]
            k = [ad.matmul(t, self.wk[h]) for t in tokens]
            v = [ad.matmul(t, self.wv[h]) for t in tokens]
            for a in range(n_tok):
                scores = ad.concat_cols([ad.row_dot(q[a], k[b]) for b in range(n_tok)])
                attn = ad.row_softmax(ad.scale(scores, inv))
                for b in range(n_tok):
                    term = ad.mul(ad.column(attn, b), v[b])
                    total = term if total is None else total + term
        return ad.scale(total, 1.0 / (self.heads * n_tok))


def mha_combine(combiner: MHACombiner, common, private_layers) -> Value:
    """Two-token combination: the common row and the mean private row per node."""
    privates = [np.asarray(p.data if isinstance(p, Value) else p) for p in private_layers]
    mean_private = np.mean(privates, axis=0)
    common = common.data if isinstance(common, Value) else np.asarray(common)
    return combiner([Value(common), Value(mean_private)])


_MAGIC = b"CADEMCKPT1\n"


def save_checkpoint(model: CademModel, path, extra: dict | None = None) -> Path:
    """Header line of JSON then the little-endian float64 parameter blob."""
    path = Path(path)
    params = model.parameters()
    header = {
        "config": asdict(model.config),
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
        "extra": extra or {},
    }
    blob = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in params)
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[CademModel, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode())
        blob = fh.read()
    model = CademModel(ModelConfig(**header["config"]))
    offset = 0
    for p, spec in zip(model.parameters(), header["params"]):
        if p.name != spec["name"] or list(p.shape) != spec["shape"]:
            raise ValueError(f"checkpoint parameter mismatch at {spec['name']}")
        count = p.data.size
        p.data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(p.shape)
        p.grad = np.zeros_like(p.data)
        offset += 8 * count
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in parameter blob")
    return model, header.get("extra", {})
