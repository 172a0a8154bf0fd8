"""Linear probe and the attention-combiner probe used for combined embeddings."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Value
from ..encoders import MHACombiner, init_uniform
from .metrics import f1_scores


class LinearProbe:
    """Single linear layer with softmax output, trained full-batch with Adam."""

    def __init__(self, n_in: int, n_classes: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.w = ad.parameter(init_uniform(rng, n_in, n_classes), "probe_w")
        self.b = ad.parameter(np.zeros((1, n_classes)), "probe_b")
        self.mean = np.zeros((1, n_in))
        self.transform = np.eye(n_in)

    def parameters(self):
        return [self.w, self.b]

    def fit_scaler(self, x: np.ndarray, mode: str = "whiten") -> None:
        self.mean, self.transform = input_transform(x, mode)

    def logits(self, x) -> Value:
        if not isinstance(x, Value):
            x = Value((np.asarray(x, dtype=np.float64) - self.mean) @ self.transform)
        return ad.matmul(x, self.w) + self.b

    def predict_proba(self, x) -> np.ndarray:
        z = self.logits(x).data
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)


def input_transform(x: np.ndarray, mode: str = "whiten") -> tuple[np.ndarray, np.ndarray]:
    """Centre plus a linear map fitted on training rows only.

    ``"zscore"`` scales each column to unit variance; ``"whiten"`` uses the
    inverse square root of the (ridge-stabilised) covariance so all
    directions start on an equal footing.  Both leave the probe's model
    class unchanged; they only precondition its optimisation.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[1]
    mean = x.mean(axis=0, keepdims=True)
    if mode == "none":
        return np.zeros((1, n_in)), np.eye(n_in)
    xc = x - mean
    if mode == "zscore":
        sd = xc.std(axis=0)
        return mean, np.diag(1.0 / np.where(sd > 1e-12, sd, 1.0))
    if mode == "whiten":
        cov = xc.T @ xc / max(x.shape[0], 1)
        ridge = 1e-6 * max(float(np.trace(cov)) / n_in, 1e-300)
        w, v = np.linalg.eigh(cov + ridge * np.eye(n_in))
        return mean, v @ np.diag(w ** -0.5) @ v.T
    raise ValueError(f"unknown input scaling {mode!r}")


def _targets(y: np.ndarray, n_classes: int) -> np.ndarray:
    t = np.zeros((y.size, n_classes))
    t[np.arange(y.size), y] = 1.0
    return t


def _check_labels(y_train, n_classes):
    if n_classes < 2:
        raise ValueError("a probe needs at least two classes")
    if y_train.size == 0:
        raise ValueError("empty training set")


def train_probe(x_train, y_train, n_classes: int, epochs: int = 400, lr: float = 0.1,
                seed: int = 0, scaling: str = "zscore", weight_decay: float = 0.0) -> LinearProbe:
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    _check_labels(y_train, n_classes)
    probe = LinearProbe(x_train.shape[1], n_classes, seed=seed)
    probe.fit_scaler(x_train, scaling)
    opt = ad.Adam([{"params": [probe.w], "lr": lr, "weight_decay": weight_decay},
                   {"params": [probe.b], "lr": lr, "weight_decay": 0.0}])
    targets = _targets(y_train, n_classes)
    for _ in range(epochs):
        opt.zero_grad()
        loss = ad.softmax_cross_entropy(probe.logits(x_train), targets)
        ad.backward(loss)
        opt.step()
    return probe


def linear_probe(x_train, y_train, x_test, y_test, n_classes: int | None = None,
                 epochs: int = 400, lr: float = 0.1, seed: int = 0,
                 scaling: str = "zscore", weight_decay: float = 0.0) -> dict:
    """Fit on the training split and report test macro/micro F1.

    ``weight_decay`` is an L2 penalty on the weights (not the bias).
    """
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if n_classes is None:
        n_classes = int(max(y_train.max(), y_test.max())) + 1
    probe = train_probe(x_train, y_train, n_classes, epochs, lr, seed, scaling, weight_decay)
    pred = probe.predict(x_test)
    macro, micro = f1_scores(y_test, pred, n_classes)
    return {"macro_f1": macro, "micro_f1": micro, "pred": pred,
            "proba": probe.predict_proba(x_test)}


def combiner_probe(common: np.ndarray, private: list[np.ndarray], y, train_idx, test_idx,
                   n_classes: int | None = None, epochs: int = 400, lr: float = 0.1,
                   seed: int = 0, heads: int = 4, scaling: str = "rms",
                   weight_decay: float = 0.0) -> dict:
    """Train the attention combiner jointly with a linear probe on its output.

    Rows are samples (nodes, or pooled graphs).  The combiner sees the
    common row and the mean private row of each sample and never mixes
    rows, so training on ``train_idx`` never touches test rows.  By default
    both tokens are divided by one shared RMS scalar: per-token whitening
    destroys the relative geometry the attention relies on, while the raw
    scale makes any L2 penalty collapse the combiner.
    """
    y = np.asarray(y, dtype=np.int64)
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    _check_labels(y[train_idx], n_classes)
    mean_private = np.mean(private, axis=0)
    tokens = [np.asarray(common, dtype=np.float64), mean_private]
    # optional preconditioning, fitted on training rows
    if scaling == "rms":
        # one shared scalar keeps the relative geometry of the two tokens
        rms = np.sqrt(np.mean([np.mean(t[train_idx] ** 2) for t in tokens]))
        scaled = [t / (rms if rms > 1e-300 else 1.0) for t in tokens]
    else:
        scaled = []
        for t in tokens:
            mu, tr = input_transform(t[train_idx], scaling)
            scaled.append((t - mu) @ tr)
    dim = scaled[0].shape[1]
    combiner = MHACombiner(dim, heads=heads, seed=seed)
    probe = LinearProbe(dim, n_classes, seed=seed + 1)
    opt = ad.Adam([{"params": combiner.parameters() + [probe.w], "lr": lr,
                    "weight_decay": weight_decay},
                   {"params": [probe.b], "lr": lr, "weight_decay": 0.0}])
    targets = _targets(y[train_idx], n_classes)
    train_tokens = [Value(t[train_idx]) for t in scaled]
    for _ in range(epochs):
        opt.zero_grad()
        loss = ad.softmax_cross_entropy(probe.logits(combiner(train_tokens)), targets)
        ad.backward(loss)
        opt.step()
    out = combiner([Value(t[test_idx]) for t in scaled])
    pred = probe.predict(out)
    macro, micro = f1_scores(y[test_idx], pred, n_classes)
    return {"macro_f1": macro, "micro_f1": micro, "pred": pred,
            "proba": probe.predict_proba(out)}


def prediction_entropy(proba: np.ndarray) -> np.ndarray:
    p = np.clip(proba, 1e-300, 1.0)
    return -np.sum(np.where(proba > 0, proba * np.log(p), 0.0), axis=1)
