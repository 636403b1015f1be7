"""Losses, Adam, and the full-batch SCRL training loop."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, NamedTuple

import numpy as np

from . import tensor as T
from .errors import NumericalError, ParameterError, ShapeError, ValidationError
from .graph import DatasetBundle, build_knn_graph, normalize_adjacency
from .model import ABLATION_MODES, ScrlModel, forward, init_params
from .sinkhorn import SinkhornConfig, pseudo_labels, sinkhorn_assign
from .tensor import SparseMatrix, Variable

LOG_FLOOR = 1e-30
# below this feature density the first-layer product runs as sparse x dense
SPARSE_FEATURE_DENSITY = 0.25


@dataclass
class TrainConfig:
    k: int = 7
    tau: float = 0.1
    prototypes: int | None = None
    sinkhorn_iters: int = 5
    epsilon: float = 0.05
    lr: float = 3e-4
    weight_decay: float = 5e-4
    dropout: float = 0.5
    epochs: int = 200
    seed: int = 0
    ablation: str = "full"
    hidden: int = 256
    embed: int = 128
    self_loops: bool = True
    eval_every: int = 1
    normalize: bool = False
    select: str = "best-val"
    # split protocol; used only when splits are drawn instead of read from disk
    lpc: int | None = None
    split_seed: int = 0
    val_size: int = 500
    test_size: int = 1000

    def validate(self, num_classes: int | None = None) -> None:
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.k < 1:
            raise ParameterError(f"k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.ablation not in ABLATION_MODES:
            raise ParameterError(f"ablation must be one of {ABLATION_MODES}")
        if self.select not in ("best-val", "final"):
            raise ParameterError("select must be 'best-val' or 'final'")
        if self.eval_every < 1:
            raise ParameterError("eval_every must be >= 1")
        SinkhornConfig(self.sinkhorn_iters, self.epsilon)
        if num_classes is not None and self.prototypes is not None \
                and self.prototypes < num_classes:
            raise ParameterError(f"prototypes B={self.prototypes} < M={num_classes}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Variable], **kw) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params],
                   [np.zeros(p.shape) for p in params], **kw)


@dataclass
class EpochMetrics:
    epoch: int
    l_ce: float
    l_ss: float
    loss: float
    train_acc: float | None = None
    val_acc: float | None = None
    test_acc: float | None = None
    test_f1: float | None = None
    wall_ms: float = field(default=0.0, compare=False)

    def to_record(self) -> dict:
        """JSON-ready fields without the wall-clock timing (kept byte-reproducible)."""
        d = asdict(self)
        d.pop("wall_ms")
        return d


# --------------------------------------------------------------------------- #
# Losses
# --------------------------------------------------------------------------- #


def swapped_prediction_loss(p_t: Variable, p_f: Variable, q_t, q_f) -> Variable:
    """Mean over nodes of the two cross-predicted cross-entropies.

    ``q_t`` and ``q_f`` are per-node target distributions (plain arrays), so
    gradients reach only ``p_t`` and ``p_f``.
    """
    q_t = np.asarray(getattr(q_t, "value", q_t), dtype=np.float64)
    q_f = np.asarray(getattr(q_f, "value", q_f), dtype=np.float64)
    if not (p_t.shape == p_f.shape == q_t.shape == q_f.shape):
        raise ShapeError(f"shapes differ: p_t {p_t.shape}, p_f {p_f.shape}, "
                         f"q_t {q_t.shape}, q_f {q_f.shape}")
    n = p_t.shape[0]
    cross_t = T.sum_all(T.mul(T.log(p_t, LOG_FLOOR), q_f))
    cross_f = T.sum_all(T.mul(T.log(p_f, LOG_FLOOR), q_t))
    return T.scale(T.add(cross_t, cross_f), -1.0 / n)


def supervised_ce_loss(y_pred: Variable, labels, train_index) -> Variable:
    """Cross-entropy summed (not averaged) over the labeled nodes."""
    idx = np.asarray(train_index, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValidationError("training index set is empty")
    labels = np.asarray(labels, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= y_pred.shape[0]:
        raise ValidationError("training index out of range")
    picked = T.take(y_pred, idx, labels[idx])
    return T.scale(T.sum_all(T.log(picked, LOG_FLOOR)), -1.0)


def total_loss(l_ce: Variable, l_ss: Variable | None, mode: str) -> Variable:
    if mode == "full":
        return T.add(l_ce, l_ss)
    return l_ce


# --------------------------------------------------------------------------- #
# Optimizer
# --------------------------------------------------------------------------- #


def adam_step(params: list[Variable], grads: list[np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update with L2 weight decay folded into the gradient."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        if weight_decay:
            g = g + weight_decay * p.value
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------------- #
# Metrics
# --------------------------------------------------------------------------- #


def accuracy_and_macro_f1(y_true, y_pred, num_classes: int) -> tuple[float, float]:
    """Accuracy and the unweighted mean of per-class F1 over all ``num_classes``.

    A class with no true and no predicted members contributes F1 = 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValidationError("cannot evaluate an empty index set")
    acc = float(np.mean(y_true == y_pred))
    f1s = []
    for c in range(num_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return acc, float(np.mean(f1s))


# --------------------------------------------------------------------------- #
# Training
# --------------------------------------------------------------------------- #


class GraphInputs(NamedTuple):
    topology_op: SparseMatrix | None
    feature_op: SparseMatrix | None
    features: object  # dense array or SparseMatrix


def prepare_inputs(dataset: DatasetBundle, cfg: TrainConfig) -> GraphInputs:
    """Normalized propagation operators and the feature matrix in its fastest form."""
    topo = feat = None
    if cfg.ablation != "feature-only":
        topo = normalize_adjacency(dataset.adjacency, cfg.self_loops)
    if cfg.ablation != "topology-only":
        knn = build_knn_graph(dataset.features, cfg.k)
        feat = normalize_adjacency(knn.adjacency, cfg.self_loops)
    x = dataset.features
    if np.count_nonzero(x) <= SPARSE_FEATURE_DENSITY * x.size:
        x = SparseMatrix.from_dense(x)
    return GraphInputs(topo, feat, x)


def build_model(cfg: TrainConfig, num_features: int, num_classes: int) -> ScrlModel:
    return ScrlModel(num_features, num_classes, hidden=cfg.hidden, embed=cfg.embed,
                     num_prototypes=cfg.prototypes, tau=cfg.tau, dropout=cfg.dropout,
                     ablation=cfg.ablation, normalize=cfg.normalize)


def predict(model: ScrlModel, inputs: GraphInputs) -> np.ndarray:
    """Evaluation-mode class probabilities for every node."""
    out = forward(model, inputs.topology_op, inputs.feature_op, inputs.features,
                  training=False, prototypes=False)
    return out.y_pred.value


def embed(model: ScrlModel, inputs: GraphInputs) -> np.ndarray:
    """Evaluation-mode consensus representation (concatenated branch embeddings)."""
    out = forward(model, inputs.topology_op, inputs.feature_op, inputs.features,
                  training=False, prototypes=False)
    return out.representation()


def evaluate(model: ScrlModel, dataset: DatasetBundle, index,
             inputs: GraphInputs) -> tuple[float, float]:
    """Accuracy and macro-F1 of argmax predictions on ``index``."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.size == 0:
        raise ValidationError("cannot evaluate an empty index set")
    pred = predict(model, inputs).argmax(axis=1)
    return accuracy_and_macro_f1(dataset.labels[idx], pred[idx], dataset.num_classes)


class TrainingDiverged(NumericalError):
    def __init__(self, message: str, epoch: int, history: list[EpochMetrics]):
        super().__init__(message)
        self.epoch = epoch
        self.history = history


class TrainResult(NamedTuple):
    model: ScrlModel
    metrics: list[EpochMetrics]
    selected_epoch: int
    inputs: GraphInputs


def _train_epoch(model, dataset, inputs, cfg, sk, params, state, drop_rng,
                 epoch) -> EpochMetrics:
    model.zero_grad()
    with T.Tape() as tape:
        out = forward(model, inputs.topology_op, inputs.feature_op,
                      inputs.features, training=True, rng=drop_rng)
        l_ce = supervised_ce_loss(out.y_pred, dataset.labels, dataset.train)
        l_ss = None
        if out.p_t is not None:
            q_t = pseudo_labels(sinkhorn_assign(out.z_t, sk))
            q_f = pseudo_labels(sinkhorn_assign(out.z_f, sk))
            l_ss = swapped_prediction_loss(out.p_t, out.p_f, q_t, q_f)
        loss = total_loss(l_ce, l_ss, cfg.ablation)
    tape.backward(loss)
    adam_step(params, [p.grad for p in params], state, cfg.lr, cfg.weight_decay)
    if not all(np.isfinite(p.value).all() for p in params):
        raise NumericalError("parameters became non-finite")

    m = EpochMetrics(epoch, float(l_ce.value[0, 0]),
                     0.0 if l_ss is None else float(l_ss.value[0, 0]),
                     float(loss.value[0, 0]))
    if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
        pred = predict(model, inputs).argmax(axis=1)
        y = dataset.labels
        m.train_acc = float(np.mean(pred[dataset.train] == y[dataset.train]))
        if dataset.val.size:
            m.val_acc = float(np.mean(pred[dataset.val] == y[dataset.val]))
        if dataset.test.size:
            m.test_acc, m.test_f1 = accuracy_and_macro_f1(
                y[dataset.test], pred[dataset.test], dataset.num_classes)
    return m


def train(dataset: DatasetBundle, cfg: TrainConfig,
          on_epoch: Callable[[EpochMetrics], None] | None = None,
          inputs: GraphInputs | None = None) -> TrainResult:
    """Full-batch training; returns the selected model and per-epoch metrics.

    With a validation split and ``cfg.select == "best-val"`` the parameters
    from the epoch with the highest validation accuracy (earliest on ties) are
    restored at the end; otherwise the final parameters are kept.
    """
    cfg.validate(dataset.num_classes)
    if dataset.train.size == 0:
        raise ValidationError("dataset has no training nodes")
    if inputs is None:
        inputs = prepare_inputs(dataset, cfg)
    init_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    model = build_model(cfg, dataset.num_features, dataset.num_classes)
    init_params(model, np.random.default_rng(init_seq))
    drop_rng = np.random.default_rng(drop_seq)
    # in no-ssl mode the prototypes take no part in the loss; keep them out of
    # the optimizer so weight decay does not move them either
    params = [p for name, p in model.named_parameters()
              if not (cfg.ablation == "no-ssl" and name.startswith("head."))]
    state = AdamState.for_params(params)
    sk = SinkhornConfig(cfg.sinkhorn_iters, cfg.epsilon)
    use_val = cfg.select == "best-val" and dataset.val.size > 0

    history: list[EpochMetrics] = []
    best_val, best_state, best_epoch = -1.0, None, cfg.epochs - 1
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                m = _train_epoch(model, dataset, inputs, cfg, sk, params, state, drop_rng,
                                 epoch)
        except NumericalError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", epoch, history) from exc
        if use_val and m.val_acc is not None and m.val_acc > best_val:
            best_val, best_state, best_epoch = m.val_acc, model.state_dict(), epoch
        m.wall_ms = (time.perf_counter() - t0) * 1e3
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)

    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, inputs)
