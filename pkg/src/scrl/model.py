"""Two-branch GCN with a shared prototype head and a linear classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError
from .tensor import SparseMatrix, Variable

ABLATION_MODES = ("full", "no-ssl", "topology-only", "feature-only")


def _zeros(rows: int, cols: int) -> Variable:
    return T.parameter(np.zeros((rows, cols)))


@dataclass
class GcnEncoder:
    w0: Variable
    w1: Variable
    dropout: float = 0.5

    @classmethod
    def create(cls, in_dim: int, hidden: int, out_dim: int, dropout: float = 0.5):
        return cls(_zeros(in_dim, hidden), _zeros(hidden, out_dim), dropout)


@dataclass
class PrototypeHead:
    prototypes: Variable
    tau: float = 0.1
    normalize: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"temperature must be positive, got {self.tau}")

    @property
    def num_prototypes(self) -> int:
        return self.prototypes.shape[1]


@dataclass
class Classifier:
    weight: Variable
    bias: Variable

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]


class ScrlModel:
    """Topology and feature GCN encoders, one prototype head, one classifier.

    Which parts exist depends on ``ablation``: the single-branch modes build
    only their encoder and no prototype head, and their classifier reads a
    ``U``-wide embedding instead of the ``2U`` concatenation.
    """

    def __init__(self, num_features: int, num_classes: int, hidden: int = 256,
                 embed: int = 128, num_prototypes: int | None = None, tau: float = 0.1,
                 dropout: float = 0.5, ablation: str = "full", normalize: bool = False):
        if ablation not in ABLATION_MODES:
            raise ParameterError(f"unknown ablation mode {ablation!r}")
        b = 3 * num_classes if num_prototypes is None else int(num_prototypes)
        if b < num_classes:
            raise ParameterError(f"need at least M={num_classes} prototypes, got {b}")
        self.ablation = ablation
        self.topology_encoder = None
        self.feature_encoder = None
        self.head = None
        if ablation != "feature-only":
            self.topology_encoder = GcnEncoder.create(num_features, hidden, embed, dropout)
        if ablation != "topology-only":
            self.feature_encoder = GcnEncoder.create(num_features, hidden, embed, dropout)
        if self.two_branch:
            self.head = PrototypeHead(_zeros(embed, b), tau, normalize)
        width = 2 * embed if self.two_branch else embed
        self.classifier = Classifier(_zeros(width, num_classes), _zeros(1, num_classes))

    @property
    def two_branch(self) -> bool:
        return self.ablation in ("full", "no-ssl")

    def named_parameters(self) -> list[tuple[str, Variable]]:
        """Parameters in a fixed declaration order (also the checkpoint order)."""
        out = []
        for prefix, enc in (("topology", self.topology_encoder),
                            ("feature", self.feature_encoder)):
            if enc is not None:
                out += [(f"{prefix}.w0", enc.w0), (f"{prefix}.w1", enc.w1)]
        if self.head is not None:
            out.append(("head.prototypes", self.head.prototypes))
        out += [("classifier.weight", self.classifier.weight),
                ("classifier.bias", self.classifier.bias)]
        return out

    def parameters(self) -> list[Variable]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(state) != set(params):
            raise ShapeError(
                f"parameter names differ: {sorted(set(state) ^ set(params))}"
            )
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != params[name].shape:
                raise ShapeError(f"{name}: shape {value.shape} != {params[name].shape}")
            params[name].value = value.copy()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(model: ScrlModel, rng: np.random.Generator) -> None:
    """Glorot-uniform weights and prototypes, zero bias, drawn in declaration order."""
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            p.value = np.zeros(p.shape)
        else:
            p.value = glorot_uniform(rng, *p.shape)
        p.zero_grad()


# --------------------------------------------------------------------------- #
# Forward pieces
# --------------------------------------------------------------------------- #


def encoder_forward(enc: GcnEncoder, op: SparseMatrix, x, training: bool,
                    rng: np.random.Generator | None = None) -> Variable:
    """Two GCN layers, ``relu(op @ drop(relu(op @ drop(x) @ W0)) @ W1)``.

    ``x`` may be a dense array, a Variable, or a constant SparseMatrix (sparse
    bag-of-words features); dropout on a sparse input acts on stored entries.
    """
    n = op.shape[0]
    if op.shape != (n, n):
        raise ShapeError(f"propagation operator must be square, got {op.shape}")
    if x.shape[0] != n or x.shape[1] != enc.w0.shape[0]:
        raise ShapeError(f"features {x.shape} do not match operator {op.shape} "
                         f"and weights {enc.w0.shape}")
    if training and enc.dropout > 0 and rng is None:
        raise ParameterError("a random generator is required for training-mode dropout")
    if isinstance(x, SparseMatrix):
        xw = T.spmm(T.sparse_dropout(x, enc.dropout, training, rng), enc.w0)
    else:
        xv = x if isinstance(x, Variable) else T.constant(x)
        xw = T.matmul(T.dropout(xv, enc.dropout, training, rng), enc.w0)
    h = T.relu(T.spmm(op, xw))
    h = T.dropout(h, enc.dropout, training, rng)
    return T.relu(T.spmm(op, T.matmul(h, enc.w1)))


def prototype_scores(head: PrototypeHead, x: Variable) -> Variable:
    if x.shape[1] != head.prototypes.shape[0]:
        raise ShapeError(f"embedding width {x.shape[1]} != prototype dim "
                         f"{head.prototypes.shape[0]}")
    c = head.prototypes
    if head.normalize:
        x = T.l2_normalize(x, axis=1)
        c = T.l2_normalize(c, axis=0)
    return T.matmul(x, c)


def assignment_probs(head: PrototypeHead, z: Variable) -> Variable:
    return T.row_softmax(z, head.tau)


def classify(clf: Classifier, x_t: Variable, x_f: Variable | None = None) -> Variable:
    """Class probabilities from the (concatenated) embeddings."""
    r = x_t if x_f is None else T.concat_cols(x_t, x_f)
    if r.shape[1] != clf.weight.shape[0]:
        raise ShapeError(f"representation width {r.shape[1]} != classifier input "
                         f"{clf.weight.shape[0]}")
    return T.row_softmax(T.add_row(T.matmul(r, clf.weight), clf.bias), 1.0)


class ForwardResult(NamedTuple):
    y_pred: Variable
    x_t: Variable | None = None
    x_f: Variable | None = None
    z_t: Variable | None = None
    z_f: Variable | None = None
    p_t: Variable | None = None
    p_f: Variable | None = None

    def representation(self) -> np.ndarray:
        parts = [v.value for v in (self.x_t, self.x_f) if v is not None]
        return np.concatenate(parts, axis=1)


def forward(model: ScrlModel, topology_op: SparseMatrix | None,
            feature_op: SparseMatrix | None, x, training: bool = False,
            rng: np.random.Generator | None = None, prototypes: bool = True) -> ForwardResult:
    """Run the whole network; prototype scores are skipped when ``prototypes`` is False."""
    x_t = x_f = None
    if model.topology_encoder is not None:
        x_t = encoder_forward(model.topology_encoder, topology_op, x, training, rng)
    if model.feature_encoder is not None:
        x_f = encoder_forward(model.feature_encoder, feature_op, x, training, rng)
    if x_t is None:
        y = classify(model.classifier, x_f)
    elif x_f is None:
        y = classify(model.classifier, x_t)
    else:
        y = classify(model.classifier, x_t, x_f)
    if not (prototypes and model.head is not None):
        return ForwardResult(y, x_t, x_f)
    z_t = prototype_scores(model.head, x_t)
    z_f = prototype_scores(model.head, x_f)
    return ForwardResult(y, x_t, x_f, z_t, z_f,
                         assignment_probs(model.head, z_t),
                         assignment_probs(model.head, z_f))
