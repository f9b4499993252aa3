"""Order-embedding GNN encoder: model, penalty, max-margin training and threshold calibration."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import Graph
from .synthgen import TrainingPair, sample_batch, spawn_rng

log = logging.getLogger(__name__)

# reserved seed streams
STREAM_INIT, STREAM_BATCH, STREAM_HOLDOUT, STREAM_VALID = 0, 1, 2, 3
NEIGHBOUR_INIT_DAMPING = 0.25


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    layers: int = 8
    out_dim: int = 64
    mlp_layers: int = 4


@dataclass
class TrainConfig:
    batch_size: int = 64
    margin: float = 0.1
    lr: float = 1e-4
    batches: int = 20_000
    seed: int = 0
    eval_every: int = 1000
    holdout_pairs: int = 10_000
    validation_pairs: int = 2_000

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch size must be even so classes balance")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")


class EncoderModel:
    """Parameters of the encoder plus the calibrated classification threshold."""

    def __init__(self, params: dict[str, np.ndarray], config: ModelConfig, threshold: Optional[float] = None):
        self.params = params
        self.config = config
        self.threshold = threshold

    @classmethod
    def initialize(cls, config: ModelConfig = ModelConfig(), seed: int = 0) -> "EncoderModel":
        rng = spawn_rng(seed, STREAM_INIT)
        h = config.hidden
        p: dict[str, np.ndarray] = {}

        def dense(name, fan_in, fan_out, gain=2.0):
            p[f"{name}.w"] = rng.normal(0.0, math.sqrt(gain / fan_in), size=(fan_in, fan_out))
            p[f"{name}.b"] = np.zeros((1, fan_out))

        dense("pre.0", 2, h)
        dense("pre.1", h, h, gain=1.0)
        for l in range(1, config.layers + 1):
            d_in = _layer_input_dim(config, l)
            dense(f"conv.{l}", 2 * d_in, h, gain=1.0)
            # summed neighbour messages scale with degree; damp them so depth does not blow up
            p[f"conv.{l}.w"][d_in:] *= NEIGHBOUR_INIT_DAMPING
            for i in range(1, l):
                p[f"skip.{i}.{l}"] = np.full((1, 1), 1.0 / (l - 1))
        dims = [_layer_input_dim(config, config.layers + 1)] + [h] * (config.mlp_layers - 1) + [config.out_dim]
        for j in range(config.mlp_layers):
            dense(f"post.{j}", dims[j], dims[j + 1])
        return cls(p, config)

    @property
    def dim(self) -> int:
        return self.config.out_dim

    def copy(self) -> "EncoderModel":
        return EncoderModel({k: v.copy() for k, v in self.params.items()}, self.config, self.threshold)

    def save(self, path: str | Path, extra: Optional[dict] = None) -> None:
        meta = {"model": asdict(self.config), "threshold": self.threshold}
        if extra:
            meta.update(extra)
        ad.save_tensors(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "EncoderModel":
        params, meta = ad.load_tensors(path)
        return cls(params, ModelConfig(**meta.get("model", {})), meta.get("threshold"))


def _layer_input_dim(config: ModelConfig, l: int) -> int:
    """Width of the node representation fed into layer ``l`` (``l = L+1`` is the readout)."""
    if l == 1 or l == 2:
        return config.hidden
    return 2 * config.hidden


@dataclass
class GraphBatch:
    features: np.ndarray
    adjacency: sp.csr_matrix
    segments: np.ndarray
    count: int


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    """Stack anchored graphs into one block-diagonal problem."""
    sizes = [g.n for g in graphs]
    total = sum(sizes)
    feats = np.zeros((total, 2))
    feats[:, 1] = 1.0
    rows, cols = [], []
    segments = np.repeat(np.arange(len(graphs)), sizes)
    offset = 0
    for g in graphs:
        if g.anchor is None:
            raise ValueError("embedding requires an anchored graph")
        if g.n == 0:
            raise ValueError("cannot embed an empty graph")
        feats[offset + g.anchor] = (1.0, 0.0)
        for u, v in sorted(g.edges):
            rows.extend((offset + u, offset + v))
            cols.extend((offset + v, offset + u))
        offset += g.n
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(total, total))
    adj.sort_indices()
    return GraphBatch(feats, adj, segments, len(graphs))


def forward(model: EncoderModel, batch: GraphBatch, tensors: Optional[dict[str, ad.Tensor]] = None) -> ad.Tensor:
    """Embed a batch; pass ``tensors`` (leaf tensors of the parameters) to record gradients."""
    cfg = model.config
    t = tensors if tensors is not None else {k: ad.Tensor(v) for k, v in model.params.items()}
    x = ad.Tensor(batch.features)
    h0 = ad.relu(ad.linear(x, t["pre.0.w"], t["pre.0.b"]))
    h = ad.linear(h0, t["pre.1.w"], t["pre.1.b"])
    conv_out: list[ad.Tensor] = []
    for l in range(1, cfg.layers + 1):
        agg = ad.spmm(batch.adjacency, h)
        msg = ad.relu(ad.linear(ad.concat([h, agg]), t[f"conv.{l}.w"], t[f"conv.{l}.b"]))
        conv_out.append(msg)
        if l == 1:
            h = msg
            continue
        skip = ad.scalar_mul(conv_out[0], t[f"skip.1.{l}"])
        for i in range(2, l):
            skip = ad.add(skip, ad.scalar_mul(conv_out[i - 1], t[f"skip.{i}.{l}"]))
        h = ad.concat([skip, msg])
    z = ad.segment_sum(h, batch.segments, batch.count)
    for j in range(cfg.mlp_layers):
        z = ad.linear(z, t[f"post.{j}.w"], t[f"post.{j}.b"])
        if j < cfg.mlp_layers - 1:
            z = ad.relu(z)
    return ad.absolute(z)


def embed_many(model: EncoderModel, graphs: Sequence[Graph], chunk: int = 256) -> np.ndarray:
    """Embeddings of many anchored graphs, shape (len(graphs), dim)."""
    if not graphs:
        return np.zeros((0, model.dim))
    out = []
    for start in range(0, len(graphs), chunk):
        out.append(forward(model, batch_graphs(graphs[start : start + chunk])).data)
    return np.vstack(out)


def embed(model: EncoderModel, g: Graph) -> np.ndarray:
    """Non-negative order embedding of one anchored graph."""
    if g.anchor is None:
        raise ValueError("embedding requires an anchored graph")
    return embed_many(model, [g])[0]


def penalty(a: np.ndarray, b: np.ndarray) -> float:
    """Order violation ``||max(0, a - b)||^2``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("embeddings must have equal dimensions")
    d = np.maximum(a - b, 0.0)
    return float(np.dot(d, d))


def penalties(small: np.ndarray, big: np.ndarray) -> np.ndarray:
    """Row-wise penalties for paired embedding matrices."""
    d = np.maximum(np.asarray(small) - np.asarray(big), 0.0)
    return np.einsum("ij,ij->i", d, d)


def margin_loss(small: ad.Tensor, big: ad.Tensor, labels: np.ndarray, margin: float) -> ad.Tensor:
    """Mean max-margin order loss: positives pay E, negatives pay max(0, margin - E)."""
    labels = np.asarray(labels, dtype=bool).reshape(-1, 1)
    if small.shape[0] == 0:
        raise ValueError("empty batch")
    e = ad.row_sq_norm(ad.hinge(small, big))
    pos = ad.mul_const(e, labels.astype(float))
    neg = ad.mul_const(ad.hinge(ad.Tensor(np.full(e.shape, margin)), e), (~labels).astype(float))
    return ad.mean_all(ad.add(pos, neg))


def pair_loss(model: EncoderModel, pairs: Sequence[TrainingPair], margin: float, tape: Optional[ad.Tape] = None):
    """Loss on a batch of pairs. Returns (loss tensor, leaf parameter tensors)."""
    leaves = {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in model.params.items()}
    graphs = [p.small for p in pairs] + [p.big for p in pairs]
    z = forward(model, batch_graphs(graphs), leaves)
    n = len(pairs)
    small = _rows(z, 0, n)
    big = _rows(z, n, 2 * n)
    return margin_loss(small, big, np.array([p.label for p in pairs]), margin), leaves


def _rows(z: ad.Tensor, start: int, stop: int) -> ad.Tensor:
    sel = sp.csr_matrix(
        (np.ones(stop - start), (np.arange(stop - start), np.arange(start, stop))), shape=(stop - start, z.shape[0])
    )
    return ad.spmm(sel, z)


def loss_and_grads(model: EncoderModel, pairs: Sequence[TrainingPair], margin: float) -> tuple[float, dict[str, np.ndarray]]:
    with ad.Tape() as tape:
        loss, leaves = pair_loss(model, pairs, margin)
    tape.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return loss.item(), grads


# -- threshold calibration and metrics ---------------------------------------------


def calibrate_threshold(pens: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Pick the threshold ``t`` maximising balanced accuracy of ``E < t``.

    Thresholds between two consecutive distinct penalties classify identically;
    each such interval is represented by its midpoint, the interval below the
    smallest value by that value, the interval above the largest by a value just
    past it. Earliest best interval wins. Returns ``(t, balanced_accuracy)``.
    """
    pens = np.asarray(pens, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("calibration needs both positive and negative pairs")
    values = np.unique(pens)
    pos_sorted = np.sort(pens[labels])
    neg_sorted = np.sort(pens[~labels])
    top = values[-1] + max(abs(values[-1]) * 1e-9, 1e-12)
    candidates = [values[0]] + [(a + b) / 2 for a, b in zip(values[:-1], values[1:])] + [top]
    cand = np.array(candidates)
    tp = np.searchsorted(pos_sorted, cand, side="left")
    fp = np.searchsorted(neg_sorted, cand, side="left")
    bal = 0.5 * (tp / n_pos + (n_neg - fp) / n_neg)
    best = int(np.argmax(bal))
    return float(cand[best]), float(bal[best])


def accuracy_at(pens: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    pred = np.asarray(pens) < threshold
    return float(np.mean(pred == np.asarray(labels, dtype=bool)))


def aupr(pens: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve, scoring by ascending penalty (trapezoidal)."""
    pens = np.asarray(pens, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = labels.sum()
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("AUPR needs both classes")
    order = np.argsort(pens, kind="mergesort")
    p, y = pens[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # one point per distinct threshold: the last index of each run of equal penalties
    last = np.r_[np.nonzero(np.diff(p))[0], len(p) - 1]
    recall = np.r_[0.0, tp[last] / n_pos]
    precision = np.r_[1.0, tp[last] / (tp[last] + fp[last])]
    return float(np.trapezoid(precision, recall))


@dataclass
class EvalSet:
    pairs: list[TrainingPair]

    @classmethod
    def generate(cls, seed: int, stream: int, count: int) -> "EvalSet":
        rng = spawn_rng(seed, stream)
        return cls(sample_batch(rng, count))

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.pairs])

    def penalties(self, model: EncoderModel) -> np.ndarray:
        small = embed_many(model, [p.small for p in self.pairs])
        big = embed_many(model, [p.big for p in self.pairs])
        return penalties(small, big)


def calibrate(model: EncoderModel, validation: EvalSet) -> float:
    t, _ = calibrate_threshold(validation.penalties(model), validation.labels)
    model.threshold = t
    return t


def classify_subgraph(model: EncoderModel, query: Graph, target: Graph) -> tuple[bool, float]:
    """Predict anchored containment of ``query`` in ``target`` from embeddings."""
    if model.threshold is None:
        raise ValueError("model has no calibrated threshold")
    e = penalty(embed(model, query), embed(model, target))
    return e < model.threshold, e


# -- training -----------------------------------------------------------------------


@dataclass
class CurvePoint:
    batch: int
    loss: float
    holdout_acc: float
    holdout_aupr: float


@dataclass
class TrainResult:
    model: EncoderModel
    curve: list[CurvePoint] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


class TrainingDiverged(FloatingPointError):
    def __init__(self, batch: int, batch_seed: tuple[int, ...]):
        super().__init__(f"non-finite loss at batch {batch} (batch seed {batch_seed})")
        self.batch = batch
        self.batch_seed = batch_seed


def batch_rng(seed: int, index: int) -> np.random.Generator:
    return spawn_rng(seed, STREAM_BATCH, index)


def train(
    config: TrainConfig,
    model: Optional[EncoderModel] = None,
    model_config: ModelConfig = ModelConfig(),
    batch_source: Optional[Callable[[int], Sequence[TrainingPair]]] = None,
    progress: Optional[Callable[[CurvePoint], None]] = None,
) -> TrainResult:
    """Adam on the margin loss over streamed balanced batches.

    ``batch_source(i)`` supplies batch ``i``; by default batches are drawn from
    the synthetic pair generator with a per-batch seed derived from
    ``config.seed``. Held-out metrics are computed every ``eval_every``
    batches, at the start and at the end. The threshold is recalibrated at each
    evaluation on a separate validation split.
    """
    if model is None:
        model = EncoderModel.initialize(model_config, config.seed)
    if batch_source is None:

        def batch_source(i: int) -> Sequence[TrainingPair]:
            return sample_batch(batch_rng(config.seed, i), config.batch_size)

    holdout = EvalSet.generate(config.seed, STREAM_HOLDOUT, config.holdout_pairs) if config.holdout_pairs else None
    validation = (
        EvalSet.generate(config.seed, STREAM_VALID, config.validation_pairs) if config.validation_pairs else None
    )
    state = ad.AdamState(lr=config.lr)
    result = TrainResult(model)
    window: list[float] = []

    def evaluate(b: int):
        loss = float(np.mean(window)) if window else float("nan")
        acc = auc = float("nan")
        if holdout is not None and validation is not None:
            calibrate(model, validation)
            pens = holdout.penalties(model)
            acc = accuracy_at(pens, holdout.labels, model.threshold)
            auc = aupr(pens, holdout.labels)
        point = CurvePoint(b, loss, acc, auc)
        result.curve.append(point)
        window.clear()
        if progress:
            progress(point)
        log.info("batch %d loss %.5f holdout acc %.4f aupr %.4f", b, loss, acc, auc)

    for b in range(1, config.batches + 1):
        pairs = batch_source(b)
        try:
            loss, grads = loss_and_grads(model, pairs, config.margin)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(b, (config.seed, STREAM_BATCH, b)) from exc
        if not math.isfinite(loss):
            raise TrainingDiverged(b, (config.seed, STREAM_BATCH, b))
        if b == 1:
            window.append(loss)
            evaluate(0)
        model.params = ad.adam_step(state, model.params, grads)
        result.losses.append(loss)
        window.append(loss)
        if b % config.eval_every == 0 or b == config.batches:
            evaluate(b)
    if config.batches == 0:
        evaluate(0)
    if validation is not None:
        calibrate(model, validation)
    return result


def write_curve(points: Iterable[CurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["batch", "loss", "holdout_acc", "holdout_aupr"])
        for p in points:
            w.writerow([p.batch, f"{p.loss:.8f}", f"{p.holdout_acc:.6f}", f"{p.holdout_aupr:.6f}"])


def save_training(result: TrainResult, config: TrainConfig, path: str | Path) -> None:
    """Checkpoint plus ``<path>.curve.csv`` and per-batch ``<path>.losses.csv``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(path, {"train": asdict(config)})
    write_curve(result.curve, Path(str(path) + ".curve.csv"))
    with open(str(path) + ".losses.csv", "w", newline="") as f:
        f.write("batch,loss\n")
        f.writelines(f"{b},{loss:.8f}\n" for b, loss in enumerate(result.losses, 1))
