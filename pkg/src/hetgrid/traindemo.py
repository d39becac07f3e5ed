"""End-to-end trainability check on a synthetic two-class segmentation task.

Each sample is a 32x32 noisy image with one brighter axis-aligned rectangle;
the model must label rectangle pixels. The network is intentionally small: a
trainable 3x3 convolution stem, a two-layer grouped-convolution module over a
1/16 clustering of the stem features, and a per-pixel linear classifier.
Training is plain per-sample SGD on mean pixel cross-entropy, with the
clustering re-run on every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autodiff import Tape, backward
from .clustering import ClusterConfig, diff_slic, importance_map, sample_centers
from .grid import DIRECTIONS, GridShape, degree, full_adjacency
from .hgconv import (
    BNParams,
    HGConvModule,
    HGLayerParams,
    coarsen_all,
    hg_layer,
    pool,
    refine,
    unpool,
)
from .refconv import KernelSet, conv_as_graph
from .rng import make_rng

IMAGE_SIDE = 32
STEM_CHANNELS = 8
N_CLASSES = 2
MIN_RECT, MAX_RECT = 6, 16
MIN_SAMPLES = 5


class TrainingDiverged(RuntimeError):
    """Raised when an epoch produces a non-finite loss."""


@dataclass(frozen=True)
class SyntheticSample:
    image: np.ndarray   # (n_pix, 1) float32 in [0, 1]
    labels: np.ndarray  # (n_pix,) int64, 1 inside the rectangle


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    val_acc: float


def generate_sample(rng: np.random.Generator) -> SyntheticSample:
    side = IMAGE_SIDE
    img = rng.normal(0.3, 0.05, size=(side, side))
    rect_h = int(rng.integers(MIN_RECT, MAX_RECT + 1))
    rect_w = int(rng.integers(MIN_RECT, MAX_RECT + 1))
    top = int(rng.integers(0, side - rect_h + 1))
    left = int(rng.integers(0, side - rect_w + 1))
    img[top : top + rect_h, left : left + rect_w] = rng.normal(
        0.7, 0.05, size=(rect_h, rect_w))
    img = np.clip(img, 0.0, 1.0)
    labels = np.zeros((side, side), dtype=np.int64)
    labels[top : top + rect_h, left : left + rect_w] = 1
    return SyntheticSample(
        image=img.reshape(side * side, 1).astype(np.float32),
        labels=labels.reshape(side * side),
    )


def generate_dataset(n: int, seed: int) -> list[SyntheticSample]:
    if n < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n}")
    return [generate_sample(make_rng(seed, "dataset", i)) for i in range(n)]


def split_dataset(samples):
    """80/20 train/validation split by index."""
    n_train = int(0.8 * len(samples))
    return samples[:n_train], samples[n_train:]


@dataclass
class DemoModel:
    shape: GridShape
    stem: KernelSet
    hg_layers: list[HGLayerParams]
    cls_w: np.ndarray
    cls_b: np.ndarray
    cluster_cfg: ClusterConfig

    @classmethod
    def init(cls, seed: int) -> "DemoModel":
        rng = make_rng(seed, "model-init")
        shape = GridShape(IMAGE_SIDE, IMAGE_SIDE)

        def uniform(fan_in, size):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=size).astype(np.float32)

        stem = KernelSet(uniform(9 * 1, (9, 1, STEM_CHANNELS)))
        layers = []
        for _ in range(2):
            kernels = KernelSet(uniform(9 * STEM_CHANNELS,
                                        (9, STEM_CHANNELS, STEM_CHANNELS)))
            layers.append(HGLayerParams(kernels=kernels,
                                        bn=BNParams.identity(STEM_CHANNELS)))
        cls_w = uniform(STEM_CHANNELS, (STEM_CHANNELS, N_CLASSES))
        cls_b = uniform(STEM_CHANNELS, (N_CLASSES,))
        cfg = ClusterConfig(downsample_ratio=Fraction(1, 16), seed=seed)
        return cls(shape=shape, stem=stem, hg_layers=layers,
                   cls_w=cls_w, cls_b=cls_b, cluster_cfg=cfg)

    def params(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array."""
        out = {}
        for i, d in enumerate(DIRECTIONS):
            out[f"stem_w_{d.name.lower()}"] = self.stem.weights[i]
        for l, layer in enumerate(self.hg_layers):
            for i, d in enumerate(DIRECTIONS):
                out[f"hg{l}_w_{d.name.lower()}"] = layer.kernels.weights[i]
            out[f"hg{l}_bn_gamma"] = layer.bn.gamma
            out[f"hg{l}_bn_beta"] = layer.bn.beta
        out["cls_w"] = self.cls_w
        out["cls_b"] = self.cls_b
        return out

    @property
    def n_parameters(self) -> int:
        return sum(arr.size for arr in self.params().values())


def _cluster(model: DemoModel, features: np.ndarray, rng: np.random.Generator):
    shape = model.shape
    cfg = model.cluster_cfg
    imp = importance_map(features, shape)
    centers = sample_centers(imp, shape, cfg.n_groups(shape.n_pix), cfg, rng=rng)
    s, _ = diff_slic(features, shape, centers, cfg)
    g = refine(coarsen_all(s, full_adjacency(shape)))
    return s, g


def _stem_geometry(shape: GridShape):
    adjacency = full_adjacency(shape)
    inv = {d: (1.0 / degree(adjacency[d])).astype(np.float32) for d in DIRECTIONS}
    # each direction's transpose is its opposite's adjacency
    transposes = {d: adjacency[d.opposite] for d in DIRECTIONS}
    return adjacency, inv, transposes


def _taped_direction_conv(tape, adjacency, inv, z, leaves, prefix, transposes=None):
    acc = None
    for d in DIRECTIONS:
        a_t = transposes[d] if transposes is not None else None
        m = tape.spmm_const(adjacency[d], z, a_t=a_t)
        m = tape.row_scale(m, inv[d])
        m = tape.matmul(m, leaves[f"{prefix}_w_{d.name.lower()}"])
        acc = m if acc is None else tape.add(acc, m)
    return acc


def train_step(model: DemoModel, sample: SyntheticSample,
               rng: np.random.Generator, lr: float) -> float:
    """One taped forward/backward pass and SGD update; returns the loss."""
    tape = Tape()
    leaves = {name: tape.leaf(arr, name) for name, arr in model.params().items()}
    adjacency, inv, transposes = _stem_geometry(model.shape)

    x = tape.constant(sample.image)
    feats = _taped_direction_conv(tape, adjacency, inv, x, leaves, "stem",
                                  transposes=transposes)

    s, g = _cluster(model, feats.value, rng)
    template = s.to_csr()
    logits = tape.leaf(np.asarray(s.logits, dtype=np.float32))
    soft = tape.softmax(logits)
    vals = tape.reshape(soft, (template.nnz,))

    pooled_vals = tape.col_normalize_values(template, vals)
    z = tape.spmm_values_t(template, pooled_vals, feats)
    degrees = g.degrees()
    ginv = {d: (1.0 / degrees[d]).astype(np.float32) for d in DIRECTIONS}
    for l, layer in enumerate(model.hg_layers):
        z = _taped_direction_conv(tape, g.adj, ginv, z, leaves, f"hg{l}")
        z = tape.batch_norm(z, leaves[f"hg{l}_bn_gamma"], leaves[f"hg{l}_bn_beta"],
                            layer.bn, "train")
        z = tape.relu(z)
    spread_vals = tape.row_normalize_values(template, vals)
    per_pixel = tape.spmm_values(template, spread_vals, z)

    scores = tape.add_bias(tape.matmul(per_pixel, leaves["cls_w"]), leaves["cls_b"])
    loss = tape.cross_entropy(scores, sample.labels)
    if not np.isfinite(loss.value):
        raise TrainingDiverged("non-finite sample loss")

    grads = backward(tape, loss)
    if lr != 0.0:
        for name, arr in model.params().items():
            arr -= lr * grads[name].astype(arr.dtype, copy=False)
    return float(loss.value)


def predict(model: DemoModel, sample: SyntheticSample,
            rng: np.random.Generator) -> np.ndarray:
    """Eval-mode class labels per pixel."""
    feats = conv_as_graph(sample.image, model.shape, model.stem)
    s, g = _cluster(model, feats, rng)
    z = pool(s, feats)
    for layer in model.hg_layers:
        z = hg_layer(g, z, layer.kernels, layer.bn, mode="eval")
    per_pixel = unpool(s, z)
    scores = per_pixel @ model.cls_w + model.cls_b
    return np.argmax(scores, axis=1)


def pixel_accuracy(model: DemoModel, samples, seed: int) -> float:
    correct = 0
    total = 0
    for idx, sample in enumerate(samples):
        rng = make_rng(seed, "val-cluster", idx)
        pred = predict(model, sample, rng)
        correct += int((pred == sample.labels).sum())
        total += sample.labels.size
    return correct / total


def train(model: DemoModel, samples, epochs: int, lr: float, seed: int) -> list[EpochMetrics]:
    """Per-sample SGD; returns per-epoch training loss and validation accuracy."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if epochs < 1:
        raise ValueError("need at least one epoch")
    train_set, val_set = split_dataset(samples)
    metrics = []
    for epoch in range(1, epochs + 1):
        losses = []
        for idx, sample in enumerate(train_set):
            # per-sample clustering stream, stable across epochs so a frozen
            # model sees an identical pipeline every pass
            rng = make_rng(seed, "train-cluster", idx)
            try:
                losses.append(train_step(model, sample, rng, lr))
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}") from None
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        val_acc = pixel_accuracy(model, val_set, seed)
        metrics.append(EpochMetrics(epoch=epoch, loss=epoch_loss, val_acc=val_acc))
    return metrics


def format_metrics(metrics) -> str:
    return "\n".join(
        f"epoch {m.epoch} loss {m.loss:.6f} val_acc {m.val_acc:.6f}" for m in metrics)


def run_demo(epochs: int = 15, lr: float = 0.1, seed: int = 1,
             n_samples: int = 200) -> tuple[DemoModel, list[EpochMetrics]]:
    samples = generate_dataset(n_samples, seed)
    model = DemoModel.init(seed)
    metrics = train(model, samples, epochs, lr, seed)
    return model, metrics
