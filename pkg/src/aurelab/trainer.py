"""End-to-end training: ramped composite loss, per-branch SGD, template
maintenance, deferred label correction, evaluation, and checkpointing.

Per epoch, each shuffled batch runs: backbone forward, confidence scores,
class weights, high/low split, detection branch forward, loss composition,
one SGD step with per-branch learning rates, template update from the high
group, and (after the warmup) correction decisions for the low group.
Corrections collected during an epoch are applied to the stored labels
between epochs.  The detection branch never participates in evaluation:
predictions are the plain argmax of the classifier logits.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .aux_branch import (AUGraph, AuxiliaryBranch, au_detection_loss,
                         build_au_graph, random_au_graph)
from .data import Dataset, batches
from .errors import ConfigError, DegenerateVectorError, TrainingDivergedError
from .relabel import (RelabelRecord, SemanticTemplates, apply_corrections,
                      decide_relabel, semantic_distances)
from .target_branch import (TargetBranch, class_weights, rank_regularization,
                            weighted_cross_entropy)


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters.

    ``high_fraction`` is the share of each batch treated as high-confidence;
    ``rank_margin`` the required mean-confidence gap; ``ramp_pivot`` the
    epoch where the loss emphasis crosses over from the detection branch to
    the classifier; ``warmup_epochs`` how long label correction stays off
    while templates accumulate.  The classifier-side learning rate is
    ``lr_initial`` with hard drops at the listed epochs; the detection-side
    rate decays multiplicatively per epoch.
    """
    high_fraction: float = 0.8
    rank_margin: float = 0.15
    ramp_pivot: int = 10
    epochs: int = 40
    batch_size: int = 512
    lr_initial: float = 0.01
    lr_drops: tuple[tuple[int, float], ...] = ((10, 1e-3), (20, 1e-4))
    lr_aux: float = 0.005
    lr_aux_decay: float = 0.95
    momentum: float = 0.0
    warmup_epochs: int = 10
    seed: int = 0
    hidden_dim: int = 64
    feat_dim: int = 32
    node_dim: int = 16
    gcn_channels: int = 64
    leaky_slope: float = 0.01
    use_target_branch: bool = True
    use_aux_branch: bool = True
    random_edges: bool = False

    def validate(self) -> None:
        if not 0.0 < self.high_fraction < 1.0:
            raise ConfigError(f"high_fraction must lie in (0, 1), "
                              f"got {self.high_fraction}")
        if self.rank_margin < 0:
            raise ConfigError(f"rank_margin must be >= 0, got {self.rank_margin}")
        if self.ramp_pivot < 1:
            raise ConfigError(f"ramp_pivot must be >= 1, got {self.ramp_pivot}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("lr_initial", "lr_aux"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 < self.lr_aux_decay <= 1.0:
            raise ConfigError("lr_aux_decay must lie in (0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        for name in ("hidden_dim", "feat_dim", "node_dim", "gcn_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must lie in (0, 1)")

    def lr_target(self, epoch: int) -> float:
        lr = self.lr_initial
        for drop_epoch, value in self.lr_drops:
            if epoch >= drop_epoch:
                lr = value
        return lr

    def lr_aux_at(self, epoch: int) -> float:
        return self.lr_aux * self.lr_aux_decay ** (epoch - 1)

    def resume_hash(self) -> str:
        """Hash of everything that must match for a checkpoint to resume;
        the total epoch count may differ (training can be extended)."""
        d = asdict(self)
        d.pop("epochs")
        blob = json.dumps(d, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def ramp_weights(epoch: int, pivot: int) -> tuple[float, float]:
    """Epoch-dependent loss weights (classifier side, detection side).

    The classifier weight ramps up as exp(-(1 - epoch/pivot)^2) until the
    pivot then stays 1; the detection weight is 1 until the pivot then decays
    as exp(-(1 - pivot/epoch)^2).  Both are 1 exactly at the pivot.
    """
    if epoch < 1:
        raise ConfigError(f"epoch must be >= 1, got {epoch}")
    if pivot < 1:
        raise ConfigError(f"ramp pivot must be >= 1, got {pivot}")
    e, b = float(epoch), float(pivot)
    if e <= b:
        return math.exp(-((1.0 - e / b) ** 2)), 1.0
    return 1.0, math.exp(-((1.0 - b / e) ** 2))


def total_loss(loss_wce: ad.Tensor, loss_rank: ad.Tensor, loss_au: ad.Tensor,
               target_weight: float, aux_weight: float) -> ad.Tensor:
    """(target_weight / 2) * (wce + rank) + aux_weight * au."""
    target_part = ad.scale(ad.add(loss_wce, loss_rank), target_weight / 2.0)
    return ad.add(target_part, ad.scale(loss_au, aux_weight))


class Model:
    """Both branches plus the frozen unit graph and the template store."""

    def __init__(self, target: TargetBranch, aux: AuxiliaryBranch,
                 graph: AUGraph, templates: SemanticTemplates,
                 config: TrainConfig):
        self.target = target
        self.aux = aux
        self.graph = graph
        self.templates = templates
        self.config = config

    def parameters(self) -> dict[str, ad.Tensor]:
        return {**self.target.parameters(), **self.aux.parameters()}

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Class predictions from the classifier logits alone; the detection
        branch and the confidence scale play no part."""
        x = ad.constant(np.asarray(features, dtype=np.float64))
        feats = self.target.features(x)
        return np.argmax(self.target.logits(feats).data, axis=1)


def init_model(dataset: Dataset, config: TrainConfig,
               rng: np.random.Generator) -> Model:
    target = TargetBranch(dataset.dim, config.hidden_dim, config.feat_dim,
                          dataset.n_classes, config.leaky_slope, rng)
    aux = AuxiliaryBranch(config.feat_dim, dataset.n_units, config.node_dim,
                          config.gcn_channels, config.leaky_slope, rng)
    if config.random_edges:
        graph = random_au_graph(dataset.n_units, rng)
    else:
        graph = build_au_graph(dataset.au_labels)
    templates = SemanticTemplates.empty(dataset.n_classes, dataset.n_units)
    return Model(target, aux, graph, templates, config)


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray   # rows = stored label, cols = prediction
    n: int


def evaluate(model: Model, dataset: Dataset) -> EvalReport:
    """Accuracy and confusion of argmax predictions against the dataset's
    stored labels; read-only."""
    preds = model.predict(dataset.features)
    labels = dataset.observed_labels
    c = dataset.n_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    counts = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), counts,
                          out=np.zeros(c), where=counts > 0)
    return EvalReport(float(np.mean(preds == labels)), per_class, confusion,
                      dataset.n)


@dataclass
class EpochMetrics:
    epoch: int
    target_weight: float
    aux_weight: float
    loss_wce: float
    loss_rank: float
    loss_au: float
    loss_total: float
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    relabel_count: int
    relabel_precision: float
    relabel_recall: float
    noise_rate: float


METRICS_FIXED_COLUMNS = ("epoch", "target_weight", "aux_weight", "loss_wce",
                         "loss_rank", "loss_au", "loss_total", "accuracy",
                         "relabel_count", "relabel_precision",
                         "relabel_recall", "noise_rate")


def metrics_header(n_classes: int) -> str:
    cols = list(METRICS_FIXED_COLUMNS)
    cols.extend(f"class_acc_{c}" for c in range(n_classes))
    cols.extend(f"cm_{i}_{j}" for i in range(n_classes) for j in range(n_classes))
    return ",".join(cols)


def metrics_row(m: EpochMetrics) -> str:
    vals = [str(m.epoch), repr(m.target_weight), repr(m.aux_weight),
            repr(m.loss_wce), repr(m.loss_rank), repr(m.loss_au),
            repr(m.loss_total), repr(m.accuracy), str(m.relabel_count),
            repr(m.relabel_precision), repr(m.relabel_recall),
            repr(m.noise_rate)]
    vals.extend(repr(float(v)) for v in m.per_class_accuracy)
    vals.extend(str(int(v)) for v in m.confusion.ravel())
    return ",".join(vals)


def write_metrics_csv(metrics: list[EpochMetrics], n_classes: int, path) -> None:
    lines = [metrics_header(n_classes)]
    lines.extend(metrics_row(m) for m in metrics)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class Checkpoint:
    """Everything needed to continue a run bit-exactly.

    Besides the parameters this stores the template state, the current
    (possibly corrected) labels, the unit graph, and the generator state, so
    a resumed run follows the identical trajectory.
    """
    epoch: int
    config: dict
    resume_hash: str
    params: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray]
    template_vectors: np.ndarray
    template_valid: np.ndarray
    template_last_update: np.ndarray
    observed_labels: np.ndarray
    graph_conditional: np.ndarray
    graph_normalized: np.ndarray
    graph_occurrence: np.ndarray
    graph_pair_counts: np.ndarray
    rng_state: dict


CHECKPOINT_FORMAT = "aurelab-checkpoint-v1"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "resume_hash": ckpt.resume_hash,
        "params": {k: v.tolist() for k, v in ckpt.params.items()},
        "velocities": {k: v.tolist() for k, v in ckpt.velocities.items()},
        "template_vectors": ckpt.template_vectors.tolist(),
        "template_valid": ckpt.template_valid.astype(int).tolist(),
        "template_last_update": ckpt.template_last_update.tolist(),
        "observed_labels": ckpt.observed_labels.tolist(),
        "graph_conditional": ckpt.graph_conditional.tolist(),
        "graph_normalized": ckpt.graph_normalized.tolist(),
        "graph_occurrence": ckpt.graph_occurrence.tolist(),
        "graph_pair_counts": ckpt.graph_pair_counts.tolist(),
        "rng_state": ckpt.rng_state,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a recognized checkpoint file: {path}")
    return Checkpoint(
        epoch=int(doc["epoch"]),
        config=doc["config"],
        resume_hash=doc["resume_hash"],
        params={k: np.asarray(v, dtype=np.float64)
                for k, v in doc["params"].items()},
        velocities={k: np.asarray(v, dtype=np.float64)
                    for k, v in doc["velocities"].items()},
        template_vectors=np.asarray(doc["template_vectors"], dtype=np.float64),
        template_valid=np.asarray(doc["template_valid"], dtype=bool),
        template_last_update=np.asarray(doc["template_last_update"],
                                        dtype=np.int64),
        observed_labels=np.asarray(doc["observed_labels"], dtype=np.int64),
        graph_conditional=np.asarray(doc["graph_conditional"], dtype=np.float64),
        graph_normalized=np.asarray(doc["graph_normalized"], dtype=np.float64),
        graph_occurrence=np.asarray(doc["graph_occurrence"], dtype=np.float64),
        graph_pair_counts=np.asarray(doc["graph_pair_counts"], dtype=np.float64),
        rng_state=doc["rng_state"],
    )


def make_checkpoint(model: Model, epoch: int, observed_labels: np.ndarray,
                    velocities: dict[str, np.ndarray],
                    rng: np.random.Generator) -> Checkpoint:
    cfg = model.config
    return Checkpoint(
        epoch=epoch,
        config=asdict(cfg),
        resume_hash=cfg.resume_hash(),
        params={k: v.data.copy() for k, v in model.parameters().items()},
        velocities={k: v.copy() for k, v in velocities.items()},
        template_vectors=model.templates.vectors.copy(),
        template_valid=model.templates.valid.copy(),
        template_last_update=model.templates.last_update_epoch.copy(),
        observed_labels=observed_labels.copy(),
        graph_conditional=model.graph.conditional.copy(),
        graph_normalized=model.graph.normalized.copy(),
        graph_occurrence=model.graph.occurrence.copy(),
        graph_pair_counts=model.graph.pair_counts.copy(),
        rng_state=rng.bit_generator.state,
    )


@dataclass
class TrainResult:
    model: Model
    metrics: list[EpochMetrics]
    records: list[RelabelRecord]
    final_dataset: Dataset
    checkpoint: Checkpoint


def _epoch_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def train(dataset: Dataset, config: TrainConfig,
          eval_dataset: Dataset | None = None,
          resume: Checkpoint | None = None) -> TrainResult:
    """Run the full training loop; the input dataset is copied, never mutated.

    When ``eval_dataset`` is given, per-epoch accuracy/confusion come from it;
    otherwise they are measured on the training samples against their hidden
    true labels.  ``resume`` continues a checkpointed run up to
    ``config.epochs`` total epochs.
    """
    config.validate()
    dataset.validate()
    ds = dataset.copy()
    batch_size = min(config.batch_size, ds.n)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    model = init_model(ds, config, rng)
    start_epoch = 1
    if resume is not None:
        if resume.resume_hash != config.resume_hash():
            raise ConfigError("checkpoint configuration does not match; "
                              "only the total epoch count may change on resume")
        for name, tensor in model.parameters().items():
            tensor.data[...] = resume.params[name]
        model.templates = SemanticTemplates(resume.template_vectors.copy(),
                                            resume.template_valid.copy(),
                                            resume.template_last_update.copy())
        model.graph = AUGraph(resume.graph_conditional.copy(),
                              resume.graph_normalized.copy(),
                              resume.graph_occurrence.copy(),
                              resume.graph_pair_counts.copy())
        ds.observed_labels[...] = resume.observed_labels
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch + 1

    params = model.parameters()
    target_names = set(model.target.parameters())
    velocities = {name: np.zeros_like(t.data) for name, t in params.items()}
    if resume is not None:
        for name in velocities:
            velocities[name][...] = resume.velocities[name]
    metrics: list[EpochMetrics] = []
    all_records: list[RelabelRecord] = []

    # With both branches off the model degenerates to a standard classifier:
    # plain cross-entropy at full weight, no ramp damping.
    plain_baseline = not (config.use_target_branch or config.use_aux_branch)

    for epoch in range(start_epoch, config.epochs + 1):
        if plain_baseline:
            lam_target, lam_aux = 2.0, 0.0
        else:
            lam_target, lam_aux = ramp_weights(epoch, config.ramp_pivot)
        lr_t = config.lr_target(epoch)
        lr_a = config.lr_aux_at(epoch)
        relabel_on = config.use_aux_branch and epoch > config.warmup_epochs
        epoch_records: list[RelabelRecord] = []
        sums = {"wce": 0.0, "rank": 0.0, "au": 0.0, "total": 0.0}

        for batch_no, idx in enumerate(
                batches(ds, batch_size, _epoch_seed(config.seed, epoch))):
            n = len(idx)
            batch_labels = ds.observed_labels[idx]
            x = ad.constant(ds.features[idx])
            feats = model.target.features(x)
            conf = model.target.confidence(feats)
            conf_vals = conf.data[:, 0].copy()

            split = rank_regularization(conf, ds.ids[idx],
                                        config.high_fraction,
                                        config.rank_margin)
            if config.use_target_branch:
                gamma = class_weights(batch_labels, ds.n_classes)
                loss_wce = weighted_cross_entropy(
                    feats, model.target.classifier_w, conf, gamma, batch_labels)
                loss_rank = split.loss
            else:
                ones = ad.constant(np.ones((n, 1)))
                loss_wce = weighted_cross_entropy(
                    feats, model.target.classifier_w, ones,
                    np.ones(ds.n_classes), batch_labels)
                loss_rank = ad.scalar(0.0)

            if config.use_aux_branch:
                probs, semantics = model.aux.semantic_logits(
                    feats, model.graph.normalized)
                loss_au = au_detection_loss(probs, ds.au_labels[idx], conf_vals)
            else:
                semantics = None
                loss_au = ad.scalar(0.0)

            loss = total_loss(loss_wce, loss_rank, loss_au, lam_target, lam_aux)
            components = {"wce": loss_wce.item(), "rank": loss_rank.item(),
                          "au": loss_au.item(), "total": loss.item()}
            if not all(math.isfinite(v) for v in components.values()):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}: "
                    f"{components}", epoch=epoch, batch=batch_no,
                    components=components)
            for key, v in components.items():
                sums[key] += v * n

            grads = ad.gradients(loss, list(params.values()))
            for (name, tensor), g in zip(params.items(), grads):
                lr = lr_t if name in target_names else lr_a
                if config.momentum > 0.0:
                    v = velocities[name]
                    v *= config.momentum
                    v += g
                    g = v
                tensor.data -= lr * g

            if config.use_aux_branch:
                sem_vals = semantics.data
                high = split.high_indices
                model.templates.update(sem_vals[high], conf_vals[high],
                                       batch_labels[high], epoch)
                if relabel_on:
                    low_order = split.low_indices[
                        np.argsort(ds.ids[idx][split.low_indices])]
                    for pos in low_order:
                        org = int(batch_labels[pos])
                        try:
                            dists = semantic_distances(sem_vals[pos],
                                                       model.templates)
                        except DegenerateVectorError:
                            warnings.warn(
                                f"skipping relabel of sample "
                                f"{int(ds.ids[idx][pos])}: zero-norm semantics")
                            continue
                        new = decide_relabel(dists, org)
                        if new != org:
                            epoch_records.append(RelabelRecord(
                                int(ds.ids[idx][pos]), org, new, dists, epoch))

        wrong_before = ds.observed_labels != ds.true_labels
        apply_corrections(ds, epoch_records)
        all_records.extend(epoch_records)

        changed = len(epoch_records)
        if changed:
            hits = sum(r.corrected == ds.true_labels[r.sample_id]
                       for r in epoch_records)
            precision = hits / changed
        else:
            precision = float("nan")
        n_wrong = int(wrong_before.sum())
        if n_wrong:
            fixed = int(np.sum(wrong_before &
                               (ds.observed_labels == ds.true_labels)))
            recall = fixed / n_wrong
        else:
            recall = float("nan")

        if eval_dataset is not None:
            report = evaluate(model, eval_dataset)
        else:
            audit = ds.copy()
            audit.observed_labels = audit.true_labels.copy()
            report = evaluate(model, audit)

        metrics.append(EpochMetrics(
            epoch=epoch, target_weight=lam_target, aux_weight=lam_aux,
            loss_wce=sums["wce"] / ds.n, loss_rank=sums["rank"] / ds.n,
            loss_au=sums["au"] / ds.n, loss_total=sums["total"] / ds.n,
            accuracy=report.accuracy,
            per_class_accuracy=report.per_class_accuracy,
            confusion=report.confusion,
            relabel_count=changed, relabel_precision=precision,
            relabel_recall=recall,
            noise_rate=ds.observed_noise_rate()))

    last_epoch = config.epochs
    if resume is not None:
        last_epoch = max(resume.epoch, config.epochs)
    ckpt = make_checkpoint(model, last_epoch, ds.observed_labels, velocities, rng)
    return TrainResult(model, metrics, all_records, ds, ckpt)
