"""Single-demo, multi-demo and Reptile training loops, plus evaluation."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentationConfig, EvalSet, generate_batch, generate_eval_set
from .demo import as_demo_dict
from .errors import IntegrityError, PreconditionError
from .model import GraspNetParams, atomic_write_bytes, forward_backward, init_params, predict_patches, to_nchw
from .optim import AdamState, adam_step
from .rng import DOMAIN_INIT, DOMAIN_META, DOMAIN_TRAIN, DOMAIN_VAL, as_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 512
    batch_size: int = 64
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    scheme: str = "single"
    seed: int = 0
    pos_fraction: float = 0.5
    eval_every: int = 16
    # extra iterations at which the validation set is scored
    eval_at: tuple = ()
    n_val: int = 200
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise PreconditionError("iterations must be >= 1")
        if self.batch_size < 2:
            raise PreconditionError("batch_size must be >= 2")
        if self.scheme not in ("single", "multi"):
            raise PreconditionError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.pos_fraction < 1:
            raise PreconditionError("pos_fraction must lie in (0, 1)")
        if self.eval_every < 1:
            raise PreconditionError("eval_every must be >= 1")


@dataclass(frozen=True)
class ReptileConfig:
    outer_iterations: int = 250
    outer_step: float = 0.6
    meta_batch: int = 4
    inner_iterations: int = 10
    inner_batch: int = 10
    inner_lr: float = 0.001
    inner_beta1: float = 0.0
    finetune_iterations: int = 200
    finetune_batch: int = 64
    finetune_lr: float = 0.001
    finetune_beta1: float = 0.9
    finetune_scheme: str = "multi"
    seed: int = 0
    pos_fraction: float = 0.5
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise PreconditionError("outer_iterations must be >= 1")
        if self.outer_step < 0:
            raise PreconditionError("outer_step must be >= 0")
        if self.meta_batch < 1 or self.inner_iterations < 0:
            raise PreconditionError("meta_batch must be >= 1 and inner_iterations >= 0")
        if self.inner_batch < 2 or self.finetune_batch < 2:
            raise PreconditionError("batch sizes must be >= 2")
        if self.finetune_iterations < 0:
            raise PreconditionError("finetune_iterations must be >= 0")

    def outer_step_at(self, t: int) -> float:
        """Linearly annealed outer step size for outer iteration ``t``."""
        return self.outer_step * (1.0 - t / self.outer_iterations)


@dataclass
class EvalRecord:
    iteration: int
    loss: float
    val_accuracy: float


@dataclass
class Metrics:
    records: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    test_accuracy: float | None = None
    wall_seconds: float = 0.0

    def accuracy_at(self, iteration: int) -> float:
        for r in self.records:
            if r.iteration == iteration:
                return r.val_accuracy
        raise KeyError(f"no evaluation recorded at iteration {iteration}")

    @property
    def final_val_accuracy(self) -> float:
        return self.records[-1].val_accuracy

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "loss", "val_accuracy"])
        for r in self.records:
            writer.writerow([r.iteration, repr(float(r.loss)), repr(float(r.val_accuracy))])
        if self.test_accuracy is not None:
            buf.write(f"# test_accuracy={self.test_accuracy!r}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_bytes(path, self.to_csv().encode("ascii"))

    @classmethod
    def from_csv(cls, text: str) -> "Metrics":
        m = cls()
        rows = [line for line in text.splitlines() if line.strip()]
        for line in rows[1:]:
            if line.startswith("# test_accuracy="):
                m.test_accuracy = float(line.split("=", 1)[1])
                continue
            it, loss, acc = line.split(",")
            m.records.append(EvalRecord(int(it), float(loss), float(acc)))
        return m


def evaluate(params, eval_set, threshold: float = 0.5) -> float:
    """Fraction of samples where ``(p >= threshold) == label``."""
    if len(eval_set) == 0:
        raise PreconditionError("evaluation set is empty")
    correct = 0
    total = 0
    if isinstance(eval_set, EvalSet):
        for chunk in eval_set.chunks():
            pred = predict_patches(params, chunk.patches) >= threshold
            correct += int(np.sum(pred == (chunk.labels >= 0.5)))
            total += len(chunk)
    else:
        patches = np.stack([s.patch for s in eval_set])
        labels = np.array([s.label for s in eval_set])
        pred = predict_patches(params, patches) >= threshold
        correct = int(np.sum(pred == (labels >= 0.5)))
        total = len(labels)
    return correct / total


def validation_set(demos, target_id, n_each: int, seed: int, cfg=AugmentationConfig()) -> EvalSet:
    """Balanced hold-out set; disjoint from the test set built from the same seed."""
    return EvalSet(as_demo_dict(demos), target_id, n_each, n_each, seed, cfg, domain=DOMAIN_VAL)


def _check_target(demos, target_id, scheme):
    if target_id not in demos:
        raise PreconditionError(f"no demonstration for target {target_id}")
    if scheme == "multi" and len(demos) < 2:
        raise PreconditionError("multi scheme needs at least two demonstrations")


def train(demos, target_id: int, cfg: TrainConfig = TrainConfig(), rng=None, init=None,
          val_set=None, callback=None):
    """Train GraspNet for one target block.

    Starts from ``init`` when given (fine-tuning), otherwise from He
    initialisation drawn from the run's stream. Validation accuracy is
    recorded every ``cfg.eval_every`` iterations, at ``cfg.eval_at`` and at
    the end. Returns ``(params, metrics)``.
    """
    demos = as_demo_dict(demos)
    _check_target(demos, target_id, cfg.scheme)
    rng = as_rng(rng if rng is not None else cfg.seed)
    start = time.perf_counter()
    params = init if init is not None else init_params(rng.child(DOMAIN_INIT))
    state = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    if val_set is None and cfg.n_val > 0:
        val_set = validation_set(demos, target_id, cfg.n_val, rng.seed, cfg.augmentation)
    eval_points = set(range(cfg.eval_every, cfg.iterations + 1, cfg.eval_every))
    eval_points.update(i for i in cfg.eval_at if 0 <= i <= cfg.iterations)
    eval_points.add(cfg.iterations)
    metrics = Metrics()
    if 0 in eval_points and val_set is not None:
        metrics.records.append(EvalRecord(0, float("nan"), evaluate(params, val_set)))
    for it in range(1, cfg.iterations + 1):
        batch = generate_batch(demos, target_id, cfg.scheme, cfg.batch_size, cfg.pos_fraction,
                               rng.child(DOMAIN_TRAIN, it), cfg.augmentation)
        _, loss, grads = forward_backward(params, to_nchw(batch.patches), batch.labels)
        params, state = adam_step(params, grads, state)
        metrics.losses.append(loss)
        if it in eval_points and val_set is not None:
            acc = evaluate(params, val_set)
            metrics.records.append(EvalRecord(it, loss, acc))
            log.info("target %s iter %d loss %.4f val_acc %.4f", target_id, it, loss, acc)
        if callback is not None:
            callback(it, params, state, loss)
    metrics.wall_seconds = time.perf_counter() - start
    return params, metrics


def _lerp(phi: GraspNetParams, mean_w: dict, eps: float) -> GraspNetParams:
    # (1 - eps) * phi + eps * mean(W) == phi + eps * mean(W - phi), written so
    # that eps = 0 and eps = 1 reproduce phi and mean(W) exactly
    return GraspNetParams({
        k: ((1.0 - eps) * phi[k].astype(np.float64) + eps * mean_w[k]).astype(np.float32)
        for k in phi
    })


def reptile_meta_train(demos, held_out_id: int, cfg: ReptileConfig = ReptileConfig(), rng=None,
                       callback=None, init=None) -> GraspNetParams:
    """Learn an initialisation from every demonstration except ``held_out_id``.

    Each outer iteration samples ``meta_batch`` distinct tasks, runs
    ``inner_iterations`` Adam steps per task from the current initialisation
    (fresh optimiser state, multi scheme over the meta-training demos only),
    and moves the initialisation towards the mean of the adapted weights by
    the annealed outer step. ``callback(t, phi_old, weights, eps, phi_new)``
    sees every outer update.
    """
    demos = as_demo_dict(demos)
    meta_demos = {k: d for k, d in demos.items() if k != held_out_id}
    tasks = sorted(meta_demos)
    if len(tasks) < cfg.meta_batch:
        raise PreconditionError(
            f"need at least {cfg.meta_batch} meta-training tasks, have {len(tasks)}")
    rng = as_rng(rng if rng is not None else cfg.seed)
    phi = init if init is not None else init_params(rng.child(DOMAIN_INIT))
    for t in range(cfg.outer_iterations):
        eps = cfg.outer_step_at(t)
        outer_rng = rng.child(DOMAIN_META, t)
        chosen = [tasks[i] for i in outer_rng.choice(len(tasks), size=cfg.meta_batch, replace=False)]
        adapted = []
        for slot, task in enumerate(chosen):
            w = phi
            state = AdamState.for_params(w, lr=cfg.inner_lr, beta1=cfg.inner_beta1)
            for k in range(cfg.inner_iterations):
                batch = generate_batch(meta_demos, task, "multi", cfg.inner_batch, cfg.pos_fraction,
                                       outer_rng.child(slot, k), cfg.augmentation)
                if held_out_id in batch.source_ids:
                    raise IntegrityError(f"held-out demonstration {held_out_id} leaked into task {task}")
                _, _, grads = forward_backward(w, to_nchw(batch.patches), batch.labels)
                w, state = adam_step(w, grads, state)
            adapted.append(w)
        mean_w = {k: np.mean([w[k].astype(np.float64) for w in adapted], axis=0) for k in phi}
        new_phi = _lerp(phi, mean_w, eps)
        if callback is not None:
            callback(t, phi, adapted, eps, new_phi)
        phi = new_phi
        if t % 25 == 0:
            log.info("reptile outer %d/%d eps %.4f", t, cfg.outer_iterations, eps)
    return phi


def fine_tune(phi: GraspNetParams, demos, target_id: int, cfg: ReptileConfig = ReptileConfig(),
              rng=None, iterations: int | None = None, val_set=None, eval_at=()):
    """Ordinary training on the target task starting from ``phi``.

    ``iterations`` overrides ``cfg.finetune_iterations``; zero returns ``phi``
    unchanged with empty metrics.
    """
    n = cfg.finetune_iterations if iterations is None else iterations
    if n == 0:
        return phi, Metrics()
    tcfg = TrainConfig(iterations=n, batch_size=cfg.finetune_batch, lr=cfg.finetune_lr,
                       beta1=cfg.finetune_beta1, scheme=cfg.finetune_scheme, seed=cfg.seed,
                       pos_fraction=cfg.pos_fraction, eval_at=tuple(eval_at),
                       augmentation=cfg.augmentation)
    return train(demos, target_id, tcfg, rng=rng, init=phi, val_set=val_set)
