"""Training regimes: MSE baseline, two-step contrastive, and joint loss.

Every run draws its randomness from independent streams derived from the run
seed (parameter init, chunk starts, batch order, pairings), so two regimes
that share a seed see the same chunks in the same batches.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .contour import Chunk, random_chunk
from .data import Dataset, DatasetSplit, split_dataset
from .evaluation import eval_chunks, infer, r_squared
from .losses import (
    PairLabel,
    assign_bin,
    assign_bins,
    joint_loss,
    mse_loss,
    weighted_contrastive_batch_loss,
)
from .model import ContrastiveRegressor

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 1e-5

    def build(self, params):
        return torch.optim.SGD(params, lr=self.learning_rate, momentum=self.momentum,
                               weight_decay=self.weight_decay)


@dataclass(frozen=True)
class TrainingPair:
    chunk_a: Chunk
    chunk_b: Chunk
    rating_a: float
    rating_b: float
    label: PairLabel


def pair_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise TrainingError(f"pair sampling needs a batch of at least 2, got {n}")
    return rng.permutation(n)


def sample_pairs(batch, rng: np.random.Generator, C: int = 5) -> list[TrainingPair]:
    """Pair element ``i`` of ``batch`` with element ``perm[i]`` of a random permutation.

    ``batch`` is a list of ``(Chunk, rating)``. Fixed points of the
    permutation give self-pairs, which are valid same-bin pairs.
    """
    perm = pair_permutation(len(batch), rng)
    pairs = []
    for i, j in enumerate(perm):
        (ca, ra), (cb, rb) = batch[i], batch[j]
        xi, xj = assign_bin(ra, C), assign_bin(rb, C)
        pairs.append(TrainingPair(ca, cb, ra, rb, PairLabel(int(xi == xj), xi, xj)))
    return pairs


class EarlyStopping:
    """Signals a stop once ``patience`` epochs pass without a strict improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise TrainingError("patience must be positive")
        self.patience = patience
        self.best_loss = float("inf")
        self.best_epoch = -1

    def step(self, epoch: int, loss: float) -> bool:
        if loss < self.best_loss:
            self.best_loss, self.best_epoch = loss, epoch
        return epoch - self.best_epoch >= self.patience


@dataclass
class PhaseHistory:
    name: str
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    @property
    def last_epoch(self):
        return len(self.train_losses) - 1

    def to_dict(self):
        return {
            "name": self.name,
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "last_epoch": self.last_epoch,
        }


def run_phase(name, epochs, patience, train_epoch, validate, model=None, restore_best=True) -> PhaseHistory:
    """Generic epoch loop with early stopping on ``validate()``.

    When ``model`` is given and ``restore_best`` is set, the weights from the
    best validation epoch are loaded back at the end.
    """
    history = PhaseHistory(name)
    stopper = EarlyStopping(patience)
    best_state = None
    for epoch in range(epochs):
        history.train_losses.append(float(train_epoch(epoch)))
        val = float(validate())
        history.val_losses.append(val)
        improved = val < stopper.best_loss
        stop = stopper.step(epoch, val)
        if improved and model is not None:
            best_state = copy.deepcopy(model.state_dict())
        if stop:
            log.info("%s: early stop at epoch %d (best %d)", name, epoch, stopper.best_epoch)
            break
    history.best_epoch, history.best_val_loss = stopper.best_epoch, stopper.best_loss
    if restore_best and best_state is not None:
        model.load_state_dict(best_state)
    return history


@dataclass
class TrainReport:
    regime: str
    seed: int
    config: dict
    phases: list
    test_metrics: dict
    model: ContrastiveRegressor | None = field(default=None, repr=False, compare=False)

    @property
    def best_epoch(self):
        return self.phases[-1].best_epoch

    def to_dict(self):
        return {
            "regime": self.regime,
            "seed": self.seed,
            "config": self.config,
            "phases": [p.to_dict() for p in self.phases],
            "best_epoch": self.best_epoch,
            "test_metrics": self.test_metrics,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json(), encoding="utf-8")
        tmp.replace(path)
        return path


class _Streams:
    def __init__(self, seed):
        seqs = np.random.SeedSequence(int(seed)).spawn(4)
        self.chunks, self.order, self.pairs, self.val_pairs = (np.random.default_rng(s) for s in seqs)


class _Run:
    """State shared by the phases of one training run."""

    def __init__(self, cfg: RunConfig, dataset: Dataset, split: DatasetSplit | None):
        self.cfg = cfg
        self.split = split or split_dataset(dataset.ids, cfg.seed)
        for name in ("train_ids", "val_ids", "test_ids"):
            if len(getattr(self.split, name)) == 0:
                raise TrainingError(f"split has no {name[:-4]} recordings")
        if len(self.split.train_ids) < 2 or len(self.split.val_ids) < 2:
            raise TrainingError("need at least 2 training and 2 validation recordings")
        self.dataset = dataset
        self.streams = _Streams(cfg.seed)
        self.model = ContrastiveRegressor(cfg.encoder_config, seed=cfg.seed)
        C = cfg.loss.C

        self.train_contours = [dataset.contours[i] for i in self.split.train_ids]
        self.train_y = torch.as_tensor(dataset.ratings(self.split.train_ids, cfg.criterion), dtype=torch.float32)
        self.train_bins = assign_bins(self.train_y.double(), C)

        val_contours = [dataset.contours[i] for i in self.split.val_ids]
        self.val_x, _ = eval_chunks(val_contours, cfg.chunk_len)
        self.val_y = torch.as_tensor(dataset.ratings(self.split.val_ids, cfg.criterion), dtype=torch.float32)
        self.val_bins = assign_bins(self.val_y.double(), C)
        self.val_perm = torch.as_tensor(pair_permutation(len(self.split.val_ids), self.streams.val_pairs))

    def epoch_batches(self):
        """Fresh random chunks, shuffled into batches; trailing singletons are dropped."""
        chunks = np.stack([random_chunk(c, self.cfg.chunk_len, self.streams.chunks).values
                           for c in self.train_contours])
        x = torch.as_tensor(chunks, dtype=torch.float32)
        self.epoch_x = x
        order = self.streams.order.permutation(len(self.train_contours))
        bs = self.cfg.batch_size
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            if len(idx) < 2:
                break
            idx = torch.as_tensor(idx)
            yield x[idx], self.train_y[idx], self.train_bins[idx]

    @torch.no_grad()
    def recalibrate_batchnorm(self):
        """Replace running batch-norm statistics by their exact average over this
        epoch's training chunks, evaluated at the current weights.

        The exponential running average lags the weights badly under momentum SGD,
        which makes inference-mode predictions erratic.
        """
        encoder = self.model.encoder
        norms = [m for m in encoder.modules() if isinstance(m, torch.nn.BatchNorm1d)]
        momenta = [m.momentum for m in norms]
        for m in norms:
            m.reset_running_stats()
            m.momentum = None
        encoder.train()
        bs = self.cfg.batch_size
        for start in range(0, len(self.epoch_x), bs):
            if len(self.epoch_x) - start >= 2:
                encoder(self.epoch_x[start:start + bs])
        for m, momentum in zip(norms, momenta):
            m.momentum = momentum

    def contrastive(self, z, bins, perm):
        return weighted_contrastive_batch_loss(z, z[perm], bins, bins[perm], self.cfg.loss)

    @torch.no_grad()
    def validate(self, kind):
        # Callers put the model back into training mode at the start of each epoch.
        self.model.eval()
        z, pred = self.model(self.val_x)
        mse = mse_loss(pred, self.val_y)
        if kind == "mse":
            return mse.item()
        lc = self.contrastive(z, self.val_bins, self.val_perm)
        if kind == "contrastive":
            return lc.item()
        return joint_loss(mse, lc, self.cfg.loss.contrastive_weight).item()

    def optimizer(self, phase, params):
        oc = OptimizerConfig(phase.lr, self.cfg.optimizer.momentum, self.cfg.optimizer.weight_decay)
        return oc.build(params)

    def report(self, phases):
        cfg = self.cfg
        test_ids = list(self.split.test_ids)
        contours = [self.dataset.contours[i] for i in test_ids]
        y = self.dataset.ratings(test_ids, cfg.criterion)
        _, pred = infer(self.model, contours, cfg.chunk_len, cfg.eval.chunk_policy, cfg.eval.n_chunks)
        metrics = {"mse": float(np.mean((y - pred) ** 2)), "n": len(test_ids)}
        try:
            metrics["r2"] = r_squared(y, pred)
        except ValueError:
            metrics["r2"] = None
        return TrainReport(cfg.regime, cfg.seed, cfg.to_flat(), phases, metrics, self.model)


def _check_regime(cfg, expected):
    if cfg.regime != expected:
        raise TrainingError(f"config regime is {cfg.regime!r}, expected {expected!r}")


def _regression_phase(run: _Run, name, use_contrastive, restore_best=True):
    """End-to-end training on MSE, optionally plus the weighted contrastive term."""
    cfg = run.cfg
    model = run.model
    opt = run.optimizer(cfg.optimizer.regression, model.parameters())
    weight = cfg.loss.contrastive_weight

    def train_epoch(epoch):
        model.train()
        losses = []
        for x, y, bins in run.epoch_batches():
            z, pred = model(x)
            loss = mse_loss(pred, y)
            if use_contrastive:
                # Each datapoint is both an "a" and a "b" member exactly once under a
                # permutation, so the batch MSE equals the MSE over both pair members.
                perm = torch.as_tensor(pair_permutation(len(y), run.streams.pairs))
                loss = joint_loss(loss, run.contrastive(z, bins, perm), weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        run.recalibrate_batchnorm()
        return np.mean(losses)

    kind = "joint" if use_contrastive else "mse"
    return run_phase(name, cfg.optimizer.regression.epochs, cfg.patience, train_epoch,
                     lambda: run.validate(kind), model, restore_best)


def train_baseline(cfg: RunConfig, dataset: Dataset, split: DatasetSplit | None = None,
                   restore_best: bool = True) -> TrainReport:
    _check_regime(cfg, "baseline")
    run = _Run(cfg, dataset, split)
    return run.report([_regression_phase(run, "regression", False, restore_best)])


def train_joint(cfg: RunConfig, dataset: Dataset, split: DatasetSplit | None = None,
                restore_best: bool = True) -> TrainReport:
    _check_regime(cfg, "joint")
    run = _Run(cfg, dataset, split)
    return run.report([_regression_phase(run, "joint", True, restore_best)])


def train_two_step(cfg: RunConfig, dataset: Dataset, split: DatasetSplit | None = None,
                   restore_best: bool = True) -> TrainReport:
    """Contrastive encoder pre-training, then a head fit on a frozen encoder."""
    _check_regime(cfg, "two_step")
    run = _Run(cfg, dataset, split)
    model = run.model
    encoder, head = model.encoder, model.head

    opt = run.optimizer(cfg.optimizer.contrastive, encoder.parameters())

    def encoder_epoch(epoch):
        encoder.train()
        losses = []
        for x, _, bins in run.epoch_batches():
            z = encoder(x)
            perm = torch.as_tensor(pair_permutation(len(bins), run.streams.pairs))
            loss = run.contrastive(z, bins, perm)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        run.recalibrate_batchnorm()
        return np.mean(losses)

    phase1 = run_phase("contrastive", cfg.optimizer.contrastive.epochs, cfg.patience, encoder_epoch,
                       lambda: run.validate("contrastive"), model, restore_best)

    # Freeze: no gradients and batch-norm running statistics stay fixed (eval mode).
    for p in encoder.parameters():
        p.requires_grad_(False)
    head_opt = run.optimizer(cfg.optimizer.regression, head.parameters())

    def head_epoch(epoch):
        encoder.eval()
        head.train()
        losses = []
        for x, y, _ in run.epoch_batches():
            with torch.no_grad():
                z = encoder(x)
            loss = mse_loss(head(z), y)
            head_opt.zero_grad()
            loss.backward()
            head_opt.step()
            losses.append(loss.item())
        return np.mean(losses)

    phase2 = run_phase("regression", cfg.optimizer.regression.epochs, cfg.patience, head_epoch,
                       lambda: run.validate("mse"), model, restore_best)
    return run.report([phase1, phase2])


TRAINERS = {"baseline": train_baseline, "two_step": train_two_step, "joint": train_joint}


def train(cfg: RunConfig, dataset: Dataset, split: DatasetSplit | None = None) -> TrainReport:
    return TRAINERS[cfg.regime](cfg, dataset, split)


def run_seeds(cfg: RunConfig, dataset: Dataset, seeds) -> list[TrainReport]:
    """Independent runs, one per seed; each seed re-derives init and split."""
    seeds = list(seeds)
    if not seeds:
        raise TrainingError("need at least one seed")
    return [train(cfg.replace(seed=int(s)), dataset) for s in seeds]
