"""Progressive purification: warm-up, margin-rule label removal, threshold schedule."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import kernels
from .data import PartialLabelDataset
from .losses import LossKind, batch_loss, init_confidence
from .nn import SGD, ScoringModel, minibatches
from .theory import min_pure_boundary


@dataclass(frozen=True)
class PurificationSchedule:
    e0: float = 0.9
    e_end: float = 0.05
    e_s: float = 0.05
    epsilon: float = 0.05
    rounds: int = 100
    warmup_rounds: int = 10

    def __post_init__(self):
        if not 0 < self.e0 < 1:
            raise ValueError("e0 must lie in (0, 1)")
        if not 0 < self.e_end <= self.e0:
            raise ValueError("e_end must lie in (0, e0]")
        if not self.e_s > 0:
            raise ValueError("e_s must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.rounds < 0 or self.warmup_rounds < 0:
            raise ValueError("round counts must be non-negative")


def purify_round(probs: np.ndarray, candidates: np.ndarray, e: float, epsilon: float):
    """Remove every candidate trailing the in-set leader by at least e + epsilon.

    All decisions use the one probability snapshot passed in. Returns the new
    candidate mask and the total number of labels removed.
    """
    new, removed = kernels.purify(probs, candidates, e + epsilon)
    return new, int(removed.sum())


def update_threshold(e: float, removals: int, schedule: PurificationSchedule) -> float:
    """Lower e by one step after a round without removals, never below e_end."""
    # The textual rule "if e <= e_end" cannot hold for a floor; we step while above it.
    if removals == 0 and e - schedule.e_s >= schedule.e_end - 1e-12:
        return e - schedule.e_s
    return e


@dataclass
class RoundRecord:
    round: int
    e: Optional[float]
    removals: int
    avg_cls: float
    train_acc: Optional[float] = None
    val_acc: Optional[float] = None
    test_acc: Optional[float] = None
    true_label_removals: Optional[int] = None
    empirical_pure_boundary: Optional[float] = None


CSV_FIELDS = tuple(RoundRecord.__dataclass_fields__)


@dataclass
class PopHistory:
    records: List[RoundRecord] = field(default_factory=list)
    candidates: Optional[np.ndarray] = None  # final masks
    truth_removed: Optional[np.ndarray] = None  # per example, true label ever removed

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def as_rows(self) -> List[dict]:
        return [asdict(r) for r in self.records]


@dataclass
class Evaluation:
    """Optional evaluation data for run histories."""

    validation: Optional[PartialLabelDataset] = None
    test_X: Optional[np.ndarray] = None
    test_y: Optional[np.ndarray] = None
    train_posterior: Optional[np.ndarray] = None  # exact p(y|x) on the training set


def _accuracy(model, X, y):
    if X is None or y is None or len(y) == 0:
        return None
    return float(np.mean(model.predict(X) == y))


class PopTrainer:
    """Owns the mutable training state of one run: model, optimizer,
    candidate masks and confidence matrix."""

    def __init__(
        self,
        train: PartialLabelDataset,
        model: ScoringModel,
        loss: LossKind,
        opt: SGD,
        rng: np.random.Generator,
        batch_size: int = 256,
        lws_beta: float = 1.0,
    ):
        if model.n_features != train.n_features or model.n_classes != train.n_classes:
            raise ValueError("model and dataset dimensions disagree")
        self.train = train
        self.model = model
        self.loss = LossKind(loss)
        self.opt = opt
        self.rng = rng
        self.batch_size = batch_size
        self.lws_beta = lws_beta
        self.candidates = train.candidates.copy()
        self.confidence = init_confidence(self.candidates)
        self.truth_removed = np.zeros(len(train), dtype=bool)

    def train_epoch(self) -> float:
        X = self.train.features
        losses = []
        for idx in minibatches(len(X), self.batch_size, self.rng):
            mask = self.candidates[idx]
            weights = self.confidence[idx]
            fn = batch_loss(self.loss, mask, weights, self.lws_beta)
            seen = {}

            def capture(logits, probs, fn=fn):
                seen["probs"] = probs
                return fn(logits, probs)

            value, grads = self.model.loss_and_grad(X[idx], capture)
            self.opt.step(self.model.params, grads)
            losses.append(value)
            if self.loss in (LossKind.PRODEN, LossKind.LWS):
                self.confidence[idx] = kernels.normalize_weights(seen["probs"], mask)
        return float(np.mean(losses)) if losses else 0.0

    def snapshot(self) -> np.ndarray:
        probs = self.model.forward(self.train.features)
        if self.loss is LossKind.RC:
            self.confidence = kernels.normalize_weights(probs, self.candidates)
        return probs

    def purify(self, probs, e, epsilon) -> Tuple[int, Optional[int]]:
        new, removed = purify_round(probs, self.candidates, e, epsilon)
        assert new.any(axis=1).all(), "purification emptied a candidate set"
        assert not (new & ~self.candidates).any(), "purification added a label"
        truth_hits = None
        if self.train.true_labels is not None:
            rows = np.arange(len(new))
            lost = self.candidates[rows, self.train.true_labels] & ~new[rows, self.train.true_labels]
            truth_hits = int(lost.sum())
            self.truth_removed |= lost
        self.candidates = new
        self.confidence = kernels.normalize_weights(self.confidence, new)
        return removed, truth_hits

    def record(self, r, e, removals, truth_hits, ev: Evaluation) -> RoundRecord:
        ds = self.train
        train_acc = _accuracy(self.model, ds.features, ds.true_labels)
        val = ev.validation
        val_acc = None if val is None else _accuracy(self.model, val.features, val.true_labels)
        boundary = None
        if ev.train_posterior is not None and ds.true_labels is not None:
            boundary = min_pure_boundary(
                self.model.predict(ds.features), ev.train_posterior, ds.true_labels
            )
        if truth_hits is None and ds.true_labels is not None:
            truth_hits = 0
        return RoundRecord(
            round=r,
            e=e,
            removals=removals,
            avg_cls=float(self.candidates.sum(axis=1).mean()),
            train_acc=train_acc,
            val_acc=val_acc,
            test_acc=_accuracy(self.model, ev.test_X, ev.test_y),
            true_label_removals=truth_hits,
            empirical_pure_boundary=boundary,
        )


def run_pop(
    train: PartialLabelDataset,
    model: ScoringModel,
    loss,
    schedule: PurificationSchedule,
    opt: SGD,
    rng: np.random.Generator,
    *,
    purify: bool = True,
    evaluation: Optional[Evaluation] = None,
    batch_size: int = 256,
    lws_beta: float = 1.0,
    on_round: Optional[Callable[[RoundRecord], None]] = None,
) -> Tuple[ScoringModel, PopHistory]:
    """Warm-up, then ``schedule.rounds`` rounds of train / purify / re-threshold.

    With ``purify=False`` the same epoch budget is spent on plain weighted
    training (the no-purification control). Record 0 describes the model
    after warm-up; record r the state after round r. The model is trained in
    place and returned alongside the history.
    """
    ev = evaluation or Evaluation()
    trainer = PopTrainer(train, model, loss, opt, rng, batch_size, lws_beta)
    history = PopHistory()
    history.candidates = trainer.candidates
    history.truth_removed = trainer.truth_removed
    if schedule.warmup_rounds == 0 and schedule.rounds == 0:
        return model, history

    def emit(rec):
        history.records.append(rec)
        if on_round is not None:
            on_round(rec)

    for _ in range(schedule.warmup_rounds):
        trainer.train_epoch()
        trainer.snapshot()
    e = schedule.e0
    emit(trainer.record(0, e if purify else None, 0, None, ev))

    for r in range(1, schedule.rounds + 1):
        trainer.train_epoch()
        probs = trainer.snapshot()
        if purify:
            removals, truth_hits = trainer.purify(probs, e, schedule.epsilon)
        else:
            removals, truth_hits = 0, None
        emit(trainer.record(r, e if purify else None, removals, truth_hits, ev))
        if purify:
            e = update_threshold(e, removals, schedule)
    history.candidates = trainer.candidates
    history.truth_removed = trainer.truth_removed
    return model, history
