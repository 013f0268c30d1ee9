"""Config-driven experiment runner: datasets, seeded trials, reports, sweeps.

An experiment is one flat TOML file. Paths inside it are resolved relative to
the file; ``output_dir`` is resolved against ``$POPLL_OUTPUT_ROOT`` when that
variable is set. Example::

    seed = 0
    trials = 5
    output_dir = "runs/synthetic"
    source = "synthetic"
    synthetic = { layout = "triangle", separation = 4.5, dim = 400, n = 5000, n_test = 5000 }
    loss = "proden"
    pop = true
    epsilon = 0.0025

Each trial ``i`` draws everything from ``seed + i``. Outputs: one
``trial_<i>/report.csv`` per trial, ``summary.json`` and ``summary.txt``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .data import (
    DataError,
    PartialLabelDataset,
    corrupt_id,
    corrupt_uniform,
    load_plld,
    load_supervised,
    split,
    split_indices,
    train_annotator,
)
from .losses import LossKind
from .nn import SGD, ScoringModel
from .purify import CSV_FIELDS, Evaluation, PopHistory, PurificationSchedule, run_pop
from .theory import GaussianMixture, bayes_agreement, triangle_mixture

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "POPLL_OUTPUT_ROOT"
SOURCES = ("synthetic", "plld", "supervised")
CORRUPTIONS = ("id", "uniform")
SWEEPABLE = ("e0", "e_s", "e_end", "epsilon", "warmup_rounds", "lws_beta", "lr")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    # data
    source: str = "synthetic"
    path: Optional[str] = None
    test_path: Optional[str] = None
    test_fraction: float = 0.2
    corruption: str = "id"
    uniform_rate: float = 0.3
    annotator: str = "mlp"
    annotator_hidden: int = 128
    annotator_epochs: int = 20
    synthetic: Dict[str, Any] = field(default_factory=dict)
    # model and loss
    model_hidden: List[int] = field(default_factory=list)
    loss: str = "proden"
    lws_beta: float = 1.0
    # purification
    pop: bool = True
    e0: float = 0.9
    e_end: float = 0.05
    e_s: float = 0.05
    epsilon: float = 0.05
    rounds: int = 100
    warmup_rounds: int = 10
    # optimisation
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 256
    # protocol
    trials: int = 5
    seed: int = 0
    validation_fraction: float = 0.1
    output_dir: str = "runs/experiment"
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_dict(cls, values: Dict[str, Any], base_dir=".") -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        for key in values:
            if key not in known:
                raise ConfigError(key, "unknown configuration field")
        cfg = cls(**values, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"{path} does not exist") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"{path} is not valid TOML: {exc}") from None
        return cls.from_dict(values, base_dir=path.parent)

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d, self.base_dir)

    def _need(self, name, ok, message):
        if not ok:
            raise ConfigError(name, message)

    def validate(self) -> None:
        need = self._need
        need("source", self.source in SOURCES, f"must be one of {SOURCES}")
        need("corruption", self.corruption in CORRUPTIONS, f"must be one of {CORRUPTIONS}")
        need("annotator", self.annotator in ("mlp", "oracle"), "must be 'mlp' or 'oracle'")
        if self.annotator == "oracle":
            need("annotator", self.source == "synthetic", "'oracle' needs a synthetic source")
        need("loss", self.loss in [k.value for k in LossKind], f"unknown loss {self.loss!r}")
        need("lws_beta", _num(self.lws_beta) and self.lws_beta > 0, "must be positive")
        need("trials", isinstance(self.trials, int) and self.trials >= 1, "must be >= 1")
        need("seed", isinstance(self.seed, int) and self.seed >= 0, "must be a non-negative integer")
        need("batch_size", isinstance(self.batch_size, int) and self.batch_size >= 1, "must be >= 1")
        need("uniform_rate", _num(self.uniform_rate) and 0 <= self.uniform_rate <= 1, "must lie in [0, 1]")
        need("validation_fraction", _num(self.validation_fraction) and 0 <= self.validation_fraction < 1,
             "must lie in [0, 1)")
        need("test_fraction", _num(self.test_fraction) and 0 < self.test_fraction < 1, "must lie in (0, 1)")
        need("model_hidden", isinstance(self.model_hidden, list)
             and len(self.model_hidden) <= 2
             and all(isinstance(h, int) and h > 0 for h in self.model_hidden),
             "must be a list of at most two positive widths")
        for name in ("annotator_hidden", "annotator_epochs", "rounds", "warmup_rounds"):
            v = getattr(self, name)
            need(name, isinstance(v, int) and v >= 0, "must be a non-negative integer")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError("schedule", str(exc)) from None
        try:
            self.optimizer()
        except ValueError as exc:
            raise ConfigError("optimizer", str(exc)) from None
        if self.source == "synthetic":
            try:
                self.mixture()
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError("synthetic", str(exc)) from None
            for key in ("n", "n_test"):
                v = self.synthetic.get(key, 5000)
                need(f"synthetic.{key}", isinstance(v, int) and v >= 1, "must be a positive integer")
        else:
            need("path", bool(self.path), f"required for source {self.source!r}")
            need("path", self.resolve(self.path).exists(), f"{self.resolve(self.path)} does not exist")
            if self.test_path:
                need("test_path", self.resolve(self.test_path).exists(),
                     f"{self.resolve(self.test_path)} does not exist")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def output_path(self) -> Path:
        p = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if p.is_absolute():
            return p
        return Path(root) / p if root else p

    def schedule(self) -> PurificationSchedule:
        return PurificationSchedule(
            e0=self.e0, e_end=self.e_end, e_s=self.e_s, epsilon=self.epsilon,
            rounds=self.rounds, warmup_rounds=self.warmup_rounds,
        )

    def optimizer(self) -> SGD:
        return SGD(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay)

    def mixture(self) -> GaussianMixture:
        spec = dict(self.synthetic)
        spec.pop("n", None)
        spec.pop("n_test", None)
        layout = spec.pop("layout", "triangle" if "means" not in spec else "explicit")
        if layout == "triangle":
            mix = triangle_mixture(
                float(spec.pop("separation", 4.5)), float(spec.pop("scale", 1.0)), int(spec.pop("dim", 2))
            )
            priors = spec.pop("priors", None)
            if priors is not None:
                mix = GaussianMixture(mix.means, mix.scale, np.asarray(priors, float))
        elif layout == "explicit":
            mix = GaussianMixture(
                np.asarray(spec.pop("means"), float), float(spec.pop("scale", 1.0)),
                None if spec.get("priors") is None else np.asarray(spec.pop("priors"), float),
            )
        else:
            raise ValueError(f"unknown layout {layout!r}")
        if spec:
            raise ValueError(f"unknown synthetic keys {sorted(spec)}")
        return mix


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


@dataclass
class TrialData:
    train: PartialLabelDataset
    validation: Optional[PartialLabelDataset]
    test_X: np.ndarray
    test_y: np.ndarray
    mixture: Optional[GaussianMixture] = None
    t_hat: Optional[float] = None


def _corrupt(cfg: ExperimentConfig, X, y, c, rng, mixture=None):
    if cfg.corruption == "uniform":
        return corrupt_uniform(X, y, c, cfg.uniform_rate, rng)
    if cfg.annotator == "oracle":
        annotator = mixture.posterior
    else:
        annotator = train_annotator(
            X, y, c, rng, hidden=cfg.annotator_hidden, epochs=cfg.annotator_epochs
        )
    posterior = None if mixture is None else mixture.posterior(X)
    return corrupt_id(annotator, X, y, rng, n_classes=c, posterior=posterior)


def build_trial_data(cfg: ExperimentConfig, rng: np.random.Generator) -> TrialData:
    mixture = None
    t_hat = None
    if cfg.source == "synthetic":
        mixture = cfg.mixture()
        X, y = mixture.sample(cfg.synthetic.get("n", 5000), rng)
        test_X, test_y = mixture.sample(cfg.synthetic.get("n_test", 5000), rng)
        full, profile = _corrupt(cfg, X, y, mixture.n_classes, rng, mixture)
        t_hat = profile.t_hat
    elif cfg.source == "supervised":
        X, y = load_supervised(cfg.resolve(cfg.path))
        c = int(y.max()) + 1
        if cfg.test_path:
            test_X, test_y = load_supervised(cfg.resolve(cfg.test_path))
        else:
            keep, held = split_indices(len(X), cfg.test_fraction, rng)
            X, y, test_X, test_y = X[keep], y[keep], X[held], y[held]
        full, _ = _corrupt(cfg, X, y, c, rng)
    else:
        full = load_plld(cfg.resolve(cfg.path))
        if cfg.test_path:
            test = load_plld(cfg.resolve(cfg.test_path))
        else:
            full, test = split(full, cfg.test_fraction, rng)
        if test.true_labels is None:
            raise DataError("test data carries no true labels")
        test_X, test_y = test.features, test.true_labels
    if cfg.validation_fraction > 0:
        train, validation = split(full, cfg.validation_fraction, rng)
    else:
        train, validation = full, None
    return TrialData(train, validation, test_X, test_y, mixture, t_hat)


@dataclass
class TrialResult:
    trial: int
    seed: int
    history: PopHistory
    metrics: Dict[str, Any]


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialResult:
    seed = cfg.seed + trial
    rng = np.random.default_rng(seed)
    data = build_trial_data(cfg, rng)
    train = data.train
    model = ScoringModel.build(train.n_features, train.n_classes, cfg.model_hidden, rng=rng)
    posterior = None if data.mixture is None else data.mixture.posterior(train.features)
    ev = Evaluation(data.validation, data.test_X, data.test_y, posterior)
    initial_avg = train.avg_candidate_labels()
    model, history = run_pop(
        train, model, cfg.loss, cfg.schedule(), cfg.optimizer(), rng,
        purify=cfg.pop, evaluation=ev, batch_size=cfg.batch_size, lws_beta=cfg.lws_beta,
    )
    metrics = {
        "trial": trial,
        "seed": seed,
        "test_acc": float(np.mean(model.predict(data.test_X) == data.test_y)),
        "initial_avg_cls": initial_avg,
        "final_avg_cls": float(history.candidates.sum(axis=1).mean()),
        "total_removals": int(sum(history.column("removals"))),
    }
    if train.true_labels is not None:
        metrics["true_label_removal_rate"] = float(history.truth_removed.mean())
    if data.mixture is not None:
        bayes = data.mixture.bayes_predict(data.test_X)
        metrics["bayes_accuracy"] = float(np.mean(bayes == data.test_y))
        metrics["bayes_agreement"] = bayes_agreement(model.predict(data.test_X), bayes)
        if data.t_hat is not None:
            metrics["t_hat"] = data.t_hat
    return TrialResult(trial, seed, history, metrics)


@dataclass
class Report:
    config: ExperimentConfig
    trials: List[TrialResult]
    output_dir: Path

    @property
    def accuracies(self) -> List[float]:
        return [t.metrics["test_acc"] for t in self.trials]

    def aggregate(self) -> Dict[str, float]:
        return aggregate(self.accuracies)

    def summary(self) -> Dict[str, Any]:
        cfg = self.config.to_dict()
        cfg.pop("output_dir")
        return {
            "config": cfg,
            "trials": [t.metrics for t in self.trials],
            **self.aggregate(),
        }


def aggregate(accuracies: Sequence[float]) -> Dict[str, float]:
    """Mean and population standard deviation of the per-trial accuracies."""
    return {
        "test_acc_mean": statistics.fmean(accuracies),
        "test_acc_std": statistics.pstdev(accuracies) if len(accuracies) > 1 else 0.0,
    }


def _fmt(v) -> str:
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def history_csv(history: PopHistory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in history.as_rows():
        writer.writerow([_fmt(row[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def summary_table(report: Report) -> str:
    cfg = report.config
    lines = [
        f"loss={cfg.loss} pop={'on' if cfg.pop else 'off'} trials={cfg.trials} seed={cfg.seed}",
        f"{'trial':>5} {'seed':>6} {'test_acc':>9} {'avg_cls':>15} {'removals':>9}",
    ]
    for t in report.trials:
        m = t.metrics
        lines.append(
            f"{m['trial']:>5} {m['seed']:>6} {100 * m['test_acc']:>8.2f}% "
            f"{m['initial_avg_cls']:>6.3f} -> {m['final_avg_cls']:<5.3f} {m['total_removals']:>9}"
        )
    agg = report.aggregate()
    lines.append(f"accuracy {100 * agg['test_acc_mean']:.2f}±{100 * agg['test_acc_std']:.2f}%")
    return "\n".join(lines) + "\n"


def write_report(report: Report) -> None:
    out = report.output_dir
    out.mkdir(parents=True, exist_ok=True)
    for t in report.trials:
        d = out / f"trial_{t.trial}"
        d.mkdir(exist_ok=True)
        (d / "report.csv").write_text(history_csv(t.history))
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(summary_table(report))


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> Report:
    trials = []
    for i in range(cfg.trials):
        log.info("trial %d/%d (seed %d)", i + 1, cfg.trials, cfg.seed + i)
        trials.append(run_trial(cfg, i))
    report = Report(cfg, trials, cfg.output_path())
    if write:
        write_report(report)
    return report


def parse_values(name: str, text) -> list:
    items = text if isinstance(text, (list, tuple)) else [s for s in str(text).split(",") if s.strip()]
    cast = int if name == "warmup_rounds" else float
    try:
        return [cast(v) for v in items]
    except ValueError:
        raise ConfigError(name, f"cannot parse sweep values {text!r}") from None


def sweep(cfg: ExperimentConfig, name: str, values: Sequence, write: bool = True):
    """One experiment per value of ``name``; returns (reports, curve rows)."""
    if name not in SWEEPABLE:
        raise ConfigError(name, f"not sweepable; choose from {SWEEPABLE}")
    values = parse_values(name, values)
    if not values:
        raise ConfigError(name, "empty value list")
    rel = Path(cfg.output_dir) / f"sweep_{name}"
    base = cfg.replace(output_dir=str(rel)).output_path()
    reports, rows = [], []
    for v in values:
        sub = cfg.replace(**{name: v, "output_dir": str(rel / f"{name}={v}")})
        rep = run_experiment(sub, write=write)
        reports.append(rep)
        agg = rep.aggregate()
        rows.append({"value": v, **agg, "trials": len(rep.trials)})
    if write:
        base.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([name, "test_acc_mean", "test_acc_std", "trials"])
        for r in rows:
            w.writerow([_fmt(r["value"]), _fmt(r["test_acc_mean"]), _fmt(r["test_acc_std"]), r["trials"]])
        (base / "curve.csv").write_text(buf.getvalue())
    return reports, rows
