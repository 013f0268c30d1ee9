"""Partial-label datasets, candidate-set corruption and the PLLD v1 file format.

PLLD v1 layout::

    PLLD 1 <n> <q> <c> <has_truth:0|1>\\n         ASCII header line
    n*q float64, little-endian, row-major          features
    n * ceil(c/8) bytes                            candidate bitmaps, label j is
                                                   bit (j % 8) of byte j // 8
    n uint32, little-endian (if has_truth)         true labels

Converting a real-world benchmark only requires writing its feature matrix,
its candidate-label indicator matrix and (when known) its ground truth in
this layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .nn import SGD, ScoringModel, train_supervised

PROVENANCES = ("synthetic-ID", "synthetic-uniform", "real-world", "supervised")
MAGIC = b"PLLD"
VERSION = 1


class DataError(ValueError):
    """A dataset violates the partial-label invariants."""


class PlldFormatError(DataError):
    """Base class for PLLD decoding failures."""


class MalformedHeader(PlldFormatError):
    pass


class LabelOutOfRange(PlldFormatError):
    pass


class EmptyCandidateSet(PlldFormatError):
    pass


class TruncatedPayload(PlldFormatError):
    pass


class TrailingData(PlldFormatError):
    pass


class TruthNotCandidate(PlldFormatError):
    pass


@dataclass
class PartialLabelDataset:
    features: np.ndarray  # [n, q] float64
    candidates: np.ndarray  # [n, c] bool
    n_classes: int
    true_labels: Optional[np.ndarray] = None  # [n] int64, evaluation only
    provenance: str = "real-world"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.candidates = np.ascontiguousarray(self.candidates, dtype=bool)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        n = len(self.features)
        if self.candidates.shape != (n, self.n_classes):
            raise DataError(
                f"candidate matrix shape {self.candidates.shape}, expected {(n, self.n_classes)}"
            )
        empty = ~self.candidates.any(axis=1)
        if empty.any():
            raise DataError(f"example {int(np.flatnonzero(empty)[0])} has an empty candidate set")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if self.true_labels.shape != (n,):
                raise DataError("true labels must have one entry per example")
            if (self.true_labels < 0).any() or (self.true_labels >= self.n_classes).any():
                raise DataError("true label outside the label space")
            if not self.truth_in_candidates().all():
                bad = int(np.flatnonzero(~self.truth_in_candidates())[0])
                raise DataError(f"example {bad}: true label is not a candidate")
        if self.provenance not in PROVENANCES:
            raise DataError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def truth_in_candidates(self) -> np.ndarray:
        return self.candidates[np.arange(len(self)), self.true_labels]

    def avg_candidate_labels(self) -> float:
        return avg_candidate_labels(self)

    def subset(self, idx) -> "PartialLabelDataset":
        idx = np.asarray(idx)
        return PartialLabelDataset(
            self.features[idx],
            self.candidates[idx],
            self.n_classes,
            None if self.true_labels is None else self.true_labels[idx],
            self.provenance,
        )


@dataclass
class FlipProfile:
    """Inclusion probabilities used by a corruption run."""

    probabilities: np.ndarray  # [n, c]; 1 at the true label
    t_hat: Optional[float] = None
    meta: dict = field(default_factory=dict)


def avg_candidate_labels(ds: PartialLabelDataset) -> float:
    return float(ds.candidates.sum(axis=1).mean())


def flip_probabilities(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Instance-dependent inclusion probabilities from annotator confidences.

    Each incorrect label gets its score divided by the largest incorrect-label
    score of the row; the true label gets 1. Rows whose incorrect scores are
    all zero give 0 for every incorrect label.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(scores))
    incorrect = scores.copy()
    incorrect[rows, labels] = 0.0
    top = incorrect.max(axis=1, keepdims=True)
    xi = np.divide(incorrect, top, out=np.zeros_like(incorrect), where=top > 0)
    np.clip(xi, 0.0, 1.0, out=xi)
    xi[rows, labels] = 1.0
    return xi


def sample_candidates(xi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli draw per (example, label)."""
    return rng.random(xi.shape) < xi


def train_annotator(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    rng: np.random.Generator,
    hidden: int = 128,
    epochs: int = 20,
    opt: Optional[SGD] = None,
) -> ScoringModel:
    """One-hidden-layer MLP trained with cross-entropy on clean labels."""
    model = ScoringModel.build(X.shape[1], n_classes, (hidden,) if hidden else (), rng=rng)
    train_supervised(model, X, y, epochs, opt or SGD(), rng)
    return model


Annotator = Union[ScoringModel, Callable[[np.ndarray], np.ndarray]]


def _annotator_scores(annotator: Annotator, X: np.ndarray) -> np.ndarray:
    if isinstance(annotator, ScoringModel):
        return annotator.forward(X)
    return np.asarray(annotator(X), dtype=np.float64)


def corrupt_id(
    annotator: Annotator,
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    n_classes: Optional[int] = None,
    posterior: Optional[np.ndarray] = None,
) -> Tuple[PartialLabelDataset, FlipProfile]:
    """Instance-dependent partial labels for a clean supervised sample.

    When the exact class posterior of the sample is supplied, the profile also
    carries ``t_hat = max xi_j(x) / p(j|x)`` over incorrect labels.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    scores = _annotator_scores(annotator, X)
    c = scores.shape[1] if n_classes is None else n_classes
    if scores.shape != (len(X), c):
        raise DataError(f"annotator produced {scores.shape}, expected {(len(X), c)}")
    if len(y) != len(X):
        raise DataError("features and labels differ in length")
    xi = flip_probabilities(scores, y)
    cand = sample_candidates(xi, rng)
    ds = PartialLabelDataset(X, cand, c, y, "synthetic-ID")
    profile = FlipProfile(xi)
    if posterior is not None:
        profile.t_hat = flip_ratio(xi, posterior, y)
    return ds, profile


def corrupt_uniform(
    X: np.ndarray, y: np.ndarray, n_classes: int, rate: float, rng: np.random.Generator
) -> Tuple[PartialLabelDataset, FlipProfile]:
    """Baseline generator: every incorrect label enters with probability ``rate``."""
    if not 0 <= rate <= 1:
        raise ValueError("rate must lie in [0, 1]")
    y = np.asarray(y, dtype=np.int64)
    xi = np.full((len(y), n_classes), float(rate))
    xi[np.arange(len(y)), y] = 1.0
    ds = PartialLabelDataset(X, sample_candidates(xi, rng), n_classes, y, "synthetic-uniform")
    return ds, FlipProfile(xi)


def flip_ratio(xi: np.ndarray, posterior: np.ndarray, y: np.ndarray) -> float:
    """Largest xi_j(x) / p(j|x) over incorrect labels (inf if p=0 but xi>0)."""
    incorrect = np.ones_like(xi, dtype=bool)
    incorrect[np.arange(len(y)), y] = False
    num = xi[incorrect]
    den = posterior[incorrect]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(num > 0, num / den, 0.0)
    return float(ratio.max()) if ratio.size else 0.0


def split_indices(n: int, fraction: float, rng: np.random.Generator):
    if not 0 < fraction < 1:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    perm = rng.permutation(n)
    n_first = int(np.floor(n * (1 - fraction)))
    return np.sort(perm[:n_first]), np.sort(perm[n_first:])


def split(ds: PartialLabelDataset, fraction: float, rng: np.random.Generator):
    """(train, held-out) with the held-out part holding ``fraction`` of the data."""
    a, b = split_indices(len(ds), fraction, rng)
    return ds.subset(a), ds.subset(b)


# -- PLLD v1 -----------------------------------------------------------------


def encode_plld(ds: PartialLabelDataset) -> bytes:
    n, q = ds.features.shape
    c = ds.n_classes
    has_truth = int(ds.true_labels is not None)
    header = f"PLLD {VERSION} {n} {q} {c} {has_truth}\n".encode("ascii")
    parts = [header, ds.features.astype("<f8").tobytes()]
    parts.append(np.packbits(ds.candidates, axis=1, bitorder="little").tobytes())
    if has_truth:
        parts.append(ds.true_labels.astype("<u4").tobytes())
    return b"".join(parts)


def decode_plld(blob: bytes) -> PartialLabelDataset:
    end = blob.find(b"\n", 0, 256)
    if end < 0:
        raise MalformedHeader("no header line found")
    tokens = blob[:end].split()
    if len(tokens) != 6 or tokens[0] != MAGIC:
        raise MalformedHeader(f"bad header {blob[:end]!r}")
    try:
        version, n, q, c, has_truth = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeader(f"non-integer header field in {blob[:end]!r}") from None
    if version != VERSION:
        raise MalformedHeader(f"unsupported PLLD version {version}")
    if n < 0 or q < 1 or c < 1 or has_truth not in (0, 1):
        raise MalformedHeader(f"invalid dimensions n={n} q={q} c={c} has_truth={has_truth}")

    width = (c + 7) // 8
    sizes = [n * q * 8, n * width, n * 4 * has_truth]
    payload = memoryview(blob)[end + 1 :]
    if len(payload) < sum(sizes):
        raise TruncatedPayload(f"payload has {len(payload)} bytes, expected {sum(sizes)}")
    if len(payload) > sum(sizes):
        raise TrailingData(f"{len(payload) - sum(sizes)} unexpected bytes after payload")

    X = np.frombuffer(payload[: sizes[0]], dtype="<f8").reshape(n, q).astype(np.float64)
    bits = np.frombuffer(payload[sizes[0] : sizes[0] + sizes[1]], dtype=np.uint8).reshape(n, width)
    full = np.unpackbits(bits, axis=1, bitorder="little").astype(bool)
    if full[:, c:].any():
        i = int(np.flatnonzero(full[:, c:].any(axis=1))[0])
        raise LabelOutOfRange(f"example {i} lists a candidate label >= {c}")
    cand = full[:, :c]
    if n and not cand.any(axis=1).all():
        i = int(np.flatnonzero(~cand.any(axis=1))[0])
        raise EmptyCandidateSet(f"example {i} has an empty candidate list")
    y = None
    if has_truth:
        y = np.frombuffer(payload[sizes[0] + sizes[1] :], dtype="<u4").astype(np.int64)
        if (y >= c).any():
            raise LabelOutOfRange(f"true label >= {c}")
        ok = cand[np.arange(n), y]
        if not ok.all():
            raise TruthNotCandidate(f"example {int(np.flatnonzero(~ok)[0])}: true label not a candidate")
    return PartialLabelDataset(X, cand, c, y, "real-world")


def save_plld(ds: PartialLabelDataset, path) -> None:
    Path(path).write_bytes(encode_plld(ds))


def load_plld(path) -> PartialLabelDataset:
    return decode_plld(Path(path).read_bytes())


def load_supervised(path) -> Tuple[np.ndarray, np.ndarray]:
    """Clean (X, y) from a CSV with the integer label in the last column, or a
    PLLD file carrying true labels."""
    path = Path(path)
    if path.read_bytes()[:4] == MAGIC:
        ds = load_plld(path)
        if ds.true_labels is None:
            raise DataError(f"{path} has no true labels")
        return ds.features, ds.true_labels
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    y = table[:, -1]
    if not np.all(y == np.round(y)) or (y < 0).any():
        raise DataError(f"{path}: last column must hold non-negative integer labels")
    return table[:, :-1], y.astype(np.int64)
