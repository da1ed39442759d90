"""Domain model: longitudinal subjects, margin functions, classifiers, prediction.

A dataset is a collection of labelled subjects; each subject is a trajectory of
feature vectors observed at (possibly irregular) time points.  A trained
classifier carries a unit weight vector together with a linear margin function
``m(t) = a*t + d`` and predicts by aggregating the decision values of every
observation in a trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptyTimes,
    NonFiniteValue,
    SingleClass,
    UnsortedTimes,
)

# Aggregate scores inside (-TIE_TOLERANCE, +TIE_TOLERANCE) are labelled +1 but
# flagged inconclusive: the decision rule covers score >= 0 and score <= 0.
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Observation:
    """One sampled point of a trajectory: a feature vector at a given time."""

    time: float
    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(
            self, "features", np.ascontiguousarray(self.features, dtype=np.float64)
        )


@dataclass(frozen=True, eq=False)
class Subject:
    """A labelled trajectory (e.g. one breeding line), ordered in time."""

    id: str
    label: int
    observations: tuple[Observation, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))

    @property
    def times(self) -> np.ndarray:
        return np.array([o.time for o in self.observations])

    @property
    def n_obs(self) -> int:
        return len(self.observations)


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Validated collection of subjects sharing a feature dimension ``p``.

    Instances are immutable after construction and safe to share across
    concurrent workers.  Construct through :func:`validate_dataset`.
    """

    p: int
    subjects: tuple[Subject, ...]
    total_obs: int

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def labels(self) -> np.ndarray:
        """Per-subject labels, in subject order."""
        return np.array([s.label for s in self.subjects], dtype=np.int64)

    @property
    def has_both_classes(self) -> bool:
        labels = self.labels
        return bool((labels > 0).any() and (labels < 0).any())

    @property
    def obs_counts(self) -> np.ndarray:
        return np.array([s.n_obs for s in self.subjects], dtype=np.int64)


@dataclass(frozen=True)
class MarginFunction:
    """Linear margin ``m(t) = a*t + d``; may be negative early in a study."""

    a: float
    d: float


@dataclass(frozen=True, eq=False)
class DualArtifacts:
    """Unnormalized training artifacts kept alongside the margin-form model."""

    v: np.ndarray
    a_prime: float
    b_prime: float
    v_norm: float
    alphas: np.ndarray
    support: tuple[tuple[int, int], ...]  # (subject index, observation index)
    t_bar: float
    C: float


@dataclass(frozen=True)
class TrainMeta:
    """Solver provenance: seed, tolerance, iteration count, dual feasibility."""

    seed: int | None
    tol: float
    iterations: int
    eq_label_residual: float
    eq_time_residual: float


@dataclass(frozen=True, eq=False)
class TrainedClassifier:
    """Margin-form classifier: unit weights ``w``, offset ``b``, margin (a, d)."""

    w: np.ndarray
    a: float
    b: float
    d: float
    raw: DualArtifacts
    meta: TrainMeta

    @property
    def p(self) -> int:
        return int(self.w.shape[0])

    @property
    def margin(self) -> MarginFunction:
        return MarginFunction(self.a, self.d)


@dataclass(frozen=True, eq=False)
class PredictionOutcome:
    label: int
    score: float
    conclusive: bool
    per_time_values: np.ndarray


def validate_dataset(
    subjects: Iterable[Subject], require_both_classes: bool = False
) -> LongitudinalDataset:
    """Check all dataset invariants and return the validated dataset.

    Raises EmptyDataset, DimensionMismatch, UnsortedTimes or NonFiniteValue on
    malformed input.  SingleClass is raised only when ``require_both_classes``
    is set (prediction datasets may legitimately hold one class).
    """
    subjects = tuple(subjects)
    if not subjects:
        raise EmptyDataset("dataset has no subjects")

    p = None
    total = 0
    for subj in subjects:
        if subj.label not in (-1, 1):
            raise ValueError(f"subject {subj.id!r}: label must be +1 or -1, got {subj.label}")
        if not subj.observations:
            raise EmptyDataset(f"subject {subj.id!r} has no observations")
        prev_t = -np.inf
        for obs in subj.observations:
            if obs.features.ndim != 1:
                raise DimensionMismatch(
                    f"subject {subj.id!r}: features must be a vector, got shape {obs.features.shape}"
                )
            if p is None:
                p = int(obs.features.shape[0])
            elif obs.features.shape[0] != p:
                raise DimensionMismatch(
                    f"subject {subj.id!r}: feature length {obs.features.shape[0]} != {p}"
                )
            if not np.isfinite(obs.time):
                raise NonFiniteValue(f"subject {subj.id!r}: non-finite time")
            if not np.isfinite(obs.features).all():
                raise NonFiniteValue(f"subject {subj.id!r}: non-finite feature value")
            if obs.time < prev_t:
                raise UnsortedTimes(
                    f"subject {subj.id!r}: time {obs.time} follows {prev_t}"
                )
            prev_t = obs.time
        total += subj.n_obs
    if p is None or p < 1:
        raise DimensionMismatch("feature dimension must be at least 1")

    ds = LongitudinalDataset(p=p, subjects=subjects, total_obs=total)
    if require_both_classes and not ds.has_both_classes:
        raise SingleClass("training dataset must contain both classes")
    return ds


def feature_matrix(ds: LongitudinalDataset) -> np.ndarray:
    """All observations as a (total_obs, p) matrix, subjects in dataset order."""
    out = np.empty((ds.total_obs, ds.p))
    r = 0
    for subj in ds.subjects:
        for obs in subj.observations:
            out[r] = obs.features
            r += 1
    return out


def observation_labels(ds: LongitudinalDataset) -> np.ndarray:
    """Per-observation subject label, flattened in dataset order."""
    return np.repeat(ds.labels, ds.obs_counts).astype(np.float64)


def observation_times(ds: LongitudinalDataset) -> np.ndarray:
    return np.concatenate([s.times for s in ds.subjects])


def evaluate_margin(m: MarginFunction, t: float) -> float:
    """Margin required at time ``t``."""
    return m.a * float(t) + m.d


def average_margin(m: MarginFunction, times: Sequence[float]) -> float:
    """Average margin ``(2a/n) * sum(times) + 2d`` over a shared time grid."""
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        raise EmptyTimes("average_margin needs at least one time point")
    return 2.0 * m.a * float(times.mean()) + 2.0 * m.d


def predict(
    classifier: TrainedClassifier, trajectory: Sequence[Observation]
) -> PredictionOutcome:
    """Label a trajectory by the sign of the aggregated decision values.

    The score is ``sum_j (w . x(t_j) + b)``; nonnegative scores map to +1.
    Scores inside the tie band are labelled +1 with ``conclusive=False``.
    """
    if len(trajectory) == 0:
        raise EmptyDataset("cannot predict from an empty trajectory")
    values = np.empty(len(trajectory))
    for j, obs in enumerate(trajectory):
        if obs.features.shape[0] != classifier.p:
            raise DimensionMismatch(
                f"observation has {obs.features.shape[0]} features, classifier expects {classifier.p}"
            )
        values[j] = classifier.w @ obs.features + classifier.b
    score = float(values.sum())
    conclusive = abs(score) >= TIE_TOLERANCE
    label = 1 if (score >= 0.0 or not conclusive) else -1
    return PredictionOutcome(
        label=label, score=score, conclusive=conclusive, per_time_values=values
    )
