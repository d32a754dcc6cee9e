"""Agent state observations built from teacher and student predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Value substituted for the uncertainty component when it is ablated,
# keeping the actor input dimensionality fixed.
UNCERTAINTY_PLACEHOLDER = 0.5


@dataclass(frozen=True)
class StateObservation:
    teacher_confidence: float
    student_confidence: float
    uncertainty: float

    def as_array(self) -> np.ndarray:
        return np.array([self.teacher_confidence, self.student_confidence, self.uncertainty])


def predict_class(probs) -> tuple[int, float]:
    """Most probable class and its probability; ties break to the lowest index."""
    p = np.asarray(probs, dtype=np.float64)
    idx = int(np.argmax(p))
    return idx, float(p[idx])


def uncertainty_score(probs) -> float:
    """One minus the margin between the top two class probabilities."""
    p = np.asarray(probs, dtype=np.float64)
    if p.size < 2:
        raise ValueError("uncertainty score needs at least two classes")
    top_two = np.partition(p, p.size - 2)[-2:]
    return float(1.0 - (top_two[1] - top_two[0]))


def build_state(teacher_probs, student_probs, *, include_uncertainty: bool = True) -> StateObservation:
    t = np.asarray(teacher_probs, dtype=np.float64)
    s = np.asarray(student_probs, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"teacher/student distributions differ in length: {t.shape} vs {s.shape}")
    _, t_conf = predict_class(t)
    _, s_conf = predict_class(s)
    u = uncertainty_score(s) if include_uncertainty else UNCERTAINTY_PLACEHOLDER
    return StateObservation(t_conf, s_conf, u)


def build_state_batch(teacher_probs, student_probs, *, include_uncertainty: bool = True) -> np.ndarray:
    """Vectorized ``build_state`` over rows; returns a ``[n, 3]`` array."""
    t = np.asarray(teacher_probs, dtype=np.float64)
    s = np.asarray(student_probs, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 2:
        raise ValueError(f"expected matching [n, k] distributions, got {t.shape} and {s.shape}")
    if t.shape[1] < 2:
        raise ValueError("state construction needs at least two classes")
    t_conf = t.max(axis=1)
    s_conf = s.max(axis=1)
    if include_uncertainty:
        top_two = np.partition(s, s.shape[1] - 2, axis=1)[:, -2:]
        u = 1.0 - (top_two[:, 1] - top_two[:, 0])
    else:
        u = np.full(len(s), UNCERTAINTY_PLACEHOLDER)
    return np.column_stack([t_conf, s_conf, u])
