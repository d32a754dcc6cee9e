"""Teacher training and temperature-weighted distillation updates for the student.

The distillation loss is the classic two-term form: hard-label cross
entropy plus a T^2-scaled KL term between the temperature-softened teacher
and student distributions. Teacher logits are always treated as constants.
"""
from __future__ import annotations

import numpy as np

from .config import KDSettings
from .nn import (
    LOG_FLOOR,
    Mlp,
    SgdMomentum,
    cross_entropy,
    kl_divergence,
    softmax_with_temperature,
)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"labels out of range [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def kd_loss_per_instance(student_logits, teacher_logits, target, temperature: float, alpha: float) -> float:
    """Distillation loss for one instance.

    ``target`` is either an integer class label or a soft-label
    distribution of the same length as the logits.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 1:
        raise ValueError(f"logit shapes differ: {s.shape} vs {t.shape}")
    if not np.isfinite(temperature) or temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    target_dist = one_hot([target], s.size)[0] if np.isscalar(target) or np.ndim(target) == 0 \
        else np.asarray(target, dtype=np.float64)
    ce = cross_entropy(target_dist, softmax_with_temperature(s, 1.0))
    soft_teacher = softmax_with_temperature(t, temperature)
    soft_student = softmax_with_temperature(s, temperature)
    kl = max(kl_divergence(soft_teacher, soft_student), 0.0)
    return alpha * ce + (1.0 - alpha) * temperature * temperature * kl


def kd_loss_batch(student_logits, teacher_logits, target_dists, temperatures, alpha: float):
    """Per-instance losses and their gradients w.r.t. the student logits.

    Returns ``(losses [n], dlogits [n, k])`` where ``dlogits`` is the
    gradient of each (unaveraged) per-instance loss.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    targets = np.asarray(target_dists, dtype=np.float64)
    temps = np.asarray(temperatures, dtype=np.float64)
    if s.shape != t.shape or s.shape != targets.shape:
        raise ValueError("student logits, teacher logits and targets must share one shape")
    if temps.shape != (s.shape[0],):
        raise ValueError("need one temperature per instance")
    q1 = softmax_with_temperature(s, 1.0)
    ce = -(targets * np.log(np.maximum(q1, LOG_FLOOR))).sum(axis=1)
    soft_teacher = softmax_with_temperature(t, temps)
    soft_student = softmax_with_temperature(s, temps)
    kl = np.maximum(kl_divergence(soft_teacher, soft_student), 0.0)
    losses = alpha * ce + (1.0 - alpha) * temps * temps * kl
    dlogits = alpha * (q1 - targets) + ((1.0 - alpha) * temps)[:, None] * (soft_student - soft_teacher)
    return losses, dlogits


def student_update_step(
    student: Mlp,
    optimizer: SgdMomentum,
    features,
    target_dists,
    teacher_logits,
    temperatures,
    config: KDSettings,
) -> tuple[float, bool]:
    """One optimizer step on the mean batch KD loss.

    Returns the pre-step mean loss and whether the step was applied
    (a non-finite loss or gradient skips the step).
    """
    temps = np.asarray(temperatures, dtype=np.float64)
    if np.any(~np.isfinite(temps)) or np.any(temps <= 0) or np.any(temps > 10.0):
        raise ValueError("instance temperatures must lie in (0, 10]")
    logits, cache = student.forward_with_cache(features)
    losses, dlogits = kd_loss_batch(logits, teacher_logits, target_dists, temps, config.alpha)
    mean_loss = float(losses.mean())
    if not np.isfinite(mean_loss):
        return mean_loss, False
    grads, _ = student.backward(cache, dlogits / len(losses))
    stepped = optimizer.step(student.params(), grads)
    return mean_loss, stepped


def train_teacher(
    features,
    labels,
    hidden_layers,
    num_classes: int,
    *,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    momentum: float = 0.9,
) -> Mlp:
    """Train a cross-entropy classifier to act as the frozen teacher."""
    x = np.asarray(features, dtype=np.float64)
    model = Mlp([x.shape[1], *hidden_layers, num_classes], rng)
    optimizer = SgdMomentum(model.params(), lr, momentum)
    targets = one_hot(labels, num_classes)
    n = len(x)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits, cache = model.forward_with_cache(x[idx])
            probs = softmax_with_temperature(logits, 1.0)
            loss = float(-(targets[idx] * np.log(np.maximum(probs, LOG_FLOOR))).sum(axis=1).mean())
            if not np.isfinite(loss):
                raise RuntimeError(f"teacher training diverged at epoch {epoch}, batch offset {start}")
            grads, _ = model.backward(cache, (probs - targets[idx]) / len(idx))
            optimizer.step(model.params(), grads)
    return model


def evaluate_model(model: Mlp, features, labels) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of a classifier at temperature 1."""
    labels = np.asarray(labels, dtype=np.int64)
    logits = model.forward(features)
    probs = softmax_with_temperature(logits, 1.0)
    picked = probs[np.arange(len(labels)), labels]
    ce = float(-np.log(np.maximum(picked, LOG_FLOOR)).mean())
    accuracy = float((np.argmax(probs, axis=1) == labels).mean())
    return ce, accuracy
