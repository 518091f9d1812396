"""Shared builders for the test suite: tiny trials, subjects, and a
central-difference gradient oracle."""

import numpy as np

from eegcl import LabeledTrial, Split, SubjectDataset


def make_trial(data, label=0, subject=0, timestamp=0):
    return LabeledTrial(
        trial=np.asarray(data), class_label=label, subject_id=subject, timestamp=timestamp
    )


def tiny_trials(rng, n, n_channels=2, n_timepoints=4, subject=0, n_classes=2, start=0):
    """n random labeled trials with round-robin labels and sequential timestamps."""
    return [
        make_trial(
            rng.standard_normal((n_channels, n_timepoints)),
            label=i % n_classes,
            subject=subject,
            timestamp=start + i,
        )
        for i in range(n)
    ]


def balanced_subject(rng, subject_id, n_per_class, n_channels=2, n_timepoints=4,
                     n_classes=2, tag_all=Split.TRAIN):
    """A subject with n_per_class trials per class, all carrying one split tag."""
    trials = tiny_trials(
        rng, n_per_class * n_classes, n_channels, n_timepoints, subject_id, n_classes
    )
    return SubjectDataset(
        subject_id=subject_id,
        trials=tuple(trials),
        split=(tag_all,) * len(trials),
    )


def separable_subject(rng, subject_id, n_per_class, n_channels=2, n_timepoints=4,
                      gap=6.0, noise=0.3, splits=(Split.TRAIN,)):
    """Two classes with far-apart means: linearly separable after flattening.

    splits cycles over the trials, so (TRAIN, TRAIN, VAL) gives a 2:1
    train/val interleaving.
    """
    trials = []
    tags = []
    n = n_per_class * 2
    for i in range(n):
        label = i % 2
        center = gap if label == 0 else -gap
        data = center + noise * rng.standard_normal((n_channels, n_timepoints))
        trials.append(make_trial(data, label=label, subject=subject_id, timestamp=i))
        tags.append(splits[i % len(splits)])
    return SubjectDataset(subject_id=subject_id, trials=tuple(trials), split=tuple(tags))


def central_difference(f, vector, h=1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    grad = np.zeros_like(vector)
    for i in range(vector.size):
        bumped = vector.copy()
        bumped[i] += h
        up = f(bumped)
        bumped[i] -= 2 * h
        down = f(bumped)
        grad[i] = (up - down) / (2 * h)
    return grad


def gradients_close(analytic, numeric, abs_tol=1e-4, rel_tol=1e-3):
    """Per-coordinate agreement within max(abs_tol, rel_tol * |numeric|)."""
    allowed = np.maximum(abs_tol, rel_tol * np.abs(numeric))
    return bool(np.all(np.abs(analytic - numeric) <= allowed))
