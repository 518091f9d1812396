"""Per-subject Euclidean alignment.

Each subject's trials are whitened by the inverse square root of their mean
trial covariance, so that after alignment the subject's mean covariance is
the identity. This removes second-order (covariance) differences between
subjects without touching labels and is the fast domain-adaptation step of
the decoding pipeline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError
from .linalg import as_matrix, covariance, default_eig_floor, sym_eig, symmetrize

logger = logging.getLogger(__name__)

# Above this condition number the whitener is still computed, but the
# result is numerically fragile and a warning is emitted.
CONDITION_WARN = 1e8


@dataclass(frozen=True)
class AlignmentReport:
    """What one alignment pass computed.

    reference_covariance: mean of the per-trial covariances (C x C).
    whitener: its inverse square root; symmetric.
    condition_number: max eigenvalue over floored min eigenvalue of the
        reference covariance, clamped to >= 1.
    eigenvalue_floor_applied: whether any eigenvalue had to be clamped.
    """

    reference_covariance: np.ndarray
    whitener: np.ndarray
    condition_number: float
    eigenvalue_floor_applied: bool


def reference_covariance(trials) -> np.ndarray:
    """Elementwise mean of the per-trial covariances.

    Trials must be non-empty and share the same channel count. Covariances
    are accumulated in input-index order into a float64 accumulator.
    """
    trials = list(trials)
    if not trials:
        raise EmptyInputError("reference covariance of an empty trial list")
    first = as_matrix(trials[0], "trial")
    acc = covariance(first)
    for i, t in enumerate(trials[1:], start=1):
        m = as_matrix(t, "trial")
        if m.shape[0] != first.shape[0]:
            raise ShapeError(
                f"trial {i} has {m.shape[0]} channels, expected {first.shape[0]}"
            )
        acc += covariance(m)
    return acc / len(trials)


def compute_whitener(
    ref_cov: np.ndarray, eps: float | None = None
) -> AlignmentReport:
    """Inverse square root of a reference covariance, with conditioning info.

    eps is the eigenvalue floor; when omitted it defaults to
    1e-10 x max(largest eigenvalue, 1).
    """
    eig = sym_eig(ref_cov)
    if eps is None:
        eps = default_eig_floor(eig.eigenvalues)
    elif eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    floored = bool(eig.eigenvalues[0] < eps)
    w = np.maximum(eig.eigenvalues, eps)
    v = eig.eigenvectors
    whitener = symmetrize((v / np.sqrt(w)) @ v.T)
    condition = max(1.0, float(eig.eigenvalues[-1]) / max(float(eig.eigenvalues[0]), eps))
    if condition > CONDITION_WARN:
        logger.warning(
            "reference covariance is ill-conditioned (condition number %.3e); "
            "whitened data may be unreliable",
            condition,
        )
    return AlignmentReport(
        reference_covariance=ref_cov,
        whitener=whitener,
        condition_number=condition,
        eigenvalue_floor_applied=floored,
    )


def whiten_trials(trials, whitener: np.ndarray) -> list[np.ndarray]:
    """Apply a whitening matrix to each trial; outputs are float64."""
    return [whitener @ as_matrix(t, "trial") for t in trials]


def align_subject(trials, eps: float | None = None):
    """Whiten a subject's trials against their own mean covariance.

    Returns (aligned trials, AlignmentReport). Each aligned trial has the
    same shape as its input, and the mean covariance of the aligned set is
    the identity whenever the reference covariance is well conditioned.
    """
    trials = list(trials)
    ref = reference_covariance(trials)
    report = compute_whitener(ref, eps)
    return whiten_trials(trials, report.whitener), report
