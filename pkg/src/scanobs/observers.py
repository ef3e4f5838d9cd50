"""Scanning observers: max-statistic rule, analytic Laplacian ideal observer,
scanning Hotelling observer, and posterior-ratio utilities.

All likelihood ratios are carried in the log domain throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import logsumexp


@dataclass
class ObserverRecord:
    """Per-image observer output: the input row of the LROC analysis."""

    statistic: float          # t = max_j lambda_j
    chosen_location: int      # j* in 1..J (lowest index on ties)
    true_label: int           # y in 0..J
    per_location: np.ndarray  # the J per-location statistics lambda_j
    binary_statistic: float | None = None  # detection-only statistic


def scanning_decision(lams) -> tuple[float, int]:
    """Max-statistic rule: t = max_j lambda_j, j* = first argmax (1-based)."""
    lams = np.asarray(lams, dtype=np.float64)
    if lams.ndim != 1 or len(lams) < 1:
        raise ValueError("need a 1D vector of at least one statistic")
    if not np.all(np.isfinite(lams)):
        raise ValueError("non-finite per-location statistic")
    j = int(np.argmax(lams))  # np.argmax returns the first maximizer
    return float(lams[j]), j + 1


def laplacian_bke_log_lr(g, b, s, c: float) -> float:
    """Log likelihood ratio for i.i.d. Laplacian noise with known background.

    log Lambda_j = (1/c) * sum_m (|g_m - b_m| - |g_m - b_m - s_m|).
    """
    if c <= 0:
        raise ValueError("Laplacian scale c must be positive")
    g = np.asarray(g, dtype=np.float64)
    r = g - np.asarray(b, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    return float((np.abs(r) - np.abs(r - s)).sum() / c)


def posteriors_from_lrs(log_lrs, priors) -> np.ndarray:
    """Posterior probabilities from per-location log likelihood ratios.

    priors has length J+1 (signal-absent first); output sums to 1 and is
    computed stably in the log domain.
    """
    log_lrs = np.asarray(log_lrs, dtype=np.float64)
    priors = np.asarray(priors, dtype=np.float64)
    if len(priors) != len(log_lrs) + 1:
        raise ValueError("priors must have length J+1")
    if np.any(priors <= 0):
        raise ValueError("priors must be strictly positive")
    log_num = np.concatenate(([np.log(priors[0])],
                              np.log(priors[1:]) + log_lrs))
    return np.exp(log_num - logsumexp(log_num))


def binary_detection_statistic(posteriors) -> float:
    """Detection-only statistic 1 - Pr(H0 | g)."""
    return float(1.0 - np.asarray(posteriors)[0])


def laplacian_io_record(g, signal_images, background, c: float,
                        priors, true_label: int) -> ObserverRecord:
    """Analytic ideal observer for the Laplacian BKE task.

    Per-location statistics are the prior-weighted log likelihood ratios
    log Pr(H_j) + log Lambda_j(g); the binary statistic is 1 - Pr(H0|g).
    """
    log_lrs = np.array([laplacian_bke_log_lr(g, background, s, c)
                        for s in signal_images])
    priors = np.asarray(priors, dtype=np.float64)
    lams = np.log(priors[1:]) + log_lrs
    t, j_star = scanning_decision(lams)
    post = posteriors_from_lrs(log_lrs, priors)
    return ObserverRecord(t, j_star, true_label, lams,
                          binary_detection_statistic(post))


def laplacian_io_log_lrs_batch(images: np.ndarray,
                               signal_images: np.ndarray,
                               background: np.ndarray, c: float) -> np.ndarray:
    """Vectorized per-location log-LRs for a stack of images, shape (N, J)."""
    n = len(images)
    flat = images.reshape(n, -1).astype(np.float64)
    flat = flat - np.asarray(background, dtype=np.float64).ravel()
    sigs = signal_images.reshape(len(signal_images), -1).astype(np.float64)
    out = np.empty((n, len(sigs)))
    for j, s in enumerate(sigs):
        out[:, j] = (np.abs(flat) - np.abs(flat - s)).sum(axis=1) / c
    return out


@dataclass
class HotellingObserverState:
    """Immutable scanning-HO state: per-location templates and references."""

    templates: np.ndarray        # (J, M)
    mean_background: np.ndarray  # (M,)
    signals: np.ndarray          # (J, M)
    grid: tuple[int, int]        # (width, height)


def build_hotelling(backgrounds, signals, noise_var: float,
                    rtol: float = 1e-6) -> HotellingObserverState:
    """Build scanning-HO templates by conjugate gradients.

    The covariance K = K_b + noise_var * I is applied matrix-free through the
    centered background samples; each template solves K w_j = s_j to the given
    relative residual.  With no background samples (BKE) K = noise_var * I and
    w_j = s_j / noise_var directly.
    """
    first = np.asarray(signals[0])
    grid_shape = (first.shape[-1], first.shape[0]) if first.ndim == 2 else (len(first), 1)
    signals = np.stack([np.asarray(s, dtype=np.float64).ravel()
                        for s in signals])
    j_count, m = signals.shape

    if backgrounds is None or len(backgrounds) == 0:
        if noise_var <= 0:
            raise ValueError("noise variance must be positive in the BKE case")
        mean_bg = np.zeros(m)
        templates = signals / noise_var
        return HotellingObserverState(templates, mean_bg, signals, grid_shape)

    samples = np.stack([np.asarray(b, dtype=np.float64).ravel()
                        for b in backgrounds])
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 background samples")
    if noise_var <= 0 and n <= m:
        raise ValueError("singular covariance: noise_var=0 with fewer "
                         "samples than pixels")
    mean_bg = samples.mean(axis=0)
    centered = samples - mean_bg

    def apply_k(v):
        return centered.T @ (centered @ v) / (n - 1) + noise_var * v

    op = LinearOperator((m, m), matvec=apply_k, dtype=np.float64)
    templates = np.empty_like(signals)
    for j in range(j_count):
        w, info = cg(op, signals[j], rtol=rtol, atol=0.0, maxiter=10 * m)
        if info != 0:
            raise RuntimeError(f"CG failed to converge for template {j + 1}")
        templates[j] = w
    return HotellingObserverState(templates, mean_bg, signals, grid_shape)


def apply_covariance(state: HotellingObserverState, backgrounds,
                     noise_var: float, v: np.ndarray) -> np.ndarray:
    """Apply the same K used by build_hotelling (for residual checks)."""
    samples = np.stack([np.asarray(b, dtype=np.float64).ravel()
                        for b in backgrounds])
    centered = samples - samples.mean(axis=0)
    return centered.T @ (centered @ v) / (len(samples) - 1) + noise_var * v


def scanning_ho_record(g, state: HotellingObserverState,
                       true_label: int) -> ObserverRecord:
    """Scanning HO: lambda_j = w_j^T (g - mean_b - s_j / 2)."""
    gv = np.asarray(g, dtype=np.float64).ravel() - state.mean_background
    lams = (state.templates * (gv - state.signals / 2.0)).sum(axis=1)
    t, j_star = scanning_decision(lams)
    return ObserverRecord(t, j_star, true_label, lams, binary_statistic=t)


def scanning_ho_records(images, labels,
                        state: HotellingObserverState) -> list[ObserverRecord]:
    n = len(images)
    flat = images.reshape(n, -1).astype(np.float64) - state.mean_background
    lams = flat @ state.templates.T \
        - 0.5 * (state.templates * state.signals).sum(axis=1)
    return [_record_from_lams(lams[i], int(labels[i]), binary=float(lams[i].max()))
            for i in range(n)]


def _record_from_lams(lams, true_label, binary=None):
    t, j_star = scanning_decision(lams)
    return ObserverRecord(t, j_star, true_label, np.asarray(lams), binary)


def records_to_csv(path, records: list[ObserverRecord]):
    """Write records as CSV: image_id, true_label, t, j_star, lambda_1..J."""
    j_count = len(records[0].per_location)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "true_label", "t", "j_star",
                         "binary_statistic"]
                        + [f"lambda_{j + 1}" for j in range(j_count)])
        for i, r in enumerate(records):
            binary = ("" if r.binary_statistic is None
                      else repr(float(r.binary_statistic)))
            writer.writerow([i, r.true_label, repr(float(r.statistic)),
                             r.chosen_location, binary]
                            + [repr(float(v)) for v in r.per_location])


def records_from_csv(path) -> list[ObserverRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_lam = sum(1 for h in header if h.startswith("lambda_"))
        for row in reader:
            lams = np.array([float(v) for v in row[5:5 + n_lam]])
            binary = float(row[4]) if row[4] else None
            records.append(ObserverRecord(float(row[2]), int(row[3]),
                                          int(row[1]), lams, binary))
    return records
