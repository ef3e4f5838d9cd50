"""Nonparametric LROC/ROC analysis with bootstrap standard errors."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .observers import ObserverRecord


@dataclass
class LrocCurve:
    """Empirical LROC: (false-positive fraction, P(correct localization))."""

    thresholds: np.ndarray  # descending sweep, +inf first
    fpf: np.ndarray         # nondecreasing, 0 .. 1
    pcl: np.ndarray         # nondecreasing along the sweep
    n_signal: int
    n_absent: int


@dataclass
class FomEstimate:
    value: float
    std_error: float
    n_bootstrap: int


def _split_records(records: list[ObserverRecord], binary: bool = False):
    t_abs, t_sig, correct = [], [], []
    for r in records:
        t = r.binary_statistic if binary else r.statistic
        if binary and r.binary_statistic is None:
            raise ValueError("record lacks a binary detection statistic")
        if r.true_label == 0:
            t_abs.append(t)
        else:
            t_sig.append(t)
            correct.append(r.chosen_location == r.true_label)
    if not t_abs or not t_sig:
        raise ValueError("need both signal-absent and signal-present records")
    return (np.asarray(t_abs, dtype=np.float64),
            np.asarray(t_sig, dtype=np.float64),
            np.asarray(correct, dtype=bool))


def empirical_lroc(records: list[ObserverRecord]) -> LrocCurve:
    """LROC curve swept over all observed test-statistic values.

    At threshold tau: FPF = fraction of absent cases with t > tau, PCL =
    fraction of present cases with t > tau and correct localization.
    """
    t_abs, t_sig, correct = _split_records(records)
    taus = np.concatenate(([np.inf],
                           np.unique(np.concatenate((t_abs, t_sig)))[::-1],
                           [-np.inf]))
    fpf = (t_abs[None, :] > taus[:, None]).mean(axis=1)
    hit = (t_sig[None, :] > taus[:, None]) & correct[None, :]
    pcl = hit.mean(axis=1)
    return LrocCurve(taus, fpf, pcl, n_signal=len(t_sig), n_absent=len(t_abs))


def lroc_trapezoid_area(curve: LrocCurve) -> float:
    return float(np.trapezoid(curve.pcl, curve.fpf))


def _pairwise_alroc(t_abs, t_sig, correct) -> float:
    """2AFC estimator: mean over (present, absent) pairs of
    1{t_i > t_k, correct localization} with half credit on ties."""
    order = np.sort(t_abs)
    n_lt = np.searchsorted(order, t_sig, side="left")
    n_le = np.searchsorted(order, t_sig, side="right")
    score = (n_lt + 0.5 * (n_le - n_lt)) * correct
    return float(score.sum() / (len(t_sig) * len(t_abs)))


def _pairwise_auc(t_abs, t_sig) -> float:
    """Wilcoxon-Mann-Whitney statistic with 0.5 tie credit."""
    ones = np.ones(len(t_sig), dtype=bool)
    return _pairwise_alroc(t_abs, t_sig, ones)


def _bootstrap(t_abs, t_sig, correct, estimator, n_bootstrap, rng):
    vals = np.empty(n_bootstrap)
    for i in range(n_bootstrap):
        ia = rng.integers(len(t_abs), size=len(t_abs))
        isg = rng.integers(len(t_sig), size=len(t_sig))
        vals[i] = estimator(t_abs[ia], t_sig[isg], correct[isg])
    return float(vals.std(ddof=1))


def alroc(records: list[ObserverRecord], n_bootstrap: int = 1000,
          rng: np.random.Generator | None = None) -> FomEstimate:
    """Area under the LROC curve with a within-class bootstrap SE."""
    t_abs, t_sig, correct = _split_records(records)
    value = _pairwise_alroc(t_abs, t_sig, correct)
    rng = rng if rng is not None else np.random.default_rng(0)
    se = _bootstrap(t_abs, t_sig, correct, _pairwise_alroc, n_bootstrap, rng)
    return FomEstimate(value, se, n_bootstrap)


def empirical_roc(records: list[ObserverRecord]) -> LrocCurve:
    """Empirical ROC over the binary detection statistics (TPF in .pcl)."""
    t_abs, t_sig, _ = _split_records(records, binary=True)
    taus = np.concatenate(([np.inf],
                           np.unique(np.concatenate((t_abs, t_sig)))[::-1],
                           [-np.inf]))
    fpf = (t_abs[None, :] > taus[:, None]).mean(axis=1)
    tpf = (t_sig[None, :] > taus[:, None]).mean(axis=1)
    return LrocCurve(taus, fpf, tpf, n_signal=len(t_sig), n_absent=len(t_abs))


def auc(records: list[ObserverRecord], n_bootstrap: int = 1000,
        rng: np.random.Generator | None = None) -> FomEstimate:
    """Area under the empirical ROC of the binary detection statistics."""
    t_abs, t_sig, _ = _split_records(records, binary=True)
    value = _pairwise_auc(t_abs, t_sig)
    rng = rng if rng is not None else np.random.default_rng(0)
    se = _bootstrap(t_abs, t_sig, np.ones(len(t_sig), dtype=bool),
                    _pairwise_alroc, n_bootstrap, rng)
    return FomEstimate(value, se, n_bootstrap)


def compare_systems(reports: list[tuple[str, FomEstimate, FomEstimate]]) -> dict:
    """Rank systems by ALROC and by AUC; flag when the orderings disagree.

    Each report entry is (system_id, alroc_estimate, auc_estimate).
    """
    if not reports:
        raise ValueError("need at least one system")
    by_alroc = sorted(reports, key=lambda r: r[1].value, reverse=True)
    by_auc = sorted(reports, key=lambda r: r[2].value, reverse=True)
    alroc_rank = [r[0] for r in by_alroc]
    auc_rank = [r[0] for r in by_auc]
    return {
        "alroc_ranking": alroc_rank,
        "auc_ranking": auc_rank,
        "rankings_disagree": alroc_rank != auc_rank,
    }


def curve_to_csv(path, curve: LrocCurve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "fpf", "pcl"])
        for tau, f, p in zip(curve.thresholds, curve.fpf, curve.pcl):
            writer.writerow([repr(float(tau)), repr(float(f)), repr(float(p))])


def report_to_csv(path, rows: list[dict]):
    """Write the figure-of-merit report: one row per (observer, task, system)."""
    fields = ["observer", "task", "system", "alroc", "alroc_se",
              "auc", "auc_se", "n_records"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})
