"""
Strong hyperbolicity check
Truncated sums of lambda_gamma * d_gamma * exp(alpha * d_gamma) per word-length
shell, a ratio-test verdict and a bracket for the critical exponent
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from billiard_lab.config import RATIO_MARGIN, logger
from billiard_lab.core.errors import InsufficientDataError
from billiard_lab.core.symbolic import reversal_key

CONVERGES = "converges"
DIVERGES = "diverges"
INCONCLUSIVE = "inconclusive"
MAX_FAILURE_RATE = 0.01

HEURISTIC_NOTE = (
    "A truncated sum cannot prove convergence: the verdict is a ratio test "
    "with margin {margin} over the last {window} shells."
)


@dataclass
class IkawaReport:
    alpha: float
    max_word_len: int
    shell_sums: list
    shell_counts: list
    cumulative: list
    shell_ratios: list
    verdict: str
    tail_window: int
    per_letter_lambda: float
    coverage: float
    merge_reversal: bool = False
    alpha_star: dict = None
    notes: list = field(default_factory=list)

    def to_frame(self):
        ks = np.arange(1, self.max_word_len + 1)
        ratios = [np.nan] + list(self.shell_ratios)
        return pd.DataFrame({
            "k": ks,
            "orbits": self.shell_counts,
            "S_k": self.shell_sums,
            "cumulative": self.cumulative,
            "ratio": ratios,
        })

    def to_dict(self):
        document = asdict(self)
        document["shell_ratios"] = [None if not np.isfinite(r) else r for r in self.shell_ratios]
        return document

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        lines = [
            f"alpha: {self.alpha:.12g}",
            f"max word length: {self.max_word_len}",
            f"verdict: {self.verdict}",
            f"per-letter lambda: {self.per_letter_lambda:.12g}",
            f"orbit coverage: {self.coverage:.4f}",
            f"reversal pairs merged: {'yes' if self.merge_reversal else 'no'}",
        ]
        if self.alpha_star is not None:
            star = self.alpha_star
            if star["unbounded"]:
                lines.append(f"alpha*: >= {star['alpha_lo']:.12g} (unbounded at this truncation)")
            else:
                lines.append(f"alpha*: in [{star['alpha_lo']:.12g}, {star['alpha_hi']:.12g}]")
        lines.append("shells (k, orbits, S_k, ratio):")
        for k, count, s, r in zip(range(1, self.max_word_len + 1), self.shell_counts,
                                  self.shell_sums, [np.nan] + list(self.shell_ratios)):
            lines.append(f"  {k}  {count}  {s:.12g}  {r:.12g}")
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


def _weights(table, merge_reversal):
    """Multiplicity of each orbit in the sum: 1/2 for members of merged reversal pairs"""
    weights = {}
    classes = table.reversal_classes() if merge_reversal else {}
    for orbit in table:
        weights[orbit.itinerary] = 1.0
    for members in classes.values():
        if len(members) > 1:
            for orbit in members:
                weights[orbit.itinerary] = 1.0 / len(members)
    return weights


def shell_sums(table, alpha, K, merge_reversal=False):
    weights = _weights(table, merge_reversal)
    sums, counts = [], []
    for k in range(1, K + 1):
        shell = table.shell(k)
        counts.append(len(shell))
        if not shell:
            sums.append(0.0)
            continue
        logs = np.array([np.log(o.lambda_gamma) + np.log(o.d_gamma) + alpha * o.d_gamma for o in shell])
        w = np.array([weights[o.itinerary] for o in shell])
        sums.append(float(np.exp(logsumexp(logs, b=w))))
    return sums, counts


def _ratios(sums):
    ratios = []
    for prev, nxt in zip(sums[:-1], sums[1:]):
        if prev > 0.0:
            ratios.append(nxt / prev)
        elif nxt == 0.0:
            ratios.append(0.0)
        else:
            ratios.append(np.inf)
    return ratios


def per_letter_lambda(table, K):
    """Geometric mean of lambda_I^(1/|I|) over the largest non-empty shell up to K"""
    for k in range(K, 0, -1):
        shell = table.shell(k)
        if shell:
            return float(np.exp(np.mean([np.log(o.lambda_gamma) / k for o in shell])))
    return float("nan")


def _verdict(sums, ratios, window, margin):
    # an empty last shell is read as a finite orbit set
    if sums[-1] == 0.0:
        return CONVERGES
    tail = ratios[-window:]
    if any(not np.isfinite(r) for r in tail):
        return INCONCLUSIVE
    if max(tail) < 1.0 - margin:
        return CONVERGES
    if min(tail) > 1.0 + margin:
        return DIVERGES
    return INCONCLUSIVE


def pressure_partial_sum(table, alpha, K, merge_reversal=False, margin=RATIO_MARGIN):
    if K < 3:
        raise InsufficientDataError("insufficient shells", K=K)
    if table.max_word_len < K:
        raise InsufficientDataError("insufficient shells", K=K, table_len=table.max_word_len)
    sums, counts = shell_sums(table, alpha, K, merge_reversal)
    ratios = _ratios(sums)
    window = max(3, K // 3)
    window = min(window, len(ratios))
    coverage = 1.0 - table.truncated(K).failure_rate
    notes = [HEURISTIC_NOTE.format(margin=margin, window=window)]
    if coverage < 1.0 - MAX_FAILURE_RATE:
        verdict = INCONCLUSIVE
        notes.append(f"orbit solver failures exceed {MAX_FAILURE_RATE:.0%} of the words")
    else:
        verdict = _verdict(sums, ratios, window, margin)
    report = IkawaReport(
        alpha=float(alpha),
        max_word_len=K,
        shell_sums=sums,
        shell_counts=counts,
        cumulative=list(np.cumsum(sums)),
        shell_ratios=ratios,
        verdict=verdict,
        tail_window=window,
        per_letter_lambda=per_letter_lambda(table, K),
        coverage=coverage,
        merge_reversal=merge_reversal,
        notes=notes,
    )
    logger.debug(f"Ikawa sum at alpha={alpha:.6g}: {verdict}")
    return report


@dataclass(frozen=True)
class AlphaStar:
    alpha_lo: float
    alpha_hi: float
    unbounded: bool
    per_letter_rate: float

    def to_dict(self):
        return {
            "alpha_lo": self.alpha_lo,
            "alpha_hi": None if self.unbounded else self.alpha_hi,
            "unbounded": self.unbounded,
            "per_letter_rate": self.per_letter_rate,
        }


def estimate_alpha_star(table, K, d_min, alpha_max=None, merge_reversal=False, tol=1e-6):
    """
    Bracket [alpha_lo, alpha_hi] where the ratio-test verdict stops being
    'converges'. When the verdict still converges at alpha_max = 10 / d_min
    the result is flagged unbounded.
    """
    alpha_max = 10.0 / d_min if alpha_max is None else alpha_max

    def converges(alpha):
        return pressure_partial_sum(table, alpha, K, merge_reversal).verdict == CONVERGES

    base = pressure_partial_sum(table, 0.0, K, merge_reversal)
    tail = [r for r in base.shell_ratios[-base.tail_window:] if np.isfinite(r) and r > 0.0]
    rate = float(np.mean(np.log(tail))) if tail else float("-inf")
    if base.verdict != CONVERGES:
        logger.warning("Ratio test does not converge at alpha = 0")
        return AlphaStar(0.0, 0.0, False, rate)
    if converges(alpha_max):
        logger.info(f"Ratio test converges up to alpha_max={alpha_max:.6g}")
        return AlphaStar(alpha_max, float("inf"), True, rate)
    lo, hi = 0.0, alpha_max
    while hi - lo > tol * alpha_max:
        mid = 0.5 * (lo + hi)
        if converges(mid):
            lo = mid
        else:
            hi = mid
    logger.info(f"alpha* bracket: [{lo:.6g}, {hi:.6g}]")
    return AlphaStar(lo, hi, False, rate)


def merged_key_count(table):
    """Number of orbit classes once reversal pairs are identified"""
    return len({reversal_key(o.itinerary) for o in table})
