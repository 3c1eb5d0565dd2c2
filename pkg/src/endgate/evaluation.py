"""Endpointing metrics: WER, early-endpoint rate, latency percentiles.

WER is the unit-cost minimum edit distance normalized by reference length,
aggregated corpus-wide as total edits over total reference tokens.  EEPR has
two modes: standard (endpoint strictly before the true end of speech) and
partial (endpoint strictly before the end of the audio, for cut-off test
sets).  Latency percentiles are nearest-rank, so every reported value is a
member of the latency multiset and a multiple of the 30 ms frame; early
decisions contribute negative latencies and undecided utterances are
excluded from latency statistics but counted in EEPR denominators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import MetricError

LATENCY_QUANTILES = (0.5, 0.9, 0.99)


def edit_ops(reference, hypothesis):
    """(substitutions, deletions, insertions) of the minimum edit alignment.

    Ties are broken preferring substitution, then insertion, then deletion.
    """
    n, m = len(reference), len(hypothesis)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    op = [[None] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
        op[i][0] = "del"
    for j in range(1, m + 1):
        cost[0][j] = j
        op[0][j] = "ins"
    for i in range(1, n + 1):
        ref_tok = reference[i - 1]
        row, prev = cost[i], cost[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if ref_tok == hypothesis[j - 1] else 1)
            ins = row[j - 1] + 1
            dele = prev[j] + 1
            best = min(diag, ins, dele)
            row[j] = best
            if diag == best:
                op[i][j] = "match" if ref_tok == hypothesis[j - 1] else "sub"
            elif ins == best:
                op[i][j] = "ins"
            else:
                op[i][j] = "del"
    subs = dels = inss = 0
    i, j = n, m
    while i > 0 or j > 0:
        kind = op[i][j]
        if kind in ("match", "sub"):
            subs += kind == "sub"
            i, j = i - 1, j - 1
        elif kind == "ins":
            inss += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return subs, dels, inss


def wer(reference, hypothesis) -> float:
    """(S + D + I) / len(reference); may exceed 1."""
    if len(reference) == 0:
        raise MetricError("WER undefined for an empty reference")
    s, d, i = edit_ops(reference, hypothesis)
    return (s + d + i) / len(reference)


def aggregate_wer(decisions) -> float:
    """Corpus WER: total edit operations over total reference tokens."""
    total_edits = total_ref = 0
    for dec in decisions:
        if len(dec.ref_tokens) == 0:
            raise MetricError(f"{dec.utterance_id}: empty reference transcript")
        s, d, i = edit_ops(dec.ref_tokens, dec.hypothesis)
        total_edits += s + d + i
        total_ref += len(dec.ref_tokens)
    if total_ref == 0:
        raise MetricError("WER undefined: no reference tokens")
    return total_edits / total_ref


def is_early(decision, mode: str) -> bool:
    if decision.ep_frame is None:
        return False
    if mode == "standard":
        return decision.ep_frame < decision.eos_frame
    if mode == "partial":
        return decision.ep_frame < decision.audio_end_frame
    raise MetricError(f"unknown EEPR mode {mode!r}")


def eepr(decisions, mode: str = "standard") -> float:
    """Fraction of utterances endpointed early under the given mode."""
    decisions = list(decisions)
    if not decisions:
        raise MetricError("EEPR undefined for an empty decision set")
    return sum(is_early(d, mode) for d in decisions) / len(decisions)


def nearest_rank(sorted_values, quantile: float):
    """1-based nearest-rank percentile: element ceil(q * n) of the sorted list."""
    n = len(sorted_values)
    if n == 0:
        raise MetricError("percentile undefined for an empty set")
    rank = max(1, math.ceil(quantile * n))
    return sorted_values[rank - 1]

def latency_percentiles(decisions, quantiles=LATENCY_QUANTILES):
    """Nearest-rank latency percentiles plus the arithmetic mean, in ms.

    Only decided utterances contribute; raises if none decided.
    """
    latencies = sorted(d.latency_ms for d in decisions if d.ep_frame is not None)
    if not latencies:
        raise MetricError("latency undefined: no decided utterances")
    values = tuple(nearest_rank(latencies, q) for q in quantiles)
    average = sum(latencies) / len(latencies)
    return values, average


@dataclass
class EvalReport:
    wer: float
    eepr: float
    latency_p50: int
    latency_p90: int
    latency_p99: int
    latency_avg: float
    n_utterances: int
    config_fingerprint: str = ""

    def validate(self) -> None:
        if not 0.0 <= self.eepr <= 1.0:
            raise MetricError(f"eepr out of range: {self.eepr}")
        if not self.latency_p50 <= self.latency_p90 <= self.latency_p99:
            raise MetricError("latency percentiles must be non-decreasing")


def build_report(decisions, mode: str = "standard",
                 config_fingerprint: str = "") -> EvalReport:
    decisions = list(decisions)
    if not decisions:
        raise MetricError("cannot build a report from zero decisions")
    (p50, p90, p99), avg = latency_percentiles(decisions)
    report = EvalReport(
        wer=aggregate_wer(decisions),
        eepr=eepr(decisions, mode),
        latency_p50=p50,
        latency_p90=p90,
        latency_p99=p99,
        latency_avg=avg,
        n_utterances=len(decisions),
        config_fingerprint=config_fingerprint,
    )
    report.validate()
    return report


def relative_reduction(baseline: EvalReport, experiment: EvalReport):
    """(WERR %, EEPRR %) vs the baseline; negative values are improvements."""
    if baseline.wer == 0:
        raise MetricError("WERR undefined: baseline WER is 0")
    if baseline.eepr == 0:
        raise MetricError("EEPRR undefined: baseline EEPR is 0")
    werr = 100.0 * (experiment.wer - baseline.wer) / baseline.wer
    eeprr = 100.0 * (experiment.eepr - baseline.eepr) / baseline.eepr
    return werr, eeprr


CSV_HEADER = "wer,werr_pct,eepr,eeprr_pct,p50_ms,p90_ms,p99_ms,avg_ms,n_utterances"


def report_csv_row(report: EvalReport, baseline: EvalReport | None = None) -> str:
    if baseline is not None:
        werr, eeprr = relative_reduction(baseline, report)
        werr_s, eeprr_s = f"{werr:.4f}", f"{eeprr:.4f}"
    else:
        werr_s = eeprr_s = ""
    return (
        f"{report.wer:.6f},{werr_s},{report.eepr:.6f},{eeprr_s},"
        f"{report.latency_p50},{report.latency_p90},{report.latency_p99},"
        f"{report.latency_avg:.3f},{report.n_utterances}"
    )


def report_text(report: EvalReport, baseline: EvalReport | None = None) -> str:
    lines = [
        f"utterances       {report.n_utterances}",
        f"WER              {report.wer:.4f}",
        f"EEPR             {report.eepr:.4f}",
        f"latency P50/P90/P99  {report.latency_p50} / {report.latency_p90} / "
        f"{report.latency_p99} ms",
        f"latency avg      {report.latency_avg:.1f} ms",
    ]
    if baseline is not None:
        werr, eeprr = relative_reduction(baseline, report)
        lines.append(f"WERR             {werr:+.2f}%")
        lines.append(f"EEPRR            {eeprr:+.2f}%")
    if report.config_fingerprint:
        lines.append(f"config           {report.config_fingerprint}")
    return "\n".join(lines)
