"""Operating-point sweeps for the early-cutoff vs latency trade-off.

The baseline curve varies the first-pass knobs (acoustic threshold and EOS
emission scaling) with the arbitrator off; the arbitrated curve varies only
the arbitration threshold while the first pass stays pinned at a chosen
baseline operating point.  Every point consumes identical per-utterance
decoder randomness, so curve differences reflect thresholds alone.  Outputs
are a CSV of all points, the Pareto frontier under (average latency, EEPR)
minimization, and relative-metric plots.
"""

from __future__ import annotations

from concurrent import futures
from dataclasses import dataclass
from pathlib import Path

from . import ConfigError
from .evaluation import EvalReport, build_report, relative_reduction
from .pipeline import PipelineConfig, decide, precompute_utterance

DEFAULT_T_EP_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_EOS_SCALE_GRID = (0.5, 1.0, 2.0, 4.0)
DEFAULT_T_ARB_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class SweepGrids:
    t_ep: tuple = DEFAULT_T_EP_GRID
    eos_scale: tuple = DEFAULT_EOS_SCALE_GRID
    t_arb: tuple = DEFAULT_T_ARB_GRID
    # First-pass operating point the arbitrated curve is anchored to.  The
    # anchor threshold sits high enough that first-pass candidates inside
    # hesitation pauses arrive deeper than any incomplete utterance's short
    # tail, keeping them acoustically separable for the arbitrator; the
    # anchor EOS scale keeps accepted decisions fast enough that the
    # arbitrated curve overlaps the baseline curve's latency span.
    baseline_t_ep: float = 0.7
    baseline_eos_scale: float = 2.0

    def validate(self) -> None:
        if not self.t_ep or not self.eos_scale or not self.t_arb:
            raise ConfigError("sweep grids must be non-empty")
        if any(not 0 <= v <= 1 for v in self.t_ep):
            raise ConfigError("t_ep grid values must be in [0, 1]")
        if any(not 0 <= v <= 1 for v in self.t_arb):
            raise ConfigError("t_arb grid values must be in [0, 1]")
        if any(v < 0 for v in self.eos_scale):
            raise ConfigError("eos_scale grid values must be >= 0")
        if self.baseline_t_ep not in self.t_ep:
            raise ConfigError("baseline_t_ep must be a member of the t_ep grid")
        if self.baseline_eos_scale not in self.eos_scale:
            raise ConfigError("baseline_eos_scale must be a member of the eos_scale grid")


@dataclass
class OperatingPoint:
    first_pass: str
    kind: str                 # "baseline" | "arbitrated"
    t_ep: float
    eos_scale: float
    t_arb: float | None
    report: EvalReport

    @property
    def avg_latency(self) -> float:
        return self.report.latency_avg

    @property
    def eepr(self) -> float:
        return self.report.eepr

    @property
    def wer(self) -> float:
        return self.report.wer


def precompute_corpus(corpus, frame_model, sim) -> list:
    """Threshold-independent signals for every utterance, computed once."""
    return [precompute_utterance(u, frame_model, sim, corpus.vocab.n_speech)
            for u in corpus.utterances]


def _evaluate_point(corpus, precomputed, arbitrator, config: PipelineConfig) -> EvalReport:
    decisions = [decide(u, pre, arbitrator, config)
                 for u, pre in zip(corpus.utterances, precomputed)]
    return build_report(decisions, mode="standard",
                        config_fingerprint=config.fingerprint())


_SWEEP_WORKER = {}


def _init_sweep_worker(corpus, precomputed, arbitrator):
    _SWEEP_WORKER.update(corpus=corpus, precomputed=precomputed,
                         arbitrator=arbitrator)


def _sweep_point(task):
    kind, config = task
    arbitrator = _SWEEP_WORKER["arbitrator"] if config.use_arbitrator else None
    return _evaluate_point(_SWEEP_WORKER["corpus"], _SWEEP_WORKER["precomputed"],
                           arbitrator, config)


def run_sweep(corpus, frame_model, sim, arbitrator, grids: SweepGrids,
              first_pass: str = "both", guardrail_frames: int | None = None,
              precomputed: list | None = None, jobs: int = 1) -> list:
    """Evaluate the full baseline grid plus the anchored arbitrated curve.

    Grid points share the per-utterance precomputation (posteriors plus the
    decoder schedule), so every point consumes identical randomness; with
    jobs > 1 the points are evaluated by a process pool and reduced in
    deterministic grid order.
    """
    grids.validate()
    if precomputed is None:
        precomputed = precompute_corpus(corpus, frame_model, sim)
    extra = {} if guardrail_frames is None else {"guardrail_frames": guardrail_frames}
    tasks = []
    for t_ep in grids.t_ep:
        for scale in grids.eos_scale:
            tasks.append(("baseline", PipelineConfig(
                first_pass=first_pass, use_arbitrator=False,
                t_ep=t_ep, eos_scale=scale, **extra)))
    for t_arb in grids.t_arb:
        tasks.append(("arbitrated", PipelineConfig(
            first_pass=first_pass, use_arbitrator=True,
            t_ep=grids.baseline_t_ep, eos_scale=grids.baseline_eos_scale,
            t_arb=t_arb, **extra)))
    if jobs > 1:
        with futures.ProcessPoolExecutor(
                max_workers=jobs, initializer=_init_sweep_worker,
                initargs=(corpus, precomputed, arbitrator)) as pool:
            reports = list(pool.map(_sweep_point, tasks, chunksize=8))
    else:
        _init_sweep_worker(corpus, precomputed, arbitrator)
        reports = [_sweep_point(task) for task in tasks]
    return [
        OperatingPoint(first_pass, kind, config.t_ep, config.eos_scale,
                       config.t_arb if kind == "arbitrated" else None, report)
        for (kind, config), report in zip(tasks, reports)
    ]


def baseline_anchor(points, grids: SweepGrids) -> OperatingPoint:
    """The baseline grid point the arbitrated curve is anchored to."""
    for p in points:
        if (p.kind == "baseline" and p.t_ep == grids.baseline_t_ep
                and p.eos_scale == grids.baseline_eos_scale):
            return p
    raise ConfigError("anchor operating point missing from sweep results")


def pareto_frontier(points) -> list:
    """Non-dominated points under (avg_latency down, eepr down).

    Componentwise <= with at least one strict inequality defines dominance;
    duplicated objective pairs keep one representative; output is ordered by
    latency.
    """
    unique = []
    seen = set()
    for p in points:
        key = (p.avg_latency, p.eepr)
        if key not in seen:
            seen.add(key)
            unique.append(p)
    frontier = [
        p for p in unique
        if not any(
            q.avg_latency <= p.avg_latency and q.eepr <= p.eepr
            and (q.avg_latency < p.avg_latency or q.eepr < p.eepr)
            for q in unique)
    ]
    return sorted(frontier, key=lambda p: (p.avg_latency, p.eepr))


def matched_pairs(baseline_points, arbitrated_points, tolerance_ms: float = 30.0):
    """(baseline, arbitrated) pairs whose average latencies match within tolerance.

    Each arbitrated point is paired with the nearest baseline point by
    average latency; pairs outside the tolerance are dropped.
    """
    pairs = []
    for a in arbitrated_points:
        best = None
        for b in baseline_points:
            gap = abs(b.avg_latency - a.avg_latency)
            if gap <= tolerance_ms and (best is None or gap < best[0]):
                best = (gap, b)
        if best is not None:
            pairs.append((best[1], a))
    return pairs


CURVE_CSV_HEADER = ("config,T_EP,eos_scale,T_arb,avg_latency_ms,eepr,eeprr_pct,"
                    "wer,werr_pct,p50,p90,p99")


def _point_row(point: OperatingPoint, baseline: OperatingPoint) -> str:
    werr, eeprr = relative_reduction(baseline.report, point.report)
    t_arb = "" if point.t_arb is None else f"{point.t_arb:.3f}"
    r = point.report
    return (
        f"{point.first_pass}/{point.kind},{point.t_ep:.3f},{point.eos_scale:.3f},"
        f"{t_arb},{r.latency_avg:.3f},{r.eepr:.6f},{eeprr:.4f},"
        f"{r.wer:.6f},{werr:.4f},{r.latency_p50},{r.latency_p90},{r.latency_p99}"
    )


def emit_curves(points, out_dir, baseline: OperatingPoint) -> dict:
    """Write curves.csv, frontier.csv and the relative-metric plots."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [CURVE_CSV_HEADER] + [_point_row(p, baseline) for p in points]
    curves_path = out_dir / "curves.csv"
    curves_path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    frontier = pareto_frontier(points)
    frontier_rows = [CURVE_CSV_HEADER] + [_point_row(p, baseline) for p in frontier]
    frontier_path = out_dir / "frontier.csv"
    frontier_path.write_text("\n".join(frontier_rows) + "\n", encoding="utf-8")

    outputs = {"curves": curves_path, "frontier": frontier_path}
    outputs.update(_plot_curves(points, out_dir, baseline))
    return outputs


def _plot_curves(points, out_dir: Path, baseline: OperatingPoint) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outputs = {}
    first_passes = sorted({p.first_pass for p in points})
    for metric, label in (("eeprr", "EEPRR %"), ("werr", "WERR %")):
        for fp in first_passes:
            fig, ax = plt.subplots(figsize=(6, 4))
            for kind, marker in (("baseline", "o"), ("arbitrated", "s")):
                subset = [p for p in points if p.first_pass == fp and p.kind == kind]
                if not subset:
                    continue
                subset = sorted(subset, key=lambda p: p.avg_latency)
                xs = [p.avg_latency for p in subset]
                werr_eeprr = [relative_reduction(baseline.report, p.report)
                              for p in subset]
                ys = [(v[1] if metric == "eeprr" else v[0]) for v in werr_eeprr]
                ax.plot(xs, ys, marker=marker, label=kind)
            ax.set_xlabel("average latency (ms)")
            ax.set_ylabel(label)
            ax.set_title(f"{label} vs average latency ({fp})")
            ax.axhline(0.0, color="gray", linewidth=0.5)
            ax.legend()
            fig.tight_layout()
            path = out_dir / f"{metric}_vs_latency_{fp}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            outputs[f"{metric}_{fp}"] = path
    return outputs
