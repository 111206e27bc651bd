"""Matplotlib renderings of a benchmark report, written next to the
report.json / cases.csv outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_FIG_SIZE = (7.0, 4.2)
_BAR_COLOR = "#4878cf"
_ACCENT = "#d65f5f"


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_quality_bars(report: dict, path: Path) -> Path | None:
    pairs = [
        ("Dispatch", report.get("p_disp")),
        ("Dispatch\n(unambig.)", report.get("p_disp_unambiguous")),
        ("Success", report.get("sr")),
        ("Fidelity", report.get("fidelity")),
    ]
    pairs = [(label, value) for label, value in pairs if value is not None]
    if not pairs:
        return None
    fig, ax = plt.subplots(figsize=_FIG_SIZE)
    labels = [p[0] for p in pairs]
    values = [p[1] * 100 for p in pairs]
    bars = ax.bar(labels, values, color=_BAR_COLOR, width=0.55)
    for bar, value in zip(bars, values):
        ax.annotate(f"{value:.1f}%", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=9)
    ax.set_ylim(0, 105)
    ax.set_ylabel("percent")
    ax.set_title("Benchmark quality metrics")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def render_latency_percentiles(report: dict, path: Path) -> Path | None:
    latency = report.get("latency")
    if not latency:
        return None
    fig, ax = plt.subplots(figsize=_FIG_SIZE)
    quantiles = ("p50", "p95", "p99")
    x = range(len(quantiles))
    width = 0.38
    ttft = [latency["ttft"][q] for q in quantiles]
    e2e = [latency["e2e"][q] for q in quantiles]
    ax.bar([i - width / 2 for i in x], ttft, width, label="TTFT", color=_BAR_COLOR)
    ax.bar([i + width / 2 for i in x], e2e, width, label="end-to-end", color=_ACCENT)
    budget = report.get("config", {}).get("ttft_budget_ms")
    if budget:
        ax.axhline(budget, color="black", linestyle="--", linewidth=1,
                   label=f"TTFT budget ({budget:.0f} ms)")
    ax.set_xticks(list(x))
    ax.set_xticklabels(quantiles)
    ax.set_ylabel("virtual ms")
    ax.set_yscale("log")
    ax.set_title("Latency percentiles")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def render_ttft_scatter(report: dict, path: Path) -> Path | None:
    cases = report.get("cases", ())
    points = [(i, c["max_ttft_ms"]) for i, c in enumerate(cases)
              if c.get("max_ttft_ms") is not None]
    if not points:
        return None
    fig, ax = plt.subplots(figsize=_FIG_SIZE)
    ax.scatter([p[0] for p in points], [p[1] for p in points], s=12,
               color=_BAR_COLOR, alpha=0.8)
    budget = report.get("config", {}).get("ttft_budget_ms")
    if budget:
        ax.axhline(budget, color=_ACCENT, linestyle="--", linewidth=1,
                   label=f"budget {budget:.0f} ms")
        ax.legend()
    ax.set_xlabel("case index")
    ax.set_ylabel("max TTFT (virtual ms)")
    ax.set_title("Worst per-case time to first entry")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def render_report_figures(report: dict, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rendered: dict[str, Path] = {}
    quality = render_quality_bars(report, out / "quality_metrics.png")
    if quality:
        rendered["fig_quality"] = quality
    latency = render_latency_percentiles(report, out / "latency_percentiles.png")
    if latency:
        rendered["fig_latency"] = latency
    ttft = render_ttft_scatter(report, out / "ttft_by_case.png")
    if ttft:
        rendered["fig_ttft"] = ttft
    return rendered
