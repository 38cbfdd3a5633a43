"""Figure rendering for simulation reports.

The metrics CSV is the primary artifact; these figures are a companion view
written next to it: relative bias and RMSE bars per estimator, and coverage
against the nominal level when intervals were produced.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .simengine import MetricsRow, ScenarioConfig


def _labels(rows: list[MetricsRow]) -> list[str]:
    return [
        f"{row.estimator}\n({row.learner})" if row.learner else row.estimator
        for row in rows
    ]


def render_metrics_figures(
    rows: list[MetricsRow], config: ScenarioConfig, out_dir
) -> list[str]:
    """Write bias/RMSE (and coverage, when present) figures; returns paths."""
    labels = _labels(rows)
    paths = []

    fig, (ax_rb, ax_rmse) = plt.subplots(1, 2, figsize=(11, 4.5))
    ax_rb.bar(labels, [row.rb_pct for row in rows], color="#4878a8")
    ax_rb.axhline(0.0, color="black", linewidth=0.8)
    ax_rb.set_ylabel("Relative bias (%)")
    ax_rb.set_title(f"{config.name}: bias over {config.replications} replications")
    ax_rmse.bar(labels, [100.0 * row.rmse for row in rows], color="#a85448")
    ax_rmse.set_ylabel("RMSE (x100)")
    ax_rmse.set_title("Root mean squared error")
    for ax in (ax_rb, ax_rmse):
        ax.tick_params(axis="x", labelsize=8)
    fig.tight_layout()
    path = f"{out_dir}/{config.name}_bias_rmse.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)

    with_cov = [
        (label, row)
        for label, row in zip(labels, rows)
        if row.coverage_pct is not None
    ]
    if with_cov:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.bar(
            [label for label, _ in with_cov],
            [row.coverage_pct for _, row in with_cov],
            color="#6a9455",
        )
        nominal = 100.0 * (1.0 - config.alpha)
        ax.axhline(nominal, color="black", linestyle="--", linewidth=1.0)
        ax.set_ylim(0, 100)
        ax.set_ylabel("Coverage (%)")
        ax.set_title(f"{config.name}: CI coverage vs nominal {nominal:g}%")
        ax.tick_params(axis="x", labelsize=8)
        fig.tight_layout()
        path = f"{out_dir}/{config.name}_coverage.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths
