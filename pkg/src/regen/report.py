"""Report rendering: figures plus delimited companions for CLI outputs.

Every report path emits a machine-readable file (JSON or JSON-lines written
by the owning command) together with a CSV and a PNG figure so runs can be
inspected without loading the logs by hand.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ._fs import atomic_write_text  # noqa: E402
from .streaming import LatencyBudget  # noqa: E402


def read_loss_log(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def loss_log_to_csv(records: list[dict], path) -> None:
    scales = sorted({int(k) for r in records for k in r.get("l_spec_per_scale", {})})
    fields = ["step", "l_spec", "l_sed", "l_adv", "l_d", "l_g"] + [
        f"l_spec_{m}" for m in scales]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for r in records:
            row = [r.get("step"), r["l_spec"], r["l_sed"], r["l_adv"], r["l_d"], r["l_g"]]
            row += [r.get("l_spec_per_scale", {}).get(str(m), "") for m in scales]
            writer.writerow(row)


def plot_loss_curves(records: list[dict], path) -> None:
    steps = [r.get("step", i) for i, r in enumerate(records)]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(steps, [r["l_spec"] for r in records], label="spectral")
    ax1.plot(steps, [r["l_sed"] for r in records], label="energy distance")
    ax1.set_ylabel("reconstruction loss")
    ax1.legend(frameon=False)
    ax2.plot(steps, [r["l_adv"] for r in records], label="generator adversarial")
    ax2.plot(steps, [r["l_d"] for r in records], label="discriminator")
    ax2.set_xlabel("step")
    ax2.set_ylabel("adversarial loss")
    ax2.legend(frameon=False)
    for ax in (ax1, ax2):
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def budget_to_csv(budget: LatencyBudget, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "receptive_field_ms", "future_context_ms",
                         "compute_ms", "bounded_past"])
        for s in budget.stages:
            writer.writerow([s.name, s.receptive_field_ms, s.future_context_ms,
                             s.compute_ms, s.bounded_past])
        writer.writerow(["total", "", budget.future_context_ms,
                         budget.compute_ms, ""])


def plot_budget(budget: LatencyBudget, path) -> None:
    names = [s.name for s in budget.stages]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.barh(names, [s.receptive_field_ms for s in budget.stages], color="#4878a8")
    ax1.axvline(40.0, color="k", lw=0.8, ls="--")
    ax1.set_xlabel("receptive field (ms)")
    ax2.barh(names, [s.future_context_ms for s in budget.stages], color="#a85548")
    ax2.set_xlabel("future context (ms)")
    title = f"chunk {budget.chunk_ms:.0f} ms, total latency {budget.total_latency_ms:.1f} ms"
    if budget.rtf is not None:
        title += f", RTF {budget.rtf:.2f}"
    fig.suptitle(title, fontsize=10)
    for ax in (ax1, ax2):
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_report(log_path, csv_path=None, figure_path=None) -> list[dict]:
    records = read_loss_log(log_path)
    if csv_path:
        loss_log_to_csv(records, csv_path)
    if figure_path and records:
        plot_loss_curves(records, figure_path)
    return records


def render_budget_report(budget: LatencyBudget, json_path=None,
                         csv_path=None, figure_path=None) -> None:
    if json_path:
        atomic_write_text(json_path, budget.to_json())
    if csv_path:
        budget_to_csv(budget, csv_path)
    if figure_path:
        plot_budget(budget, figure_path)
