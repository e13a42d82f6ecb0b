import json
import os

import pandas as pd

from lesionsynth.evalharness import RunResult, summarize
from lesionsynth.storage import atomic_path, atomic_write_text

TABLE_COLUMNS = ["Training Data", "AUC (%)", "Training Data Size", "p-value"]


def runs_to_frame(report, sizes):
    """One row per (composition, run) with its seed and AUC."""
    rows = []
    for name, results in report.runs.items():
        for result in results:
            rows.append({"spec": name, "run": result.run, "seed": result.seed, "auc": result.auc,
                         "size": sizes[name]})
    return pd.DataFrame(rows, columns=["spec", "run", "seed", "auc", "size"])


def save_runs_to_csv(report, sizes, results_folder):
    os.makedirs(results_folder, exist_ok=True)
    path = os.path.join(results_folder, "runs.csv")
    with atomic_path(path) as tmp_path:
        runs_to_frame(report, sizes).to_csv(tmp_path, index=False)
    return path


def report_from_runs(runs_df: pd.DataFrame, reference, significance_level):
    """Rebuilds the experiment report from a runs table, keeping the compositions' first-seen order."""
    runs, sizes = {}, {}
    for row in runs_df.itertuples(index=False):
        runs.setdefault(row.spec, []).append(RunResult(run=int(row.run), auc=float(row.auc), seed=int(row.seed)))
        sizes[row.spec] = int(row.size)
    return summarize(runs, sizes, reference, significance_level)


def format_p_value(p_value):
    return "-" if p_value is None else f"{p_value:.1e}"


def report_table(report) -> pd.DataFrame:
    """
    Columns: Training Data, AUC (%), Training Data Size, p-value, plus the raw numbers.

    Args:
        report (ExperimentReport): Aggregated experiment.

    Returns:
        pd.DataFrame: One row per composition.
    """
    rows = []
    for row in report.rows:
        rows.append({
            "Training Data": row.name,
            "AUC (%)": f"{row.mean_auc:.1f} ± {row.std_auc:.1f}",
            "Training Data Size": row.size,
            "p-value": format_p_value(row.p_value),
            "auc_mean": row.mean_auc,
            "auc_std": row.std_auc,
            "p_value_raw": row.p_value,
            "significant": row.significant,
        })
    return pd.DataFrame(rows, columns=TABLE_COLUMNS + ["auc_mean", "auc_std", "p_value_raw", "significant"])


def report_document(report) -> dict:
    return {
        "reference": report.reference,
        "columns": TABLE_COLUMNS,
        "rows": [
            {
                "training_data": row.name,
                "auc_mean": row.mean_auc,
                "auc_std": row.std_auc,
                "training_data_size": row.size,
                "p_value": row.p_value,
                "significant": row.significant,
                "runs": [result.auc for result in sorted(report.runs.get(row.name, []), key=lambda r: r.run)],
            }
            for row in report.rows
        ],
    }


def save_report(report, results_folder):
    """Writes report.csv and report.json into `results_folder`; returns both paths."""
    os.makedirs(results_folder, exist_ok=True)
    csv_path = os.path.join(results_folder, "report.csv")
    json_path = os.path.join(results_folder, "report.json")
    with atomic_path(csv_path) as tmp_path:
        report_table(report).to_csv(tmp_path, index=False)
    atomic_write_text(json_path, json.dumps(report_document(report), indent=2, ensure_ascii=False))
    return csv_path, json_path


def print_report(report) -> None:
    """Prints the experiment as a results table."""
    print("=" * 80)
    print("SYNTHETIC TRAINING DATA: CLASSIFIER AUC".center(80))
    print("=" * 80)
    print(f"{'Training Data':<24}{'AUC (%)':>16}{'Training Data Size':>22}{'p-value':>14}")
    print("-" * 80)
    for row in report.rows:
        auc_text = f"{row.mean_auc:.1f} ± {row.std_auc:.1f}"
        marker = "*" if row.significant else " "
        print(f"{row.name:<24}{auc_text:>16}{row.size:>22,}{format_p_value(row.p_value):>13}{marker}")
    print("-" * 80)
    print(f"p-values: paired t-test against '{report.reference}'; * marks significance")
    print("=" * 80)
