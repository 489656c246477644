"""Tables and plot data from a benchmark result."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from ..errors import SymdefError, ValidationError
from .lodo import BenchmarkResult
from .stats import friedman_test, nemenyi_cd, not_worse_than_best


def summarize(result: BenchmarkResult, alpha: float = 0.05) -> dict:
    S = result.matrix()
    k, n = S.shape
    mean_ranks = result.mean_ranks()
    out = {
        "alpha": alpha,
        "methods": list(result.methods),
        "datasets": list(result.datasets),
        "mean": [float(x) for x in S.mean(axis=1)],
        "sd": [float(x) for x in (S.std(axis=1, ddof=1) if n > 1 else np.zeros(k))],
        "mean_ranks": [float(x) for x in mean_ranks],
        "friedman_statistic": None,
        "friedman_p_value": None,
        "cd": None,
        "not_worse_than_best": None,
    }
    if k >= 2 and n >= 2:
        fr = friedman_test(S)
        out["friedman_statistic"] = fr.statistic
        out["friedman_p_value"] = fr.p_value
        try:
            cd = nemenyi_cd(k, n, alpha)
        except ValidationError:
            cd = None
        if cd is not None:
            out["cd"] = cd
            out["not_worse_than_best"] = [bool(b) for b in not_worse_than_best(mean_ranks, cd)]
    return out


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def render(result: BenchmarkResult, alpha: float = 0.05) -> dict[str, str]:
    """File name -> content for every report artifact."""
    if not result.methods:
        raise ValidationError("benchmark result has no methods")
    s = summarize(result, alpha)
    nwb = s["not_worse_than_best"]
    summary_rows = [["method", "mean", "sd", "mean_rank", "not_worse_than_best"]]
    for i, m in enumerate(result.methods):
        flag = "" if nwb is None else str(nwb[i]).lower()
        summary_rows.append([m, repr(s["mean"][i]), repr(s["sd"][i]), repr(s["mean_ranks"][i]), flag])

    S = result.matrix()
    pairwise_rows = [["dataset_id", *result.methods]]
    for j, d in enumerate(result.datasets):
        pairwise_rows.append([d, *(repr(float(S[i, j])) for i in range(len(result.methods)))])

    cd = {
        "alpha": alpha,
        "methods": result.methods,
        "mean_ranks": s["mean_ranks"],
        "cd": s["cd"],
        "friedman_statistic": s["friedman_statistic"],
        "friedman_p_value": s["friedman_p_value"],
        "n_datasets": len(result.datasets),
        "not_worse_than_best": nwb,
    }

    md = [f"# Benchmark: {result.algorithm}", ""]
    md.append(f"{len(result.datasets)} held-out datasets, {len(result.methods)} methods. "
              "Scores are normalized (1 = best configuration in the metadata).")
    md += ["", "| method | mean (sd) | mean rank | not worse than best |", "|---|---|---|---|"]
    order = np.argsort(s["mean_ranks"], kind="stable")
    for i in order:
        mark = "" if nwb is None else ("yes" if nwb[i] else "no")
        md.append(f"| {result.methods[i]} | {s['mean'][i]:.3f} ({s['sd'][i]:.3f}) | {s['mean_ranks'][i]:.2f} | {mark} |")
    md.append("")
    if s["friedman_statistic"] is not None:
        md.append(f"Friedman chi-square = {s['friedman_statistic']:.3f} (p = {s['friedman_p_value']:.3g}).")
    if s["cd"] is not None:
        md.append(f"Nemenyi critical difference at alpha = {alpha}: {s['cd']:.3f}.")
    md.append("")

    return {
        "summary.csv": _csv(summary_rows),
        "pairwise.csv": _csv(pairwise_rows),
        "cd.json": json.dumps(cd, indent=2, sort_keys=True) + "\n",
        "summary.md": "\n".join(md),
    }


def report(result: BenchmarkResult, out_dir: str | Path, alpha: float = 0.05) -> list[Path]:
    files = render(result, alpha)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, content in files.items():
            path = out / name
            path.write_text(content, encoding="utf-8")
            paths.append(path)
    except OSError as exc:
        raise SymdefError(f"cannot write report to {out}: {exc}") from exc
    return paths
