"""Report generation: mean (SE) tables in plain text and Markdown.

Every table carries the run ids behind its numbers; write_report emits a
sidecar manifest mapping tables to those ids. Reading the store never
mutates it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from ..errors import UsageError
from ..metrics import relative
from .runner import aggregate, contribution_rows, localization_profiles

__all__ = ["Table", "error_table", "localization_tables", "single_block_tables",
           "render_text", "render_markdown", "write_report"]


@dataclass
class Table:
    title: str
    header: list
    rows: list  # list of list of str
    footer: str = ""
    run_ids: list = field(default_factory=list)


def _cell_label(rec):
    return (
        f"{rec.task} a={rec.skew_strength} f={rec.skew_frequency} "
        f"{rec.net} {rec.optimizer} {rec.mode}"
    )


def _fmt(agg):
    if agg["insufficient"]:
        return f"insufficient (n={agg['n']})"
    return f"{agg['mean'] * 100:.1f}% ({agg['se'] * 100:.1f}%)"


def error_table(records) -> Table:
    """Clean vs skewed anchor error rates on the clean test set."""
    cells = {}
    ids = []
    for rec in records:
        if rec.role not in ("clean_anchor", "skewed_anchor"):
            continue
        key = _cell_label(rec)
        col = "clean" if rec.role == "clean_anchor" else "skewed"
        cells.setdefault((key, col), []).append(
            (rec.err_clean_num / rec.err_clean_den, False)
        )
        ids.append(rec.run_id)
    if not cells:
        raise UsageError("store holds no anchor records")
    agg = aggregate(cells)
    rows = []
    for key in sorted({k for k, _ in cells}):
        row = [key]
        for col in ("clean", "skewed"):
            row.append(_fmt(agg[(key, col)]) if (key, col) in agg else "-")
        rows.append(row)
    return Table(
        title="Clean-test error rates of clean and skewed anchors, mean (SE)",
        header=["setting", "clean", "skewed"],
        rows=rows,
        run_ids=sorted(set(ids)),
    )


def _trial_run_ids(records):
    ids = {}
    for rec in records:
        ids.setdefault(rec.trial_id, []).append(rec.run_id)
    return ids


def single_block_tables(records):
    """Relative single-block contributions (family = single), mean (SE)."""
    rows_in = [
        (tid, anchor, rec, diverged)
        for tid, anchor, rec, diverged in contribution_rows(records)
        if len(rec.A.complement.members) == 1
    ]
    if not rows_in:
        return []
    trial_ids = _trial_run_ids(records)
    tables = []
    for metric in ("enc", "fgt"):
        cells = {}
        ids = []
        excluded = 0
        below_floor = 0
        for tid, anchor, rec, diverged in rows_in:
            if diverged:
                excluded += 1
                continue
            try:
                rel = relative(rec)
            except UsageError:
                below_floor += 1
                continue
            block = rec.A.complement.sorted()[0]
            value = rel.enc_pct if metric == "enc" else rel.fgt_pct
            cells.setdefault((_cell_label(anchor), block), []).append((value, False))
            ids.extend(trial_ids[tid])
        if not cells:
            continue
        agg = aggregate(cells)
        settings = sorted({k for k, _ in cells})
        blocks = sorted({b for _, b in cells})
        rows = []
        for setting in settings:
            row = [setting]
            for b in blocks:
                row.append(
                    _fmt_pct(agg[(setting, b)]) if (setting, b) in agg else "-"
                )
            rows.append(row)
        name = "encoding" if metric == "enc" else "forgetting"
        footer = f"diverged runs excluded: {excluded}"
        if below_floor:
            footer += f"; records below the gap floor: {below_floor}"
        tables.append(
            Table(
                title=f"Relative single-block contributions to {name}, mean (SE)",
                header=["setting"] + [f"bl.{b}" for b in blocks],
                rows=rows,
                footer=footer,
                run_ids=sorted(set(ids)),
            )
        )
    return tables


def _fmt_pct(agg):
    if agg["insufficient"]:
        return f"insufficient (n={agg['n']})"
    return f"{agg['mean']:.1f}% ({agg['se']:.1f}%)"


def localization_tables(records):
    """Per-block increase rates of relative contributions (suffix family)."""
    profiles = localization_profiles(records)
    if not profiles:
        return []
    trial_ids = _trial_run_ids(records)
    tables = []
    for metric in ("enc", "fgt"):
        cells = {}
        ids = []
        for tid, (anchor, prof) in profiles.items():
            rates = prof.enc_rates if metric == "enc" else prof.fgt_rates
            for b, rate in enumerate(rates):
                cells.setdefault((_cell_label(anchor), b), []).append(
                    (float(rate) * 100, False)
                )
            ids.extend(trial_ids[tid])
        agg = aggregate(cells)
        settings = sorted({k for k, _ in cells})
        blocks = sorted({b for _, b in cells})
        rows = []
        for setting in settings:
            row = [setting]
            for b in blocks:
                row.append(_fmt_pct(agg[(setting, b)]))
            rows.append(row)
        name = "encoding" if metric == "enc" else "forgetting"
        tables.append(
            Table(
                title=f"Increase rate of relative {name} by initial blocks, mean (SE)",
                header=["setting"] + [f"bl.{b}" for b in blocks],
                rows=rows,
                run_ids=sorted(set(ids)),
            )
        )
    return tables


def render_text(tables) -> str:
    chunks = []
    for t in tables:
        widths = [
            max(len(str(r[i])) for r in [t.header] + t.rows)
            for i in range(len(t.header))
        ]
        lines = [t.title, ""]
        lines.append("  ".join(str(h).ljust(w) for h, w in zip(t.header, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for row in t.rows:
            lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
        if t.footer:
            lines.append(f"[{t.footer}]")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def render_markdown(tables) -> str:
    chunks = []
    for t in tables:
        lines = [f"### {t.title}", ""]
        lines.append("| " + " | ".join(map(str, t.header)) + " |")
        lines.append("|" + "|".join(" --- " for _ in t.header) + "|")
        for row in t.rows:
            lines.append("| " + " | ".join(map(str, row)) + " |")
        if t.footer:
            lines.append("")
            lines.append(f"_{t.footer}_")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def write_report(records, out_dir, log=print) -> str:
    tables = [error_table(records)]
    notices = []
    single = single_block_tables(records)
    if single:
        tables.extend(single)
    loc = localization_tables(records)
    if loc:
        tables.extend(loc)
    if not single and not loc:
        notices.append(
            "no intervened runs in store: localization tables skipped"
        )
    text = render_text(tables)
    if notices:
        text += "\n" + "\n".join(f"note: {n}" for n in notices) + "\n"
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(out_dir, "report.md"), "w") as fh:
        fh.write(render_markdown(tables))
        if notices:
            fh.write("\n" + "\n".join(f"_note: {n}_" for n in notices) + "\n")
    manifest = {
        t.title: t.run_ids for t in tables
    }
    with open(os.path.join(out_dir, "report_manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    for n in notices:
        log(f"note: {n}")
    return text
