"""Campaign output files and the aligned text tables rendered from them."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .attacks import CampaignResult, TraceRow
from .serialization import dump_text, read_text

METRIC = {"keypoints": ("pckh", "PCKh"), "segmentation": ("miou", "mIoU"), "sequence": ("wer", "WER")}
TRACE_FIELDS = ["spec"] + list(TraceRow.__dataclass_fields__)


def campaign_document(task: str, specs, result: CampaignResult) -> dict:
    rows = [{k: v for k, v in r.items() if k != "_trace"} for r in result.rows]
    return {"task": task, "specs": [s.to_dict() for s in specs], "summary": result.summary, "rows": rows}


def _fmt(v, digits=4) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, int):
        return str(v)
    return f"{v:.{digits}f}"


def write_campaign(out_dir, task: str, specs, result: CampaignResult) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "campaign.yaml"]
    written[0].write_text(dump_text(campaign_document(task, specs, result)))
    by_example: dict[int, list[tuple[str, list[dict]]]] = {}
    for r in result.rows:
        by_example.setdefault(r["example"], []).append((r["spec"], r.get("_trace", [])))
    for ex, traces in sorted(by_example.items()):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for spec, trace in traces:
            for t in trace:
                w.writerow([spec] + [_fmt(t[k], 8) if isinstance(t[k], float) else t[k] for k in TRACE_FIELDS[1:]])
        p = out / f"trace-{ex}.csv"
        p.write_text(buf.getvalue())
        written.append(p)
    return written


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))  # noqa: E731
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def render_report(doc: dict) -> str:
    """One row per (mode, surrogate, epsilon): task metric, then SSIM and
    perceptibility at the half-performance checkpoint and at the limit."""
    task = doc["task"]
    key, label = METRIC[task]
    header = ["Method", "norm", "eps", f"clean {label}", f"{label}@lim",
              f"SSIM @{label}/2", f"SSIM @{label}^lim", f"Perc @{label}/2", f"Perc @{label}^lim", "iters", "n"]
    if task == "sequence":
        header[5:5] = ["clean CER", "CER@lim"]
    rows = []
    for s in doc.get("summary") or []:
        r = [f"{s['mode']}: {s['surrogate']}", str(s["norm"]), _fmt(s["epsilon"], 3),
             _fmt(s.get(f"clean_{key}")), _fmt(s.get(f"adv_{key}")),
             _fmt(s.get("ssim_half")), _fmt(s.get("ssim_lim")),
             _fmt(s.get("perceptibility_half")), _fmt(s.get("perceptibility_lim")),
             _fmt(s.get("iterations"), 1), f"{s['examples'] - s['failures']}/{s['examples']}"]
        if task == "sequence":
            r[5:5] = [_fmt(s.get("clean_cer")), _fmt(s.get("adv_cer"))]
        rows.append(r)
    title = f"Adversarial campaign: {task} ({len(doc.get('rows') or [])} attacks)"
    notes = ("SSIM/Perc @X/2: first iterate where the task metric falls to half its clean value "
             "(means over attacks that reached it).\nSSIM/Perc @X^lim: at termination (convergence or iteration cap).")
    failures = [r for r in doc.get("rows") or [] if r.get("error")]
    text = [title, "", _table(header, rows), "", notes]
    if failures:
        text += ["", "Failures:"] + [f"  example {r['example']} [{r['spec']}]: {r['error']}" for r in failures]
    return "\n".join(text) + "\n"


def write_report(out_dir) -> str:
    out = Path(out_dir)
    doc = read_text(out / "campaign.yaml")
    text = render_report(doc)
    (out / "report.txt").write_text(text)
    return text
