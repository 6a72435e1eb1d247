"""Report artifacts: JSON, per-step series CSV, SVG charts and the CV table.

Output is byte-deterministic: fixed key order, floats at six significant
digits, no timestamps.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyInputError
from .valframe.results import REPORT_VERSION, TestReport

SERIES_CSV_HEADER = ("step", "label", "series", "kind", "index", "value")
IDLE_CSV_HEADER = ("estimator", "window", "t0", "t1", "container", "state", "idle_pkg_w")
CV_COLUMNS = ("oracle_pkg", "oracle_dram", "estimator_pkg", "estimator_dram")
MANIFEST = "manifest.json"

_W, _H = 800, 500


def _g(x: float) -> str:
    return f"{x:.6g}"


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


# -- per-test files ----------------------------------------------------------


def report_json(report: TestReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def read_report(path) -> TestReport:
    return TestReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def series_csv(report: TestReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if report.steps:
        w.writerow(SERIES_CSV_HEADER)
        for i, step in enumerate(report.steps):
            for name, kinds in step.series.items():
                for kind in ("raw", "cleaned"):
                    for j, v in enumerate(kinds.get(kind, ())):
                        w.writerow((i, step.label, name, kind, j, _g(v)))
    else:
        w.writerow(IDLE_CSV_HEADER)
        for mode, rows in report.extra.get("windows", {}).items():
            for k, row in enumerate(rows):
                for group, state in (("completed_idle_pkg", "completed"), ("active_idle_pkg", "active")):
                    for name, v in row[group].items():
                        w.writerow((mode, k, row["t0"], row["t1"], name, state, _g(v)))
    return buf.getvalue()


def _scale(lo: float, hi: float, a: float, b: float):
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _panel(x0, y0, w, h, title, xs, series, xlabel) -> list[str]:
    """One line-chart panel; ``series`` is [(name, colour, dashed, ys)]."""
    ys_all = [y for _, _, _, ys in series for y in ys]
    ymax = max(ys_all + [0.0]) * 1.1 or 1.0
    sx = _scale(min(xs), max(xs), x0 + 50, x0 + w - 10)
    sy = _scale(0.0, ymax, y0 + h - 40, y0 + 30)
    out = [
        f'<text x="{x0 + w / 2:.2f}" y="{y0 + 18:.2f}" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{x0 + 50:.2f}" y1="{y0 + h - 40:.2f}" x2="{x0 + w - 10:.2f}" y2="{y0 + h - 40:.2f}" stroke="black"/>',
        f'<line x1="{x0 + 50:.2f}" y1="{y0 + 30:.2f}" x2="{x0 + 50:.2f}" y2="{y0 + h - 40:.2f}" stroke="black"/>',
        f'<text x="{x0 + w / 2:.2f}" y="{y0 + h - 8:.2f}" text-anchor="middle" font-size="12">{xlabel}</text>',
    ]
    for x in xs:
        out.append(
            f'<text class="xtick" x="{sx(x):.2f}" y="{y0 + h - 24:.2f}" text-anchor="middle" font-size="10">{_g(x)}</text>'
        )
    for i in range(5):
        v = ymax * i / 4
        out.append(
            f'<text class="ytick" x="{x0 + 46:.2f}" y="{sy(v) + 3:.2f}" text-anchor="end" font-size="10">{v:.3g}</text>'
        )
    for k, (name, colour, dashed, ys) in enumerate(series):
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<polyline class="series" data-name="{name}" fill="none" stroke="{colour}" stroke-width="2"{dash} points="{pts}"/>')
        for x, y in zip(xs, ys):
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{colour}"/>')
        ly = y0 + 40 + 16 * k
        out.append(f'<line x1="{x0 + w - 150:.2f}" y1="{ly:.2f}" x2="{x0 + w - 130:.2f}" y2="{ly:.2f}" stroke="{colour}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{x0 + w - 126:.2f}" y="{ly + 4:.2f}" font-size="11">{name}</text>')
    return out


_XLABEL = {
    "frequency_ghz": "host core frequency (GHz)",
    "corunners": "co-runner count",
    "cstates": "C-states enabled (0 = off, 1 = on)",
}


def report_svg(report: TestReport) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_W} {_H}" width="{_W}" height="{_H}" font-family="sans-serif">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    if report.steps:
        xs = report.step_values()
        est = report.primary_estimator
        body = []
        for i, (domain, unit) in enumerate((("pkg", "PKG"), ("dram", "DRAM"))):
            series = [
                ("oracle", "#1f77b4", False, [getattr(s, f"oracle_{domain}") for s in report.steps]),
                (est, "#d62728", True, report.estimator_series(est, f"dyn_{domain}")),
            ]
            body += _panel(
                i * _W / 2, 0, _W / 2, _H,
                f"{report.test_id}: stressor dynamic {unit} (W)",
                xs, series, _XLABEL.get(report.step_variable, report.step_variable),
            )
    else:
        body = _idle_bars(report)
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _idle_bars(report: TestReport) -> list[str]:
    windows = report.extra.get("windows", {}).get(report.primary_estimator, [])
    if not windows:
        return ['<text x="400" y="250" text-anchor="middle">no windows</text>']
    last = windows[-1]
    bars = [(n, v, "#7f7f7f") for n, v in last["completed_idle_pkg"].items()]
    bars += [(n, v, "#2ca02c") for n, v in last["active_idle_pkg"].items()]
    top = max([v for _, v, _ in bars] + [1e-9]) * 1.1
    sy = _scale(0.0, top, _H - 80, 40)
    bw = (_W - 100) / len(bars)
    out = [f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="14">{report.test_id}: idle PKG per container, last window (W)</text>']
    for i, (name, v, colour) in enumerate(bars):
        x = 60 + i * bw
        out.append(
            f'<rect class="bar" data-name="{name}" x="{x + 2:.2f}" y="{sy(v):.2f}" width="{bw - 4:.2f}" height="{_H - 80 - sy(v):.2f}" fill="{colour}"/>'
        )
        out.append(
            f'<text x="{x + bw / 2:.2f}" y="{_H - 64:.2f}" font-size="9" text-anchor="end" transform="rotate(-60 {x + bw / 2:.2f} {_H - 64:.2f})">{name}</text>'
        )
    return out


def emit_report(report: TestReport, out_dir) -> list[Path]:
    # render from what the JSON holds, so re-rendering reproduces the bytes
    report = report.canonical()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tid = report.test_id
    return [
        _write(out / f"{tid}.json", report_json(report)),
        _write(out / f"{tid}_series.csv", series_csv(report)),
        _write(out / f"{tid}.svg", report_svg(report)),
    ]


# -- CV table -----------------------------------------------------------------


def cv_rows(reports: Sequence[TestReport]) -> list[tuple[str, dict[str, tuple[float, float, float]]]]:
    """Per test: column -> (min, max, avg) CV%, over the test's steps."""
    rows = []
    for r in reports:
        if not r.steps:
            continue
        cols: dict[str, list[float]] = {c: [] for c in CV_COLUMNS}
        for s in r.steps:
            cols["oracle_pkg"].append(s.meter_stability_pkg.cv_percent)
            cols["oracle_dram"].append(s.meter_stability_dram.cv_percent)
            e = s.estimators[r.primary_estimator]
            if e.stability_pkg is not None:
                cols["estimator_pkg"].append(e.stability_pkg.cv_percent)
            if e.stability_dram is not None:
                cols["estimator_dram"].append(e.stability_dram.cv_percent)
        rows.append(
            (r.test_id, {c: (min(v), max(v), sum(v) / len(v)) if v else None for c, v in cols.items()})
        )
    return rows


def emit_cv_table(reports: Sequence[TestReport], out_dir=None) -> tuple[str, str]:
    """CV% summary as ``(csv_text, text_table)``; also written to ``out_dir`` if given."""
    if not reports:
        raise EmptyInputError("need at least one report")
    rows = cv_rows([r.canonical() for r in reports])
    header = ["test"] + [f"{c}_{s}" for c in CV_COLUMNS for s in ("min", "max", "avg")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    lines = [f"{'test':<10}" + "".join(f"{c:>27}" for c in CV_COLUMNS),
             f"{'':<10}" + "".join(f"{'min':>9}{'max':>9}{'avg':>9}" for _ in CV_COLUMNS)]
    for tid, cols in rows:
        cells, text = [tid], f"{tid:<10}"
        for c in CV_COLUMNS:
            trio = cols[c]
            if trio is None:
                cells += ["", "", ""]
                text += f"{'-':>9}" * 3
            else:
                cells += [_g(v) for v in trio]
                text += "".join(f"{v:>9.4f}" for v in trio)
        w.writerow(cells)
        lines.append(text)
    table = "\n".join(lines) + "\n"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "cv_table.csv", buf.getvalue())
        _write(out / "cv_table.txt", table)
    return buf.getvalue(), table


# -- bundle -------------------------------------------------------------------


@dataclass
class ReportBundle:
    scenario_hash: str
    seed: int
    reports: list[TestReport] = field(default_factory=list)
    files: list[str] = field(default_factory=list)

    def manifest(self, out_dir) -> dict:
        out = Path(out_dir)
        return {
            "report_version": REPORT_VERSION,
            "scenario_hash": self.scenario_hash,
            "seed": self.seed,
            "tests": [r.test_id for r in self.reports],
            "files": {
                name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in sorted(self.files)
            },
        }


def emit_bundle(reports: Iterable[TestReport], out_dir, scenario_hash: str, seed: int) -> ReportBundle:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = ReportBundle(scenario_hash, seed, list(reports))
    for r in bundle.reports:
        bundle.files += [p.name for p in emit_report(r, out)]
    if any(r.steps for r in bundle.reports):
        emit_cv_table(bundle.reports, out)
        bundle.files += ["cv_table.csv", "cv_table.txt"]
    _write(out / MANIFEST, json.dumps(bundle.manifest(out), indent=2) + "\n")
    return bundle


def rerender(out_dir) -> ReportBundle:
    """Rebuild CSV/SVG/CV artifacts of a run directory from its JSON reports."""
    out = Path(out_dir)
    try:
        manifest = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"{out} has no {MANIFEST}") from None
    reports = [read_report(out / f"{tid}.json") for tid in manifest["tests"]]
    return emit_bundle(reports, out, manifest["scenario_hash"], manifest["seed"])
