#!/usr/bin/env python3
# ABOUTME: Render synthesis reports and controller comparison tables to HTML using Jinja2 templates
# ABOUTME: Usage: uv run scripts/report.py --artifact artifact.json --output report.html

import argparse
import json
import math
import sys
from datetime import datetime
from pathlib import Path

try:
    from jinja2 import Environment, FileSystemLoader, select_autoescape
except ImportError:
    print("Error: jinja2 not installed. Run: uv pip install jinja2", file=sys.stderr)
    sys.exit(1)

from controller import ControllerArtifact
from harmonic_solvers import harmonic_content

# Paths
TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"

# Columns of the comparison table: (summary key, header, formatter kind)
COMPARISON_COLUMNS = [
    ("thd_ia", "THD(i_a)", "percent"),
    ("hc_vdc", "HC(v_dc) [V]", "number"),
    ("v_dc_error", "mean v_dc error [V]", "number"),
    ("i_q_mean", "mean i_q [A]", "number"),
    ("i_dq3_ratio", "|I_dq,3| / i_d", "percent"),
    ("i_dq6_ratio", "|I_dq,6| / i_d", "percent"),
    ("ia2_ratio", "|I_a,2| / |I_a,1|", "percent"),
    ("ia4_ratio", "|I_a,4| / |I_a,1|", "percent"),
    ("settling_time", "settling [s]", "number"),
    ("saturated_steps", "saturated steps", "integer"),
]


def format_number(value, digits: int = 4) -> str:
    """Compact engineering display; None and non-finite values render as n/a."""
    if value is None:
        return "n/a"
    try:
        value = float(value)
    except (TypeError, ValueError):
        return str(value)
    if not math.isfinite(value):
        return "n/a"
    if value != 0 and (abs(value) < 1e-3 or abs(value) >= 1e5):
        return f"{value:.{digits - 1}e}"
    return f"{value:.{digits}g}"


def format_percent(value, digits: int = 2) -> str:
    """Ratio as a percentage."""
    if value is None or not math.isfinite(float(value)):
        return "n/a"
    return f"{100 * float(value):.{digits}f} %"


def _format(value, kind: str) -> str:
    if kind == "percent":
        return format_percent(value)
    if kind == "integer":
        return "n/a" if value is None else f"{int(value):,}"
    return format_number(value)


def _format_setting(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return ", ".join(format_number(x) for x in value)
    return format_number(value)


def prepare_synthesis_context(artifact: ControllerArtifact) -> dict:
    """Flatten an artifact into the rows the synthesis template displays."""
    report = artifact.report
    diagnosis = report.get("tuning_diagnosis", {})
    decay_P = harmonic_content(artifact.P)
    decay_M = harmonic_content(artifact.M) if artifact.M is not None else None

    decay_rows = []
    for k, value in enumerate(decay_P):
        decay_rows.append({
            "k": k,
            "P": format_number(value),
            "M": format_number(decay_M[k]) if decay_M is not None and k < len(decay_M) else "n/a",
        })

    blocks = [
        {"start": block.start, "kind": "integrator" if block.harmonic == 0 else f"oscillator {block.harmonic}w",
         "output": block.output, "weight": format_number(artifact.H2[block.start])}
        for block in artifact.blocks
    ]

    return {
        "objectives": ", ".join(str(k) for k in artifact.objectives) or "none (stabilizing only)",
        "integral": artifact.integral,
        "params": [{"name": k, "value": format_number(v)} for k, v in artifact.params.to_dict().items()],
        "tuning": [{"name": k, "value": _format_setting(v)} for k, v in artifact.tuning.to_dict().items()],
        "gains": [
            {"name": "H1", "value": format_number(artifact.H1)},
            {"name": "H1 from the 1/50 rule", "value": format_number(report.get("h1_rule"))},
            {"name": "Ts H1 rho(G G' P)", "value": format_number(report.get("per_sample_gain"))},
            {"name": "alpha'", "value": format_number(report.get("alpha_prime"))},
            {"name": "bank size", "value": str(artifact.bank_size)},
        ],
        "blocks": blocks,
        "residuals": [
            {"name": "Lyapunov", "value": format_number(report.get("lyapunov_residual"))},
            {"name": "Sylvester", "value": format_number(report.get("sylvester_residual"))},
        ],
        "spectrum": [
            {"name": "open loop min damping", "value": format_number(report.get("open_loop_min_damping"))},
            {"name": "closed loop min damping", "value": format_number(report.get("min_damping"))},
            {"name": "open loop max real part", "value": format_number(report.get("open_loop_max_real"))},
            {"name": "closed loop max real part", "value": format_number(report.get("max_real"))},
        ],
        "orders": (report.get("lyapunov") or {}).get("orders", []),
        "decay": decay_rows,
        "diagnosis": {
            "within_tolerance": diagnosis.get("within_tolerance"),
            "h1_ratio": format_number(diagnosis.get("h1_ratio")),
            "alpha_prime_ratio": format_number(diagnosis.get("alpha_prime_ratio")),
            "unit_factor": format_number(diagnosis.get("unit_factor")),
            "explanation": diagnosis.get("explanation", ""),
        },
        "wall_time": format_number(report.get("wall_time")),
        "from_cache": bool(report.get("from_cache")),
    }


def prepare_comparison_rows(summaries: list[dict]) -> list[dict]:
    """One row per controller; the lowest THD(i_a) is flagged as best."""
    finite = [s.get("thd_ia") for s in summaries if s.get("thd_ia") is not None and math.isfinite(s["thd_ia"])]
    best = min(finite) if finite else None
    rows = []
    for summary in summaries:
        row = {
            "controller": summary.get("controller", "?"),
            "error": summary.get("error"),
            "best": best is not None and summary.get("thd_ia") == best,
            "cells": [_format(summary.get(key), kind) for key, _, kind in COMPARISON_COLUMNS],
        }
        rows.append(row)
    return rows


def _environment() -> Environment:
    return Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=select_autoescape(["html"]))


def _write(html: str, output_path: Path, label: str) -> Path:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text(html)
    # Print path to stdout (for shell capture) and message to stderr (for display)
    print(output_path)
    print(f"{label} written to: {output_path}", file=sys.stderr)
    return output_path


def render_synthesis_report(artifact: ControllerArtifact, output_path: Path) -> Path:
    """Render the synthesis report HTML for one artifact."""
    template = _environment().get_template("synthesis_report.html")
    html = template.render(
        ctx=prepare_synthesis_context(artifact),
        generated_at=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
    )
    return _write(html, output_path, "Synthesis report")


def render_comparison(summaries: list[dict], scenario: str, output_path: Path) -> Path:
    """Render the comparison table of several controllers on one scenario."""
    template = _environment().get_template("comparison.html")
    html = template.render(
        scenario=scenario,
        headers=[header for _, header, _ in COMPARISON_COLUMNS],
        rows=prepare_comparison_rows(summaries),
        generated_at=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
    )
    return _write(html, output_path, "Comparison")


def main():
    parser = argparse.ArgumentParser(description="Render synthesis or comparison reports to HTML")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--artifact", help="Artifact JSON written by harmonic_ctl.py synthesize")
    source.add_argument("--comparison", help="comparison.json written by harmonic_ctl.py compare")
    parser.add_argument("--output", required=True, help="Output HTML file path")
    args = parser.parse_args()

    input_path = Path(args.artifact or args.comparison)
    if not input_path.exists():
        print(f"Error: Input file not found: {input_path}", file=sys.stderr)
        sys.exit(1)

    with open(input_path) as f:
        data = json.load(f)

    if args.artifact:
        render_synthesis_report(ControllerArtifact.from_dict(data), Path(args.output))
    else:
        render_comparison(data.get("results", []), data.get("scenario", ""), Path(args.output))


if __name__ == "__main__":
    main()
