"""Run report: per-stage stats, timings, warnings, and config echo.

Every number in a report block is copied from (or recomputable from)
the artifacts the stage wrote, so a report can be audited against the
output directory; timings are the one run-specific exception.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunReport:
    """Accumulates stage blocks in execution order."""

    config: dict
    timings: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def add(self, stage: str, block: dict, elapsed: float) -> None:
        self.blocks[stage] = block
        self.timings[stage] = round(elapsed, 3)

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            self.warnings.append(message)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "timings": self.timings,
            "stages": self.blocks,
            "warnings": self.warnings,
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        (out / "report.txt").write_text(self.render_text())

    def render_text(self) -> str:
        lines = ["run report", "=" * 10, ""]
        ablations = [
            name
            for name, on in self.config.get("ablation", {}).items()
            if on
        ]
        run = self.config.get("run", {})
        lines.append(
            f"seed {run.get('seed')}  threads {run.get('threads')}  "
            f"ablations: {', '.join(ablations) if ablations else 'none'}"
        )
        lines.append("")
        if self.timings:
            lines.append("stage timings")
            lines.append("-" * 13)
            for stage, secs in self.timings.items():
                lines.append(f"  {stage:<14} {secs:9.3f} s")
            lines.append(f"  {'total':<14} {sum(self.timings.values()):9.3f} s")
            lines.append("")
        for stage, block in self.blocks.items():
            lines.append(stage)
            lines.append("-" * len(stage))
            lines.extend(_format_block(block, indent=2))
            lines.append("")
        if self.warnings:
            lines.append("warnings")
            lines.append("-" * 8)
            for message in self.warnings:
                lines.append(f"  {message}")
            lines.append("")
        lines.append("config")
        lines.append("-" * 6)
        lines.extend(_format_block(self.config, indent=2))
        return "\n".join(lines) + "\n"


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if value == 0:
            return "0"
        if abs(value) >= 1e4 or abs(value) < 1e-3:
            return f"{value:.4e}"
        return f"{value:.4f}"
    return str(value)


def _format_block(block: dict, indent: int) -> list:
    """Key-value lines; nested dicts indent, lists of dicts tabulate."""
    pad = " " * indent
    lines = []
    for key, value in block.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.extend(_format_block(value, indent + 2))
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            cols = list(value[0])
            lines.append(f"{pad}{key}:")
            header = "  ".join(f"{c:>10}" for c in cols)
            lines.append(f"{pad}  {header}")
            for row in value:
                cells = "  ".join(
                    f"{_format_value(row.get(c, '')):>10}" for c in cols
                )
                lines.append(f"{pad}  {cells}")
        elif isinstance(value, list):
            shown = ", ".join(_format_value(v) for v in value[:12])
            more = "" if len(value) <= 12 else f", ... ({len(value)} total)"
            lines.append(f"{pad}{key}: [{shown}{more}]")
        else:
            lines.append(f"{pad}{key}: {_format_value(value)}")
    return lines
