"""CSV records, mean/std bands and a standalone SVG learning-curve plot."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ContractViolation
from .runner import LearningCurveRecord

CSV_HEADER = ("replicate", "trajectories", "mean_reward", "seconds")


def format_csv(records: Iterable[LearningCurveRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([r.replicate, r.trajectories, repr(float(r.mean_reward)), repr(float(r.seconds))])
    return buf.getvalue()


def parse_csv(text: str) -> list[LearningCurveRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ContractViolation(f"expected CSV header {','.join(CSV_HEADER)}")
    return [LearningCurveRecord(int(a), int(b), float(c), float(d)) for a, b, c, d in rows[1:]]


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _read(path: Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def emit_csv(records: Iterable[LearningCurveRecord], path: str | Path) -> Path:
    records = list(records)
    if not records:
        raise ContractViolation("no records to write")
    return _write(Path(path), format_csv(records))


def read_csv(path: str | Path) -> list[LearningCurveRecord]:
    return parse_csv(_read(Path(path)))


@dataclass(frozen=True)
class BandPoint:
    """Replicate statistics at one evaluation point.

    Evaluation points are matched by position within each replicate's
    curve; ``trajectories`` is the mean count over replicates (URL runs can
    overshoot a cadence mark by a partial TSR call).
    """

    point: int
    trajectories: float
    mean: float
    std: float
    n: int

    @property
    def lower(self) -> float:
        return self.mean - self.std

    @property
    def upper(self) -> float:
        return self.mean + self.std


def bands(records: Iterable[LearningCurveRecord]) -> list[BandPoint]:
    """Mean and population standard deviation across replicates per point."""
    curves: dict[int, list[LearningCurveRecord]] = defaultdict(list)
    for r in records:
        curves[r.replicate].append(r)
    if not curves:
        raise ContractViolation("no records to summarize")
    n_points = max(len(c) for c in curves.values())
    out = []
    for p in range(n_points):
        here = [c[p] for c in curves.values() if len(c) > p]
        values = np.array([r.mean_reward for r in here])
        out.append(BandPoint(
            p,
            float(np.mean([r.trajectories for r in here])),
            float(values.mean()),
            float(values.std()),
            len(here),
        ))
    return out


def format_bands(points: Sequence[BandPoint]) -> str:
    lines = ["point\ttrajectories\tmean\tstd\tlower\tupper\tn"]
    for b in points:
        lines.append(
            f"{b.point}\t{b.trajectories!r}\t{b.mean!r}\t{b.std!r}\t{b.lower!r}\t{b.upper!r}\t{b.n}"
        )
    return "\n".join(lines) + "\n"


def render_svg(series: Mapping[str, Sequence[BandPoint]], title: str = "") -> str:
    """Learning curves with shaded one-standard-deviation bands, as SVG text."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "urlbmdp", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, points in series.items():
            x = [b.trajectories for b in points]
            mean = np.array([b.mean for b in points])
            std = np.array([b.std for b in points])
            (line,) = ax.plot(x, mean, label=label)
            ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)
        ax.set_xlabel("training trajectories")
        ax.set_ylabel("average reward")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def emit_plot_data(series: Mapping[str, Iterable[LearningCurveRecord]], out_dir: str | Path,
                   name: str = "curves") -> list[Path]:
    """Write ``<label>_bands.tsv`` per configuration and one ``<name>.svg``."""
    out_dir = Path(out_dir)
    summarized = {}
    written = []
    for label, records in series.items():
        records = list(records)
        if not records:
            raise ContractViolation(f"no records for {label}")
        summarized[label] = bands(records)
        written.append(_write(out_dir / f"{label}_bands.tsv", format_bands(summarized[label])))
    written.append(_write(out_dir / f"{name}.svg", render_svg(summarized)))
    return written
