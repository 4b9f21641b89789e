"""Local dataset catalog: checksummed ingest, metadata search, plot export.

The catalog is nothing but a directory tree of datasets, one per
experiment iteration, each carrying a manifest.json with file checksums
and extracted metadata. There is no database: the manifests are the whole
state, so a catalog can always be rebuilt by rescanning the tree.

Layout: <root>/<experiment>/iter_NNNN/{files..., manifest.json}.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

log = logging.getLogger(__name__)


class DuplicateDatasetError(RuntimeError):
    """A dataset with this id is already in the catalog."""


class UnknownOperatorError(ValueError):
    """Search predicate used an operator other than =, <, >."""


@dataclass(frozen=True)
class FileEntry:
    path: str
    size: int
    sha256: str


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    experiment: str
    iteration: int
    files: tuple[FileEntry, ...]
    metadata: dict[str, Any]
    created_tick: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "experiment": self.experiment,
            "iteration": self.iteration,
            "files": [
                {"path": f.path, "size": f.size, "sha256": f.sha256}
                for f in self.files
            ],
            "metadata": dict(self.metadata),
            "created_tick": self.created_tick,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetManifest":
        return cls(
            dataset_id=raw["dataset_id"],
            experiment=raw["experiment"],
            iteration=raw["iteration"],
            files=tuple(
                FileEntry(f["path"], f["size"], f["sha256"]) for f in raw["files"]
            ),
            metadata=dict(raw["metadata"]),
            created_tick=raw["created_tick"],
        )


@dataclass(frozen=True)
class MetadataFilter:
    """Named extractor applied to files matching a glob pattern.

    Extractors are pure (bytes in, flat metadata map out) and must never
    abort an ingest: any exception is logged and treated as an empty map.
    """

    name: str
    file_pattern: str
    extractor: Callable[[bytes], dict[str, Any]]


def _extract_run_metrics(data: bytes) -> dict[str, Any]:
    doc = json.loads(data)
    if not isinstance(doc, dict):
        return {}
    out = {}
    for key in ("best_cost", "chi2", "energy"):
        value = doc.get(key)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            out[key] = float(value)
    return out


HRMC_METRICS_FILTER = MetadataFilter(
    name="hrmc-metrics",
    file_pattern="*.json",
    extractor=_extract_run_metrics,
)

_REGISTRY: dict[str, MetadataFilter] = {HRMC_METRICS_FILTER.name: HRMC_METRICS_FILTER}


def register_filter(f: MetadataFilter) -> None:
    _REGISTRY[f.name] = f


def registered_filters() -> list[MetadataFilter]:
    return list(_REGISTRY.values())


class Catalog:
    """Single-writer catalog rooted at a directory of manifests."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._index: dict[str, DatasetManifest] = {}
        self.rescan()

    def rescan(self) -> None:
        """Rebuild the in-memory index from the manifest files alone."""
        self._index = {}
        for manifest_path in sorted(self.root.glob("*/iter_*/manifest.json")):
            manifest = DatasetManifest.from_dict(
                json.loads(manifest_path.read_text(encoding="utf-8"))
            )
            self._index[manifest.dataset_id] = manifest

    def dataset_ids(self) -> list[str]:
        return sorted(self._index)

    def manifest(self, dataset_id: str) -> DatasetManifest:
        return self._index[dataset_id]

    def dataset_dir(self, manifest: DatasetManifest) -> Path:
        return self.root / manifest.experiment / f"iter_{manifest.iteration:04d}"

    # -- ingest ------------------------------------------------------------

    def ingest(
        self,
        src_dir: Path | str,
        experiment: str,
        iteration: int,
        filters: Sequence[MetadataFilter] | None = None,
        created_tick: int = 0,
    ) -> DatasetManifest:
        """Copy a run output directory into the catalog and index it.

        Files are checksummed as stored; every filter whose pattern matches
        a file contributes metadata, applied in filter order over files in
        sorted path order, with later values overriding earlier ones
        (conflicts are logged, not fatal). An unreadable source file is
        logged and skipped; a duplicate dataset id rejects the whole
        ingest and leaves the catalog untouched.
        """
        src = Path(src_dir)
        if not src.is_dir():
            raise NotADirectoryError(f"ingest source is not a directory: {src}")
        dataset_id = f"{experiment}/iter_{iteration:04d}"
        dest = self.root / experiment / f"iter_{iteration:04d}"
        if dataset_id in self._index or (dest / "manifest.json").exists():
            raise DuplicateDatasetError(dataset_id)
        if filters is None:
            filters = registered_filters()

        entries: list[FileEntry] = []
        contents: dict[str, bytes] = {}
        for path in sorted(p for p in src.rglob("*") if p.is_file()):
            rel = path.relative_to(src).as_posix()
            try:
                data = path.read_bytes()
            except OSError as exc:
                log.warning("skipping unreadable file %s: %s", path, exc)
                continue
            target = dest / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            entries.append(
                FileEntry(
                    path=rel,
                    size=len(data),
                    sha256=hashlib.sha256(data).hexdigest(),
                )
            )
            contents[rel] = data

        metadata: dict[str, Any] = {}
        key_sources: dict[str, str] = {}
        for f in filters:
            for rel in sorted(contents):
                if not fnmatch.fnmatch(rel, f.file_pattern):
                    continue
                try:
                    extracted = f.extractor(contents[rel])
                except Exception as exc:
                    log.warning("filter %s failed on %s: %s", f.name, rel, exc)
                    extracted = {}
                for key, value in extracted.items():
                    # within one filter, later files overriding earlier ones is
                    # the documented merge order; only cross-filter conflicts warn
                    prior = key_sources.get(key)
                    if prior is not None and prior != f.name and metadata[key] != value:
                        log.warning(
                            "metadata conflict on %r: filter %s (%s) overrides %s with %r",
                            key, f.name, rel, prior, value,
                        )
                    metadata[key] = value
                    key_sources[key] = f.name

        dest.mkdir(parents=True, exist_ok=True)
        manifest = DatasetManifest(
            dataset_id=dataset_id,
            experiment=experiment,
            iteration=iteration,
            files=tuple(entries),
            metadata=metadata,
            created_tick=created_tick,
        )
        (dest / "manifest.json").write_text(
            json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
        self._index[dataset_id] = manifest
        return manifest

    def verify(self, dataset_id: str) -> bool:
        """Re-checksum every stored file against its manifest entry."""
        manifest = self._index[dataset_id]
        base = self.dataset_dir(manifest)
        for entry in manifest.files:
            path = base / entry.path
            if not path.is_file():
                return False
            if hashlib.sha256(path.read_bytes()).hexdigest() != entry.sha256:
                return False
        return True

    # -- search ------------------------------------------------------------

    def search(self, query: Sequence[tuple[str, str, Any]]) -> list[str]:
        """Dataset ids whose metadata satisfies every predicate, sorted.

        The searchable namespace is the extracted metadata plus the
        manifest's own experiment and iteration fields. Comparisons are
        numeric when both sides are numbers; otherwise only string
        equality applies, and < / > simply never match.
        """
        for _, op, _ in query:
            if op not in ("=", "<", ">"):
                raise UnknownOperatorError(f"unsupported operator {op!r}")
        out = []
        for dataset_id in sorted(self._index):
            manifest = self._index[dataset_id]
            fields = {
                "dataset_id": dataset_id,
                "experiment": manifest.experiment,
                "iteration": manifest.iteration,
                "created_tick": manifest.created_tick,
                **manifest.metadata,
            }
            if all(_matches(fields, key, op, value) for key, op, value in query):
                out.append(dataset_id)
        return out

    # -- plots ---------------------------------------------------------------

    def emit_plots(self, experiment: str) -> list[Path]:
        """Write the experiment's cost curve (CSV + SVG) and point scatters.

        cost_vs_iteration.csv has one row per dataset in iteration order;
        points_iter_NNNN.csv carries x,y,cost rows for the iteration's best
        configuration. Datasets without metrics are skipped with a warning.
        Emission is pure serialization, so re-emitting is byte-identical.
        """
        manifests = sorted(
            (m for m in self._index.values() if m.experiment == experiment),
            key=lambda m: m.iteration,
        )
        if not manifests:
            raise ValueError(f"experiment {experiment!r} has no datasets")
        exp_dir = self.root / experiment
        emitted: list[Path] = []

        curve: list[tuple[int, float]] = []
        for manifest in manifests:
            cost = manifest.metadata.get("best_cost")
            if not isinstance(cost, (int, float)):
                log.warning("dataset %s has no best_cost metadata; skipped", manifest.dataset_id)
                continue
            curve.append((manifest.iteration, float(cost)))

            doc = self._best_points_doc(manifest)
            if doc is None:
                continue
            rows = ["x,y,cost"]
            for x, y in doc["best_points"]:
                rows.append(f"{x!r},{y!r},{doc['best_cost']!r}")
            scatter = exp_dir / f"points_iter_{manifest.iteration:04d}.csv"
            scatter.write_text("\n".join(rows) + "\n", encoding="utf-8")
            emitted.append(scatter)

        csv_path = exp_dir / "cost_vs_iteration.csv"
        lines = ["iteration,best_cost"]
        for iteration, cost in curve:
            lines.append(f"{iteration},{cost!r}")
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        emitted.append(csv_path)

        svg_path = exp_dir / "cost_vs_iteration.svg"
        svg_path.write_text(
            polyline_svg(
                [(float(i), c) for i, c in curve],
                x_label="iteration",
                y_label="best_cost",
            ),
            encoding="utf-8",
        )
        emitted.append(svg_path)
        return emitted

    def _best_points_doc(self, manifest: DatasetManifest) -> dict | None:
        """Last (sorted) JSON file carrying best_points, same rule as merge."""
        base = self.dataset_dir(manifest)
        doc = None
        for entry in manifest.files:
            if not entry.path.endswith(".json"):
                continue
            try:
                candidate = json.loads((base / entry.path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                continue
            if isinstance(candidate, dict) and "best_points" in candidate and "best_cost" in candidate:
                doc = candidate
        return doc


def _matches(fields: dict[str, Any], key: str, op: str, value: Any) -> bool:
    if key not in fields:
        return False
    actual = fields[key]
    numeric = (
        isinstance(actual, (int, float))
        and not isinstance(actual, bool)
        and isinstance(value, (int, float))
        and not isinstance(value, bool)
    )
    if op == "=":
        return actual == value if numeric else str(actual) == str(value)
    if not numeric:
        return False
    return actual < value if op == "<" else actual > value


# ---------------------------------------------------------------------------
# Dependency-free SVG line plot

_SVG_WIDTH = 640
_SVG_HEIGHT = 480
_MARGIN_LEFT = 70
_MARGIN_RIGHT = 20
_MARGIN_TOP = 20
_MARGIN_BOTTOM = 50
_TICKS = 5


def _axis_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        # degenerate span: pad by one unit either side
        return lo - 1.0, hi + 1.0
    return lo, hi


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def polyline_svg(
    points: Sequence[tuple[float, float]],
    x_label: str = "x",
    y_label: str = "y",
) -> str:
    """Self-contained 640x480 polyline plot with linear axes.

    Tick placement: five ticks per axis, evenly spaced over the data range
    (a degenerate range is padded by one unit on each side). The output is
    a pure function of the inputs, byte for byte.
    """
    if not points:
        raise ValueError("polyline_svg needs at least one point")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = _axis_range(xs)
    y_lo, y_hi = _axis_range(ys)
    plot_w = _SVG_WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _SVG_HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(x: float) -> float:
        return _MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_SVG_WIDTH} {_SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" fill="white"/>',
        # axes
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP + plot_h}" '
        f'x2="{_MARGIN_LEFT + plot_w}" y2="{_MARGIN_TOP + plot_h}" stroke="black"/>',
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" '
        f'x2="{_MARGIN_LEFT}" y2="{_MARGIN_TOP + plot_h}" stroke="black"/>',
    ]
    for i in range(_TICKS):
        frac = i / (_TICKS - 1)
        x_val = x_lo + frac * (x_hi - x_lo)
        y_val = y_lo + frac * (y_hi - y_lo)
        tx = px(x_val)
        ty = py(y_val)
        parts.append(
            f'<line x1="{tx:.2f}" y1="{_MARGIN_TOP + plot_h}" '
            f'x2="{tx:.2f}" y2="{_MARGIN_TOP + plot_h + 6}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{tx:.2f}" y="{_MARGIN_TOP + plot_h + 20}" '
            f'font-size="12" text-anchor="middle">{_fmt(x_val)}</text>'
        )
        parts.append(
            f'<line x1="{_MARGIN_LEFT - 6}" y1="{ty:.2f}" '
            f'x2="{_MARGIN_LEFT}" y2="{ty:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_LEFT - 10}" y="{ty + 4:.2f}" '
            f'font-size="12" text-anchor="end">{_fmt(y_val)}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN_LEFT + plot_w / 2:.2f}" y="{_SVG_HEIGHT - 10}" '
        f'font-size="14" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN_TOP + plot_h / 2:.2f}" font-size="14" '
        f'text-anchor="middle" transform="rotate(-90 16 {_MARGIN_TOP + plot_h / 2:.2f})">'
        f"{y_label}</text>"
    )
    if len(points) > 1:
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in points)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="steelblue" stroke-width="2"/>'
        )
    for x, y in points:
        parts.append(
            f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="steelblue"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
