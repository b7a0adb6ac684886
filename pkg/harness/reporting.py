"""Writing report tables and the run manifest to the output directory."""
import logging
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from harness.config import ExperimentConfig
from harness.schemas import RunManifest

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12g"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic", "python-dotenv", "tqdm")


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


def write_frame(out_dir: Path, name: str, frame: pd.DataFrame) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / f"{name}.csv"
    frame.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug("wrote %s (%d rows)", target, len(frame))
    return target


def write_tables(out_dir: Path, tables: Dict[str, pd.DataFrame]) -> List[str]:
    """One CSV per table, in insertion order; returns the file names."""
    return [write_frame(out_dir, name, frame).name for name, frame in tables.items()]


def write_manifest(
    out_dir: Path,
    cfg: ExperimentConfig,
    subcommand: str,
    outputs: List[str],
    workers: int = 1,
    replicas: Optional[int] = None,
) -> Path:
    manifest = RunManifest(
        subcommand=subcommand,
        config=cfg.source,
        config_sha256=cfg.sha256,
        seed=cfg.master_seed,
        replicas=replicas,
        workers=workers,
        versions=package_versions(),
        outputs=outputs,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "manifest.json"
    target.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return target


def status_line(label: str, passed: Optional[bool], detail: str = "") -> str:
    """Console line with the usual glyphs: passed, failed, or not judged (None)."""
    glyph = "⚠️ " if passed is None else ("✅" if passed else "❌")
    return f"{glyph} {label}" + (f": {detail}" if detail else "")
