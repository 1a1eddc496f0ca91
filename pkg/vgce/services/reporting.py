"""
Output files: JSON reports, CSV tables and the per-run manifest.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
import structlog

from vgce import __version__
from vgce.schemas.config import RunConfig

logger = structlog.get_logger(__name__)


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def write_manifest(
    out_dir: Path,
    command: str,
    config: Optional[RunConfig],
    threads: int,
    wall_time_s: float,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    manifest = {
        "command": command,
        "config": config.echo() if config is not None else None,
        "seed": config.train.seed if config is not None else None,
        "version": __version__,
        "threads": threads,
        "wall_time_s": round(wall_time_s, 6),
    }
    if extra:
        manifest.update(extra)
    path = write_json(Path(out_dir) / "manifest.json", manifest)
    logger.debug("manifest written", path=str(path))
    return path
