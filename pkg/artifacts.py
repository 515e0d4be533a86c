#!/usr/bin/env python3
"""
Artifact writer for scenario runs.

CSV bodies are deterministic for a given scenario and master seed: fixed
column order, '%.12g' floats, '\\n' line endings. The only timestamp lives in
manifest.json, which lists every produced file with its checksum and the
scenario hash. A FAILED marker records the error of an aborted run next to
whatever was flushed before it.
"""
import hashlib
import json
import logging
import threading
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12g'
MANIFEST_NAME = 'manifest.json'
FAILED_MARKER = 'FAILED'


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


class ArtifactWriter:
    """Serializes writes per file; safe to share between threads of one process."""

    def __init__(self, output_dir, scenario_name: str, scenario_hash: str):
        self.output_dir = Path(output_dir)
        self.scenario_name = scenario_name
        self.scenario_hash = scenario_hash
        self._locks: Dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._registry_lock = threading.Lock()
        self._files: Dict[str, int] = {}

        self.output_dir.mkdir(parents=True, exist_ok=True)
        stale = self.output_dir / FAILED_MARKER
        if stale.exists():
            stale.unlink()

    def _lock_for(self, name: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks[name]

    def _register(self, name: str, rows: int):
        with self._registry_lock:
            self._files[name] = self._files.get(name, 0) + rows

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        """Write (or replace) a CSV file."""
        path = self.output_dir / name
        with self._lock_for(name):
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
            with self._registry_lock:
                self._files[name] = len(frame)
        logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    def append_frame(self, name: str, frame: pd.DataFrame) -> Path:
        """Append rows to a CSV file, writing the header on first use."""
        path = self.output_dir / name
        with self._lock_for(name):
            first = name not in self._files
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, mode='w' if first else 'a', header=first, index=False,
                         float_format=FLOAT_FORMAT, lineterminator='\n')
            self._register(name, len(frame))
        logger.debug(f"Flushed {len(frame)} rows to {path}")
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.output_dir / name
        with self._lock_for(name):
            path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + '\n', encoding='utf-8')
            with self._registry_lock:
                self._files[name] = len(payload) if isinstance(payload, list) else 0
        return path

    @property
    def files(self) -> List[str]:
        with self._registry_lock:
            return sorted(self._files)

    def write_manifest(self, status: str = 'complete', extra: Optional[Dict] = None) -> Path:
        entries = []
        for name in self.files:
            path = self.output_dir / name
            if path.exists():
                entries.append({'path': name, 'sha256': sha256_file(path), 'rows': self._files[name]})
        manifest = {
            'scenario': self.scenario_name,
            'scenario_sha256': self.scenario_hash,
            'status': status,
            'created_at': datetime.now(timezone.utc).isoformat(),
            'files': entries,
        }
        if extra:
            manifest.update(extra)
        path = self.output_dir / MANIFEST_NAME
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        logger.info(f"Manifest lists {len(entries)} files in {self.output_dir}")
        return path

    def mark_failed(self, error: BaseException) -> Path:
        path = self.output_dir / FAILED_MARKER
        path.write_text(f"{type(error).__name__}: {error}\n", encoding='utf-8')
        self.write_manifest(status='failed')
        logger.error(f"Scenario '{self.scenario_name}' failed; partial results kept in {self.output_dir}")
        return path
