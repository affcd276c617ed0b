import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

HOME_ENV = "SEMGRAPH_HOME"


def base_data_dir():
    override = os.environ.get(HOME_ENV, "").strip()
    return Path(override).expanduser() if override else Path.home() / "SemGraphData"


def runs_dir():
    return base_data_dir() / "runs"


def _utc_now():
    return datetime.now(timezone.utc).isoformat()


def create_run_directory(command, run_name=None, out_dir=None):
    if out_dir:
        run_dir = Path(out_dir)
    else:
        run_name = run_name or datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
        run_dir = runs_dir() / command / run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_metadata(run_dir, metadata):
    metadata_path = Path(run_dir) / "metadata.json"

    # Add timestamp if not already provided
    if "timestamp" not in metadata:
        metadata["timestamp"] = _utc_now()

    with open(metadata_path, "w", encoding="utf-8") as f:
        json.dump(metadata, f, indent=4, default=str)

    return metadata_path


def write_run_log(run_dir, message):
    log_path = Path(run_dir) / "run_log.txt"

    with open(log_path, "a", encoding="utf-8") as f:
        f.write(f"[{_utc_now()}] {message}\n")

    return log_path


def run_logger(run_dir, echo=print):
    """Callable that prints a message and appends it to the run log."""
    def log(message):
        if echo:
            echo(message)
        write_run_log(run_dir, message)
    return log


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1024 * 1024), b""):
            h.update(chunk)
    return h.hexdigest()
