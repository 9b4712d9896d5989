"""
Append-only JSONL activity log shared by every command.

Each line is one event:
    {"timestamp", "event_type", "status", "message", "metadata"}
Search workers write through one module-level lock, so lines from concurrent
rounds never interleave. Activity logs are diagnostic only and are never
read back when resuming a run.
"""
import json
import threading
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

STATUSES = ("SUCCESS", "FAILURE", "INFO")

log_lock = threading.Lock()


def _jsonable(value: Any) -> Any:
    """json.dumps fallback for numpy values, enums, paths and sets found in metadata."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (set, frozenset)):
        return sorted(v.value if isinstance(v, Enum) else v for v in value)
    return str(value)


def log_activity(
    log_file_path: Optional[Path],
    event_type: str,
    status: str,
    message: str,
    metadata: Optional[Dict[str, Any]] = None,
):
    """
    Appends one event to the activity log.

    Args:
        log_file_path: Path to the activity.jsonl file. None disables logging.
        event_type: Upper-snake category, e.g. "EVOLUTION_ROUND" or "TRAIN_DIVERGED".
        status: One of "SUCCESS", "FAILURE", "INFO".
        message: Human-readable description of the event.
        metadata: Extra context such as round, child_id or fitness.
    """
    if log_file_path is None:
        return
    if status not in STATUSES:
        raise ValueError(f"Unknown log status: {status}. Choose one of {STATUSES}.")

    line = json.dumps(
        {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "event_type": event_type,
            "status": status,
            "message": message,
            "metadata": metadata or {},
        },
        default=_jsonable,
    )
    with log_lock:
        try:
            with open(log_file_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        except OSError as e:
            print(f"Error: Could not write to log file {log_file_path}. Reason: {e}")


def read_activity(log_file_path: Path, event_type: Optional[str] = None) -> List[Dict[str, Any]]:
    """Events in file order, optionally only those of one type. An unparseable last line is skipped."""
    with open(log_file_path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    events = []
    for number, text in enumerate(lines, start=1):
        try:
            event = json.loads(text)
        except json.JSONDecodeError:
            if number == len(lines):
                break
            raise
        if event_type is None or event["event_type"] == event_type:
            events.append(event)
    return events
