"""Bundled data file resolution.

All bundled tables live in the package ``data/`` directory; the environment
variable ``RADBUDGET_DATA_DIR`` points lookups at an alternate directory
(falling back to the bundled copy for files not present there).
"""

import json
import os
from pathlib import Path

_BUNDLED = Path(__file__).parent / "data"


def data_path(name):
    """Resolve a bundled data file name to a path, honoring RADBUDGET_DATA_DIR."""
    override = os.environ.get("RADBUDGET_DATA_DIR")
    if override:
        candidate = Path(override) / name
        if candidate.exists():
            return candidate
    path = _BUNDLED / name
    if not path.exists():
        raise FileNotFoundError(f"no bundled data file named {name!r} in {_BUNDLED}")
    return path


def load_json(name):
    with open(data_path(name)) as f:
        return json.load(f)
