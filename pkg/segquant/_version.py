"""Version string stamped into reports, bundles and ``segquant --version``."""

from __future__ import annotations

from functools import lru_cache
from importlib import metadata
from pathlib import Path

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - fallback for older interpreters
    import tomli as tomllib  # type: ignore[no-redef]

DISTRIBUTION = "segquant"
UNKNOWN_VERSION = "0.0.0"
_PYPROJECT = Path(__file__).resolve().parents[1] / "pyproject.toml"


def _source_tree_version() -> str:
    if not _PYPROJECT.exists():
        return UNKNOWN_VERSION
    data = tomllib.loads(_PYPROJECT.read_text(encoding="utf-8"))
    return str(data.get("project", {}).get("version", UNKNOWN_VERSION))


@lru_cache(maxsize=1)
def project_version() -> str:
    """Installed distribution version, else the one in pyproject.toml."""

    try:
        return metadata.version(DISTRIBUTION)
    except metadata.PackageNotFoundError:  # pragma: no cover - source tree execution
        return _source_tree_version()
    except Exception:  # pragma: no cover - unexpected metadata failure
        return UNKNOWN_VERSION
