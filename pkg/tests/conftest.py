from __future__ import annotations

import json
from datetime import date
from pathlib import Path

import pytest

from wildharvest.types import DatasetEntry

REPO = Path(__file__).resolve().parents[1]
CORPUS = REPO / "fixtures" / "corpus-v1"
SHIPPED_CONFIG = REPO / "configs" / "fixture.json"
TABLE_REGISTRY = REPO / "fixtures" / "recent_generators_registry.json"


def _deep_update(node: dict, tweaks: dict):
    for key, value in tweaks.items():
        if isinstance(value, dict) and isinstance(node.get(key), dict):
            _deep_update(node[key], value)
        else:
            node[key] = value


def write_config(out_dir: Path, **tweaks) -> Path:
    """The shipped fixture config, retargeted at a scratch directory."""
    raw = json.loads(SHIPPED_CONFIG.read_text())
    raw["paths"] = {
        "store": str(out_dir / "store"),
        "manifests": str(out_dir / "manifests"),
        "corpus": str(CORPUS),
        "registry": str(CORPUS / "registry" / "generators.json"),
    }
    raw["adapters"]["articles"]["endpoint"] = str(CORPUS)
    for adapter in raw["adapters"]["real_pool"]:
        adapter["endpoint"] = str(CORPUS)
    raw["backends"]["extractor"]["endpoint"] = "mock:" + str(
        CORPUS / "extraction" / "responses.json"
    )
    _deep_update(raw, tweaks)
    path = out_dir / "config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(raw, indent=1))
    return path


@pytest.fixture()
def fixture_config(tmp_path):
    def make(**tweaks) -> Path:
        return write_config(tmp_path, **tweaks)

    return make


@pytest.fixture(scope="session")
def pipeline_outputs(tmp_path_factory) -> Path:
    """One shared full pipeline run over the fixture corpus."""
    from wildharvest.pipeline import STAGE_ORDER, RunConfig, run_pipeline

    out_dir = tmp_path_factory.mktemp("shared-run")
    config = RunConfig.from_file(write_config(out_dir))
    run_pipeline(config, list(STAGE_ORDER))
    return out_dir / "manifests"


def entry(
    image_id: str,
    label: int = 1,
    origin: str = "itw",
    event_date: date = date(2025, 2, 1),
    round_introduced: int = 1,
    **kw,
) -> DatasetEntry:
    if origin == "gen":
        kw.setdefault("generator_name", "gen-x")
    return DatasetEntry(
        image_id=image_id,
        label=label,
        origin=origin,
        event_date=event_date,
        round_introduced=round_introduced,
        **kw,
    )
