import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

DEMO_DIR = Path(__file__).parent.parent / "fixtures" / "demo"


@pytest.fixture()
def demo_dir(tmp_path):
    """Private copy of the demo fixtures so tests never dirty the repo."""
    target = tmp_path / "demo"
    shutil.copytree(DEMO_DIR, target)
    # drop any embedding sidecar a demo run may have left behind
    for sidecar in target.glob("*.emb.jsonl"):
        sidecar.unlink()
    return target


@pytest.fixture()
def demo_config_path(demo_dir):
    return demo_dir / "config.json"
