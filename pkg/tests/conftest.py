from __future__ import annotations

import sys
from pathlib import Path

from promptreg.gateway import Fixture, Gateway, Role

DATA_DIR = Path(__file__).parent / "data"

sys.path.insert(0, str(Path(__file__).parent))


def scripted_gateway(fixtures: list[dict], transcript_path=None) -> Gateway:
    """Build a gateway over inline fixture dicts."""
    parsed = [
        Fixture(
            role=Role(f["role"]),
            step=f.get("step"),
            match_substring=f.get("match_substring"),
            response=f["response"],
        )
        for f in fixtures
    ]
    return Gateway.scripted(parsed, transcript_path=transcript_path)
