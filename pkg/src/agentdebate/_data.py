from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any


@lru_cache(maxsize=None)
def load(name: str) -> Any:
    text = resources.files("agentdebate").joinpath("data", name).read_text(encoding="utf-8")
    return json.loads(text)
