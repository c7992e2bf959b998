# utils/instrumentation.py
from collections import Counter
from typing import Any, Dict, Optional, Protocol

import numpy as np


class Counters:
    """Named integer counters a model or trainer bumps as it works."""

    def __init__(self):
        self._counts: Counter = Counter()

    def increment(self, name: str, amount: int = 1) -> None:
        self._counts[name] += int(amount)

    def __getitem__(self, name: str) -> int:
        return self._counts[name]

    def reset(self, name: Optional[str] = None) -> None:
        if name is None:
            self._counts.clear()
        else:
            self._counts.pop(name, None)

    def snapshot(self) -> Dict[str, int]:
        return {name: self._counts[name] for name in sorted(self._counts)}


class ForwardObserver(Protocol):
    """Receives the inputs of every projection GEMM and every routing decision."""

    def on_gemm(self, layer: int, name: str, activations: np.ndarray) -> None: ...

    def on_route(self, layer: int, decision: Any) -> None: ...
