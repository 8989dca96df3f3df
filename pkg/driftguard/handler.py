from typing import Callable, Optional

import numpy as np

from .base import InputFormatError


class ScoreRowHandler:
    """Parses line-buffered `t,score` rows into detector input"""

    def __init__(self, on_score: Callable[[int, float], None]) -> None:
        """"""
        self.on_score: Callable[[int, float], None] = on_score

        self.line_count: int = 0
        self.last_t: Optional[int] = None

    def update_line(self, line: str) -> None:
        """Update one text row"""
        self.line_count += 1

        text: str = line.strip()
        if not text:
            return

        parts: list[str] = [p.strip() for p in text.split(",")]

        # Header is allowed once as the first row
        if parts == ["t", "score"]:
            if self.line_count == 1:
                return
            raise InputFormatError(f"line {self.line_count}: unexpected header")

        if len(parts) != 2:
            raise InputFormatError(f"line {self.line_count}: expected `t,score`, got {text!r}")

        try:
            t: int = int(parts[0])
            score: float = float(parts[1])
        except ValueError:
            raise InputFormatError(f"line {self.line_count}: non-numeric value in {text!r}")

        if not np.isfinite(score):
            raise InputFormatError(f"line {self.line_count}: score must be finite")
        if self.last_t is not None and t <= self.last_t:
            raise InputFormatError(f"line {self.line_count}: t={t} does not increase")

        self.last_t = t
        self.on_score(t, score)
