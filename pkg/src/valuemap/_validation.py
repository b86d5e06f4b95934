"""Input checks shared by the estimators."""

from __future__ import annotations

from typing import Iterable

import pandas as pd

from .errors import DataError


def check_frame(X, required: Iterable[str], name: str = "X") -> pd.DataFrame:
    """Coerce ``X`` to a DataFrame and make sure the required columns exist.

    Accepts a DataFrame, a list of mappings, or a list of dataclass-like
    objects exposing the required attributes.
    """
    required = list(required)
    if isinstance(X, pd.DataFrame):
        frame = X
    else:
        rows = list(X)
        if rows and not isinstance(rows[0], dict):
            rows = [{col: getattr(r, col) for col in required if hasattr(r, col)} | _extra(r)
                    for r in rows]
        frame = pd.DataFrame(rows, columns=None)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{name} is missing columns: {', '.join(missing)}")
    if frame.empty:
        raise DataError(f"{name} has no rows")
    return frame.reset_index(drop=True)


def _extra(obj) -> dict:
    fields = getattr(obj, "__dataclass_fields__", None)
    if fields is None:
        return {}
    return {f: getattr(obj, f) for f in fields}


def check_finite(frame: pd.DataFrame, columns: Iterable[str], name: str = "X") -> None:
    for col in columns:
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = ~values.map(lambda v: v == v and abs(v) != float("inf"))
        if bad.any():
            raise DataError(f"{name}.{col} has {int(bad.sum())} non-finite values")
