"""TSV / JSON helpers shared by the result types."""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
import pandas as pd


def clean_json(obj):
    """Convert numpy scalars/arrays to plain Python and non-finite floats to
    ``None`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, np.generic):
        return clean_json(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_tsv(df: pd.DataFrame, path=None, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    df.to_csv(buf, sep="\t", index=False, float_format="%.17g", lineterminator="\n", na_rep="NaN")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
