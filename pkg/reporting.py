import json
import logging
import os

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
TRAJECTORY_COLUMNS = ["t", "x", "y", "u", "lambda_x", "lambda_y"]


def trajectory_frame(solution, price=None):
    """Per-node table of a scalar-state, scalar-control solution."""
    frame = pd.DataFrame({
        "t": solution.control.grid.nodes,
        "x": solution.x[:, 0],
        "y": solution.y,
        "u": solution.u[:, 0],
        "lambda_x": solution.costates.column(0),
        "lambda_y": solution.costates.column(solution.costates.dim - 1),
    })
    if price is not None:
        frame["p"] = price
    return frame


def write_frame(frame, out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no NaN/Inf
        return value if np.isfinite(value) else None
    if hasattr(value, "model_dump"):
        return _plain(value.model_dump(mode="json"))
    return value


def write_summary(summary, out_dir, name="summary.json"):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as f:
        json.dump(_plain(summary), f, indent=2)
    logger.info(f"Wrote summary to {path}")
    return path


def frame_records(frame):
    """DataFrame rows as JSON-safe dicts."""
    return _plain(frame.replace({np.nan: None}).to_dict(orient="records"))
