import dataclasses
import json
import math
import os

import numpy as np


class DomainError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, residual_norm=float("nan")):
        super().__init__(message)
        self.residual_norm = residual_norm


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)
        self.line = line


class AssumptionViolation(Exception):
    def __init__(self, report):
        super().__init__("assumption (as-g) is violated: {} crossing(s) of g^2 - 2F".format(len(report.gap_sign_changes)))
        self.report = report


def to_builtin(value):
    """
    Converts reports, numpy scalars and arrays into JSON-ready python objects.
    Non-finite floats are mapped to None.
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        if hasattr(value, "to_dict"):
            return to_builtin(value.to_dict())
        return {field.name: to_builtin(getattr(value, field.name)) for field in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def atomic_write(path, write_fn, mode="w"):
    """
    Writes a file through a temporary sibling then renames it in place, so that
    readers never see a partially written file.

    Parameters
    ----------
    path: str
    write_fn: callable
        Receives the opened temporary file object
    mode: str
    """
    path = str(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    try:
        with open(tmp_path, mode, encoding="utf-8", newline="") as file:
            write_fn(file)
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)


def write_json(path, obj):
    atomic_write(path, lambda file: json.dump(to_builtin(obj), file, indent=2))


def write_frame(path, frame):
    # 17 significant digits round-trip every double
    atomic_write(path, lambda file: frame.to_csv(file, index=False, float_format="%.17g"))
