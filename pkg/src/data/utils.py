import json
import math
import os
import tempfile

import numpy as np
import pandas as pd


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f'{type(obj).__name__} is not JSON serializable')


def _finite(obj):
    """inf/nan are written as strings so every output line stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(obj, **kwargs):
    return json.dumps(_finite(obj), default=_default, allow_nan=False, **kwargs)


def write_json_atomic(path, obj):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'w') as f:
            f.write(dumps(obj, indent=2, sort_keys=True))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_json(path):
    with open(path, 'r') as f:
        return json.load(f)


def write_jsonl(path, rows):
    with open(path, 'w') as f:
        for row in rows:
            f.write(dumps(row, sort_keys=True) + '\n')


def read_jsonl(path):
    with open(path, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]


def append_csv(path, rows, columns):
    frame = pd.DataFrame(list(rows), columns=list(columns))
    exists = os.path.exists(path)
    frame.to_csv(path, mode='a' if exists else 'w', header=not exists, index=False)
