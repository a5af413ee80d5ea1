"""Atomic file output and float formatting shared by the writers."""

import csv
import io
import os
import tempfile


def fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def atomic_write(path, payload):
    """Write bytes via a temp file in the same directory and rename over ``path``."""
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_bytes(header, rows):
    """CSV text for a list of dict rows; floats keep 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(row[h]) for h in header])
    return buf.getvalue().encode("utf-8")
