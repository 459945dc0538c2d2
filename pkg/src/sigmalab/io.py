"""Run persistence: atomic files, provenance-tagged CSV, manifests, field files."""
from __future__ import annotations

import csv
import io as _io
import json
import os
import shlex
import sys
import tempfile
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .errors import SigmaLabError

OUTDIR_ENV = "SIGMALAB_OUTDIR"
PROVENANCE = ("seed", "config_digest")


class PersistError(SigmaLabError, OSError):
    """Output could not be written or read."""


def output_dir(explicit: Optional[str] = None, command: str = "run") -> str:
    """``explicit``, else ``$SIGMALAB_OUTDIR/<command>``, else ``./sigmalab_runs/<command>``."""
    if explicit:
        path = explicit
    else:
        base = os.environ.get(OUTDIR_ENV) or os.path.join(os.getcwd(), "sigmalab_runs")
        path = os.path.join(base, command)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise PersistError(f"cannot create output directory {path!r}: {exc}") from None
    return path


def atomic_write(path: str, data, mode: str = "w") -> str:
    """Write to a temp file in the target directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
        try:
            with os.fdopen(fd, "wb" if "b" in mode else "w", **({} if "b" in mode else {"encoding": "utf-8", "newline": ""})) as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise PersistError(f"cannot write {path!r}: {exc}") from None
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def csv_text(rows: Sequence[dict], seed, digest: str, columns: Optional[Sequence[str]] = None) -> str:
    """CSV with ``seed, config_digest`` leading every row; floats use ``repr``."""
    if columns is None:
        columns = []
        for r in rows:
            for key in r:
                if key not in columns and key not in PROVENANCE:
                    columns.append(key)
    header = list(PROVENANCE) + [c for c in columns if c not in PROVENANCE]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        full = {"seed": seed, "config_digest": digest, **{k: v for k, v in r.items() if k not in PROVENANCE}}
        w.writerow([_cell(full.get(c)) for c in header])
    return buf.getvalue()


def write_csv(path: str, rows: Sequence[dict], seed, digest: str, columns=None) -> str:
    return atomic_write(path, csv_text(rows, seed, digest, columns))


def read_csv(path: str) -> list:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise PersistError(f"cannot read {path!r}: {exc}") from None


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(
    path: str,
    *,
    argv: Iterable[str],
    digest: str,
    seed,
    started: str,
    outputs: dict,
    config: Optional[dict] = None,
    status: str = "ok",
    exit_code: int = 0,
) -> str:
    """JSON manifest: command line, digest, seed, version, timestamps, outputs."""
    record = {
        "command_line": shlex.join(list(argv)),
        "config_digest": digest,
        "seed": seed,
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "started": started,
        "finished": now(),
        "status": status,
        "exit_code": exit_code,
        "outputs": outputs,
        "config": config or {},
    }
    return atomic_write(path, json.dumps(record, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def save_fields(path: str, grid, **fields) -> str:
    """``.npz`` of named grid fields with ``kind``, ``n`` and ``res`` metadata."""
    buf = _io.BytesIO()
    meta = {"kind": np.array(grid.kind), "n": np.array(getattr(grid, "n", 0)), "res": np.array(grid.res)}
    np.savez_compressed(buf, **meta, **{k: np.asarray(v) for k, v in fields.items()})
    return atomic_write(path, buf.getvalue(), mode="wb")


def load_fields(path: str) -> dict:
    try:
        with np.load(path) as z:
            out = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise PersistError(f"cannot read {path!r}: {exc}") from None
    out["kind"] = str(out["kind"])
    out["n"] = int(out["n"])
    out["res"] = int(out["res"])
    return out


def field_text(grid, values) -> str:
    """Plain-text field: header lines ``kind``, ``n``, ``res``, ``shape``, then flat values."""
    v = np.asarray(values, dtype=float)
    head = [
        f"# kind = {grid.kind}",
        f"# n = {getattr(grid, 'n', 0)}",
        f"# res = {grid.res}",
        "# shape = " + " ".join(str(s) for s in v.shape),
    ]
    return "\n".join(head + [repr(float(x)) for x in v.ravel()]) + "\n"


def read_field_text(path: str) -> dict:
    meta, vals = {}, []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    key, _, val = line[1:].partition("=")
                    meta[key.strip()] = val.strip()
                elif line:
                    vals.append(float(line))
    except (OSError, ValueError) as exc:
        raise PersistError(f"cannot read {path!r}: {exc}") from None
    shape = tuple(int(s) for s in meta["shape"].split())
    return {"kind": meta["kind"], "n": int(meta["n"]), "res": int(meta["res"]), "values": np.array(vals).reshape(shape)}
