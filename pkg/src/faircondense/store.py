"""On-disk artifacts: condensed graphs, cached spectral bases, checkpoints and
train logs. Every artifact directory has a ``manifest.json`` listing the
SHA-256 of each data file; loaders verify those hashes before parsing.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .condenser import CondensedGraph
from .errors import IntegrityError, StaleArtifactError
from .fairnet import FairNetParams, TrainLog
from .spectral import SpectralBasis

CACHE_ENV = "FAIRCONDENSE_CACHE_DIR"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


@contextlib.contextmanager
def staged_dir(final):
    """Yield a scratch directory that replaces ``final`` only on success."""
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=final.parent, prefix=f".{final.name}."))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def format_matrix(m: np.ndarray, header=None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(",".join(header) + "\n")
    for row in np.atleast_2d(m):
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def parse_matrix(path, skip_header: bool = False) -> np.ndarray:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if skip_header:
            lines = lines[1:]
        rows = [[float(v) for v in line.split(",")] for line in lines if line]
        return np.array(rows, dtype=float)
    except (ValueError, OSError) as exc:
        raise IntegrityError(f"{path}: cannot parse matrix ({exc})") from None


def _write_files(directory: Path, files: dict) -> dict:
    hashes = {}
    for name, text in files.items():
        data = text.encode("utf-8")
        atomic_write(directory / name, data)
        hashes[name] = sha256_bytes(data)
    return hashes


def content_hash(hashes: dict) -> str:
    return sha256_bytes("".join(f"{k}:{hashes[k]}\n" for k in sorted(hashes)).encode())


def verify(directory, manifest: dict) -> None:
    directory = Path(directory)
    for name, want in manifest["files"].items():
        path = directory / name
        if not path.exists():
            raise IntegrityError(f"{path}: missing artifact file")
        if sha256_file(path) != want:
            raise IntegrityError(f"{path}: content hash does not match manifest")


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IntegrityError(f"{path}: missing manifest") from None
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: malformed manifest ({exc})") from None


# ---------------------------------------------------------------------------
# condensed graph
# ---------------------------------------------------------------------------


def condensed_files(cg: CondensedGraph) -> dict:
    adj = cg.adjacency
    if sp.issparse(adj):
        coo = sp.triu(adj, k=1).tocoo()
        triples = sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
    else:
        u, v = np.nonzero(np.triu(adj, k=1))
        triples = list(zip(u.tolist(), v.tolist(), adj[u, v].tolist()))
    edges = "".join(f"{a} {b} {w!r}\n" for a, b, w in triples)
    attrs = "id,label,sensitive\n" + "".join(
        f"{i},{int(y)},{int(s)}\n" for i, (y, s) in enumerate(zip(cg.labels, cg.sensitive)))
    d = cg.features.shape[1]
    return {
        "features.csv": format_matrix(cg.features, [f"x{j}" for j in range(d)]),
        "attributes.csv": attrs,
        "edges.txt": edges,
    }


def condensed_hash(cg: CondensedGraph) -> str:
    files = condensed_files(cg)
    return content_hash({k: sha256_bytes(v.encode()) for k, v in files.items()})


def save_condensed(cg: CondensedGraph, out_dir) -> dict:
    files = condensed_files(cg)
    with staged_dir(out_dir) as tmp:
        hashes = _write_files(tmp, files)
        digest = content_hash(hashes)
        cg.metadata["content_hash"] = digest
        manifest = {
            "kind": "condensed_graph",
            "num_syn": cg.num_syn,
            "num_features": int(cg.features.shape[1]),
            "num_classes": cg.num_classes,
            "num_groups": cg.num_groups,
            "sparse_adjacency": bool(sp.issparse(cg.adjacency)),
            "metadata": cg.metadata,
            "files": hashes,
            "content_hash": digest,
        }
        atomic_write(tmp / "manifest.json", dumps(manifest))
    return manifest


def load_condensed(directory) -> CondensedGraph:
    directory = Path(directory)
    manifest = read_manifest(directory)
    verify(directory, manifest)
    x = parse_matrix(directory / "features.csv", skip_header=True).reshape(manifest["num_syn"], -1)
    attrs = parse_matrix(directory / "attributes.csv", skip_header=True)
    n = manifest["num_syn"]
    triples = []
    with (directory / "edges.txt").open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                a, b, w = line.split()
                triples.append((int(a), int(b), float(w)))
    if manifest["sparse_adjacency"]:
        r = [t[0] for t in triples] + [t[1] for t in triples]
        c = [t[1] for t in triples] + [t[0] for t in triples]
        w = [t[2] for t in triples] * 2
        adj = sp.csr_matrix((w, (r, c)), shape=(n, n))
        adj.sort_indices()
    else:
        adj = np.zeros((n, n))
        for a, b, w in triples:
            adj[a, b] = adj[b, a] = w
    meta = dict(manifest["metadata"])
    meta["content_hash"] = manifest["content_hash"]
    return CondensedGraph(x, attrs[:, 1].astype(np.int64), attrs[:, 2].astype(np.int64), adj,
                          manifest["num_classes"], manifest["num_groups"], meta)


# ---------------------------------------------------------------------------
# spectral basis cache
# ---------------------------------------------------------------------------


def cache_dir(override=None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "faircondense"


def basis_key(graph_hash: str, k: int, which: str) -> str:
    return f"{graph_hash[:32]}-k{k}-{which}"


def save_basis(basis: SpectralBasis, graph_hash: str, root) -> Path:
    target = Path(root) / "spectral" / basis_key(graph_hash, basis.k, basis.which)
    files = {
        "eigenvalues.csv": format_matrix(basis.eigenvalues[:, None]),
        "eigenvectors.csv": format_matrix(basis.eigenvectors),
    }
    with staged_dir(target) as tmp:
        hashes = _write_files(tmp, files)
        atomic_write(tmp / "manifest.json", dumps({
            "kind": "spectral_basis", "graph_hash": graph_hash, "k": basis.k, "which": basis.which,
            "laplacian_residual": basis.laplacian_residual, "files": hashes,
        }))
    return target


def load_basis(graph_hash: str, k: int, which: str, root) -> SpectralBasis | None:
    target = Path(root) / "spectral" / basis_key(graph_hash, k, which)
    if not (target / "manifest.json").exists():
        return None
    manifest = read_manifest(target)
    if manifest.get("graph_hash") != graph_hash:
        raise StaleArtifactError(f"{target}: cached basis belongs to another graph")
    verify(target, manifest)
    evals = parse_matrix(target / "eigenvalues.csv").reshape(-1)
    evecs = parse_matrix(target / "eigenvectors.csv").reshape(-1, k)
    basis = SpectralBasis(evals, evecs, float(manifest["laplacian_residual"]), which)
    basis.source_hash = graph_hash
    return basis


# ---------------------------------------------------------------------------
# checkpoints and logs
# ---------------------------------------------------------------------------


def trainlog_csv(log: TrainLog) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TrainLog.COLUMNS)
    for r in log.records:
        writer.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                         for c in TrainLog.COLUMNS])
    return buf.getvalue()


def read_trainlog(path) -> TrainLog:
    log = TrainLog()
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {"epoch": int(row["epoch"]), "phase": row["phase"]}
            for c in ("loss", "lr", "acc", "delta_sp", "delta_eo"):
                rec[c] = float(row[c]) if row[c] != "" else None
            log.records.append(rec)
    return log


def save_checkpoint(params: FairNetParams, log: TrainLog, out_dir, extra: dict) -> dict:
    files = {f"weights/{k}.csv": format_matrix(np.atleast_2d(v)) for k, v in sorted(params.weights.items())}
    files.update({f"buffers/{k}.csv": format_matrix(np.atleast_2d(v)) for k, v in sorted(params.buffers.items())})
    files["trainlog.csv"] = trainlog_csv(log)
    shapes = {k: list(v.shape) for k, v in params.weights.items()}
    shapes.update({f"buffer:{k}": list(v.shape) for k, v in params.buffers.items()})
    with staged_dir(out_dir) as tmp:
        hashes = _write_files(tmp, files)
        manifest = {
            "kind": "checkpoint",
            "hyperparameters": params.hyperparameters(),
            "shapes": shapes,
            "selected_epoch": log.selected_epoch,
            "selection_rule": log.selection_rule,
            "files": hashes,
            "content_hash": content_hash(hashes),
            **extra,
        }
        atomic_write(tmp / "manifest.json", dumps(manifest))
    return manifest


def load_checkpoint(directory):
    directory = Path(directory)
    manifest = read_manifest(directory)
    verify(directory, manifest)
    shapes = manifest["shapes"]
    weights, buffers = {}, {}
    for name, shape in shapes.items():
        if name.startswith("buffer:"):
            key = name.split(":", 1)[1]
            buffers[key] = parse_matrix(directory / "buffers" / f"{key}.csv").reshape(shape)
        else:
            weights[name] = parse_matrix(directory / "weights" / f"{name}.csv").reshape(shape)
    params = FairNetParams(weights, buffers, **manifest["hyperparameters"])
    log = read_trainlog(directory / "trainlog.csv")
    log.selected_epoch = manifest["selected_epoch"]
    log.selection_rule = manifest["selection_rule"]
    return params, log, manifest
