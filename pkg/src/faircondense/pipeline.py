"""Phase orchestration: condense -> spectral basis -> train -> evaluate.

The ``run_*`` functions work in memory and are what the tests and the
multi-seed evaluation use; the ``cmd_*`` functions add persistence and the
content-hash chaining between phases.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import fairnet, metrics
from .condenser import CondensedGraph, condense
from .config import PipelineConfig
from .errors import ConfigError, FairCondenseError, StaleArtifactError
from .graph_core import Graph, Schema, load_graph, load_split_file, split_graph
from .spectral import SpectralBasis, normalized_laplacian, spectral_basis
from . import store
from .synthetic import make_synthetic, write_dataset

logger = logging.getLogger(__name__)


class PhaseError(FairCondenseError):
    """Wraps a failure with the name of the phase it happened in."""

    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"{phase} failed: {cause}")
        self.phase = phase
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass
class RunManifest:
    config: dict
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {"config": self.config, "artifacts": self.artifacts, "timings": self.timings,
                "tool_version": self.tool_version}


def _phase(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PhaseError:
        raise
    except FairCondenseError as exc:
        raise PhaseError(name, exc) from exc


# ---------------------------------------------------------------------------
# in-memory phases
# ---------------------------------------------------------------------------


def load_dataset(cfg: PipelineConfig) -> Graph:
    d = cfg.data
    if not d.nodes or not d.edges:
        raise ConfigError("data.nodes and data.edges must be set")
    schema = Schema(d.id_column, d.label_column, d.sensitive_column)
    g = load_graph(d.nodes, d.edges, schema)
    if d.splits:
        return load_split_file(g, d.splits)
    return split_graph(g, d.split_fractions, cfg.seed)


def run_condense(g: Graph, cfg: PipelineConfig, seed: int | None = None) -> CondensedGraph:
    seed = cfg.seed if seed is None else seed
    cg = condense(g, cfg.condense, seed)
    cg.metadata["content_hash"] = store.condensed_hash(cg)
    return cg


def run_basis(cg: CondensedGraph, cfg: PipelineConfig, cache=None) -> SpectralBasis:
    """Laplacian eigenbasis of the condensed graph, read from / written to the
    cache directory when ``cache`` is given."""
    k = min(cfg.spectral.num_components, cg.num_syn)
    digest = cg.metadata.get("content_hash") or store.condensed_hash(cg)
    if cache is not None:
        hit = store.load_basis(digest, k, cfg.spectral.which, cache)
        if hit is not None:
            return hit
    basis = spectral_basis(normalized_laplacian(cg.dense_adjacency()), k, cfg.spectral.which)
    basis.source_hash = digest
    if cache is not None:
        store.save_basis(basis, digest, cache)
    return basis


def _val_triple(g: Graph, cg: CondensedGraph, nodes):
    return cg.normalize(g.features[nodes]), g.labels[nodes], g.sensitive[nodes]


def run_train(g: Graph, cg: CondensedGraph, basis: SpectralBasis | None, cfg: PipelineConfig,
              seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    params = fairnet.init_params(cg.features.shape[1], cg.num_classes, cfg.train, cfg.spectral, seed + 3)
    val = _val_triple(g, cg, g.val) if g.val.size else None
    use_basis = basis if params.use_spectral else None
    return fairnet.train(cg, use_basis, params, cfg.train, seed=seed, val=val,
                         positive_class=cfg.evaluate.positive_class,
                         group_partition=cfg.group_partition(),
                         frozen_spectral=cfg.spectral.frozen)


def evaluate_params(g: Graph, params, mu, sigma, cfg: PipelineConfig, nodes=None, label="model"):
    nodes = g.test if nodes is None else nodes
    if len(nodes) == 0:
        raise ConfigError("evaluation split is empty")
    x = (g.features[nodes] - np.asarray(mu)) / (np.asarray(sigma) + 1e-8)
    pred = fairnet.predict(x, params).argmax(axis=1)
    return metrics.evaluate_predictions(pred, g.labels[nodes], g.sensitive[nodes], g.num_classes,
                                        g.num_groups, cfg.evaluate.positive_class,
                                        cfg.group_partition(), label)


def run_pipeline(g: Graph, cfg: PipelineConfig, seed: int | None = None, label: str = "model",
                 cache=None) -> dict:
    """Condense, train and evaluate once; returns the intermediate objects too."""
    seed = cfg.seed if seed is None else seed
    cg = run_condense(g, cfg, seed)
    basis = run_basis(cg, cfg, cache) if not cfg.train.disable_fairness else None
    params, log = run_train(g, cg, basis, cfg, seed)
    report = evaluate_params(g, params, cg.metadata["feature_mu"], cg.metadata["feature_sigma"], cfg,
                             label=label)
    return {"condensed": cg, "basis": basis, "params": params, "log": log, "report": report}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_condense(cfg: PipelineConfig, out_dir) -> dict:
    cfg.validate()
    timings = {}
    t0 = time.perf_counter()
    g = _phase("load", load_dataset, cfg)
    timings["load"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    cg = _phase("condense", run_condense, g, cfg)
    timings["condense"] = time.perf_counter() - t0
    manifest = store.save_condensed(cg, out_dir)
    run = RunManifest(cfg.to_dict(), {"condensed": manifest["content_hash"], **{
        f"condensed/{k}": v for k, v in manifest["files"].items()}}, timings)
    store.atomic_write(Path(out_dir) / "run.json", store.dumps(run.to_dict()))
    audit = metrics.audit_condensation(g, cg)
    return {"manifest": manifest, "audit": audit, "run": run}


def cmd_train(cfg: PipelineConfig, condensed_dir, out_dir, cache=None) -> dict:
    cfg.validate()
    timings = {}
    cg = _phase("load", store.load_condensed, condensed_dir)
    g = _phase("load", load_dataset, cfg)
    if cg.metadata.get("source_num_nodes") not in (None, g.num_nodes):
        raise PhaseError("load", StaleArtifactError("condensed graph was built from a different dataset"))
    t0 = time.perf_counter()
    basis = None
    if not cfg.train.disable_fairness:
        basis = _phase("spectral", run_basis, cg, cfg, store.cache_dir(cache))
    timings["spectral"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    params, log = _phase("train", run_train, g, cg, basis, cfg)
    timings["train"] = time.perf_counter() - t0
    extra = {
        "seed": cfg.seed,
        "condensed_hash": cg.metadata["content_hash"],
        "feature_mu": cg.metadata["feature_mu"],
        "feature_sigma": cg.metadata["feature_sigma"],
        "train_config": cfg.to_dict()["train"],
        "spectral_config": cfg.to_dict()["spectral"],
    }
    manifest = store.save_checkpoint(params, log, out_dir, extra)
    run = RunManifest(cfg.to_dict(), {"condensed": cg.metadata["content_hash"],
                                      "checkpoint": manifest["content_hash"]}, timings)
    store.atomic_write(Path(out_dir) / "run.json", store.dumps(run.to_dict()))
    return {"manifest": manifest, "log": log, "run": run, "basis": basis}


def cmd_evaluate(cfg: PipelineConfig, checkpoint_dir, condensed_dir=None) -> metrics.FairnessReport:
    cfg.validate()
    params, log, manifest = _phase("load", store.load_checkpoint, checkpoint_dir)
    if condensed_dir is not None:
        cg_manifest = store.read_manifest(condensed_dir)
        if cg_manifest["content_hash"] != manifest["condensed_hash"]:
            raise PhaseError("load", StaleArtifactError(
                f"{checkpoint_dir} was trained on a different condensed graph than {condensed_dir}"))
    g = _phase("load", load_dataset, cfg)
    report = _phase("evaluate", evaluate_params, g, params, manifest["feature_mu"],
                    manifest["feature_sigma"], cfg, label="checkpoint")
    if cfg.evaluate.seeds <= 1:
        return report
    reports = [report]
    for i in range(1, cfg.evaluate.seeds):
        out = _phase("evaluate", run_pipeline, g, cfg, cfg.seed + i)
        reports.append(out["report"])
    return metrics.aggregate(reports, label=f"mean over {len(reports)} seeds")


def cmd_audit(cfg: PipelineConfig, condensed_dir) -> dict:
    cfg.validate()
    cg = _phase("load", store.load_condensed, condensed_dir)
    g = _phase("load", load_dataset, cfg)
    return metrics.audit_condensation(g, cg)


def cmd_make_synthetic(n: int, gamma: float, homophily: float, seed: int, out_dir, **kwargs) -> dict:
    g = make_synthetic(n, gamma, homophily, seed, **kwargs)
    paths = write_dataset(g, out_dir)
    meta = {"generator": g.metadata["generator"],
            "files": {Path(p).name: store.sha256_file(p) for p in paths.values()}}
    store.atomic_write(Path(out_dir) / "dataset.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths
