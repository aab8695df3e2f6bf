"""Experiment runner: model x truncation sweeps, cross-validation, traces.

Outputs are plain CSV/UTF-8: one trace file per fold (iteration, cumulative
wall-clock seconds, active atoms, single-sample TDLL) plus a summary table.
Reruns with the same config and seed are byte-identical except for the
wall-clock column.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from . import collapsed as cg
from . import truncated as tr
from .data import (
    HoldoutSplit,
    SparseBinaryMatrix,
    SyntheticSpec,
    five_block_layout,
    load_edge_list,
    make_cv_folds,
    make_synthetic_blocks,
    Block,
)
from .evaluate import EvalReport, PredictiveEnsemble, ensemble_scores, pr_auc, tdll
from .rng import RngHandle

MODELS = ("epm", "cepm", "depm", "idepm")


@dataclass
class ExperimentConfig:
    model: str
    dataset: str = ""
    synthetic: str = ""
    T: int = 128
    iterations: int = 600
    retain: int = 100
    folds: int = 10
    seed: int = 0
    e0: float = 0.01
    f0: float = 0.01
    C1: float = 0.0  # 0 means "use I"
    C2: float = 0.0  # 0 means "use J"
    out: str = "epm-out"
    jobs: int = 1
    tdll_mode: str = "mean-prob"

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.retain > self.iterations:
            raise ValueError("retain must not exceed iterations")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if not self.dataset and not self.synthetic:
            raise ValueError("either a dataset path or a synthetic spec is required")
        if self.tdll_mode not in ("mean-prob", "mean-log"):
            raise ValueError(f"unknown tdll mode {self.tdll_mode!r}")
        return self


_FIELD_TYPES = {f: t for f, t in [
    ("model", str), ("dataset", str), ("synthetic", str), ("T", int),
    ("iterations", int), ("retain", int), ("folds", int), ("seed", int),
    ("e0", float), ("f0", float), ("C1", float), ("C2", float),
    ("out", str), ("jobs", int), ("tdll_mode", str)]}


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = [f"{k}={asdict(cfg)[k]}" for k in _FIELD_TYPES]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _FIELD_TYPES[key](val.strip())
    return ExperimentConfig(**values)


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    """Parse 'rows=90,cols=90,blocks=5,on=0.8,noise=0.0,seed=0' into a layout."""
    fields = {"rows": 90, "cols": 90, "blocks": 5, "on": 1.0, "noise": 0.0,
              "seed": 0}
    if text:
        for part in text.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ValueError(f"bad synthetic field {part!r}")
            key, val = part.split("=", 1)
            key = key.strip()
            if key not in fields:
                raise ValueError(f"unknown synthetic field {key!r}")
            fields[key] = type(fields[key])(val)
    return block_layout(fields["rows"], fields["cols"], fields["blocks"],
                        on_prob=fields["on"], noise=fields["noise"],
                        seed=fields["seed"])


def block_layout(n_rows: int, n_cols: int, n_blocks: int, on_prob: float = 1.0,
                 noise: float = 0.0, seed: int = 0) -> SyntheticSpec:
    """Overlapping diagonal blocks, generalizing the five-block layout."""
    if n_blocks == 0:
        return SyntheticSpec(n_rows, n_cols, (), noise=noise, seed=seed)
    if n_blocks == 5:
        return five_block_layout(n_rows, n_cols, seed=seed, noise=noise,
                                 on_prob=on_prob)
    rstep = max(n_rows // (n_blocks + 1), 1)
    cstep = max(n_cols // (n_blocks + 1), 1)
    blocks = tuple(
        Block(min(k * rstep, n_rows - 1), min(k * rstep + 2 * rstep, n_rows),
              min(k * cstep, n_cols - 1), min(k * cstep + 2 * cstep, n_cols),
              on_prob=on_prob)
        for k in range(n_blocks))
    return SyntheticSpec(n_rows, n_cols, blocks, noise=noise, seed=seed)


def load_dataset(cfg: ExperimentConfig):
    if cfg.dataset:
        return load_edge_list(cfg.dataset)
    spec = parse_synthetic_spec(cfg.synthetic)
    matrix, _ = make_synthetic_blocks(spec)
    return matrix


def _fold_rng(seed: int, fold: int) -> RngHandle:
    # fold -1 keys the CV split itself; folds 0.. key the chains
    return RngHandle(_seq=np.random.SeedSequence(seed, spawn_key=(fold + 1,)))


def run_chain(model: str, T: int, train_view: SparseBinaryMatrix,
              test_entries, iterations: int, retain: int, rng: RngHandle,
              e0: float = 0.01, f0: float = 0.01, C1: float = None,
              C2: float = None, tdll_mode: str = "mean-prob"):
    """Run one chain; returns (EvalReport with traces, PredictiveEnsemble | None)."""
    entries = [(i, j) for (i, j, _) in test_entries]
    labels = np.array([v for (_, _, v) in test_entries], dtype=float)
    split = HoldoutSplit(train_view, tuple(test_entries))
    if model == "idepm":
        hypers = cg.initial_idepm_hypers(rng, e0, f0)
        state = cg.init_collapsed_state(train_view, hypers, rng)
    else:
        hypers = tr.initial_hypers(
            model, rng, e0, f0,
            C1=float(C1 if C1 else train_view.n_rows),
            C2=float(C2 if C2 else train_view.n_cols))
        state = tr.init_state(train_view, T, hypers, rng)

    iters = np.arange(1, iterations + 1)
    elapsed = np.zeros(iterations)
    k_trace = np.zeros(iterations, dtype=np.int64)
    ll_trace = np.full(iterations, np.nan)
    kept_probs = []
    kept_k = []
    t0 = time.perf_counter()
    for it in range(iterations):
        if model == "idepm":
            cg.collapsed_sweep(state, train_view)
            cg.instantiate_parameters(state)  # fresh draw given current counts
            k = state.K
            probs = cg.link_probabilities(state, entries) if entries else None
        else:
            tr.gibbs_sweep(state, train_view)
            k = tr.count_active_atoms(state)
            probs = tr.link_probabilities(state, entries) if entries else None
        elapsed[it] = time.perf_counter() - t0
        k_trace[it] = k
        if probs is not None:
            ll_trace[it] = tdll(PredictiveEnsemble(probs[None, :]), split,
                                aggregate=tdll_mode)
        if it >= iterations - retain:
            kept_k.append(k)
            if probs is not None:
                kept_probs.append(probs)

    if kept_probs:
        ens = PredictiveEnsemble(np.vstack(kept_probs))
        final_tdll = tdll(ens, split, aggregate=tdll_mode)
        auc = pr_auc(ensemble_scores(ens), labels) if np.any(labels == 1) else np.nan
    else:
        ens = None
        final_tdll = np.nan
        auc = np.nan
    report = EvalReport(
        k_mean=float(np.mean(kept_k)), tdll=final_tdll, tdauc_pr=auc,
        iterations=iters, elapsed_s=elapsed, k_trace=k_trace,
        tdll_trace=ll_trace)
    return report, ens


def _run_fold(args):
    cfg_text, fold_idx, split = args
    cfg = config_from_text(cfg_text)
    rng = _fold_rng(cfg.seed, fold_idx)
    report, _ = run_chain(
        cfg.model, cfg.T, split.train_view, split.test_entries,
        cfg.iterations, cfg.retain, rng, e0=cfg.e0, f0=cfg.f0,
        C1=cfg.C1 or None, C2=cfg.C2 or None, tdll_mode=cfg.tdll_mode)
    return fold_idx, report


def _write_trace_csv(path, report: EvalReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "elapsed_s", "K", "tdll"])
        for it, el, k, ll in report.trace_rows():
            writer.writerow([it, repr(el), k, repr(ll)])


def _write_summary_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "k_mean", "tdll", "tdauc_pr"])
        for idx, rep in enumerate(reports):
            writer.writerow([idx, repr(rep.k_mean), repr(rep.tdll),
                             repr(rep.tdauc_pr)])
        writer.writerow([
            "mean",
            repr(float(np.mean([r.k_mean for r in reports]))),
            repr(float(np.mean([r.tdll for r in reports]))),
            repr(float(np.mean([r.tdauc_pr for r in reports]))),
        ])


def run_experiment(cfg: ExperimentConfig):
    """Full protocol: CV folds, one chain each, traces + summary CSVs on disk."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(cfg), encoding="utf-8")
    matrix = load_dataset(cfg)
    folds = make_cv_folds(matrix, cfg.folds, _fold_rng(cfg.seed, -1))
    cfg_text = config_to_text(cfg)
    jobs = [(cfg_text, idx, split) for idx, split in enumerate(folds)]
    reports = [None] * len(folds)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for fold_idx, report in pool.map(_run_fold, jobs):
                reports[fold_idx] = report
    else:
        for job in jobs:
            fold_idx, report = _run_fold(job)
            reports[fold_idx] = report
    for idx, report in enumerate(reports):
        _write_trace_csv(out / f"fold{idx:02d}_trace.csv", report)
    _write_summary_csv(out / "summary.csv", reports)
    return reports


def time_to_converge(elapsed, tdll_trace, tol: float = 0.01,
                     window: int = 20) -> float:
    """Wall-clock seconds until the smoothed TDLL stays within `tol` of final.

    The trace is smoothed with a trailing `window`-iteration mean; "final" is
    the smoothed value at the last iteration.
    """
    x = np.asarray(tdll_trace, dtype=float)
    smooth = np.array([x[max(0, t - window + 1):t + 1].mean()
                       for t in range(x.size)])
    final = smooth[-1]
    ok = smooth >= final - tol
    # first index from which the trace never drops back out
    stays = np.flatnonzero(~ok)
    start = 0 if stays.size == 0 else stays[-1] + 1
    return float(np.asarray(elapsed)[start])
