"""Versioned text checkpoints for sampler states.

Format: one JSON document (UTF-8). Floats round-trip exactly through Python's
json (shortest-repr doubles). Sparse counts are stored as the edge coordinate
lists plus the per-edge atom-count matrix; collapsed states add a dynamic-K
section (atom ids, instantiated parameters when present).
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .collapsed import CollapsedState, IdepmHypers
from .data import SparseBinaryMatrix
from .rng import RngHandle
from .truncated import Hyperparameters, LatentCounts, TruncatedState

FORMAT = "epm-checkpoint"
VERSION = 1


def _hypers_dict(h):
    return {k: v for k, v in asdict(h).items() if v is not None}


def save_state(state, target) -> None:
    """Serialize a truncated or collapsed state to a JSON checkpoint."""
    if isinstance(state, TruncatedState):
        doc = {
            "format": FORMAT,
            "version": VERSION,
            "kind": "truncated",
            "variant": state.variant,
            "n_rows": state.n_rows,
            "n_cols": state.n_cols,
            "T": state.T,
            "hypers": _hypers_dict(state.hypers),
            "lambda": state.lam.tolist(),
            "factors": ({"phi": state.phi.tolist(), "psi": state.psi.tolist()}
                        if state.variant == "depm"
                        else {"U": state.U.tolist(), "V": state.V.tolist()}),
            "counts": {
                "rows": state.counts.rows.tolist(),
                "cols": state.counts.cols.tolist(),
                "m_ek": state.counts.m_ek.tolist(),
            },
        }
    elif isinstance(state, CollapsedState):
        K = state.K
        doc = {
            "format": FORMAT,
            "version": VERSION,
            "kind": "collapsed",
            "n_rows": state.n_rows,
            "n_cols": state.n_cols,
            "hypers": _hypers_dict(state.hypers),
            "counts": {
                "rows": state.rows.tolist(),
                "cols": state.cols.tolist(),
                "m_ek": state.m_ek[:, :K].tolist(),
            },
            "dynamic_k": {
                "n_active": K,
                "atom_ids": list(state.atom_ids),
                "lambda": None if state.lam is None else state.lam.tolist(),
                "lambda_rest": state.lam_rest,
                "phi": None if state.phi is None else state.phi.tolist(),
                "psi": None if state.psi is None else state.psi.tolist(),
            },
        }
    else:
        raise TypeError(f"cannot checkpoint {type(state)!r}")
    payload = json.dumps(doc, indent=1)
    if isinstance(target, (str, Path)):
        Path(target).write_text(payload, encoding="utf-8")
    else:
        target.write(payload)


def load_state(source, rng: RngHandle):
    """Load a checkpoint; the returned state uses the provided (or a fresh) rng."""
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        doc = json.load(source)
    if doc.get("format") != FORMAT:
        raise ValueError("not an epm checkpoint")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    rows = np.asarray(doc["counts"]["rows"], dtype=np.int64)
    cols = np.asarray(doc["counts"]["cols"], dtype=np.int64)
    m_ek = np.asarray(doc["counts"]["m_ek"], dtype=np.int64)
    if doc["kind"] == "truncated":
        hypers = Hyperparameters(**doc["hypers"])
        counts = LatentCounts(doc["n_rows"], doc["n_cols"], rows, cols, doc["T"])
        if m_ek.size:
            order = np.lexsort((cols, rows))
            counts.set_edge_counts(m_ek[order])
        state = TruncatedState(
            variant=doc["variant"], T=doc["T"], n_rows=doc["n_rows"],
            n_cols=doc["n_cols"], hypers=hypers, counts=counts, rng=rng,
            lam=np.asarray(doc["lambda"], dtype=float),
        )
        if doc["variant"] == "depm":
            state.phi = np.asarray(doc["factors"]["phi"], dtype=float)
            state.psi = np.asarray(doc["factors"]["psi"], dtype=float)
        else:
            state.U = np.asarray(doc["factors"]["U"], dtype=float)
            state.V = np.asarray(doc["factors"]["V"], dtype=float)
        return state
    if doc["kind"] == "collapsed":
        hypers = IdepmHypers(**doc["hypers"])
        K = doc["dynamic_k"]["n_active"]
        atoms = []
        for k in range(K):
            cell = np.zeros((doc["n_rows"], doc["n_cols"]), dtype=np.int64)
            if m_ek.size:
                cell[rows, cols] = m_ek[:, k]
            atoms.append(cell)
        state = CollapsedState.from_atom_counts(
            doc["n_rows"], doc["n_cols"], atoms, hypers, rng)
        dk = doc["dynamic_k"]
        if dk["lambda"] is not None:
            state.lam = np.asarray(dk["lambda"], dtype=float)
            state.phi = np.asarray(dk["phi"], dtype=float)
            state.psi = np.asarray(dk["psi"], dtype=float)
            state.lam_rest = dk["lambda_rest"]
        return state
    raise ValueError(f"unknown checkpoint kind {doc['kind']!r}")
