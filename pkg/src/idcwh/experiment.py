"""Train/encode/evaluate composition used by the CLI and the sweep runner."""
from __future__ import annotations

import numpy as np

from .core import TrainConfig
from .data import Dataset
from .encoder import EncoderParams, encode_binary
from .retrieval import MetricsReport, RetrievalIndex, evaluate
from .trainer import train


def retrieval_sets(ds: Dataset, train_in_database=False, self_retrieval=False):
    """``(query_ids, database_ids, exclude_self)`` for a dataset protocol.

    Self-retrieval (or a dataset with no query split) ranks the training set
    against itself, skipping each query's own entry.
    """
    if self_retrieval or len(ds.indices("query")) == 0:
        ids = ds.indices("train")
        return ids, ids, True
    return ds.indices("query"), ds.indices("database", train_in_database), False


def evaluate_encoder(params: EncoderParams, ds: Dataset, *, train_in_database=False,
                     self_retrieval=False, n_list=None, radius=2, top_k=None) -> MetricsReport:
    q_ids, db_ids, exclude_self = retrieval_sets(ds, train_in_database, self_retrieval)
    l = params.code_length
    db_codes = encode_binary(params, ds.features[db_ids])
    q_codes = db_codes if exclude_self else encode_binary(params, ds.features[q_ids])
    index = RetrievalIndex(db_codes, ds.labels[db_ids], l)
    return evaluate(q_codes, ds.labels[q_ids], index, n_list=n_list, radius=radius,
                    top_k=top_k, exclude_self=exclude_self)


def run_point(ds: Dataset, cfg: TrainConfig, **protocol):
    """Train with ``cfg`` and evaluate; returns ``(state, report)``."""
    state = train(ds, cfg)
    return state, evaluate_encoder(state.encoder, ds, **protocol)


def sweep_row(cfg: TrainConfig, report: MetricsReport) -> dict:
    return {
        "sigma_sq": cfg.sigma_sq,
        "beta": cfg.beta,
        "gamma": cfg.gamma,
        "code_length": cfg.code_length,
        "seed": cfg.seed,
        "variant": cfg.variant,
        "map": report.map,
        "p_at_h2": report.p_at_h2,
        "r_at_h2": report.r_at_h2,
        "dwdb": report.dwdb,
    }


def summarize(values) -> float:
    return float(np.mean(values))
