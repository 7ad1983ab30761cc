"""Orthogonal Householder speaker-vector anonymization.

Thin layer over the compiled ``_ohnn`` extension. Configuration arguments
accept either a dict or a JSON string in the experiment document format used
by the ``ohnn`` command-line tool; JSON reports come back as dicts.
"""

import json

from ._ohnn import (
    AnonymizerForm,
    AnonymizerModel,
    ConfigError,
    EmbeddingPool,
    LohReduction,
    OhnnError,
    PoolSide,
    Split,
    StackVariant,
    anonymize_pool,
    d_diag,
    decode_model,
    decode_pool,
    encode_pool,
    eer,
    g_vd,
    generate_synthetic,
    init_model,
    load_model,
    load_pool,
    save_pool,
    save_pool_csv,
    weighted_average_eer,
)
from . import _ohnn

__all__ = [
    "AnonymizerForm",
    "AnonymizerModel",
    "ConfigError",
    "EmbeddingPool",
    "LohReduction",
    "OhnnError",
    "PoolSide",
    "Split",
    "StackVariant",
    "anonymize_pool",
    "attack_sim",
    "d_diag",
    "decode_model",
    "decode_pool",
    "encode_pool",
    "eer",
    "experiment_config",
    "g_vd",
    "generate_synthetic",
    "init_model",
    "load_model",
    "load_pool",
    "save_pool",
    "save_pool_csv",
    "train",
    "weighted_average_eer",
]


def _as_json(config):
    if config is None:
        return "{}"
    if isinstance(config, str):
        return config
    return json.dumps(config)


def experiment_config(config=None):
    """Validated experiment document with every default filled in."""
    return json.loads(_ohnn.normalize_config(_as_json(config)))


def train(pool, variant=StackVariant.ROH, config=None):
    """Train an anonymizer on the train split of ``pool``.

    Returns ``(model, report)``. ``variant`` may be a StackVariant or one of
    "roh" and "loh".
    """
    if isinstance(variant, str):
        variant = {"roh": StackVariant.ROH, "loh": StackVariant.LOH}[variant]
    model, report = _ohnn.train(pool, variant, _as_json(config))
    return model, json.loads(report)


def attack_sim(pool, config=None, external=None):
    """Run the configured attack scenarios; returns one report dict per scenario."""
    return [json.loads(r) for r in _ohnn.attack_sim(pool, _as_json(config), external)]
