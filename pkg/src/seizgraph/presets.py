"""Named configuration presets.

``paper-*`` presets echo the published training recipes exactly (epochs,
learning rates, layer/hidden sizes, batch size, patience, dropout, graph
sparsity).  ``e2e-*`` and ``smoke`` are desk-scale presets sized for
single-core synthetic runs; they keep the same machinery with smaller
models and epoch budgets.
"""

import copy
from dataclasses import fields

from .ingest import SyntheticSpec
from .model import ModelConfig
from .training import GraphSource, TrainConfig


class PresetError(ValueError):
    pass


_PAPER_GRAPH = {"mode": "distance", "kappa": 0.9, "bandwidth": 0.06, "tau": 3}

PRESETS = {
    "paper-detect-12s": {
        "preprocess": {"clip_len": 12},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 2, "hidden": 64, "k_hops": 2, "dropout_head": 0.0},
        "train": {
            "task": "detect", "lr_init": 1e-4, "epochs_max": 100, "batch_size": 40,
            "patience": 5, "undersample": True, "augment": True,
        },
    },
    "paper-detect-60s": {
        "preprocess": {"clip_len": 60},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 2, "hidden": 64, "k_hops": 2, "dropout_head": 0.0},
        "train": {
            "task": "detect", "lr_init": 1e-4, "epochs_max": 100, "batch_size": 40,
            "patience": 5, "undersample": True, "augment": True,
        },
    },
    "paper-classify-12s": {
        "preprocess": {"clip_len": 12},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 2, "hidden": 64, "k_hops": 2, "dropout_head": 0.5},
        "train": {
            "task": "classify", "lr_init": 3e-4, "epochs_max": 60, "batch_size": 40,
            "patience": 5, "undersample": False, "augment": True,
        },
    },
    "paper-classify-60s": {
        "preprocess": {"clip_len": 60},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 2, "hidden": 64, "k_hops": 2, "dropout_head": 0.5},
        "train": {
            "task": "classify", "lr_init": 3e-4, "epochs_max": 60, "batch_size": 40,
            "patience": 5, "undersample": False, "augment": True,
        },
    },
    "paper-pretrain-12s": {
        "preprocess": {"clip_len": 12, "horizon": 12},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 3, "hidden": 64, "k_hops": 2, "horizon": 12},
        "train": {
            "task": "pretrain", "lr_init": 5e-4, "epochs_max": 350, "batch_size": 40,
            "patience": 5, "undersample": False, "augment": False,
        },
    },
    "paper-pretrain-60s": {
        "preprocess": {"clip_len": 60, "horizon": 12},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 3, "hidden": 64, "k_hops": 2, "horizon": 12},
        "train": {
            "task": "pretrain", "lr_init": 5e-4, "epochs_max": 350, "batch_size": 40,
            "patience": 5, "undersample": False, "augment": False,
        },
    },
    # desk-scale presets for synthetic end-to-end runs on one CPU core
    "e2e-detect-12s": {
        "preprocess": {"clip_len": 12},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 2, "hidden": 32, "k_hops": 2, "dropout_head": 0.0},
        "train": {
            "task": "detect", "lr_init": 1e-3, "epochs_max": 8, "batch_size": 40,
            "patience": 5, "undersample": True, "augment": True,
        },
    },
    "e2e-pretrain-12s": {
        "preprocess": {"clip_len": 12, "horizon": 12},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 2, "hidden": 32, "k_hops": 2, "horizon": 12},
        "train": {
            "task": "pretrain", "lr_init": 1e-3, "epochs_max": 5, "batch_size": 40,
            "patience": 5, "undersample": False, "augment": False,
        },
    },
    "smoke": {
        "synth": {
            "n_recordings": 18, "duration_sec": 60.0, "seizure_rate": 1.0,
            "focal_fraction": 0.5, "snr": 4.0,
            "class_bands": {"foc": [5.0, 9.0], "gen": [18.0, 24.0]},
            "seed": 0,
        },
        "preprocess": {"clip_len": 12, "horizon": 12},
        "graph": dict(_PAPER_GRAPH),
        "model": {"layers": 2, "hidden": 16, "k_hops": 2, "dropout_head": 0.0},
        "train": {
            "task": "detect", "lr_init": 1e-3, "epochs_max": 3, "batch_size": 32,
            "patience": 5, "undersample": True, "augment": True,
        },
    },
}

_SECTION_FIELDS = {
    "synth": {f.name for f in fields(SyntheticSpec)},
    "preprocess": {"clip_len", "horizon", "remap"},
    "graph": {f.name for f in fields(GraphSource)},
    "model": {f.name for f in fields(ModelConfig)},
    "train": {f.name for f in fields(TrainConfig)},
}


def validate_config(config: dict) -> None:
    """Reject unknown sections or keys so typos fail loudly."""
    for section, payload in config.items():
        if section not in _SECTION_FIELDS:
            raise PresetError(f"unknown config section {section!r}")
        unknown = set(payload) - _SECTION_FIELDS[section]
        if unknown:
            raise PresetError(f"unknown keys in {section!r}: {sorted(unknown)}")


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise PresetError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
    return copy.deepcopy(PRESETS[name])


def merge_config(base: dict, overrides: dict) -> dict:
    """Overlay ``overrides`` onto ``base`` section by section."""
    validate_config(overrides)
    merged = copy.deepcopy(base)
    for section, payload in overrides.items():
        merged.setdefault(section, {}).update(payload)
    validate_config({k: v for k, v in merged.items()})
    return merged
