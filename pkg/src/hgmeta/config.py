"""Run configuration: a single JSON document, fully validated up front.

Every default is materialized into the echoed config embedded in the run
artifact, so an artifact alone is enough to rerun the experiment. Unknown
keys anywhere in the document are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .data import BIAS_KINDS, SyntheticSpec
from .errors import ConfigError, ContractError
from .mwn import OUTPUT_MODES
from .trainer import SCHEDULE_KINDS, ScheduleSpec, TrainSettings

_MODEL_DEFAULTS = {"layers": 2, "hidden": 64, "dropout": 0.0, "weight_decay": 0.0}
_MWN_DEFAULTS = {"hidden": 100, "output_mode": "complementary", "log1p": False}
_SCHEDULE_DEFAULTS = {"kind": "inverse-sqrt", "c1": 0.02, "c2": 1.0, "m_hat": 10.0}
_TRAIN_DEFAULTS = {
    "steps": 200,
    "batch": None,
    "meta_source": "meta-split",
    "pin_alpha": None,
    "optimizer": "gd",
}
_SYNTH_DEFAULTS = {
    "nodes": 200,
    "classes": 3,
    "hyperedges": 150,
    "size_range": [3, 6],
    "homophily": 0.9,
    "dim": 16,
    "noise": 0.5,
    "signal": 1.0,
    "bias": "none",
    "bias_fraction": 0.0,
    "split_fractions": [0.2, 0.2, 0.6],
}


@dataclass
class RunConfig:
    """Parsed configuration plus the fully-defaulted echo document."""

    dataset_path: str | None
    synthetic: SyntheticSpec | None
    settings: TrainSettings
    k: int
    seed: int
    output: str
    echo: dict


def _take(section: dict, defaults: dict, where: str) -> dict:
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(section)
    return merged


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    top_keys = {"dataset", "model", "partition", "mwn", "schedules", "train", "seed", "output"}
    unknown = set(doc) - top_keys
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    dataset = doc.get("dataset")
    if not isinstance(dataset, dict) or ("path" in dataset) == ("synthetic" in dataset):
        raise ConfigError("dataset must hold exactly one of 'path' or 'synthetic'")
    dataset_path = None
    synthetic = None
    if "path" in dataset:
        _require(isinstance(dataset["path"], str), "dataset.path must be a string")
        _require(set(dataset) == {"path"}, "dataset.path takes no sibling keys")
        dataset_path = dataset["path"]
        synth_echo = None
    else:
        _require(set(dataset) == {"synthetic"}, "dataset.synthetic takes no sibling keys")
        synth = _take(dataset["synthetic"], _SYNTH_DEFAULTS, "dataset.synthetic")
        _require(synth["bias"] in BIAS_KINDS, f"dataset.synthetic.bias must be one of {BIAS_KINDS}")
        try:
            synthetic = SyntheticSpec(
                nodes=int(synth["nodes"]),
                classes=int(synth["classes"]),
                hyperedges=int(synth["hyperedges"]),
                size_range=tuple(int(v) for v in synth["size_range"]),
                homophily=float(synth["homophily"]),
                dim=int(synth["dim"]),
                noise=float(synth["noise"]),
                signal=float(synth["signal"]),
                bias=str(synth["bias"]),
                bias_fraction=float(synth["bias_fraction"]),
                split_fractions=tuple(float(v) for v in synth["split_fractions"]),
            ).validated()
        except (ContractError, TypeError, ValueError) as exc:
            raise ConfigError(f"dataset.synthetic: {exc}") from exc
        synth_echo = {
            **synth,
            "size_range": [int(v) for v in synth["size_range"]],
            "split_fractions": [float(v) for v in synth["split_fractions"]],
        }

    model = _take(doc.get("model", {}), _MODEL_DEFAULTS, "model")
    _require(int(model["layers"]) >= 1, "model.layers must be >= 1")
    _require(int(model["hidden"]) >= 1, "model.hidden must be >= 1")
    _require(0.0 <= float(model["dropout"]) < 1.0, "model.dropout must lie in [0, 1)")
    _require(float(model["weight_decay"]) >= 0.0, "model.weight_decay must be >= 0")

    part = _take(doc.get("partition", {}), {"k": 3}, "partition")
    _require(int(part["k"]) >= 1, "partition.k must be >= 1")

    mwn = _take(doc.get("mwn", {}), _MWN_DEFAULTS, "mwn")
    _require(mwn["output_mode"] in OUTPUT_MODES, f"mwn.output_mode must be one of {OUTPUT_MODES}")
    _require(int(mwn["hidden"]) >= 1, "mwn.hidden must be >= 1")
    _require(isinstance(mwn["log1p"], bool), "mwn.log1p must be a boolean")

    sched = _take(doc.get("schedules", {}), _SCHEDULE_DEFAULTS, "schedules")
    _require(sched["kind"] in SCHEDULE_KINDS, f"schedules.kind must be one of {SCHEDULE_KINDS}")
    _require(float(sched["c1"]) >= 0 and float(sched["c2"]) >= 0, "schedule constants must be >= 0")
    _require(float(sched["m_hat"]) > 0, "schedules.m_hat must be > 0")

    train = _take(doc.get("train", {}), _TRAIN_DEFAULTS, "train")
    _require(int(train["steps"]) >= 0, "train.steps must be >= 0")
    _require(
        train["batch"] is None or int(train["batch"]) >= 1,
        "train.batch must be null or a positive integer",
    )
    _require(
        train["meta_source"] in ("meta-split", "test-split"),
        "train.meta_source must be 'meta-split' or 'test-split'",
    )
    _require(
        train["pin_alpha"] is None or 0.0 <= float(train["pin_alpha"]) <= 1.0,
        "train.pin_alpha must be null or lie in [0, 1]",
    )
    _require(train["optimizer"] in ("gd", "adam"), "train.optimizer must be 'gd' or 'adam'")

    seed = doc.get("seed", 0)
    _require(isinstance(seed, int), "seed must be an integer")
    output = doc.get("output", "run.json")
    _require(isinstance(output, str), "output must be a string path")

    settings = TrainSettings(
        steps=int(train["steps"]),
        schedule1=ScheduleSpec(kind=sched["kind"], c=float(sched["c1"]), m_hat=float(sched["m_hat"])),
        schedule2=ScheduleSpec(kind=sched["kind"], c=float(sched["c2"]), m_hat=float(sched["m_hat"])),
        layers=int(model["layers"]),
        hidden=int(model["hidden"]),
        k=int(part["k"]),
        mwn_hidden=int(mwn["hidden"]),
        mwn_mode=str(mwn["output_mode"]),
        mwn_log1p=bool(mwn["log1p"]),
        seed=int(seed),
        batch_size=None if train["batch"] is None else int(train["batch"]),
        meta_source=str(train["meta_source"]),
        pin_alpha=None if train["pin_alpha"] is None else float(train["pin_alpha"]),
        optimizer=str(train["optimizer"]),
        weight_decay=float(model["weight_decay"]),
        dropout=float(model["dropout"]),
    )

    echo = {
        "dataset": {"path": dataset_path} if dataset_path is not None else {"synthetic": synth_echo},
        "model": {
            "layers": int(model["layers"]),
            "hidden": int(model["hidden"]),
            "dropout": float(model["dropout"]),
            "weight_decay": float(model["weight_decay"]),
        },
        "partition": {"k": int(part["k"])},
        "mwn": {
            "hidden": int(mwn["hidden"]),
            "output_mode": mwn["output_mode"],
            "log1p": bool(mwn["log1p"]),
        },
        "schedules": {
            "kind": sched["kind"],
            "c1": float(sched["c1"]),
            "c2": float(sched["c2"]),
            "m_hat": float(sched["m_hat"]),
        },
        "train": {
            "steps": int(train["steps"]),
            "batch": train["batch"],
            "meta_source": train["meta_source"],
            "pin_alpha": train["pin_alpha"],
            "optimizer": train["optimizer"],
        },
        "seed": int(seed),
        "output": output,
    }
    return RunConfig(
        dataset_path=dataset_path,
        synthetic=synthetic,
        settings=settings,
        k=int(part["k"]),
        seed=int(seed),
        output=output,
        echo=echo,
    )


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)
