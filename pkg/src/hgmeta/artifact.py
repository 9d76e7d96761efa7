"""Single-file JSON run artifact with embedded binary tensor payloads.

One artifact fully describes a run: the echoed configuration, the fitted
overlap partition, the per-step history, final checkpoints for both models,
and the final metrics. Tensors are stored as base64-encoded little-endian
float64 buffers, so a reload restores them bit-for-bit and two runs with the
same configuration and seed produce byte-identical files.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import HGNNParams
from .mwn import MWNParams
from .partition import Partition
from .trainer import ScheduleSpec, StepRecord, TrainState

FORMAT = "hgmeta-run-v1"


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii"),
    }


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"]).copy()


def _encode_named(items) -> dict:
    return {name: encode_array(arr) for name, arr in items}


@dataclass
class RunArtifact:
    """Deserialized artifact contents."""

    config: dict
    partition: Partition
    history: list[dict]
    hgnn: HGNNParams
    mwn: MWNParams
    metrics: dict


def save_run_artifact(path, config_echo: dict, state: TrainState, metrics: dict) -> None:
    doc = {
        "format": FORMAT,
        "config": config_echo,
        "partition": {
            "centroids": [float(c) for c in state.partition.centroids],
            "labels": [int(v) for v in state.partition.labels],
            "k": state.partition.k,
            "requested_k": state.partition.requested_k,
        },
        "history": [rec.to_dict() for rec in state.history],
        "checkpoint": {
            "hgnn": _encode_named(state.hgnn.param_items()),
            "hgnn_layout": [
                {"name": name, "shape": list(arr.shape)} for name, arr in state.hgnn.param_items()
            ],
            "mwn": _encode_named(state.mwn.param_items()),
            "mwn_meta": {
                "k": state.mwn.k,
                "hidden": state.mwn.hidden,
                "mode": state.mwn.mode,
                "log1p_inputs": state.mwn.log1p_inputs,
            },
        },
        "metrics": metrics,
        "steps_run": state.step,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_run_artifact(path) -> RunArtifact:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError("artifact-parse", f"{path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise DataError("artifact-format", f"expected {FORMAT}, got {doc.get('format')!r}")

    ck = doc["checkpoint"]
    weights, attn = [], []
    layer = 0
    hg = ck["hgnn"]
    while f"w{layer}" in hg:
        weights.append(decode_array(hg[f"w{layer}"]))
        attn.append(decode_array(hg[f"a{layer}"]))
        layer += 1
    hgnn = HGNNParams(weights=weights, attn=attn)

    meta = ck["mwn_meta"]
    mw = ck["mwn"]
    head_w = [decode_array(mw[f"head{c}_w"]) for c in range(meta["k"])]
    head_b = [decode_array(mw[f"head{c}_b"]) for c in range(meta["k"])]
    mwn = MWNParams(
        w_shared=decode_array(mw["shared_w"]),
        b_shared=decode_array(mw["shared_b"]),
        head_w=head_w,
        head_b=head_b,
        mode=meta["mode"],
        log1p_inputs=meta["log1p_inputs"],
    )

    part = doc["partition"]
    partition = Partition(
        centroids=np.asarray(part["centroids"], dtype=np.float64),
        labels=np.asarray(part["labels"], dtype=np.int64),
        k=int(part["k"]),
        requested_k=int(part["requested_k"]),
        n_iter=0,
    )
    return RunArtifact(
        config=doc["config"],
        partition=partition,
        history=doc["history"],
        hgnn=hgnn,
        mwn=mwn,
        metrics=doc["metrics"],
    )


def state_from_artifact(artifact: RunArtifact) -> TrainState:
    """Rebuild a TrainState sufficient for prediction and evaluation."""
    sched = artifact.config.get("schedules", {})
    schedule1 = ScheduleSpec(kind=sched.get("kind", "inverse-sqrt"), c=sched.get("c1", 0.02), m_hat=sched.get("m_hat", 10.0))
    schedule2 = ScheduleSpec(kind=sched.get("kind", "inverse-sqrt"), c=sched.get("c2", 1.0), m_hat=sched.get("m_hat", 10.0))
    state = TrainState(
        hgnn=artifact.hgnn,
        mwn=artifact.mwn,
        partition=artifact.partition,
        schedule1=schedule1,
        schedule2=schedule2,
        seed=int(artifact.config.get("seed", 0)),
        step=len(artifact.history),
    )
    for rec in artifact.history:
        state.history.append(
            StepRecord(
                step=rec["step"],
                lr1=rec["lr1"],
                lr2=rec["lr2"],
                train_loss=rec["train_loss"],
                meta_loss=rec["meta_loss"],
                mean_alpha=[float("nan") if a is None else a for a in rec["mean_alpha"]],
                grad_w_norm=rec["grad_w_norm"],
                grad_theta_norm=rec["grad_theta_norm"],
            )
        )
    return state
