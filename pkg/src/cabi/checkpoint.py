"""Checkpoint persistence shared by all trained models.

Each checkpoint is a metadata JSON at `<path>.json` plus a flat little-endian
float64 parameter blob at `<path>.bin`, with parameters laid out in
`DenseNet.parameters()` order.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .cvae import CvaeModel
from .data import NormStats
from .dynamics import Ensemble, GaussianDynamicsModel
from .learner import PolicyArtifact
from .nn import DenseNet


class CheckpointError(Exception):
    pass


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _net_sizes(net: DenseNet):
    return [net.weights[0].shape[0]] + [w.shape[1] for w in net.weights]


def _flat_params(nets) -> np.ndarray:
    parts = []
    for net in nets:
        for p in net.parameters():
            parts.append(np.asarray(p, dtype=np.float64).ravel())
    return np.concatenate(parts) if parts else np.empty(0)


class _BlobReader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def _take(self, count):
        if self.offset + count > len(self.blob):
            raise CheckpointError("parameter blob is truncated")
        out = self.blob[self.offset:self.offset + count]
        self.offset += count
        return out

    def net(self, sizes, activations) -> DenseNet:
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(self._take(n_in * n_out).reshape(n_in, n_out).copy())
            biases.append(self._take(n_out).copy())
        return DenseNet(weights, biases, list(activations))


def _stats_meta(stats: NormStats):
    return {"mean": stats.mean.tolist(), "std": stats.std.tolist(),
            "state_dim": stats.state_dim, "action_dim": stats.action_dim}


def _stats_from_meta(meta) -> NormStats:
    return NormStats(mean=np.asarray(meta["mean"], dtype=np.float64),
                     std=np.asarray(meta["std"], dtype=np.float64),
                     state_dim=meta["state_dim"],
                     action_dim=meta["action_dim"])


def save_model(obj, path: str) -> None:
    if isinstance(obj, Ensemble):
        sizes = _net_sizes(obj.members[0].net)
        acts = obj.members[0].net.activations
        meta = {
            "kind": "ensemble",
            "direction": obj.direction,
            "state_dim": obj.state_dim,
            "action_dim": obj.action_dim,
            "n_members": len(obj.members),
            "sizes": sizes,
            "activations": acts,
            "elites": np.asarray(obj.elite_indices).tolist(),
            "holdout_losses": np.asarray(obj.holdout_losses).tolist(),
            "initial_holdout_losses":
                np.asarray(obj.initial_holdout_losses).tolist(),
            "stats": _stats_meta(obj.stats),
        }
        blob = _flat_params([m.net for m in obj.members])
    elif isinstance(obj, CvaeModel):
        meta = {
            "kind": "cvae",
            "direction": obj.direction,
            "state_dim": obj.state_dim,
            "action_dim": obj.action_dim,
            "latent_dim": obj.latent_dim,
            "action_bound": obj.action_bound.tolist(),
            "encoder_sizes": _net_sizes(obj.encoder),
            "decoder_sizes": _net_sizes(obj.decoder),
            "activations": obj.encoder.activations,
            "stats": _stats_meta(obj.stats),
            "loss_history": list(obj.loss_history),
        }
        blob = _flat_params([obj.encoder, obj.decoder])
    elif isinstance(obj, PolicyArtifact):
        meta = {
            "kind": "policy",
            "actor_sizes": _net_sizes(obj.actor),
            "critic_sizes": _net_sizes(obj.critic1),
            "activations": obj.actor.activations,
            "action_bound": obj.action_bound.tolist(),
            "stats": _stats_meta(obj.stats),
            "manifest": obj.manifest,
        }
        blob = _flat_params([obj.actor, obj.critic1, obj.critic2])
    else:
        raise CheckpointError(f"cannot checkpoint {type(obj).__name__}")
    with open(path + ".json", "w") as f:
        json.dump(meta, f, indent=1)
    blob.astype("<f8").tofile(path + ".bin")


def load_model(path: str):
    try:
        with open(path + ".json") as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint metadata: {e}") from e
    blob = np.fromfile(path + ".bin", dtype="<f8")
    reader = _BlobReader(blob)
    kind = meta.get("kind")
    obj = _load_from(meta, reader, kind)
    if reader.offset != len(blob):
        raise CheckpointError(
            f"parameter blob holds {len(blob)} floats, "
            f"consumed {reader.offset}")
    return obj


def _load_from(meta, reader, kind):
    if kind == "ensemble":
        target_dim = meta["state_dim"] + 1
        members = [
            GaussianDynamicsModel(
                net=reader.net(meta["sizes"], meta["activations"]),
                direction=meta["direction"], target_dim=target_dim)
            for _ in range(meta["n_members"])
        ]
        return Ensemble(
            direction=meta["direction"], members=members,
            elite_indices=np.asarray(meta["elites"], dtype=int),
            holdout_losses=np.asarray(meta["holdout_losses"]),
            initial_holdout_losses=np.asarray(
                meta["initial_holdout_losses"]),
            stats=_stats_from_meta(meta["stats"]),
            state_dim=meta["state_dim"], action_dim=meta["action_dim"])
    if kind == "cvae":
        encoder = reader.net(meta["encoder_sizes"], meta["activations"])
        decoder = reader.net(meta["decoder_sizes"], meta["activations"])
        return CvaeModel(
            encoder=encoder, decoder=decoder, direction=meta["direction"],
            latent_dim=meta["latent_dim"],
            action_bound=np.asarray(meta["action_bound"]),
            stats=_stats_from_meta(meta["stats"]),
            state_dim=meta["state_dim"], action_dim=meta["action_dim"],
            loss_history=meta.get("loss_history", []))
    if kind == "policy":
        actor = reader.net(meta["actor_sizes"], meta["activations"])
        critic1 = reader.net(meta["critic_sizes"], meta["activations"])
        critic2 = reader.net(meta["critic_sizes"], meta["activations"])
        return PolicyArtifact(
            actor=actor, critic1=critic1, critic2=critic2,
            action_bound=np.asarray(meta["action_bound"]),
            stats=_stats_from_meta(meta["stats"]),
            manifest=meta.get("manifest", {}))
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")
