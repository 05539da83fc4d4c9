"""Checkpoint save/load with kind dispatch (mlp, score_mlp, bundle)."""

from __future__ import annotations

from dataclasses import asdict

from lsdm.core.autoencoder import AutoencoderPair
from lsdm.core.matching import GeneratorBundle
from lsdm.diffusion import DiffusionBundle, DiffusionConfig, ScoreNet
from lsdm.nn import Network
from lsdm.nn.checkpoint import (
    FORMAT_VERSION,
    MalformedCheckpointError,
    check_version,
    network_from_dict,
    network_to_dict,
    read_json,
    write_json,
)


def _score_doc(score: ScoreNet, cfg: DiffusionConfig | None = None) -> dict:
    return network_to_dict(
        score.net,
        kind="score_mlp",
        latent_dim=score.latent_dim,
        x_bounds=list(score.x_bounds),
        n_freq=score.n_freq,
        diffusion=asdict(cfg) if cfg is not None else None,
    )


def _score_from(doc) -> ScoreNet:
    return ScoreNet(network_from_dict(doc), int(doc["latent_dim"]), tuple(doc["x_bounds"]), int(doc["n_freq"]))


def to_document(obj) -> dict:
    if isinstance(obj, Network):
        return network_to_dict(obj)
    if isinstance(obj, ScoreNet):
        return _score_doc(obj)
    if isinstance(obj, AutoencoderPair):
        return {
            "version": FORMAT_VERSION,
            "kind": "autoencoder",
            "encoder": network_to_dict(obj.encoder),
            "decoder": network_to_dict(obj.decoder),
        }
    if isinstance(obj, (GeneratorBundle, DiffusionBundle)):
        doc = {
            "version": FORMAT_VERSION,
            "kind": "bundle",
            "decoder": network_to_dict(obj.decoder),
            "encoder": network_to_dict(obj.encoder) if obj.encoder is not None else None,
            "x_bounds": list(obj.x_bounds),
            "metadata": obj.metadata,
        }
        if isinstance(obj, GeneratorBundle):
            doc["generator"] = network_to_dict(obj.generator)
            doc["noise_dim"] = obj.noise_dim
        else:
            doc["generator"] = _score_doc(obj.score, obj.cfg)
        return doc
    raise TypeError(f"cannot checkpoint {type(obj).__name__}")


def from_document(doc):
    check_version(doc)
    kind = doc.get("kind")
    try:
        if kind == "mlp":
            return network_from_dict(doc)
        if kind == "score_mlp":
            return _score_from(doc)
        if kind == "autoencoder":
            return AutoencoderPair(network_from_dict(doc["encoder"]), network_from_dict(doc["decoder"]))
        if kind == "bundle":
            gen = doc["generator"]
            check_version(gen)
            enc = network_from_dict(doc["encoder"]) if doc.get("encoder") else None
            dec = network_from_dict(doc["decoder"])
            meta = doc.get("metadata") or {}
            if gen.get("kind") == "score_mlp":
                return DiffusionBundle(dec, _score_from(gen), DiffusionConfig(**gen["diffusion"]),
                                       tuple(doc["x_bounds"]), enc, meta)
            return GeneratorBundle(dec, network_from_dict(gen), int(doc["noise_dim"]),
                                   tuple(doc["x_bounds"]), enc, meta)
    except (KeyError, TypeError) as exc:
        raise MalformedCheckpointError(f"bad {kind} document: {exc}") from exc
    raise MalformedCheckpointError(f"unknown checkpoint kind {kind!r}")


def save_checkpoint(obj, path):
    write_json(to_document(obj), path)


def load_checkpoint(path):
    return from_document(read_json(path))
