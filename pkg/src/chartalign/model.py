"""The assembled model (vision encoder, connector, language model) and its checkpoints.

Checkpoint file layout (all integers little-endian)::

    8 bytes   magic b"CHALNCK1"
    8 bytes   header length n (uint64)
    n bytes   UTF-8 JSON header: configs, tokenizer vocabulary, stage metadata,
              per-group SHA-256 digests, tensor index (name, group, shape, offset)
    ...       raw float32 little-endian parameter blocks, in index order
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from chartalign.connector import Connector, ConnectorConfig
from chartalign.errors import ConfigurationError, CorruptionError
from chartalign.language_model import LanguageModel, LMConfig
from chartalign.tokenizer import Tokenizer
from chartalign.vision import VisionConfig, VisionEncoder

MAGIC = b"CHALNCK1"
GROUPS = ("vision", "connector", "lm")


@dataclass(frozen=True)
class ModelConfig:
    vision: VisionConfig = field(default_factory=VisionConfig)
    connector: ConnectorConfig = field(default_factory=ConnectorConfig)
    lm: LMConfig = field(default_factory=lambda: LMConfig(vocab_size=305))
    resolution: int = 448

    def __post_init__(self):
        if self.connector.d_v != self.vision.d_v:
            raise ConfigurationError(f"connector d_v {self.connector.d_v} != vision d_v {self.vision.d_v}")
        if self.connector.d_l != self.lm.d_l:
            raise ConfigurationError(f"connector d_l {self.connector.d_l} != LM d_l {self.lm.d_l}")
        if self.resolution % self.vision.patch_size or self.resolution > self.vision.max_resolution:
            raise ConfigurationError(
                f"resolution {self.resolution} must be a multiple of patch size "
                f"{self.vision.patch_size} and <= {self.vision.max_resolution}"
            )

    def to_dict(self) -> dict:
        return {"vision": self.vision.to_dict(), "connector": self.connector.to_dict(),
                "lm": self.lm.to_dict(), "resolution": self.resolution}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(VisionConfig(**d["vision"]), ConnectorConfig(**d["connector"]),
                   LMConfig(**d["lm"]), int(d["resolution"]))

    @classmethod
    def build(cls, vocab_size: int, resolution: int = 448, connector_mode: str = "cross_attention",
              d_v: int = 64, d_k: int = 64, d_l: int = 128, vision_layers: int = 2,
              vision_heads: int = 4, lm_layers: int = 2, lm_heads: int = 4, num_queries: int = 16,
              patch_size: int = 32, max_resolution: int = 448, max_len: int = 640,
              query_source: str = "learned", connector_heads: int = 1, mlp_hidden: int = 128) -> "ModelConfig":
        return cls(
            vision=VisionConfig(patch_size, d_v, vision_layers, vision_heads, max(max_resolution, resolution)),
            connector=ConnectorConfig(d_v, d_l, connector_mode, num_queries, d_k, connector_heads,
                                      query_source, mlp_hidden),
            lm=LMConfig(vocab_size, d_l, lm_layers, lm_heads, max_len),
            resolution=resolution,
        )

    def with_overrides(self, connector_mode: str | None = None, resolution: int | None = None) -> "ModelConfig":
        cfg = self
        if connector_mode is not None:
            cfg = replace(cfg, connector=replace(cfg.connector, mode=connector_mode))
        if resolution is not None:
            cfg = replace(cfg, resolution=resolution)
        return cfg


class ChartQAModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.vision = VisionEncoder(config.vision)
        self.connector = Connector(config.connector)
        self.lm = LanguageModel(config.lm)

    def group(self, name: str) -> nn.Module:
        if name not in GROUPS:
            raise ConfigurationError(f"unknown parameter group {name!r}")
        return getattr(self, name)

    def group_parameters(self, name: str) -> list[tuple[str, nn.Parameter]]:
        return sorted(self.group(name).named_parameters(), key=lambda kv: kv[0])


def group_digest(module: nn.Module) -> str:
    """SHA-256 over (name, shape, float32 little-endian bytes) of each parameter, sorted by name."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        a = p.detach().to(torch.float32).cpu().numpy().astype("<f4", copy=False)
        h.update(name.encode())
        h.update(json.dumps(list(a.shape)).encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    model: ChartQAModel
    tokenizer: Tokenizer
    stage_meta: dict = field(default_factory=lambda: {"stages": []})
    config_snapshot: dict = field(default_factory=dict)
    # per-step losses of the most recent training call; not serialized
    history: list[float] = field(default_factory=list, compare=False)

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def digests(self) -> dict[str, str]:
        return {g: group_digest(self.model.group(g)) for g in GROUPS}

    def completed_stages(self) -> list[str]:
        return [s["stage"] for s in self.stage_meta.get("stages", [])]

    def clone(self) -> "Checkpoint":
        return Checkpoint(copy.deepcopy(self.model), self.tokenizer,
                          copy.deepcopy(self.stage_meta), copy.deepcopy(self.config_snapshot))


def init_checkpoint(config: ModelConfig, tokenizer: Tokenizer, seed: int = 0) -> Checkpoint:
    """Randomly initialized model; deterministic in ``seed``; global RNG state is untouched."""
    if config.lm.vocab_size != tokenizer.vocab_size:
        raise ConfigurationError(
            f"LM vocab_size {config.lm.vocab_size} != tokenizer size {tokenizer.vocab_size}"
        )
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ChartQAModel(config)
    model.float()
    return Checkpoint(model, tokenizer, {"stages": [], "init_seed": seed}, {})


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    tensors, blobs, offset = [], [], 0
    for g in GROUPS:
        for name, p in ckpt.model.group_parameters(g):
            a = np.ascontiguousarray(p.detach().to(torch.float32).cpu().numpy().astype("<f4"))
            b = a.tobytes()
            tensors.append({"name": name, "group": g, "shape": list(a.shape), "offset": offset, "nbytes": len(b)})
            blobs.append(b)
            offset += len(b)
    header = {
        "format_version": 1,
        "model_config": ckpt.config.to_dict(),
        "tokenizer": ckpt.tokenizer.vocabulary,
        "stage_meta": ckpt.stage_meta,
        "config_snapshot": ckpt.config_snapshot,
        "digests": ckpt.digests(),
        "payload_bytes": offset,
        "tensors": tensors,
    }
    hb = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CorruptionError(f"{path}: not a checkpoint (bad magic or truncated)")
    (n,) = struct.unpack("<Q", data[8:16])
    if 16 + n > len(data):
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(data[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header") from exc
    payload = data[16 + n :]
    if len(payload) != header["payload_bytes"]:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}"
        )
    config = ModelConfig.from_dict(header["model_config"])
    tokenizer = Tokenizer(header["tokenizer"])
    with torch.random.fork_rng(devices=[]):
        model = ChartQAModel(config)
    params = {}
    for g in GROUPS:
        for name, p in model.group(g).named_parameters():
            params[(g, name)] = p
    seen = set()
    with torch.no_grad():
        for t in header["tensors"]:
            key = (t["group"], t["name"])
            if key not in params:
                raise CorruptionError(f"{path}: unexpected tensor {key}")
            raw = payload[t["offset"] : t["offset"] + t["nbytes"]]
            a = np.frombuffer(raw, dtype="<f4").reshape(t["shape"])
            p = params[key]
            if tuple(p.shape) != tuple(a.shape):
                raise CorruptionError(f"{path}: shape mismatch for {key}")
            p.copy_(torch.from_numpy(a.astype(np.float32)))
            seen.add(key)
    if seen != set(params):
        raise CorruptionError(f"{path}: missing tensors {sorted(set(params) - seen)}")
    ckpt = Checkpoint(model, tokenizer, header["stage_meta"], header["config_snapshot"])
    digests = ckpt.digests()
    if digests != header["digests"]:
        bad = [g for g in GROUPS if digests[g] != header["digests"].get(g)]
        raise CorruptionError(f"{path}: digest mismatch for groups {bad}")
    return ckpt
