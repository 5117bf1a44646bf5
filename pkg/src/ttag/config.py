"""One experiment config: a dataclass, a YAML file, a stable hash.

Every artifact the pipeline writes embeds config_hash(), so a checkpoint
trained under one configuration refuses to be evaluated under another
unless the caller overrides explicitly.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import yaml

from .seeding import derive_seed


class ConfigError(ValueError):
    pass


_EMBEDDERS = ("hash", "file")
_LLM_KINDS = ("mock", "http")
_AGGREGATIONS = ("sum", "mean")


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    d: int = 384
    layers: int = 2
    max_summaries: int = 8          # reasoning summaries per node
    neighbors: int = 10             # sampled per hop
    aggregation: str = "sum"        # structural neighbor AGG
    time_augmented: bool = False    # feed [state cat Phi(dt)] to f_q/f_k/f_v

    # training
    batch_size: int = 256
    lr: float = 1e-4
    head_lr: float | None = None
    head_warmup_epochs: int = 0
    weight_decay: float = 0.0
    grad_clip: float | None = None
    epochs: int = 50
    patience: int = 5
    eval_interval: int = 5
    seeds: tuple[int, ...] = (0, 1, 2)

    # evaluation
    val_negatives: int = 100
    val_queries: int | None = None
    eval_negatives: int = 100

    # extraction and embedding
    embedder: str = "hash"
    embedder_seed: int = 0          # embeddings are data, shared across run seeds
    embedding_path: str | None = None
    history_limit: int | None = 32  # interactions shown per summarization prompt
    llm: str = "mock"
    llm_base_url: str = ""
    llm_model: str = ""
    llm_api_key_var: str = "LLM_API_KEY"

    deterministic: bool = True

    def validate(self) -> "ExperimentConfig":
        counts = ("d", "layers", "max_summaries", "neighbors", "batch_size",
                  "epochs", "patience", "eval_interval", "val_negatives",
                  "eval_negatives")
        for field in counts:
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.head_lr is not None and self.head_lr <= 0:
            raise ConfigError("head_lr must be positive when set")
        if self.head_warmup_epochs < 0:
            raise ConfigError("head_warmup_epochs must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if self.val_queries is not None and self.val_queries < 1:
            raise ConfigError("val_queries must be >= 1 when set")
        if self.history_limit is not None and self.history_limit < 1:
            raise ConfigError("history_limit must be >= 1 when set")
        if self.embedder not in _EMBEDDERS:
            raise ConfigError(f"embedder must be one of {_EMBEDDERS}")
        if self.embedder == "file" and not self.embedding_path:
            raise ConfigError("file embedder needs embedding_path")
        if self.llm not in _LLM_KINDS:
            raise ConfigError(f"llm must be one of {_LLM_KINDS}")
        if self.llm == "http" and not (self.llm_base_url and self.llm_model):
            raise ConfigError("http llm needs llm_base_url and llm_model")
        if self.aggregation not in _AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {_AGGREGATIONS}")
        return self

    def config_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.blake2b(payload.encode(), digest_size=6).hexdigest()

    def component_seed(self, seed: int, component: str) -> int:
        """Substream seed for one component of one run; see seeding module."""
        return derive_seed(seed, component)

    def save(self, path) -> None:
        data = dataclasses.asdict(self)
        data["seeds"] = list(data["seeds"])
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(data, fh, sort_keys=True)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the YAML file, then explicit overrides; flags win."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        data.update(loaded)
    data.update(overrides or {})
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "seeds" in data:
        data["seeds"] = tuple(data["seeds"])
    try:
        cfg = ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
