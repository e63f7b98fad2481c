"""Flat parameter vector with a named-slice registry, plus checkpoint I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkParameters:
    vector: np.ndarray
    registry: tuple[tuple[str, int, int, tuple[int, ...]], ...]

    def __post_init__(self):
        v = np.array(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("parameter vector must be 1-D")
        end = 0
        for name, start, stop, shape in self.registry:
            if start != end or stop - start != int(np.prod(shape, dtype=np.int64)):
                raise ValueError(f"registry entry {name!r} is inconsistent")
            end = stop
        if end != len(v):
            raise ValueError(f"registry covers {end} values but vector has {len(v)}")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @classmethod
    def from_arrays(cls, named: list[tuple[str, np.ndarray]]) -> "NetworkParameters":
        registry, chunks, start = [], [], 0
        for name, arr in named:
            arr = np.asarray(arr, dtype=np.float64)
            registry.append((name, start, start + arr.size, tuple(arr.shape)))
            chunks.append(arr.reshape(-1))
            start += arr.size
        return cls(np.concatenate(chunks) if chunks else np.zeros(0), tuple(registry))

    def __len__(self) -> int:
        return len(self.vector)

    def names(self) -> list[str]:
        return [r[0] for r in self.registry]

    def entry(self, name: str) -> tuple[int, int, tuple[int, ...]]:
        for n, start, stop, shape in self.registry:
            if n == name:
                return start, stop, shape
        raise KeyError(name)

    def __getitem__(self, name: str) -> np.ndarray:
        start, stop, shape = self.entry(name)
        return self.vector[start:stop].reshape(shape)

    def with_vector(self, vector: np.ndarray) -> "NetworkParameters":
        return NetworkParameters(vector, self.registry)

    def replace(self, name: str, values: np.ndarray) -> "NetworkParameters":
        start, stop, _ = self.entry(name)
        v = self.vector.copy()
        v[start:stop] = np.asarray(values, dtype=np.float64).reshape(-1)
        return self.with_vector(v)


def checkpoint_dumps(params: NetworkParameters, model: str, config: dict) -> str:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model": model,
        "config": config,
        "registry": [[n, s, e, list(shape)] for n, s, e, shape in params.registry],
        # json writes floats with repr, which round-trips float64 exactly
        "parameters": [float(x) for x in params.vector],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def checkpoint_loads(text: str) -> tuple[NetworkParameters, str, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a checkpoint: {exc}") from None
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    registry = tuple((n, int(s), int(e), tuple(shape)) for n, s, e, shape in doc["registry"])
    params = NetworkParameters(np.array(doc["parameters"], dtype=np.float64), registry)
    return params, doc["model"], doc["config"]


def save_checkpoint(path: str | Path, params: NetworkParameters, model: str, config: dict) -> None:
    Path(path).write_text(checkpoint_dumps(params, model, config))


def load_checkpoint(path: str | Path) -> tuple[NetworkParameters, str, dict]:
    return checkpoint_loads(Path(path).read_text())
