"""Run configuration: one flat JSON object with namespaced keys.

Every key has a default; a config file only lists overrides. Unknown keys
are rejected, and ``RunConfig.snapshot()`` materialises every default so a
run can be reproduced from its snapshot alone.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from types import MappingProxyType

from .core import PurgeConfig
from .embedding import EmbeddingProvider
from .evaluator import BackendConfig
from .exceptions import InvalidConfig
from .pluto import PlutoParams
from .projection import ProjectionConfig
from .synth import DEFAULT, INDUSTRY_STRESS, RESIDUAL_HEAVY, SynthConfig

DEFAULTS = MappingProxyType({
    "run.seed": 0,
    "run.strategy": "logpurge",
    "run.stage2": True,
    "run.with_labels": False,
    "run.workers": 4,
    "paths.cache_dir": None,
    "paths.out_dir": "logpurge_out",
    "paths.test": None,
    "parse.layout": "plain",
    "parse.depth": 4,
    "parse.sim_threshold": 0.4,
    "parse.max_children": 100,
    "window.window_len": 60,
    "window.stride": 30,
    "embed.kind": "deterministic",
    "embed.dim": 256,
    "embed.endpoint": None,
    "embed.max_inflight": 8,
    "embed.batch_size": 64,
    "regions.K": 20,
    "regions.k_nn": 10,
    "regions.epsilon": 1e-6,
    "regions.r_min": "auto",
    "regions.M": 5,
    "purge.n_max": 5,
    "purge.percentile": 80.0,
    "purge.min_size": 10,
    "purge.val_fraction": 0.2,
    "tsne.perplexity": 30.0,
    "tsne.iterations": 1000,
    "tsne.learning_rate": 200.0,
    "evaluator.backend": "deterministic",
    "evaluator.endpoint": None,
    "evaluator.model": "gpt-4o",
    "evaluator.max_retries": 2,
    "evaluator.timeout": 60.0,
    "detector.n": 3,
    "detector.top_k": 5,
    "pluto.alpha": 0.1,
    "pluto.spike_method": "max_gap",
    "pluto.percentile": 80.0,
    "pluto.center": True,
    "synth.preset": "default",
    "synth.n_sequences": None,
    "synth.anomaly_ratio": None,
    "synth.residual_rate": None,
    "synth.n_normal_patterns": None,
    "synth.n_anomaly_clusters": None,
})

_CHOICES = {
    "run.strategy": ("logpurge", "pluto"),
    "parse.layout": ("plain", "bgl"),
    "embed.kind": ("deterministic", "external"),
    "evaluator.backend": ("deterministic", "chat"),
    "pluto.spike_method": ("max_gap", "percentile"),
    "synth.preset": ("default", "residual_heavy", "industry_stress"),
}


def _flatten(obj, prefix=""):
    out = {}
    for key, value in obj.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(key, value):
    default = DEFAULTS[key]
    if value is None:
        return None
    if key == "regions.r_min":
        if value == "auto":
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{key} must be 'auto' or a number")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{key} must be true or false")
        return value
    if isinstance(default, int) or key in ("synth.n_sequences", "synth.n_normal_patterns",
                                          "synth.n_anomaly_clusters"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{key} must be an integer")
        return value
    if isinstance(default, float) or key in ("synth.anomaly_ratio", "synth.residual_rate"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise InvalidConfig(f"{key} must be a string")
    if key in _CHOICES and value not in _CHOICES[key]:
        raise InvalidConfig(f"{key} must be one of {', '.join(_CHOICES[key])}")
    return value


class RunConfig:
    """Validated, immutable mapping of namespaced keys to values."""

    def __init__(self, values=None):
        values = _flatten(dict(values or {}))
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
        merged = dict(DEFAULTS)
        merged.update({k: _coerce(k, v) for k, v in values.items()})
        self._values = MappingProxyType(merged)
        # building the module configs runs their own validation
        self.purge_config()
        self.projection_config()
        self.backend_config()
        self.provider()
        self.pluto_params()
        self.synth_config()

    @classmethod
    def load(cls, path, overrides=None):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidConfig("config must be a JSON object")
        data = _flatten(data)
        data.update(overrides or {})
        return cls(data)

    def __getitem__(self, key):
        return self._values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and dict(self._values) == dict(other._values)

    def replace(self, **overrides):
        """New config with ``overrides``; keys use ``__`` for the dot (``regions__K=8``)."""
        values = dict(self._values)
        values.update({k.replace("__", "."): v for k, v in overrides.items()})
        return RunConfig(values)

    def snapshot(self) -> dict:
        return dict(sorted(self._values.items()))

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), indent=2, sort_keys=True) + "\n"

    # -- module views --------------------------------------------------------

    def purge_config(self) -> PurgeConfig:
        v = self._values
        return PurgeConfig(K=v["regions.K"], k_nn=v["regions.k_nn"], epsilon=v["regions.epsilon"],
                           r_min=v["regions.r_min"], M=v["regions.M"], n_max=v["purge.n_max"],
                           percentile=v["purge.percentile"], window_len=v["window.window_len"],
                           stride=v["window.stride"], seed=v["run.seed"], min_size=v["purge.min_size"],
                           val_fraction=v["purge.val_fraction"])

    def projection_config(self) -> ProjectionConfig:
        v = self._values
        return ProjectionConfig(perplexity=v["tsne.perplexity"], iterations=v["tsne.iterations"],
                                learning_rate=v["tsne.learning_rate"], seed=v["run.seed"])

    def backend_config(self, cache_path=None) -> BackendConfig:
        v = self._values
        kind = "chat_service" if v["evaluator.backend"] == "chat" else "deterministic"
        return BackendConfig(kind=kind, endpoint=v["evaluator.endpoint"], model_name=v["evaluator.model"],
                             max_retries=v["evaluator.max_retries"], cache_path=cache_path,
                             max_inflight=v["run.workers"], timeout=v["evaluator.timeout"])

    def provider(self, cache_path=None) -> EmbeddingProvider:
        v = self._values
        return EmbeddingProvider(kind=v["embed.kind"], dim=v["embed.dim"], endpoint=v["embed.endpoint"],
                                 cache_path=cache_path)

    def pluto_params(self) -> PlutoParams:
        v = self._values
        return PlutoParams(alpha=v["pluto.alpha"], spike_method=v["pluto.spike_method"],
                           percentile=v["pluto.percentile"])

    def synth_config(self) -> SynthConfig:
        v = self._values
        base = {"default": DEFAULT, "residual_heavy": RESIDUAL_HEAVY,
                "industry_stress": INDUSTRY_STRESS}[v["synth.preset"]]
        fields = {k.split(".", 1)[1]: v[k] for k in DEFAULTS
                  if k.startswith("synth.") and k != "synth.preset" and v[k] is not None}
        fields["seed"] = v["run.seed"]
        fields["window_len"] = v["window.window_len"]
        fields["stride"] = v["window.stride"]
        return replace(base, **fields)

    def cache_file(self, name):
        d = self._values["paths.cache_dir"]
        return None if d is None else str(Path(d) / name)
