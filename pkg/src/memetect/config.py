"""Runtime configuration with flags > environment > config file > defaults precedence.

Every trace and report carries a snapshot of the effective configuration so
automated runs are replayable bit-for-bit.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

from .errors import InputError

ENV_CONFIG_PATH = "MEMETECT_CONFIG"
ENV_SEARCH_API_KEY = "MEMETECT_SEARCH_API_KEY"


@dataclass
class Config:
    """Effective configuration. Field names use dotted keys in files/flags."""

    # decompose
    ocr_backend: str = "glyph"
    # search
    search_n: int = 50
    search_refine_factor: int = 3
    search_endpoint: str = ""
    search_api_key: str = ""
    search_rate_limit: float = 1.0
    search_cache_dir: str = ""
    search_orb_features: int = 512
    # relate
    relate_tau_share: float = 0.85
    relate_tau_novel: float = 0.3
    relate_tau_novel_visual: float = 0.2
    relate_tau_feat: int = 25
    relate_tau_text: float = 0.8
    relate_identity_distance: float = 0.02
    relate_identity_text: float = 0.05
    # protocol
    protocol_trend_min_hits: int = 2
    protocol_trend_dissimilarity: float = 0.5
    # audit
    audit_k: int = 200
    audit_seed: int = 0

    _DOTTED = {
        "ocr.backend": "ocr_backend",
        "search.n": "search_n",
        "search.refine_factor": "search_refine_factor",
        "search.endpoint": "search_endpoint",
        "search.api_key": "search_api_key",
        "search.rate_limit": "search_rate_limit",
        "search.cache_dir": "search_cache_dir",
        "search.orb_features": "search_orb_features",
        "relate.tau_share": "relate_tau_share",
        "relate.tau_novel": "relate_tau_novel",
        "relate.tau_novel_visual": "relate_tau_novel_visual",
        "relate.tau_feat": "relate_tau_feat",
        "relate.tau_text": "relate_tau_text",
        "relate.identity_distance": "relate_identity_distance",
        "relate.identity_text": "relate_identity_text",
        "protocol.trend_min_hits": "protocol_trend_min_hits",
        "protocol.trend_dissimilarity": "protocol_trend_dissimilarity",
        "audit.k": "audit_k",
        "audit.seed": "audit_seed",
    }

    def set_dotted(self, key: str, value: Any) -> None:
        attr = self._DOTTED.get(key)
        if attr is None:
            raise InputError(f"unknown configuration key: {key}")
        current = getattr(self, attr)
        try:
            if isinstance(current, bool):
                coerced: Any = value in (True, "true", "1", 1)
            elif isinstance(current, int):
                coerced = int(value)
            elif isinstance(current, float):
                coerced = float(value)
            else:
                coerced = str(value)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad value for {key}: {value!r}") from exc
        setattr(self, attr, coerced)

    def snapshot(self) -> dict[str, Any]:
        """Dotted-key dict of the effective configuration (api key redacted)."""
        out: dict[str, Any] = {}
        rev = {attr: key for key, attr in self._DOTTED.items()}
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            key = rev.get(f.name, f.name)
            value = getattr(self, f.name)
            if f.name == "search_api_key" and value:
                value = "***"
            out[key] = value
        return out


def _flatten(prefix: str, node: Any, out: dict[str, Any]) -> None:
    if isinstance(node, Mapping):
        for key, value in node.items():
            dotted = f"{prefix}.{key}" if prefix else str(key)
            _flatten(dotted, value, out)
    else:
        out[prefix] = node


def load_config(
    path: str | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> Config:
    """Build a Config honoring flags > env > config file > defaults."""
    env = os.environ if env is None else env
    cfg = Config()

    path = path or env.get(ENV_CONFIG_PATH) or None
    if path:
        if not os.path.exists(path):
            raise InputError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            if path.endswith((".yaml", ".yml")):
                import yaml

                data = yaml.safe_load(fh) or {}
            else:
                data = json.load(fh)
        flat: dict[str, Any] = {}
        _flatten("", data, flat)
        for key, value in flat.items():
            cfg.set_dotted(key, value)

    if env.get(ENV_SEARCH_API_KEY):
        cfg.search_api_key = env[ENV_SEARCH_API_KEY]

    for key, value in (overrides or {}).items():
        if value is not None:
            cfg.set_dotted(key, value)
    return cfg
