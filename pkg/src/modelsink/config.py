"""Hub and agent deployment config files (TOML, strict keys).

    [hub]                                [agent]
    listen_host = "0.0.0.0"              name = "center"
    push_port = 7401                     key = "<32 hex>"
    poll_port = 7402                     models = ["center.model.toml"]
    admin_port = 7403                    hub_push = "hubhost:7401"
    key = "<32 hex>"                     hub_poll = "hubhost:7402"
    mapping = "mapping.toml"             poll_interval_ms = 100
    consumers = ["<32 hex>", ...]        api_port = 7471
"""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig
from .hub import ConfigError, HubConfig

_HUB_KEYS = {"listen_host", "push_port", "poll_port", "admin_port", "key",
             "mapping", "consumers", "batch_limit", "queue_capacity",
             "ping_timeout_ms"}
_AGENT_KEYS = {"name", "key", "models", "hub_push", "hub_poll",
               "poll_interval_ms", "ping_period_ms", "comm_fail_threshold",
               "reconnect_initial_ms", "reconnect_max_ms", "outbound_buffer",
               "api_host", "api_port"}


def _load_section(path: Path, section: str, allowed: set[str]) -> dict:
    try:
        doc = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    body = doc.get(section)
    if not isinstance(body, dict):
        raise ConfigError(f"{path}: missing [{section}] section")
    for key in doc:
        if key != section:
            raise ConfigError(f"{path}: unknown section {key!r}")
    for key in body:
        if key not in allowed:
            raise ConfigError(f"{path}: [{section}]: unknown key {key!r}")
    return body


def _hex_key(text, path) -> bytes:
    if not isinstance(text, str):
        raise ConfigError(f"{path}: key must be a 32-hex-char string")
    try:
        key = bytes.fromhex(text)
    except ValueError as exc:
        raise ConfigError(f"{path}: key is not valid hex") from exc
    if len(key) != 16:
        raise ConfigError(f"{path}: key must be exactly 16 bytes")
    return key


def _address(text, path) -> tuple[str, int]:
    if not isinstance(text, str) or ":" not in text:
        raise ConfigError(f"{path}: address must look like host:port")
    host, _, port_text = text.rpartition(":")
    try:
        port = int(port_text)
    except ValueError as exc:
        raise ConfigError(f"{path}: bad port in {text!r}") from exc
    return host, port


def load_hub_config(path: str | Path) -> HubConfig:
    path = Path(path)
    body = _load_section(path, "hub", _HUB_KEYS)
    consumers = body.get("consumers")
    if not isinstance(consumers, list) or not consumers:
        raise ConfigError(f"{path}: consumers must be a non-empty list of hex uids")
    uids = []
    for item in consumers:
        try:
            uid = bytes.fromhex(item)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: bad consumer uid {item!r}") from exc
        if len(uid) != 16:
            raise ConfigError(f"{path}: consumer uid {item!r} must be 32 hex chars")
        uids.append(uid)
    mapping = body.get("mapping")
    config = HubConfig(
        consumer_uids=uids,
        key=_hex_key(body.get("key"), path),
        mapping_path=str(path.parent / mapping) if mapping else None,
        listen_host=body.get("listen_host", "127.0.0.1"),
        push_port=body.get("push_port", 0),
        poll_port=body.get("poll_port", 0),
        admin_port=body.get("admin_port", 0),
        batch_limit=body.get("batch_limit", 32),
        queue_capacity=body.get("queue_capacity", 65536),
        ping_timeout_ms=body.get("ping_timeout_ms", 3000),
    )
    config.validate()
    return config


def load_agent_config(path: str | Path) -> AgentConfig:
    path = Path(path)
    body = _load_section(path, "agent", _AGENT_KEYS)
    models = body.get("models")
    if not isinstance(models, list) or not models:
        raise ConfigError(f"{path}: models must be a non-empty list of files")
    config = AgentConfig(
        key=_hex_key(body.get("key"), path),
        model_paths=[str(path.parent / m) for m in models],
        name=body.get("name", path.stem),
        hub_push_address=_address(body.get("hub_push"), path),
        hub_poll_address=_address(body.get("hub_poll"), path),
        poll_interval_ms=body.get("poll_interval_ms", 1000),
        ping_period_ms=body.get("ping_period_ms", 1000),
        comm_fail_threshold=body.get("comm_fail_threshold", 3),
        reconnect_initial_ms=body.get("reconnect_initial_ms", 200),
        reconnect_max_ms=body.get("reconnect_max_ms", 5000),
        outbound_buffer=body.get("outbound_buffer", 1024),
        local_api_host=body.get("api_host", "127.0.0.1"),
        local_api_port=body.get("api_port", 7471),
    )
    try:
        config.validate()
    except Exception as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config
