"""Config parsing and artifact serialization.

Fleet/transformer configs are JSON.  Device entries use field units that
are convenient to write (GFLOPS, GB, Mbps, mW, GFLOPs cap) and are converted
to the internal ms/bytes/bits units on load:

    compute   = gflops * 1e6      FLOPs per ms
    memory    = mem_gb * 1e9      bytes (decimal gigabytes)
    bandwidth = bandwidth_mbps * 1e3   bits per ms
    flops_cap = flops_cap_g * 1e9 FLOPs per inference

Every artifact this package writes carries ``format_version`` (JSON field
or a leading ``# format_version=N`` comment in CSVs); readers refuse
versions they do not understand.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .model import (DecompositionPolicy, DeviceFleet, DeviceSpec,
                    SubModelConfig, TransformerConfig)

FORMAT_VERSION = 1

_DEVICE_FIELDS = ("name", "gflops", "mem_gb", "bandwidth_mbps",
                  "busy_power_mw", "idle_power_mw", "flops_cap_g")
_TRANSFORMER_FIELDS = ("layers", "dim", "heads", "mlp_dim", "seq_len",
                       "classes")


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")


def _parse_transformer(t: dict) -> TransformerConfig:
    missing = [f for f in _TRANSFORMER_FIELDS if f not in t]
    if missing:
        raise ConfigError(f"transformer section missing {missing}")
    try:
        return TransformerConfig(
            layers=int(t["layers"]), embed_dim=int(t["dim"]),
            heads=int(t["heads"]), mlp_dim=int(t["mlp_dim"]),
            seq_len=int(t["seq_len"]), num_classes=int(t["classes"]),
            bytes_per_param=int(t.get("bytes_per_param", 4)))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad transformer section: {exc}")


def load_transformer(path) -> TransformerConfig:
    """Parse a transformer config; the file may or may not nest it."""
    raw = _read_json(path)
    return _parse_transformer(raw.get("transformer", raw))


def load_config(path) -> tuple[TransformerConfig, DeviceFleet]:
    """Parse a combined transformer + fleet config file."""
    raw = _read_json(path)

    if "transformer" not in raw or "devices" not in raw:
        raise ConfigError("config needs 'transformer' and 'devices' sections")

    base = _parse_transformer(raw["transformer"])

    devices = []
    for i, entry in enumerate(raw["devices"]):
        missing = [f for f in _DEVICE_FIELDS if f not in entry]
        if missing:
            raise ConfigError(f"device {i} missing fields {missing}")
        try:
            devices.append(DeviceSpec(
                name=str(entry["name"]),
                compute=float(entry["gflops"]) * 1e6,
                memory=float(entry["mem_gb"]) * 1e9,
                flops_cap=float(entry["flops_cap_g"]) * 1e9,
                bandwidth=float(entry["bandwidth_mbps"]) * 1e3,
                busy_power=float(entry["busy_power_mw"]),
                idle_power=float(entry["idle_power_mw"])))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad device entry {i}: {exc}")

    central = raw.get("central", 0)
    if isinstance(central, str):
        names = [d.name for d in devices]
        if central not in names:
            raise ConfigError(f"central device {central!r} not in fleet")
        central = names.index(central)
    try:
        fleet = DeviceFleet(tuple(devices), central_index=int(central))
    except ValueError as exc:
        raise ConfigError(str(exc))
    return base, fleet


def policy_to_dict(policy: DecompositionPolicy) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "sub_models": [
            {"layers": c.layers, "embed_dim": c.embed_dim,
             "heads_per_layer": list(c.heads_per_layer),
             "mlp_dims": list(c.mlp_dims)}
            for c in policy.sub_models],
    }


def save_policy(policy: DecompositionPolicy, path,
                extra: dict | None = None) -> None:
    blob = policy_to_dict(policy)
    if extra:
        blob.update(extra)
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_policy(path) -> DecompositionPolicy:
    try:
        with open(path) as fh:
            blob = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"policy file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"policy file {path} is not valid JSON: {exc}")
    if blob.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"policy file {path}: unsupported format_version "
            f"{blob.get('format_version')!r}")
    subs = tuple(
        SubModelConfig(int(s["layers"]), int(s["embed_dim"]),
                       tuple(int(h) for h in s["heads_per_layer"]),
                       tuple(int(m) for m in s["mlp_dims"]))
        for s in blob["sub_models"])
    return DecompositionPolicy(subs)


def write_csv(path, header: str, rows: list[str]) -> None:
    """Write a versioned CSV artifact."""
    lines = [f"# format_version={FORMAT_VERSION}", header]
    lines.extend(rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[str, list[str]]:
    """Read a versioned CSV artifact; returns (header, rows)."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"artifact not found: {path}")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# format_version="):
        raise ConfigError(f"artifact {path} has no format_version tag")
    version = lines[0].split("=", 1)[1]
    if version != str(FORMAT_VERSION):
        raise ConfigError(
            f"artifact {path}: unsupported format_version {version}")
    if len(lines) < 2:
        raise ConfigError(f"artifact {path} has no header row")
    return lines[1], lines[2:]
