"""Checkpoint container: a directory holding a JSON spec card plus a flat
binary parameter archive for the trainable pieces (branch and taps).

The frozen base is referenced, never copied: the card's "base" entry either
names the seed that procedurally builds the toy base or points at a separate
base-only archive directory. The archive format is deliberately dumb:
params.json lists every tensor (name, dtype, shape, byte offset) in sorted
order and params.bin holds the raw little-endian bytes back to back, so
save -> load -> save round-trips byte-for-byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .adapters import SpaceToChannelVae, ToyTextEncoder, ToyTokenizer
from .errors import IoError, SchemaError, ShapeError
from .model import AttentionSite, Denoiser, DenoiserSpec, Taps
from .train import ModelBundle, vp_schedule

FORMAT_VERSION = 2
SPEC_FILE = "spec.json"
INDEX_FILE = "params.json"
DATA_FILE = "params.bin"

_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64}


def _spec_to_json(spec: DenoiserSpec) -> dict:
    return {
        "widths": list(spec.widths),
        "attention": [
            {"layer": s.layer, "heads": s.heads, "head_dim": s.head_dim} for s in spec.attention
        ],
        "latent_channels": spec.latent_channels,
        "latent_size": list(spec.latent_size),
        "text_dim": spec.text_dim,
        "token_len": spec.token_len,
        "time_dim": spec.time_dim,
        "groups": spec.groups,
        "attn_inject": spec.attn_inject,
    }


def _spec_from_json(doc: dict) -> DenoiserSpec:
    try:
        return DenoiserSpec(
            widths=tuple(doc["widths"]),
            attention=tuple(AttentionSite(**site) for site in doc["attention"]),
            latent_channels=doc["latent_channels"],
            latent_size=tuple(doc["latent_size"]),
            text_dim=doc["text_dim"],
            token_len=doc["token_len"],
            time_dim=doc["time_dim"],
            groups=doc["groups"],
            attn_inject=doc["attn_inject"],
        )
    except (KeyError, TypeError, ShapeError) as exc:
        raise SchemaError(f"bad denoiser card: {exc}") from exc


def _write_archive(tensors: dict[str, torch.Tensor], path: Path) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in sorted(tensors.items()):
        arr = tensor.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise SchemaError(f"unsupported tensor dtype {dtype} for {name}")
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    (path / INDEX_FILE).write_text(json.dumps({"tensors": entries}, indent=0, sort_keys=True) + "\n")
    (path / DATA_FILE).write_bytes(b"".join(blobs))


def _read_archive(path: Path) -> dict[str, torch.Tensor]:
    try:
        index = json.loads((path / INDEX_FILE).read_text())
        raw = (path / DATA_FILE).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read parameter archive at {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"parameter index is not valid JSON: {exc}") from exc
    out: dict[str, torch.Tensor] = {}
    for entry in index.get("tensors", []):
        name = entry["name"]
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise SchemaError(f"unknown dtype {entry['dtype']} for {name}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(raw):
            raise SchemaError(f"tensor {name} runs past the end of {DATA_FILE}")
        arr = np.frombuffer(
            raw, dtype=dtype, count=nbytes // np.dtype(dtype).itemsize, offset=start
        ).reshape(entry["shape"])
        out[name] = torch.from_numpy(arr.copy())
    return out


def _load_group(tensors: dict[str, torch.Tensor], prefix: str, module: torch.nn.Module) -> None:
    group = {}
    for name, tensor in tensors.items():
        head, _, rest = name.partition(".")
        if head == prefix:
            group[rest] = tensor
    want = {k: tuple(v.shape) for k, v in module.state_dict().items()}
    have = {k: tuple(v.shape) for k, v in group.items()}
    if want != have:
        missing = sorted(set(want) - set(have))
        extra = sorted(set(have) - set(want))
        shapes = sorted(k for k in set(want) & set(have) if want[k] != have[k])
        raise SchemaError(
            f"checkpoint does not match its card for '{prefix}': "
            f"missing={missing} extra={extra} shape_mismatch={shapes}"
        )
    module.load_state_dict(group)


def save_base_archive(base: Denoiser, path) -> None:
    """Write a standalone base-parameter archive that checkpoints can
    reference by path."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        _write_archive({f"base.{k}": v for k, v in base.state_dict().items()}, path)
    except OSError as exc:
        raise IoError(f"cannot write base archive at {path}: {exc}") from exc


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Serialize the card plus the branch and tap parameters. The frozen base
    is recorded as a reference (seed recipe or archive path), never copied."""
    if not bundle.base_ref:
        raise SchemaError(
            "bundle has no base_ref; set {'source': 'seed' | 'path', ...} so the "
            "base can be referenced instead of copied"
        )
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        card = {
            "format": FORMAT_VERSION,
            "preset": bundle.preset,
            "w_default": bundle.w_default,
            "base": bundle.base_ref,
            "denoiser": _spec_to_json(bundle.spec),
            "taps": [
                {"site": p.site, "index": p.index} for p in bundle.taps.control_points()
            ],
            "vae": {"factor": bundle.vae.factor, "image_channels": bundle.vae.image_channels},
            "tokenizer": {
                "length": bundle.tokenizer.length,
                "vocab_size": bundle.tokenizer.vocab_size,
            },
            "text_encoder": {
                "dim": bundle.text_encoder.dim,
                "vocab_size": bundle.text_encoder.vocab_size,
                "length": bundle.text_encoder.length,
                "seed": bundle.text_encoder.seed,
            },
            "schedule": bundle.schedule_params,
        }
        (path / SPEC_FILE).write_text(json.dumps(card, indent=2, sort_keys=True) + "\n")
        tensors: dict[str, torch.Tensor] = {}
        for prefix, module in (("branch", bundle.branch), ("taps", bundle.taps)):
            for name, tensor in module.state_dict().items():
                tensors[f"{prefix}.{name}"] = tensor
        _write_archive(tensors, path)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint at {path}: {exc}") from exc


def _rebuild_base(ref: dict, spec: DenoiserSpec, ckpt_dir: Path) -> Denoiser:
    source = ref.get("source")
    if source == "seed":
        torch.manual_seed(int(ref["seed"]))
        return Denoiser(spec)
    if source == "path":
        base = Denoiser(spec)
        base_dir = Path(ref["path"])
        if not base_dir.is_absolute():
            base_dir = ckpt_dir / base_dir
        _load_group(_read_archive(base_dir), "base", base)
        return base
    raise SchemaError(f"unknown base reference {ref!r}")


def load_checkpoint(path) -> ModelBundle:
    path = Path(path)
    try:
        card = json.loads((path / SPEC_FILE).read_text())
    except OSError as exc:
        raise IoError(f"cannot read checkpoint at {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"checkpoint metadata is not valid JSON: {exc}") from exc

    if card.get("format") != FORMAT_VERSION:
        raise SchemaError(f"unsupported checkpoint format {card.get('format')!r}")
    spec = _spec_from_json(card.get("denoiser", {}))
    try:
        vae = SpaceToChannelVae(**card["vae"])
        tokenizer = ToyTokenizer(**card["tokenizer"])
        encoder = ToyTextEncoder(**card["text_encoder"])
        sched_params = dict(card["schedule"])
        schedule = vp_schedule(**sched_params)
        base_ref = dict(card["base"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad checkpoint card: {exc}") from exc

    base = _rebuild_base(base_ref, spec, path)
    branch = Denoiser(spec, in_channels=spec.branch_in_channels)
    taps = Taps(spec)
    tensors = _read_archive(path)
    for name in tensors:
        if name.split(".", 1)[0] not in ("branch", "taps"):
            raise SchemaError(f"unknown tensor group in checkpoint: {name}")
    _load_group(tensors, "branch", branch)
    _load_group(tensors, "taps", taps)

    for p in base.parameters():
        p.requires_grad_(False)
    base.eval()

    return ModelBundle(
        spec=spec,
        base=base,
        branch=branch,
        taps=taps,
        vae=vae,
        tokenizer=tokenizer,
        text_encoder=encoder,
        schedule=schedule,
        preset=card.get("preset", "toy"),
        w_default=card.get("w_default", 1.0),
        schedule_params=sched_params,
        base_ref=base_ref,
    )
