"""File formats: ascii PLY and CSV clouds, JSON config/report, npz checkpoints.

Clouds are written with 9 significant digits so export/load round-trips
are exact at that precision. JSON artifacts use sorted keys so reruns
diff cleanly.
"""

import json
from pathlib import Path

import numpy as np

from .numerics import LinearParams
from .offsetnet import OffsetNetParams
from .pipeline import PipelineConfig, PipelineParams
from .proxy import HeadParams, ProxyBiasParams, ProxyBlockParams

_FMT = "%.9g"


def _infer_format(path, fmt):
    if fmt is not None:
        return fmt
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in ("ply", "csv"):
        return suffix
    raise ValueError(f"cannot infer cloud format from {path!r}; pass ply or csv")


def export_cloud(cloud, path, fmt: str | None = None) -> None:
    """Write an (N, 3) cloud as ascii PLY or CSV."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    fmt = _infer_format(path, fmt)
    lines = []
    if fmt == "ply":
        lines += ["ply", "format ascii 1.0", f"element vertex {cloud.shape[0]}",
                  "property float x", "property float y", "property float z",
                  "end_header"]
    elif fmt == "csv":
        lines.append("x,y,z")
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")
    sep = " " if fmt == "ply" else ","
    for row in cloud:
        lines.append(sep.join(_FMT % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_cloud(path, fmt: str | None = None) -> np.ndarray:
    """Read a cloud written by export_cloud."""
    fmt = _infer_format(path, fmt)
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if fmt == "ply":
        if not lines or lines[0] != "ply":
            raise ValueError(f"{path}: not a PLY file")
        if "format ascii 1.0" not in lines[1]:
            raise ValueError(f"{path}: only ascii 1.0 PLY is supported")
        try:
            end = lines.index("end_header")
        except ValueError:
            raise ValueError(f"{path}: missing end_header") from None
        n = 0
        for ln in lines[:end]:
            if ln.startswith("element vertex"):
                n = int(ln.split()[-1])
        body = lines[end + 1:end + 1 + n]
        if len(body) != n:
            raise ValueError(f"{path}: expected {n} vertices, found {len(body)}")
        rows = [[float(v) for v in ln.split()[:3]] for ln in body]
    else:
        if lines[0].lower().replace(" ", "") != "x,y,z":
            raise ValueError(f"{path}: missing x,y,z header")
        rows = [[float(v) for v in ln.split(",")[:3]] for ln in lines[1:]]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def load_config(path) -> PipelineConfig:
    """Read a config JSON; json parse errors carry line/column locations."""
    with open(path) as fh:
        data = json.load(fh)
    return PipelineConfig.from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")


def save_report(report, path) -> None:
    """Write a report (RunReport or plain dict) as stable-ordered JSON."""
    data = report.to_dict() if hasattr(report, "to_dict") else report
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def _linear_entries(prefix: str, p: LinearParams) -> dict:
    out = {f"{prefix}.weight": p.weight}
    if p.bias is not None:
        out[f"{prefix}.bias"] = p.bias
    return out


def _block_entries(prefix: str, b: ProxyBlockParams) -> dict:
    out = {}
    for name in ("wq", "wk", "wv", "wp", "ffn1", "ffn2"):
        out.update(_linear_entries(f"{prefix}.{name}", getattr(b, name)))
    out[f"{prefix}.bias.b_d"] = b.bias.b_d
    out[f"{prefix}.bias.b_c"] = b.bias.b_c
    out[f"{prefix}.bias.b_r"] = b.bias.b_r
    return out


def save_params(params: PipelineParams, path) -> None:
    """Checkpoint all pipeline parameters to one npz file.

    The offset output layer is stored as bare weights; it has no bias
    key because none exists.
    """
    entries = {
        "offset.w1": params.offset.w1,
        "offset.b1": params.offset.b1,
        "offset.w2": params.offset.w2,
    }
    entries.update(_linear_entries("pointnet", params.pointnet))
    entries.update(_linear_entries("pool", params.pool_score))
    for i, block in enumerate(params.text_blocks):
        entries.update(_block_entries(f"text.{i}", block))
    for i, block in enumerate(params.image_blocks):
        entries.update(_block_entries(f"image.{i}", block))
    entries.update(_linear_entries("heads.u_text", params.heads.u_text))
    entries.update(_linear_entries("heads.u_image", params.heads.u_image))
    np.savez(path, **entries)


def _load_linear(data, prefix: str) -> LinearParams:
    bias_key = f"{prefix}.bias"
    return LinearParams(data[f"{prefix}.weight"],
                        data[bias_key] if bias_key in data else None)


def _load_block(data, prefix: str) -> ProxyBlockParams:
    return ProxyBlockParams(
        wq=_load_linear(data, f"{prefix}.wq"),
        wk=_load_linear(data, f"{prefix}.wk"),
        wv=_load_linear(data, f"{prefix}.wv"),
        wp=_load_linear(data, f"{prefix}.wp"),
        ffn1=_load_linear(data, f"{prefix}.ffn1"),
        ffn2=_load_linear(data, f"{prefix}.ffn2"),
        bias=ProxyBiasParams(data[f"{prefix}.bias.b_d"], data[f"{prefix}.bias.b_c"],
                             data[f"{prefix}.bias.b_r"]),
    )


def load_params(path) -> PipelineParams:
    """Restore a checkpoint written by save_params."""
    with np.load(path) as npz:
        data = {k: npz[k] for k in npz.files}
    n_text = len({k.split(".")[1] for k in data if k.startswith("text.")})
    n_image = len({k.split(".")[1] for k in data if k.startswith("image.")})
    return PipelineParams(
        offset=OffsetNetParams(data["offset.w1"], data["offset.b1"], data["offset.w2"]),
        pointnet=_load_linear(data, "pointnet"),
        pool_score=_load_linear(data, "pool"),
        text_blocks=[_load_block(data, f"text.{i}") for i in range(n_text)],
        image_blocks=[_load_block(data, f"image.{i}") for i in range(n_image)],
        heads=HeadParams(_load_linear(data, "heads.u_text"),
                         _load_linear(data, "heads.u_image")),
    )
