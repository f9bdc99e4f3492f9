"""Binary and text artifacts. Every binary file starts with a versioned magic."""

import io
import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import trimesh

from Handlers.SgdfDecoder import LatentTable, SgdfDecoder
from Models.Dataset import DatasetManifest, GraspProvenance, GraspSet, SgdfSamples
from Models.Episode import MetricReport
from Models.Errors import FormatError, VersionMismatchError
from Models.Geometry import PointCloud
from Models.Planning import PlanResult
from Models.Training import DecoderArch, EpochLog

logger = logging.getLogger(__name__)

DEPTH_MAGIC = b"DPTH1"
MAPS_MAGIC = b"MAPS1"
GRASP_MAGIC = b"GRSP1"
SAMPLES_MAGIC = b"SGDS1"
CHECKPOINT_MAGIC = b"SGDF1"
CHECKPOINT_VERSION = 1
MAGICS = {DEPTH_MAGIC: "depth", MAPS_MAGIC: "maps", GRASP_MAGIC: "grasps", SAMPLES_MAGIC: "samples", CHECKPOINT_MAGIC: "checkpoint"}


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _check_magic(data: bytes, magic: bytes, path) -> int:
    if data.startswith(magic):
        return len(magic)
    if data.startswith(magic[:-1]):
        found = data[len(magic) - 1:len(magic)].decode(errors="replace")
        raise VersionMismatchError(f"{path}: {MAGICS[magic]} format version {found!r} is not supported")
    raise FormatError(f"{path}: not a {MAGICS[magic]} file")


def _read(path, magic: bytes) -> tuple[bytes, int]:
    data = Path(path).read_bytes()
    return data, _check_magic(data, magic, path)


def _floats(data: bytes, offset: int, count: int, path) -> np.ndarray:
    end = offset + 4 * count
    if len(data) < end:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float64)


# ---- images -----------------------------------------------------------------------

def save_depth(path, depth: np.ndarray) -> None:
    height, width = depth.shape
    atomic_write(path, DEPTH_MAGIC + struct.pack("<II", width, height) + depth.astype("<f4").tobytes())


def load_depth(path) -> np.ndarray:
    data, offset = _read(path, DEPTH_MAGIC)
    width, height = struct.unpack_from("<II", data, offset)
    return _floats(data, offset + 8, width * height, path).reshape(height, width)


def save_maps(path, maps: np.ndarray) -> None:
    """(H, W, C) tensor, channel-minor."""
    maps = maps if maps.ndim == 3 else maps[:, :, None]
    height, width, channels = maps.shape
    atomic_write(path, MAPS_MAGIC + struct.pack("<III", height, width, channels) + maps.astype("<f4").tobytes())


def load_maps(path) -> np.ndarray:
    data, offset = _read(path, MAPS_MAGIC)
    height, width, channels = struct.unpack_from("<III", data, offset)
    return _floats(data, offset + 12, height * width * channels, path).reshape(height, width, channels)


# ---- dataset ----------------------------------------------------------------------

def save_grasp_set(path, grasp_set: GraspSet) -> None:
    rows = grasp_set.poses[:, :3, :4].reshape(-1, 12)
    atomic_write(path, GRASP_MAGIC + struct.pack("<I", len(rows)) + rows.astype("<f4").tobytes())


def load_grasp_set(path, object_id: str, provenance: GraspProvenance) -> GraspSet:
    data, offset = _read(path, GRASP_MAGIC)
    (count,) = struct.unpack_from("<I", data, offset)
    rows = _floats(data, offset + 4, 12 * count, path).reshape(count, 3, 4)
    poses = np.tile(np.eye(4), (count, 1, 1))
    poses[:, :3, :4] = rows
    return GraspSet(object_id=object_id, poses=poses, provenance=provenance)


def save_samples(path, samples: SgdfSamples) -> None:
    records = np.column_stack([
        samples.x,
        samples.s[:, None],
        samples.delta_t,
        samples.rotation.reshape(-1, 9),
    ])
    atomic_write(path, SAMPLES_MAGIC + struct.pack("<I", len(records)) + records.astype("<f4").tobytes())


def load_samples(path) -> SgdfSamples:
    data, offset = _read(path, SAMPLES_MAGIC)
    (count,) = struct.unpack_from("<I", data, offset)
    records = _floats(data, offset + 4, 16 * count, path).reshape(count, 16)
    return SgdfSamples(
        x=records[:, 0:3],
        s=records[:, 3],
        delta_t=records[:, 4:7],
        rotation=records[:, 7:16].reshape(-1, 3, 3),
    )


def save_manifest(path, manifest: DatasetManifest) -> None:
    atomic_write_text(path, manifest.model_dump_json(indent=2))


def load_manifest(path) -> DatasetManifest:
    try:
        return DatasetManifest.model_validate_json(Path(path).read_text())
    except ValueError as e:
        raise FormatError(f"{path}: invalid manifest: {e}") from e


def load_dataset(manifest_path) -> tuple[DatasetManifest, dict[str, SgdfSamples]]:
    manifest = load_manifest(manifest_path)
    root = Path(manifest_path).parent
    return manifest, {entry.object_id: load_samples(root / entry.samples_path) for entry in manifest.objects}


# ---- checkpoint -------------------------------------------------------------------

def _layer_tensors(layer: torch.nn.Module) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    weight = layer.parametrizations.weight
    return weight.original0, weight.original1, layer.bias


def save_checkpoint(path, decoder: SgdfDecoder, latents: LatentTable, seed: int = 0) -> None:
    arch = decoder.arch
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<Iq", CHECKPOINT_VERSION, seed))
    out.write(struct.pack("<IIIIf", arch.latent_dim, arch.hidden_dim, arch.n_hidden, arch.skip_layer, arch.dropout))
    sizes = arch.layer_sizes()
    out.write(struct.pack("<I", len(sizes)))
    for width_in, width_out in sizes:
        out.write(struct.pack("<II", width_in, width_out))
    with torch.no_grad():
        for layer in decoder.layers:
            for tensor in _layer_tensors(layer):
                out.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())
        codes = latents.codes.detach().cpu().numpy().astype("<f4")
    out.write(struct.pack("<II", len(latents), codes.shape[1]))
    for object_id, code in zip(latents.object_ids, codes):
        name = object_id.encode("utf-8")
        out.write(struct.pack("<H", len(name)) + name + code.tobytes())
    atomic_write(path, out.getvalue())


def _checkpoint_header(data: bytes, path) -> tuple[dict, int]:
    offset = _check_magic(data, CHECKPOINT_MAGIC, path)
    version, seed = struct.unpack_from("<Iq", data, offset)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version} is not supported")
    offset += 12
    latent_dim, hidden_dim, n_hidden, skip_layer, dropout = struct.unpack_from("<IIIIf", data, offset)
    offset += 20
    (n_layers,) = struct.unpack_from("<I", data, offset)
    offset += 4
    sizes = [struct.unpack_from("<II", data, offset + 8 * i) for i in range(n_layers)]
    offset += 8 * n_layers
    arch = DecoderArch(
        latent_dim=latent_dim,
        hidden_dim=hidden_dim,
        n_hidden=n_hidden,
        skip_layer=skip_layer,
        dropout=round(dropout, 6),
    )
    if [tuple(s) for s in arch.layer_sizes()] != [tuple(s) for s in sizes]:
        raise FormatError(f"{path}: layer sizes do not match the architecture descriptor")
    return {"version": version, "seed": seed, "arch": arch, "layer_sizes": sizes}, offset


def load_checkpoint(path) -> tuple[SgdfDecoder, LatentTable, dict]:
    data = Path(path).read_bytes()
    header, offset = _checkpoint_header(data, path)
    decoder = SgdfDecoder(header["arch"])
    with torch.no_grad():
        for layer in decoder.layers:
            for tensor in _layer_tensors(layer):
                values = _floats(data, offset, tensor.numel(), path)
                tensor.copy_(torch.from_numpy(values.reshape(tuple(tensor.shape))).to(tensor.dtype))
                offset += 4 * tensor.numel()
    n_codes, dim = struct.unpack_from("<II", data, offset)
    offset += 8
    ids, codes = [], []
    for _ in range(n_codes):
        (length,) = struct.unpack_from("<H", data, offset)
        offset += 2
        ids.append(data[offset:offset + length].decode("utf-8"))
        offset += length
        codes.append(_floats(data, offset, dim, path))
        offset += 4 * dim
    decoder.eval()
    latents = LatentTable.from_codes(ids, np.array(codes).reshape(n_codes, dim))
    return decoder, latents, header


def save_loss_log(path, log: list[EpochLog]) -> None:
    frame = pd.DataFrame([entry.model_dump() for entry in log], columns=["epoch", "sdf", "grasp", "code", "total"])
    frame = frame.rename(columns={"sdf": "L_SDF", "grasp": "L_Grasp", "code": "L_Code"})
    atomic_write_text(path, frame.to_csv(index=False))


# ---- clouds, plans, reports -------------------------------------------------------

def save_cloud_ply(path, cloud: PointCloud) -> None:
    data = trimesh.PointCloud(cloud.points).export(file_type="ply", encoding="ascii")
    atomic_write(path, data if isinstance(data, bytes) else data.encode("utf-8"))


def grasp_segments(matrix: np.ndarray, length: float = 0.03) -> list[tuple[np.ndarray, np.ndarray, tuple[int, int, int]]]:
    """Frame axes as colored segments: x red, y green, z blue."""
    origin = matrix[:3, 3]
    colors = [(255, 0, 0), (0, 255, 0), (0, 0, 255)]
    return [(origin, origin + length * matrix[:3, axis], colors[axis]) for axis in range(3)]


def save_plan_ply(path, result: PlanResult) -> None:
    vertices, edges = [], []
    for plan in result.objects:
        if plan.surface is not None:
            vertices.extend((p, (200, 200, 200)) for p in plan.surface.points)
        if plan.grasp is not None:
            for start, end, color in grasp_segments(plan.grasp.pose.matrix):
                edges.append((len(vertices), len(vertices) + 1, color))
                vertices.extend([(start, color), (end, color)])
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element edge {len(edges)}",
        "property int vertex1", "property int vertex2",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}" for p, c in vertices]
    lines += [f"{a} {b} {c[0]} {c[1]} {c[2]}" for a, b, c in edges]
    atomic_write_text(path, "\n".join(lines) + "\n")


def plan_to_dict(result: PlanResult, seed: int) -> dict:
    objects = []
    for plan in result.objects:
        objects.append({
            "index": plan.index,
            "status": plan.status,
            "grasp": None if plan.grasp is None else plan.grasp.pose.flat12().tolist(),
            "score": plan.score,
            "counts": plan.counts.model_dump(),
            "icp_failed": plan.icp_failed,
            "icp_residual": plan.icp_residual,
            "pose": None if plan.pose is None else plan.pose.flat12().tolist(),
        })
    return {"seed": seed, "frame": "camera", "objects": objects, "rejected": result.rejected}


def save_plan_json(path, result: PlanResult, seed: int) -> None:
    atomic_write_text(path, json.dumps(plan_to_dict(result, seed), indent=2))


def report_table(reports: list[MetricReport]) -> str:
    frame = pd.DataFrame(
        [
            {
                "environment": r.environment,
                "CD (mm)": r.chamfer_mm,
                "IoU": r.iou,
                "SR": r.success_rate,
                "DR": r.declutter_rate,
                **{f"AP@{mu}": ap for mu, ap in r.ap_per_mu.items()},
            }
            for r in reports
        ]
    )
    header = reports[0].conventions if reports else MetricReport().conventions
    body = frame.to_string(index=False, float_format=lambda v: f"{v:.3f}", na_rep="n/a") if reports else "(no environments)"
    return f"# {header}\n{body}\n"


def save_reports(json_path, table_path, reports: list[MetricReport]) -> None:
    atomic_write_text(json_path, json.dumps([r.model_dump() for r in reports], indent=2))
    atomic_write_text(table_path, report_table(reports))


def export_mesh(mesh: trimesh.Trimesh, stem: str | Path) -> list[Path]:
    stem = Path(stem)
    written = []
    for suffix, kwargs in ((".obj", {}), (".ply", {"encoding": "binary"})):
        data = mesh.export(file_type=suffix[1:], **kwargs)
        target = stem.with_suffix(suffix)
        atomic_write(target, data if isinstance(data, bytes) else data.encode("utf-8"))
        written.append(target)
    return written


def inspect_artifact(path) -> dict:
    """Header fields of any GraspScope artifact, detected by magic or JSON manifest."""
    path = Path(path)
    data = path.read_bytes()
    if data.lstrip().startswith(b"{"):
        manifest = load_manifest(path)
        return {
            "kind": "manifest",
            "version": manifest.version,
            "seed": manifest.seed,
            "objects": {e.object_id: e.n_valid_grasps for e in manifest.objects},
        }
    if data.startswith(CHECKPOINT_MAGIC[:-1]):
        header, _ = _checkpoint_header(data, path)
        _, latents, _ = load_checkpoint(path)
        norms = {k: float(np.linalg.norm(v)) for k, v in latents.as_dict().items()}
        return {
            "kind": "checkpoint",
            "version": header["version"],
            "seed": header["seed"],
            "arch": header["arch"].model_dump(),
            "code_norms": norms,
        }
    for magic, kind in MAGICS.items():
        if data.startswith(magic[:-1]):
            offset = _check_magic(data, magic, path)
            if magic == DEPTH_MAGIC:
                width, height = struct.unpack_from("<II", data, offset)
                return {"kind": kind, "width": width, "height": height}
            if magic == MAPS_MAGIC:
                height, width, channels = struct.unpack_from("<III", data, offset)
                return {"kind": kind, "height": height, "width": width, "channels": channels}
            (count,) = struct.unpack_from("<I", data, offset)
            return {"kind": kind, "count": count}
    raise FormatError(f"{path}: unrecognized artifact")
