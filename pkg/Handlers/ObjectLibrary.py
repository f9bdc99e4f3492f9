import logging
from pathlib import Path
from typing import Callable

import numpy as np
import trimesh

from Handlers.GeometryHandler import TriMesh, clean_mesh, load_mesh
from Models.Dataset import ObjectRecord
from Models.Errors import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = 32


def _mug() -> TriMesh:
    body = trimesh.creation.annulus(r_min=0.024, r_max=0.03, height=0.07, sections=SECTIONS)
    # handle kept 1 mm clear of the body so each piece stays closed
    handle = trimesh.creation.box(extents=(0.008, 0.02, 0.04))
    handle.apply_translation((0.03 + 0.001 + 0.004, 0.0, 0.0))
    return trimesh.util.concatenate([body, handle])


PRIMITIVES: dict[str, Callable[[], TriMesh]] = {
    "box_small": lambda: trimesh.creation.box(extents=(0.04, 0.04, 0.06)),
    "box_flat": lambda: trimesh.creation.box(extents=(0.07, 0.045, 0.035)),
    "cube": lambda: trimesh.creation.box(extents=(0.05, 0.05, 0.05)),
    "cylinder_slim": lambda: trimesh.creation.cylinder(radius=0.02, height=0.08, sections=SECTIONS),
    "cylinder_wide": lambda: trimesh.creation.cylinder(radius=0.035, height=0.05, sections=SECTIONS),
    "capsule": lambda: trimesh.creation.capsule(height=0.04, radius=0.02, count=[SECTIONS, SECTIONS]),
    "hex_prism": lambda: trimesh.creation.cylinder(radius=0.03, height=0.06, sections=6),
    "mug": _mug,
}


def make_record(object_id: str, mesh: TriMesh, source: str = "primitive") -> ObjectRecord:
    """Centers the mesh on its bounding box; canonical z is up."""
    mesh = clean_mesh(mesh)
    lower, upper = mesh.bounds
    mesh.apply_translation(-(lower + upper) / 2)
    if not mesh.is_watertight:
        logger.warning(f"{object_id}: mesh is not watertight, signed distances will be unavailable")
    return ObjectRecord(
        object_id=object_id,
        mesh=mesh,
        footprint_radius=float(np.linalg.norm(mesh.vertices[:, :2], axis=1).max()),
        base_offset=float(-mesh.bounds[0, 2]),
        source=source,
    )


def builtin_library(names: list[str] | None = None) -> list[ObjectRecord]:
    names = list(PRIMITIVES) if not names else names
    unknown = [n for n in names if n not in PRIMITIVES]
    if unknown:
        raise ConfigError(f"unknown library objects: {unknown}")
    return [make_record(name, PRIMITIVES[name]()) for name in names]


def load_library(paths: list[str | Path]) -> list[ObjectRecord]:
    records = []
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"mesh not found: {path}")
        records.append(make_record(path.stem, load_mesh(path), source=str(path)))
    return records


def resolve_library(objects: list[str]) -> list[ObjectRecord]:
    """Built-in names and mesh file paths may be mixed."""
    if not objects:
        return builtin_library()
    records = []
    for entry in objects:
        if entry in PRIMITIVES:
            records.append(make_record(entry, PRIMITIVES[entry]()))
        else:
            records.extend(load_library([entry]))
    ids = [r.object_id for r in records]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate object ids in library: {ids}")
    return records


def library_by_id(records: list[ObjectRecord]) -> dict[str, ObjectRecord]:
    return {r.object_id: r for r in records}
