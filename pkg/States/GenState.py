from typing import Optional

import numpy as np
from typing_extensions import TypedDict

from Models.Dataset import DatasetManifest, GraspSet, ManifestEntry, ObjectRecord, SgdfSamples


class GenState(TypedDict):

    objects: list[ObjectRecord]
    index: int
    candidates: Optional[np.ndarray]
    grasp_set: Optional[GraspSet]
    samples: Optional[SgdfSamples]
    entries: list[ManifestEntry]
    errors: dict[str, str]
    manifest: Optional[DatasetManifest]
