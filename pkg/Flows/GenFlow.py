import logging
from pathlib import Path
from typing import Optional

import numpy as np
from langgraph.constants import END, START
from langgraph.graph import StateGraph

from Handlers.DatagenHandler import generate_candidate_poses, label_valid_grasps, sample_sgdf
from Handlers.SeedHandler import derive_seed
from Handlers.StorageHandler import export_mesh, save_grasp_set, save_manifest, save_samples
from Models.Dataset import DatasetManifest, GraspProvenance, ManifestEntry, ObjectRecord, SgdfSamples
from Models.Errors import GraspScopeError
from Models.Gripper import GripperModel
from Models.RunConfig import DatagenConfig
from States.GenState import GenState

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _empty_samples() -> SgdfSamples:
    return SgdfSamples(x=np.zeros((0, 3)), s=np.zeros(0), delta_t=np.zeros((0, 3)), rotation=np.zeros((0, 3, 3)))


class GenFlow:
    """Candidates, labels and SGDF samples for every library object, then one manifest."""

    def __init__(self, config: DatagenConfig, out_dir: str | Path, seed: int = 0, gripper: Optional[GripperModel] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.gripper = gripper or GripperModel.default()
        self.graph = self.build_graph()

    def build_graph(self):
        workflow = StateGraph(GenState)

        workflow.add_node("generate_candidates", self.generate_candidates)
        workflow.add_node("label_grasps", self.label_grasps)
        workflow.add_node("sample_sgdf", self.sample_sgdf)
        workflow.add_node("write_object", self.write_object)
        workflow.add_node("write_manifest", self.write_manifest)

        workflow.add_conditional_edges(
            START,
            self.has_next_object,
            {"next": "generate_candidates", "done": "write_manifest"},
        )
        workflow.add_edge("generate_candidates", "label_grasps")
        workflow.add_edge("label_grasps", "sample_sgdf")
        workflow.add_edge("sample_sgdf", "write_object")
        workflow.add_conditional_edges(
            "write_object",
            self.has_next_object,
            {"next": "generate_candidates", "done": "write_manifest"},
        )
        workflow.add_edge("write_manifest", END)
        return workflow.compile()

    def _current(self, state) -> ObjectRecord:
        return state["objects"][state["index"]]

    def _object_seed(self, record: ObjectRecord) -> int:
        return derive_seed(self.seed, record.object_id)

    def generate_candidates(self, state):
        record = self._current(state)
        logger.info(f"---GENERATE CANDIDATES: {record.object_id}---")
        try:
            candidates = generate_candidate_poses(
                record.mesh,
                self.config.n_surface_points,
                self.config.n_rotations,
                seed=derive_seed(self._object_seed(record), "surface"),
                standoff=self.config.standoff,
                model=self.gripper,
            )
        except GraspScopeError as e:
            logger.error(f"{record.object_id}: {e}")
            return {"candidates": None, "errors": {**state["errors"], record.object_id: str(e)}}
        return {"candidates": candidates}

    def label_grasps(self, state):
        record = self._current(state)
        if state["candidates"] is None:
            return {"grasp_set": None}
        logger.info(f"---LABEL GRASPS: {record.object_id}---")
        provenance = GraspProvenance(
            n_surface_points=self.config.n_surface_points,
            n_rotations=self.config.n_rotations,
            mu=self.config.mu,
            clearance=self.config.clearance,
            standoff=self.config.standoff,
            seed=self._object_seed(record),
        )
        grasp_set = label_valid_grasps(
            record.mesh,
            state["candidates"],
            self.config.mu,
            self.config.clearance,
            object_id=record.object_id,
            provenance=provenance,
            model=self.gripper,
        )
        return {"grasp_set": grasp_set}

    def sample_sgdf(self, state):
        record = self._current(state)
        grasp_set = state["grasp_set"]
        if grasp_set is None:
            return {"samples": None}
        if len(grasp_set) == 0:
            logger.warning(f"{record.object_id}: no grasps, writing no SGDF samples")
            return {"samples": _empty_samples()}
        logger.info(f"---SAMPLE SGDF: {record.object_id}---")
        try:
            samples = sample_sgdf(
                record.mesh,
                grasp_set,
                self.config.n_samples,
                seed=derive_seed(self._object_seed(record), "samples"),
                near_fraction=self.config.near_fraction,
                sigma=self.config.near_sigma,
                bbox_scale=self.config.bbox_scale,
            )
        except GraspScopeError as e:
            logger.error(f"{record.object_id}: {e}")
            return {"samples": None, "errors": {**state["errors"], record.object_id: str(e)}}
        return {"samples": samples}

    def write_object(self, state):
        record = self._current(state)
        grasp_set, samples = state["grasp_set"], state["samples"]
        entries = state["entries"]
        if grasp_set is not None and samples is not None:
            grasp_name = f"{record.object_id}.grsp"
            samples_name = f"{record.object_id}.sgds"
            mesh_name = f"{record.object_id}.ply"
            save_grasp_set(self.out_dir / grasp_name, grasp_set)
            save_samples(self.out_dir / samples_name, samples)
            export_mesh(record.mesh, self.out_dir / record.object_id)
            entries = entries + [
                ManifestEntry(
                    object_id=record.object_id,
                    mesh_path=mesh_name,
                    grasp_path=grasp_name,
                    samples_path=samples_name,
                    n_candidates=len(state["candidates"]),
                    n_valid_grasps=len(grasp_set),
                    n_samples=len(samples),
                    provenance=grasp_set.provenance,
                )
            ]
            print(f"{record.object_id}: {len(grasp_set)} valid grasps of {len(state['candidates'])} candidates")
        return {
            "entries": entries,
            "index": state["index"] + 1,
            "candidates": None,
            "grasp_set": None,
            "samples": None,
        }

    def write_manifest(self, state):
        logger.info("---WRITE MANIFEST---")
        if state["errors"]:
            logger.error(f"not writing a manifest, {len(state['errors'])} object(s) failed")
            return {"manifest": None}
        manifest = DatasetManifest(seed=self.seed, objects=state["entries"])
        save_manifest(self.out_dir / MANIFEST_NAME, manifest)
        return {"manifest": manifest}

    ### Edges

    def has_next_object(self, state):
        return "next" if state["index"] < len(state["objects"]) else "done"

    def run(self, objects: list[ObjectRecord]):
        return self.graph.invoke(
            {
                "objects": objects,
                "index": 0,
                "candidates": None,
                "grasp_set": None,
                "samples": None,
                "entries": [],
                "errors": {},
                "manifest": None,
            },
            {"recursion_limit": 5 * len(objects) + 10},
        )
