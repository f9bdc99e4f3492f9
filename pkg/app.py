import streamlit as st
import pandas as pd
import numpy as np
import time
import json
from dotenv import load_dotenv

from Flows.EpisodeFlow import OraclePlanner, observe
from Handlers.DatagenHandler import make_packed_scene
from Handlers.ObjectLibrary import library_by_id, resolve_library
from Handlers.SeedHandler import derive_seed
from Handlers.StorageHandler import load_checkpoint, plan_to_dict
from Models.Percept import EncoderNoise
from Models.RunConfig import load_run_config


st.set_page_config(
    page_title="GraspScope Planner Comparison",
    page_icon="🤖",
    layout="wide"
)

load_dotenv()

NOISE_LEVELS = {
    "Oracle": EncoderNoise(),
    "Low noise": EncoderNoise(sigma_trans=0.002, sigma_rot=np.deg2rad(2.0), sigma_code=0.01),
    "Medium noise": EncoderNoise(sigma_trans=0.005, sigma_rot=np.deg2rad(5.0), sigma_code=0.03),
    "High noise": EncoderNoise(sigma_trans=0.01, sigma_rot=np.deg2rad(10.0), sigma_code=0.1),
}


@st.cache_resource
def load_models(checkpoint: str):
    decoder, latents, header = load_checkpoint(checkpoint)
    return decoder, latents.as_dict(), header


@st.cache_resource
def load_library(object_ids: tuple[str, ...]):
    return resolve_library(list(object_ids))


def run_variants(config, decoder, code_lookup, records, scene_seed: int) -> tuple[dict, np.ndarray, str]:
    library = library_by_id(records)
    scene = make_packed_scene(
        records,
        seed=derive_seed(scene_seed, "dashboard-scene"),
        scene_id=f"dashboard-{scene_seed}",
        lam=config.eval.poisson_mean,
        count_range=config.eval.count_range,
    )
    observation = observe(scene, library, config.camera, seed=derive_seed(scene_seed, "depth"))
    results = {}
    for name, noise in NOISE_LEVELS.items():
        print(name)
        planner = OraclePlanner(decoder, library, code_lookup, noise, config.grid, config.plan, seed=scene_seed)
        results[name] = planner(scene, observation)
    return results, observation.depth, scene.scene_id


def main():
    st.title("🔍 GraspScope Planner Comparison")
    st.markdown("Compare the grasp planner under **oracle, low, medium and high** encoder noise side by side.")

    config = load_run_config()

    # Sidebar
    with st.sidebar:
        st.header("⚙️ Run Setup")
        checkpoint = st.text_input("Checkpoint", value=str(config.checkpoint_path))
        scene_seed = int(st.number_input("Scene seed", min_value=0, value=config.seed, step=1))
        use_icp = st.checkbox("ICP refinement", value=config.plan.use_icp)

    try:
        decoder, code_lookup, header = load_models(checkpoint)
    except Exception as e:
        st.error(f"⚠️ Could not load checkpoint: {e}")
        return
    records = load_library(tuple(code_lookup))
    st.sidebar.write(f"Latent codes: {len(code_lookup)}")
    st.sidebar.write(f"Trained with seed {header['seed']}")

    if st.button("🚀 Plan All Variants", type="primary", use_container_width=True):
        config = config.model_copy(update={"plan": config.plan.model_copy(update={"use_icp": use_icp})})
        with st.spinner("Planning grasps for every noise level..."):
            results, depth, scene_id = run_variants(config, decoder, code_lookup, records, scene_seed)
        st.session_state.results = results
        st.session_state.depth = depth
        st.session_state.scene_id = scene_id
        st.session_state.scene_seed = scene_seed

    # Display Results
    if "results" in st.session_state:
        st.header("📊 Planner Outputs")
        st.markdown(f"**Scene:** {st.session_state.scene_id}")

        depth = st.session_state.depth
        visible = depth[depth > 0]
        if visible.size:
            shaded = np.where(depth > 0, (depth - visible.min()) / max(np.ptp(visible), 1e-9), 1.0)
            st.image(1.0 - shaded, caption="Observed depth", clamp=True)

        columns = st.columns(len(st.session_state.results))
        for col, (name, result) in zip(columns, st.session_state.results.items()):
            with col:
                st.subheader(f"🤖 {name}")
                planned = [o for o in result.objects if o.grasp is not None]
                st.metric("Objects with a grasp", f"{len(planned)} / {len(result.objects)}")
                st.metric("Rejected by collision", result.rejected.get("collision", 0))
                st.dataframe(
                    pd.DataFrame(
                        [
                            {
                                "detection": o.index,
                                "status": o.status,
                                "decoded": o.counts.decoded,
                                "collision-free": o.counts.collision_free,
                                "torque": o.score,
                                "ICP failed": o.icp_failed,
                            }
                            for o in result.objects
                        ]
                    ),
                    hide_index=True,
                )

        # Export section
        st.header("📥 Export Results")
        export_data = {
            "scene": st.session_state.scene_id,
            "results": {
                name: plan_to_dict(result, st.session_state.scene_seed)
                for name, result in st.session_state.results.items()
            },
            "timestamp": time.strftime("%Y-%m-%d %H:%M:%S")
        }
        st.download_button(
            label="Download JSON",
            data=json.dumps(export_data, indent=2),
            file_name=f"graspscope_comparison_{int(time.time())}.json",
            mime="application/json"
        )

        with st.expander("View Raw Data"):
            st.json(export_data)


if __name__ == "__main__":
    main()
