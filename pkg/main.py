import argparse
import json
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from Flows.EpisodeFlow import OraclePlanner, observe, run_evaluation
from Flows.GenFlow import MANIFEST_NAME, GenFlow
from Handlers.DatagenHandler import make_packed_scene
from Handlers.GripperHandler import load_gripper_config
from Handlers.ObjectLibrary import library_by_id, resolve_library
from Handlers.SeedHandler import derive_seed
from Handlers.SgdfTrainer import set_deterministic, train
from Handlers.StorageHandler import (
    atomic_write_text,
    export_mesh,
    inspect_artifact,
    load_checkpoint,
    load_dataset,
    report_table,
    save_cloud_ply,
    save_depth,
    save_loss_log,
    save_plan_json,
    save_plan_ply,
    save_reports,
)
from Models.Errors import ConfigError, FormatError, GraspScopeError
from Models.Gripper import GripperModel
from Models.RunConfig import RunConfig, load_run_config

logger = logging.getLogger("graspscope")

RUN_CONFIG_NAME = "run_config.json"


def gripper_from(config: RunConfig) -> GripperModel:
    return load_gripper_config(config.gripper_config) if config.gripper_config else GripperModel.default()


def write_run_config(directory: Path, config: RunConfig) -> None:
    atomic_write_text(directory / RUN_CONFIG_NAME, config.model_dump_json(indent=2))


def trained_library(config: RunConfig, object_ids: list[str]):
    records = resolve_library(config.objects or object_ids)
    missing = [r.object_id for r in records if r.object_id not in object_ids]
    if missing:
        raise ConfigError(f"checkpoint has no latent code for {missing}")
    return records


def cmd_gen(config: RunConfig) -> int:
    records = resolve_library(config.objects)
    gripper = gripper_from(config)
    out_dir = config.dataset_path
    state = GenFlow(config.datagen, out_dir, config.seed, gripper).run(records)
    if state["manifest"] is None:
        for object_id, message in state["errors"].items():
            print(f"{object_id}: FAILED ({message})", file=sys.stderr)
        return 1
    write_run_config(out_dir, config)
    print(f"wrote {len(state['entries'])} object(s) to {out_dir / MANIFEST_NAME}")
    return 0


def cmd_train(config: RunConfig) -> int:
    _, dataset = load_dataset(config.dataset_path / MANIFEST_NAME)
    checkpoint = config.checkpoint_path
    train_config = config.train.model_copy(update={"seed": config.seed})
    _, latents, log = train(dataset, train_config, gripper_from(config), checkpoint)
    loss_path = checkpoint.with_name(f"{checkpoint.stem}_loss.csv")
    save_loss_log(loss_path, log)
    write_run_config(checkpoint.parent, config)
    final = f"final loss {log[-1].total:.5f}" if log else "no epochs run"
    print(f"trained {len(latents)} code(s) for {len(log)} epoch(s), {final}; checkpoint {checkpoint}")
    return 0


def cmd_plan(config: RunConfig) -> int:
    decoder, latents, _ = load_checkpoint(config.checkpoint_path)
    code_lookup = latents.as_dict()
    records = trained_library(config, list(code_lookup))
    library = library_by_id(records)
    gripper = gripper_from(config)

    scene = make_packed_scene(
        records,
        seed=derive_seed(config.seed, "plan-scene"),
        scene_id=f"plan-{config.seed}",
        lam=config.eval.poisson_mean,
        count_range=config.eval.count_range,
    )
    observation = observe(scene, library, config.camera, seed=derive_seed(config.seed, scene.scene_id, "depth", 0))
    planner = OraclePlanner(decoder, library, code_lookup, config.noise, config.grid, config.plan, gripper, config.seed)
    result = planner(scene, observation)

    out_dir = config.output_path
    save_plan_json(out_dir / "plan.json", result, config.seed)
    save_plan_ply(out_dir / "plan.ply", result)
    save_cloud_ply(out_dir / "observation.ply", observation.cloud)
    save_depth(out_dir / "depth.dpth", observation.depth)
    write_run_config(out_dir, config)

    print(f"{scene.scene_id}: {len(scene.objects)} object(s)")
    for planned in result.objects:
        score = "" if planned.score is None else f" torque {planned.score:.4f}"
        print(f"  detection {planned.index}: {planned.status}{score}")
    return 0


def cmd_eval(config: RunConfig) -> int:
    decoder, latents, _ = load_checkpoint(config.checkpoint_path)
    code_lookup = latents.as_dict()
    records = trained_library(config, list(code_lookup))
    reports = run_evaluation(config, decoder, code_lookup, records, gripper_from(config))
    out_dir = config.output_path
    save_reports(out_dir / "report.json", out_dir / "report.txt", reports)
    write_run_config(out_dir, config)
    print(report_table(reports), end="")
    return 0


def cmd_export_mesh(config: RunConfig) -> int:
    out_dir = config.output_path
    for record in resolve_library(config.objects):
        for path in export_mesh(record.mesh, out_dir / record.object_id):
            print(path)
    return 0


def cmd_inspect(path: str) -> int:
    print(json.dumps(inspect_artifact(path), indent=2))
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "export-mesh": cmd_export_mesh,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspscope", description="Shape and grasp distance fields for tabletop scenes")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--data-dir")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--log-level")
    parser.add_argument("--gripper-config")
    parser.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config field by dotted key, e.g. train.arch.dropout=0.1; values parse as JSON when they can",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate grasp labels and SGDF samples")
    gen.add_argument("--objects", nargs="*", help="primitive names or mesh paths")
    gen.add_argument("--out", dest="dataset_dir")
    gen.add_argument("--n-surface-points", type=int)
    gen.add_argument("--n-rotations", type=int)
    gen.add_argument("--n-samples", type=int)
    gen.add_argument("--mu", type=float)

    train_cmd = sub.add_parser("train", help="fit the decoder and latent codes")
    train_cmd.add_argument("--dataset", dest="dataset_dir")
    train_cmd.add_argument("--checkpoint")
    train_cmd.add_argument("--epochs", type=int)
    train_cmd.add_argument("--lr", type=float)
    train_cmd.add_argument("--batch-size", type=int)
    train_cmd.add_argument("--clamp", type=float)
    for flag in ("--weight-sdf", "--weight-grasp", "--weight-code", "--latent-init-std", "--dropout"):
        train_cmd.add_argument(flag, type=float)
    for flag in ("--code-ramp-epochs", "--latent-dim", "--hidden-dim", "--n-hidden", "--skip-layer"):
        train_cmd.add_argument(flag, type=int)

    for name, help_text in (("plan", "plan grasps in one packed scene"), ("eval", "run grasping episodes")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--checkpoint")
        cmd.add_argument("--objects", nargs="*")
        cmd.add_argument("--out", dest="output_dir")
        cmd.add_argument("--no-icp", dest="use_icp", action="store_false", default=None)
        cmd.add_argument("--no-depth-noise", dest="use_depth_noise", action="store_false", default=None)
        cmd.add_argument("--sigma-trans", type=float)
        cmd.add_argument("--sigma-rot", type=float)
        cmd.add_argument("--sigma-code", type=float)
        cmd.add_argument("--resolution", type=int)
        if name == "eval":
            cmd.add_argument("--n-scenes", type=int)
            cmd.add_argument("--ablate-icp", action="store_true", default=None)

    export = sub.add_parser("export-mesh", help="write library meshes as OBJ and PLY")
    export.add_argument("--objects", nargs="*")
    export.add_argument("--out", dest="output_dir")

    inspect = sub.add_parser("inspect", help="print an artifact's header")
    inspect.add_argument("path")
    return parser


FLAG_KEYS = {
    "seed": "seed",
    "data_dir": "data_dir",
    "threads": "threads",
    "log_level": "log_level",
    "gripper_config": "gripper_config",
    "objects": "objects",
    "dataset_dir": "dataset_dir",
    "output_dir": "output_dir",
    "checkpoint": "checkpoint",
    "n_surface_points": "datagen.n_surface_points",
    "n_rotations": "datagen.n_rotations",
    "n_samples": "datagen.n_samples",
    "mu": "datagen.mu",
    "epochs": "train.epochs",
    "lr": "train.learning_rate",
    "batch_size": "train.batch_size",
    "clamp": "train.clamp",
    "weight_sdf": "train.weight_sdf",
    "weight_grasp": "train.weight_grasp",
    "weight_code": "train.weight_code",
    "code_ramp_epochs": "train.code_ramp_epochs",
    "latent_init_std": "train.latent_init_std",
    "latent_dim": "train.arch.latent_dim",
    "hidden_dim": "train.arch.hidden_dim",
    "n_hidden": "train.arch.n_hidden",
    "skip_layer": "train.arch.skip_layer",
    "dropout": "train.arch.dropout",
    "use_icp": "plan.use_icp",
    "use_depth_noise": "camera.use_depth_noise",
    "sigma_trans": "noise.sigma_trans",
    "sigma_rot": "noise.sigma_rot",
    "sigma_code": "noise.sigma_code",
    "resolution": "grid.resolution",
    "n_scenes": "eval.n_scenes",
    "ablate_icp": "eval.ablate_icp",
}


def parse_assignment(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def overrides_from(args: argparse.Namespace) -> dict:
    """--set assignments first, named flags over them."""
    given = vars(args)
    overrides = dict(parse_assignment(text) for text in given.get("assignments") or [])
    overrides.update({dotted: given[name] for name, dotted in FLAG_KEYS.items() if given.get(name) is not None})
    return overrides


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=os.getenv("GRASPSCOPE_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "inspect":
            return cmd_inspect(args.path)
        config = load_run_config(args.config, overrides_from(args))
        logging.getLogger().setLevel(config.log_level.upper())
        set_deterministic(config.threads)
        return COMMANDS[args.command](config)
    except (ConfigError, FormatError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        return 2
    except GraspScopeError as e:
        logger.error(f"{args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
