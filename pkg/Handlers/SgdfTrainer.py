import logging
import math
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from Handlers.SeedHandler import derive_seed, make_rng
from Handlers.SgdfDecoder import LatentTable, SgdfBatch, SgdfDecoder, decoder_loss, make_batch
from Handlers.StorageHandler import save_checkpoint
from Models.Dataset import SgdfSamples
from Models.Errors import EmptyBatchError, NonFiniteLossError
from Models.Gripper import GripperModel
from Models.Training import EpochLog, TrainConfig

logger = logging.getLogger(__name__)


def set_deterministic(threads: int = 1) -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(max(1, int(threads)))


def init_model(object_ids: list[str], config: TrainConfig) -> tuple[SgdfDecoder, LatentTable]:
    torch.manual_seed(derive_seed(config.seed, "decoder-init"))
    decoder = SgdfDecoder(config.arch)
    generator = torch.Generator().manual_seed(derive_seed(config.seed, "latent-init"))
    latents = LatentTable(object_ids, config.arch.latent_dim, config.latent_init_std, generator=generator)
    return decoder, latents


def gradients(
    decoder: SgdfDecoder,
    latents: LatentTable,
    batch: SgdfBatch,
    epoch: int,
    config: TrainConfig,
    gripper: Optional[GripperModel] = None,
    dropout_seed: Optional[int] = None,
) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of the weighted loss, keyed by parameter name."""
    decoder.zero_grad(set_to_none=True)
    latents.zero_grad(set_to_none=True)
    total, breakdown = decoder_loss(decoder, latents, batch, epoch, config, gripper, dropout_seed)
    if not torch.isfinite(total):
        raise NonFiniteLossError(f"loss is not finite at epoch {epoch}", breakdown.model_dump())
    total.backward()

    grads = {}
    for prefix, module in (("decoder", decoder), ("latents", latents)):
        for name, parameter in module.named_parameters():
            grad = parameter.grad if parameter.grad is not None else torch.zeros_like(parameter)
            grads[f"{prefix}.{name}"] = grad.detach().clone()
    return grads


def steps_per_epoch(dataset: dict[str, SgdfSamples], batch_size: int) -> int:
    return math.ceil(sum(len(s) for s in dataset.values()) / batch_size)


def _draw_batch(rng: np.random.Generator, object_ids: list[str], dataset: dict[str, SgdfSamples], batch_size: int) -> SgdfBatch:
    object_index = int(rng.integers(len(object_ids)))
    samples = dataset[object_ids[object_index]]
    index = rng.choice(len(samples), size=min(batch_size, len(samples)), replace=False)
    return make_batch(object_index, samples.subset(np.sort(index)))


def _finite(*modules: torch.nn.Module) -> bool:
    return all(torch.isfinite(p).all() for m in modules for p in m.parameters())


def train(
    dataset: dict[str, SgdfSamples],
    config: TrainConfig,
    gripper: Optional[GripperModel] = None,
    checkpoint_path: Optional[str | Path] = None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> tuple[SgdfDecoder, LatentTable, list[EpochLog]]:
    """Adam over decoder weights and latent codes jointly; one object per batch."""
    object_ids = [object_id for object_id, samples in dataset.items() if len(samples)]
    if not object_ids:
        raise EmptyBatchError("no object has SGDF samples")
    gripper = gripper or GripperModel.default()
    decoder, latents = init_model(object_ids, config)
    optimizer = torch.optim.Adam(
        list(decoder.parameters()) + list(latents.parameters()),
        lr=config.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    rng = make_rng(config.seed, "batches")
    n_steps = steps_per_epoch({k: dataset[k] for k in object_ids}, config.batch_size)
    log: list[EpochLog] = []

    for epoch in range(1, config.epochs + 1):
        decoder.train()
        totals = np.zeros(4)
        for step in range(n_steps):
            batch = _draw_batch(rng, object_ids, dataset, config.batch_size)
            optimizer.zero_grad(set_to_none=True)
            total, breakdown = decoder_loss(
                decoder, latents, batch, epoch, config, gripper,
                dropout_seed=derive_seed(config.seed, "dropout", epoch, step),
            )
            if not torch.isfinite(total):
                logger.error(f"epoch {epoch} step {step}: non-finite loss, keeping the last good checkpoint")
                raise NonFiniteLossError(f"loss is not finite at epoch {epoch}", breakdown.model_dump())
            total.backward()
            optimizer.step()
            totals += [breakdown.sdf, breakdown.grasp, breakdown.code, breakdown.total]

        if not _finite(decoder, latents):
            logger.error(f"epoch {epoch}: parameters diverged, keeping the last good checkpoint")
            raise NonFiniteLossError(f"parameters are not finite after epoch {epoch}")

        sdf, grasp, code, total = totals / n_steps
        entry = EpochLog(epoch=epoch, sdf=sdf, grasp=grasp, code=code, total=total)
        log.append(entry)
        logger.info(f"epoch {epoch}/{config.epochs}: total {total:.5f} (sdf {sdf:.5f}, grasp {grasp:.5f}, code {code:.4f})")
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, decoder, latents, seed=config.seed)
        if on_epoch is not None:
            on_epoch(entry)

    decoder.eval()
    if checkpoint_path is not None and config.epochs == 0:
        save_checkpoint(checkpoint_path, decoder, latents, seed=config.seed)
    return decoder, latents, log


def sample_latent(latents: LatentTable, n: int, seed: int) -> np.ndarray:
    """Codes drawn from a diagonal Gaussian fitted to the trained table."""
    codes = latents.codes.detach().double().cpu().numpy()
    mean = codes.mean(axis=0)
    std = codes.std(axis=0) if len(codes) > 1 else np.full(codes.shape[1], 0.01)
    return make_rng(seed, "latent-samples").normal(mean, std, size=(n, codes.shape[1]))
