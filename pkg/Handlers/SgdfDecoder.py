"""Shape-and-grasp distance decoder: (latent code, point) -> (signed distance, nearest grasp)."""

import logging
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils.parametrizations import weight_norm

from Handlers.GeometryHandler import gram_schmidt_rotation
from Handlers.GripperHandler import control_point_sets
from Models.Errors import DimensionMismatchError, EmptyBatchError
from Models.Gripper import Grasp, GripperModel
from Models.Pose import Pose
from Models.Training import DecoderArch, LossBreakdown, TrainConfig

logger = logging.getLogger(__name__)

HEAD_DIM = 10


class DecoderOutput(NamedTuple):
    s: torch.Tensor
    delta_t: torch.Tensor
    r1: torch.Tensor
    r2: torch.Tensor


class SgdfBatch(NamedTuple):
    """Samples of one object; every row shares that object's latent code."""

    object_index: int
    x: torch.Tensor
    s: torch.Tensor
    delta_t: torch.Tensor
    rotation: torch.Tensor


class SgdfDecoder(nn.Module):
    def __init__(self, arch: Optional[DecoderArch] = None):
        super().__init__()
        self.arch = arch or DecoderArch()
        self.layers = nn.ModuleList(
            weight_norm(nn.Linear(width_in, width_out)) for width_in, width_out in self.arch.layer_sizes()
        )

    def forward(
        self,
        z: torch.Tensor,
        x: torch.Tensor,
        train_mode: bool = False,
        dropout_seed: Optional[int] = None,
    ) -> DecoderOutput:
        """z is one code (D,) or one per point (N, D); x is (N, 3) or (3,)."""
        z, x = self._check_inputs(z, x)
        inputs = torch.cat([z, x], dim=1)
        generator = None
        if train_mode and self.arch.dropout > 0:
            generator = torch.Generator(device=x.device)
            generator.manual_seed(0 if dropout_seed is None else int(dropout_seed))

        h = inputs
        for i, layer in enumerate(self.layers[:-1]):
            if i == self.arch.skip_layer:
                h = torch.cat([h, inputs], dim=1)
            h = torch.relu(layer(h))
            if generator is not None:
                keep = 1.0 - self.arch.dropout
                mask = torch.bernoulli(torch.full_like(h, keep), generator=generator)
                h = h * mask / keep
        out = self.layers[-1](h)
        return DecoderOutput(s=out[:, 0], delta_t=out[:, 1:4], r1=out[:, 4:7], r2=out[:, 7:10])

    def _check_inputs(self, z: torch.Tensor, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.dim() == 1:
            x = x.unsqueeze(0)
        if x.dim() != 2 or x.shape[1] != 3:
            raise DimensionMismatchError(f"points must be (N, 3), got {tuple(x.shape)}")
        if z.dim() == 1:
            z = z.unsqueeze(0)
        if z.dim() != 2 or z.shape[1] != self.arch.latent_dim:
            raise DimensionMismatchError(f"codes must have width {self.arch.latent_dim}, got {tuple(z.shape)}")
        if z.shape[0] == 1:
            z = z.expand(x.shape[0], -1)
        elif z.shape[0] != x.shape[0]:
            raise DimensionMismatchError("one code per point or a single shared code expected")
        return z, x


class LatentTable(nn.Module):
    """Per-object latent codes optimized jointly with the decoder."""

    def __init__(self, object_ids: list[str], latent_dim: int, init_std: float = 0.01, generator=None):
        super().__init__()
        self.object_ids = list(object_ids)
        codes = torch.randn(len(self.object_ids), latent_dim, generator=generator) * init_std
        self.codes = nn.Parameter(codes)

    @classmethod
    def from_codes(cls, object_ids: list[str], codes: np.ndarray) -> "LatentTable":
        codes = np.asarray(codes, dtype=np.float32).reshape(len(object_ids), -1)
        table = cls(object_ids, codes.shape[1])
        with torch.no_grad():
            table.codes.copy_(torch.from_numpy(codes))
        return table

    def __len__(self) -> int:
        return len(self.object_ids)

    def index(self, object_id: str) -> int:
        return self.object_ids.index(object_id)

    def code(self, object_id: str) -> np.ndarray:
        return self.codes[self.index(object_id)].detach().cpu().numpy().copy()

    def as_dict(self) -> dict[str, np.ndarray]:
        return {object_id: self.code(object_id) for object_id in self.object_ids}


# ---- rotations and grasps --------------------------------------------------------

def gram_schmidt_torch(r1: torch.Tensor, r2: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    b1 = r1 / torch.linalg.vector_norm(r1, dim=-1, keepdim=True).clamp_min(eps)
    u2 = r2 - (b1 * r2).sum(dim=-1, keepdim=True) * b1
    b2 = u2 / torch.linalg.vector_norm(u2, dim=-1, keepdim=True).clamp_min(eps)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def grasp_matrices(x: torch.Tensor, delta_t: torch.Tensor, rotation: torch.Tensor) -> torch.Tensor:
    n = x.shape[0]
    matrices = torch.zeros(n, 4, 4, dtype=x.dtype, device=x.device)
    matrices[:, :3, :3] = rotation
    matrices[:, :3, 3] = x + delta_t
    matrices[:, 3, 3] = 1.0
    return matrices


def decode_grasp(x, delta_t, r1, r2) -> Grasp:
    translation = np.asarray(x, dtype=np.float64) + np.asarray(delta_t, dtype=np.float64)
    return Grasp(pose=Pose(rotation=gram_schmidt_rotation(r1, r2), translation=translation), frame="object")


def evaluate(decoder: SgdfDecoder, code: np.ndarray, points: np.ndarray, chunk: int = 65536) -> dict[str, np.ndarray]:
    """Dropout-free evaluation in chunks; returns numpy arrays keyed like DecoderOutput."""
    decoder.eval()
    dtype = next(decoder.parameters()).dtype
    z = torch.as_tensor(np.asarray(code), dtype=dtype)
    outputs = {name: [] for name in DecoderOutput._fields}
    with torch.no_grad():
        for start in range(0, len(points), chunk):
            x = torch.as_tensor(np.asarray(points[start:start + chunk]), dtype=dtype)
            for name, value in decoder(z, x)._asdict().items():
                outputs[name].append(value.double().cpu().numpy())
    if not len(points):
        return {"s": np.zeros(0), "delta_t": np.zeros((0, 3)), "r1": np.zeros((0, 3)), "r2": np.zeros((0, 3))}
    return {name: np.concatenate(parts) for name, parts in outputs.items()}


# ---- losses -----------------------------------------------------------------------

def _check_batch(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatchError(f"batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise EmptyBatchError("loss over an empty batch")


def loss_sdf(s_pred: torch.Tensor, s_gt: torch.Tensor, clamp: float) -> torch.Tensor:
    _check_batch(s_pred, s_gt)
    return (s_gt.clamp(-clamp, clamp) - s_pred.clamp(-clamp, clamp)).abs().mean()


def loss_grasp(g_pred: torch.Tensor, g_gt: torch.Tensor, gripper: GripperModel) -> torch.Tensor:
    """Five-point distance to the label or to its finger-swapped twin, whichever is closer."""
    _check_batch(g_pred, g_gt)
    V, V_flipped = (torch.as_tensor(m, dtype=g_pred.dtype, device=g_pred.device) for m in control_point_sets(gripper))
    predicted = g_pred @ V
    direct = torch.linalg.matrix_norm(g_gt @ V - predicted)
    flipped = torch.linalg.matrix_norm(g_gt @ V_flipped - predicted)
    return torch.minimum(direct, flipped).mean()


def loss_code(codes: torch.Tensor, epoch: int, ramp_epochs: int = 5) -> torch.Tensor:
    if codes.shape[0] == 0:
        raise EmptyBatchError("latent table is empty")
    return torch.linalg.vector_norm(codes, dim=1).mean() * min(1.0, epoch / ramp_epochs)


def combine_losses(l_sdf, l_grasp, l_code, config: TrainConfig):
    return config.weight_sdf * l_sdf + config.weight_grasp * l_grasp + config.weight_code * l_code


def decoder_loss(
    decoder: SgdfDecoder,
    latents: LatentTable,
    batch: SgdfBatch,
    epoch: int,
    config: TrainConfig,
    gripper: Optional[GripperModel] = None,
    dropout_seed: Optional[int] = None,
    train_mode: bool = True,
) -> tuple[torch.Tensor, LossBreakdown]:
    gripper = gripper or GripperModel.default()
    z = latents.codes[batch.object_index]
    pred = decoder(z, batch.x, train_mode=train_mode, dropout_seed=dropout_seed)

    g_pred = grasp_matrices(batch.x, pred.delta_t, gram_schmidt_torch(pred.r1, pred.r2))
    g_gt = grasp_matrices(batch.x, batch.delta_t, batch.rotation)
    l_sdf = loss_sdf(pred.s, batch.s, config.clamp)
    l_grasp = loss_grasp(g_pred, g_gt, gripper)
    l_code = loss_code(latents.codes, epoch, config.code_ramp_epochs)
    total = combine_losses(l_sdf, l_grasp, l_code, config)
    breakdown = LossBreakdown(
        sdf=float(l_sdf.detach()),
        grasp=float(l_grasp.detach()),
        code=float(l_code.detach()),
        total=float(total.detach()),
    )
    return total, breakdown


def make_batch(object_index: int, samples, dtype=torch.float32) -> SgdfBatch:
    """Tensor batch from an SgdfSamples record."""
    return SgdfBatch(
        object_index=object_index,
        x=torch.as_tensor(samples.x, dtype=dtype),
        s=torch.as_tensor(samples.s, dtype=dtype),
        delta_t=torch.as_tensor(samples.delta_t, dtype=dtype),
        rotation=torch.as_tensor(samples.rotation, dtype=dtype),
    )
