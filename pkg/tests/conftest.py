import numpy as np
import pytest
import torch
import trimesh

from Handlers.ObjectLibrary import builtin_library
from Handlers.SgdfDecoder import DecoderOutput, LatentTable, SgdfDecoder
from Models.Geometry import CameraIntrinsics
from Models.Gripper import GripperModel
from Models.RunConfig import CameraSpec
from Models.Training import DecoderArch


class SphereDecoder(torch.nn.Module):
    """Analytic stand-in: sphere of radius code[0], every point pointing at one top-down grasp."""

    def __init__(self, grasp_translation=(0.0, 0.0, 0.089)):
        super().__init__()
        self.anchor = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
        self.grasp_translation = torch.tensor(grasp_translation, dtype=torch.float64)

    def forward(self, z, x, train_mode=False, dropout_seed=None):
        x = x.reshape(-1, 3).double()
        radius = z.reshape(-1)[0].double()
        n = x.shape[0]
        s = torch.linalg.vector_norm(x, dim=1) - radius
        delta_t = self.grasp_translation - x
        r1 = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64).repeat(n, 1)
        r2 = torch.tensor([0.0, -1.0, 0.0], dtype=torch.float64).repeat(n, 1)
        return DecoderOutput(s=s, delta_t=delta_t, r1=r1, r2=r2)


@pytest.fixture
def gripper():
    return GripperModel.default()


@pytest.fixture
def cube_record():
    return builtin_library(["cube"])[0]


@pytest.fixture
def window_box():
    """4 cm cube centered in the finger window of an identity grasp."""
    box = trimesh.creation.box(extents=(0.04, 0.04, 0.04))
    box.apply_translation((0.0, 0.0, 0.089))
    return box


@pytest.fixture
def tiny_arch():
    return DecoderArch(hidden_dim=16, n_hidden=2, skip_layer=2, dropout=0.0)


@pytest.fixture
def tiny_decoder(tiny_arch):
    torch.manual_seed(0)
    return SgdfDecoder(tiny_arch)


@pytest.fixture
def tiny_latents(tiny_arch):
    generator = torch.Generator().manual_seed(0)
    return LatentTable(["cube", "box_small"], tiny_arch.latent_dim, init_std=0.1, generator=generator)


@pytest.fixture
def sphere_decoder():
    return SphereDecoder()


@pytest.fixture
def small_camera():
    intrinsics = CameraIntrinsics(fx=128.0, fy=128.0, cx=32.0, cy=24.0, width=64, height=48)
    return CameraSpec(intrinsics=intrinsics, use_depth_noise=False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
