from pydantic import BaseModel, ConfigDict, Field, model_validator

LATENT_DIM = 32


class DecoderArch(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    latent_dim: int = Field(default=LATENT_DIM, gt=0)
    hidden_dim: int = Field(default=256, gt=0)
    n_hidden: int = Field(default=6, gt=0)
    skip_layer: int = Field(default=3, ge=1, description="hidden layer whose input re-receives latent+coordinate")
    dropout: float = Field(default=0.2, ge=0, lt=1)

    @model_validator(mode="after")
    def _skip_fits(self):
        if self.skip_layer < self.n_hidden and self.hidden_dim <= self.input_dim:
            raise ValueError("hidden_dim must exceed latent_dim + 3 when a skip connection is active")
        return self

    @property
    def input_dim(self) -> int:
        return self.latent_dim + 3

    def layer_sizes(self) -> list[tuple[int, int]]:
        """(in, out) per linear layer, head last."""
        sizes = []
        width_in = self.input_dim
        for i in range(self.n_hidden):
            if i == self.skip_layer:
                width_in = width_in + self.input_dim
            width_out = self.hidden_dim
            if i + 1 == self.skip_layer and self.skip_layer < self.n_hidden:
                width_out = self.hidden_dim - self.input_dim
            sizes.append((width_in, width_out))
            width_in = width_out
        sizes.append((width_in, 10))
        return sizes


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=100, ge=0)
    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=512, gt=0)
    clamp: float = Field(default=0.1, gt=0)
    weight_sdf: float = Field(default=10.0, ge=0)
    weight_grasp: float = Field(default=1.0, ge=0)
    weight_code: float = Field(default=0.001, ge=0)
    code_ramp_epochs: int = Field(default=5, gt=0)
    latent_init_std: float = Field(default=0.01, gt=0)
    seed: int = 0
    arch: DecoderArch = Field(default_factory=DecoderArch)


class LossBreakdown(BaseModel):
    sdf: float
    grasp: float
    code: float
    total: float


class EpochLog(BaseModel):
    epoch: int
    sdf: float
    grasp: float
    code: float
    total: float
