"""Engine configuration and registry assembly.

Every constant that shapes the network or the inference policy lives in
EngineConfig; build_registry registers all weights in a fixed order so that
initialization is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .errors import ConfigError
from .objmem import register_object_memory_params
from .pixmem import register_pixel_memory_params
from .registry import ParamRegistry
from .transformer import register_transformer_params

ENGINE_VERSION = "1.0.0"

# fixed frame normalization (RGB in [0,1] -> standardized)
NORM_MEAN = (0.485, 0.456, 0.406)
NORM_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class EngineConfig:
    c: int = 256  # feature width everywhere past stride 16
    c_key: int = 64  # pixel-memory key width
    n_queries: int = 16  # object queries, half foreground half background
    n_blocks: int = 3  # object transformer depth
    n_heads: int = 8
    mem_interval: int = 5  # insert a memory frame every r-th frame
    t_max: int = 5  # pixel-memory capacity
    top_k: int = 30
    max_short_edge: int = 480
    decoder_dim: int = 128
    stem_dim: int = 32
    skip4_dim: int = 64
    skip8_dim: int = 128
    seed: int = 0
    init_std: float = 0.02  # truncated-normal scale for random weights

    def validate(self) -> "EngineConfig":
        if self.c % 4 or self.c % self.n_heads:
            raise ConfigError(f"c={self.c} must be divisible by 4 and by n_heads={self.n_heads}")
        if self.n_queries % 2 or self.n_queries < 2:
            raise ConfigError(f"n_queries={self.n_queries} must be even and >= 2")
        if self.n_blocks < 0:
            raise ConfigError(f"n_blocks={self.n_blocks} must be >= 0")
        if min(self.mem_interval, self.t_max, self.top_k, self.max_short_edge) < 1:
            raise ConfigError("mem_interval, t_max, top_k and max_short_edge must be >= 1")
        if self.init_std <= 0:
            raise ConfigError(f"init_std must be positive, got {self.init_std}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _register_pyramid(reg: ParamRegistry, prefix: str, in_ch: int, cfg: EngineConfig) -> None:
    """Strided conv stem + residual stages emitting stride 4/8/16 features."""
    reg.add_trunc_normal(f"{prefix}.stem.conv0.weight", (cfg.stem_dim, in_ch, 3, 3))
    reg.add_zeros(f"{prefix}.stem.conv0.bias", (cfg.stem_dim,))
    reg.add_trunc_normal(f"{prefix}.stem.conv1.weight", (cfg.skip4_dim, cfg.stem_dim, 3, 3))
    reg.add_zeros(f"{prefix}.stem.conv1.bias", (cfg.skip4_dim,))
    stages = (
        ("res4", cfg.skip4_dim),
        ("down8", (cfg.skip8_dim, cfg.skip4_dim)),
        ("res8", cfg.skip8_dim),
        ("down16", (cfg.c, cfg.skip8_dim)),
        ("res16", cfg.c),
    )
    for name, dims in stages:
        if name.startswith("down"):
            out_ch, in_c = dims
            reg.add_trunc_normal(f"{prefix}.{name}.weight", (out_ch, in_c, 3, 3))
            reg.add_zeros(f"{prefix}.{name}.bias", (out_ch,))
        else:
            ch = dims
            for conv in ("conv1", "conv2"):
                reg.add_trunc_normal(f"{prefix}.{name}.{conv}.weight", (ch, ch, 3, 3))
                reg.add_zeros(f"{prefix}.{name}.{conv}.bias", (ch,))


def build_registry(cfg: EngineConfig) -> ParamRegistry:
    cfg.validate()
    reg = ParamRegistry(cfg.seed, default_std=cfg.init_std)
    _register_pyramid(reg, "query_encoder", 3, cfg)
    for proj, out in (("key_proj", cfg.c_key), ("shrink_proj", 1), ("select_proj", cfg.c_key)):
        reg.add_trunc_normal(f"query_encoder.{proj}.weight", (out, cfg.c, 1, 1))
        reg.add_zeros(f"query_encoder.{proj}.bias", (out,))
    _register_pyramid(reg, "mask_encoder", 5, cfg)
    for proj in ("query_proj", "mask_proj"):
        reg.add_trunc_normal(f"value_fusion.{proj}.weight", (cfg.c, cfg.c, 1, 1))
        reg.add_zeros(f"value_fusion.{proj}.bias", (cfg.c,))
    for block in ("block0", "block1"):
        for conv in ("conv1", "conv2"):
            reg.add_trunc_normal(f"value_fusion.{block}.{conv}.weight", (cfg.c, cfg.c, 3, 3))
            reg.add_zeros(f"value_fusion.{block}.{conv}.bias", (cfg.c,))
    register_pixel_memory_params(reg, cfg.c, cfg.decoder_dim)
    register_object_memory_params(reg, cfg.c, cfg.n_queries)
    register_transformer_params(reg, cfg.c, cfg.n_queries, cfg.n_blocks)
    reg.add_trunc_normal("decoder.in_proj.weight", (cfg.decoder_dim, cfg.c, 1, 1))
    reg.add_zeros("decoder.in_proj.bias", (cfg.decoder_dim,))
    reg.add_trunc_normal("decoder.skip8.weight", (cfg.decoder_dim, cfg.skip8_dim, 1, 1))
    reg.add_zeros("decoder.skip8.bias", (cfg.decoder_dim,))
    reg.add_trunc_normal("decoder.skip4.weight", (cfg.decoder_dim, cfg.skip4_dim, 1, 1))
    reg.add_zeros("decoder.skip4.bias", (cfg.decoder_dim,))
    for stage in ("up8", "up4"):
        for conv in ("conv1", "conv2"):
            reg.add_trunc_normal(f"decoder.{stage}.{conv}.weight", (cfg.decoder_dim, cfg.decoder_dim, 3, 3))
            reg.add_zeros(f"decoder.{stage}.{conv}.bias", (cfg.decoder_dim,))
    reg.add_trunc_normal("decoder.final.weight", (1, cfg.decoder_dim, 3, 3))
    reg.add_zeros("decoder.final.bias", (1,))
    return reg.freeze()
