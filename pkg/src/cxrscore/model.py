"""Vision-transformer regressor for per-lung severity scores.

The backbone is a standard pre-norm ViT built from torch primitives: images
are cut into non-overlapping P x P patches, linearly embedded, prepended with
a learnable CLS token, summed with learned position embeddings, and passed
through L encoder blocks of multi-head self-attention and an MLP, each with
residual connections around layer-normalized inputs. A final layer norm is
applied before reading the CLS token. The head maps the CLS embedding
through two fully connected layers to a pair of unclamped real outputs
(p_left, p_right); the total prediction is exactly their sum.

Checkpoints use a self-describing container: an 8-byte magic, a JSON header
(format version, full config, tensor names and shapes in state-dict order),
then the raw little-endian float32 tensor data concatenated in that order.
Round-trips are bit-exact.
"""

import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArgumentError, CheckpointError, ConfigurationError, ShapeError

_CHECKPOINT_MAGIC = b"CXRSCKPT"
_CHECKPOINT_VERSION = 1

AGGREGATIONS = ("mean_heads", "single_head", "rollout")


@dataclass(frozen=True)
class VitConfig:
    """Architecture hyperparameters.

    num_outputs is fixed at 2 (left and right lung); head_activation selects
    the nonlinearity between the two head layers ("gelu" or "identity").
    """

    image_height: int = 224
    image_width: int = 224
    channels: int = 3
    patch_size: int = 16
    depth: int = 12
    embed_dim: int = 192
    num_heads: int = 3
    mlp_hidden: int = 768
    fc1_width: int = 128
    num_outputs: int = 2
    head_activation: str = "gelu"

    def __post_init__(self):
        for name in (
            "image_height",
            "image_width",
            "channels",
            "patch_size",
            "depth",
            "embed_dim",
            "num_heads",
            "mlp_hidden",
            "fc1_width",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.channels not in (1, 3):
            raise ConfigurationError(f"channels must be 1 or 3, got {self.channels}")
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ConfigurationError(
                f"image size {self.image_height}x{self.image_width} is not divisible "
                f"by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.num_outputs != 2:
            raise ConfigurationError(
                f"num_outputs is fixed at 2 (left/right lung), got {self.num_outputs}"
            )
        if self.head_activation not in ("gelu", "identity"):
            raise ConfigurationError(
                f"head_activation must be 'gelu' or 'identity', got {self.head_activation!r}"
            )

    @property
    def grid_height(self) -> int:
        return self.image_height // self.patch_size

    @property
    def grid_width(self) -> int:
        return self.image_width // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_height * self.grid_width

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass(frozen=True)
class ScorePrediction:
    """Per-lung predictions; p_total is exactly p_left + p_right."""

    p_left: float
    p_right: float
    p_total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "p_total", self.p_left + self.p_right)


@dataclass
class AttentionMap:
    """CLS-to-patch attention reshaped to the patch grid.

    cls_weight is the CLS-to-CLS entry of the same attention row; for
    mean_heads and single_head, grid.sum() + cls_weight == 1 up to float
    round-off. Rollout rows are renormalized products, same property.
    """

    grid: np.ndarray
    layer_index: int
    aggregation: str
    head: int | None = None
    cls_weight: float = 0.0


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, embed_dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.scale = self.head_dim**-0.5
        self.query = nn.Linear(embed_dim, embed_dim)
        self.key = nn.Linear(embed_dim, embed_dim)
        self.value = nn.Linear(embed_dim, embed_dim)
        self.out = nn.Linear(embed_dim, embed_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, t, d = x.shape
        h, hd = self.num_heads, self.head_dim
        q = self.query(x).view(b, t, h, hd).transpose(1, 2)
        k = self.key(x).view(b, t, h, hd).transpose(1, 2)
        v = self.value(x).view(b, t, h, hd).transpose(1, 2)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y), attn


class EncoderBlock(nn.Module):
    """Pre-norm transformer block: attention then MLP, residual around each."""

    def __init__(self, embed_dim: int, num_heads: int, mlp_hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(embed_dim)
        self.attn = MultiHeadSelfAttention(embed_dim, num_heads)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, mlp_hidden),
            nn.GELU(),
            nn.Linear(mlp_hidden, embed_dim),
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a, attn = self.attn(self.norm1(x))
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x, attn


class VitRegressor(nn.Module):
    """The full backbone + two-layer regression head.

    forward takes a normalized (B, H, W, C) batch and returns (B, 2) raw
    scores; with collect_attention=True it also returns the per-layer
    attention tensors, each (B, heads, T, T) with T = num_patches + 1.
    """

    def __init__(self, config: VitConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.patch_proj = nn.Linear(config.patch_dim, d)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches + 1, d))
        self.blocks = nn.ModuleList(
            EncoderBlock(d, config.num_heads, config.mlp_hidden) for _ in range(config.depth)
        )
        self.final_norm = nn.LayerNorm(d)
        self.head_fc1 = nn.Linear(d, config.fc1_width)
        self.head_act = nn.GELU() if config.head_activation == "gelu" else nn.Identity()
        self.head_fc2 = nn.Linear(config.fc1_width, config.num_outputs)

    def _to_patches(self, images: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        b = images.shape[0]
        p, gh, gw = cfg.patch_size, cfg.grid_height, cfg.grid_width
        x = images.reshape(b, gh, p, gw, p, cfg.channels)
        x = x.permute(0, 1, 3, 2, 4, 5)
        return x.reshape(b, cfg.num_patches, cfg.patch_dim)

    def forward(self, images: torch.Tensor, collect_attention: bool = False):
        cfg = self.config
        expected = (cfg.image_height, cfg.image_width, cfg.channels)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise ShapeError(
                f"expected batch of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), "
                f"got {tuple(images.shape)}"
            )
        if not torch.isfinite(images).all():
            raise ArgumentError("batch contains non-finite values")
        images = images.to(self.patch_proj.weight.dtype)
        x = self.patch_proj(self._to_patches(images))
        cls = self.cls_token.expand(x.shape[0], -1, -1).to(x.dtype)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        attentions = []
        for block in self.blocks:
            x, attn = block(x)
            if collect_attention:
                attentions.append(attn)
        x = self.final_norm(x)
        out = self.head_fc2(self.head_act(self.head_fc1(x[:, 0])))
        if collect_attention:
            return out, attentions
        return out


def _trunc_normal_(tensor: torch.Tensor, std: float, generator: torch.Generator) -> None:
    """Normal(0, std) truncated to +-2 std by resampling out-of-range draws."""
    with torch.no_grad():
        tensor.normal_(0.0, std, generator=generator)
        limit = 2.0 * std
        for _ in range(100):
            bad = tensor.abs() > limit
            n_bad = int(bad.sum())
            if n_bad == 0:
                return
            fresh = torch.empty(n_bad, dtype=tensor.dtype).normal_(0.0, std, generator=generator)
            tensor[bad] = fresh
        tensor.clamp_(-limit, limit)


def init_weights(config: VitConfig, seed: int) -> VitRegressor:
    """Build a model with deterministic initial weights.

    Linear weights plus the CLS token and position embeddings are truncated
    normal (std 0.02); biases are zero; layer norms start at identity. The
    same (config, seed) always yields bit-identical parameters.
    """
    if seed < 0:
        raise ArgumentError(f"seed must be non-negative, got {seed}")
    model = VitRegressor(config)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                _trunc_normal_(module.weight, 0.02, gen)
                module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
        _trunc_normal_(model.cls_token, 0.02, gen)
        _trunc_normal_(model.pos_embed, 0.02, gen)
    return model


def predict(model: VitRegressor, images: torch.Tensor) -> list[ScorePrediction]:
    """Run the model without gradients and unpack per-sample predictions."""
    with torch.no_grad():
        out = model(images)
    return [ScorePrediction(p_left=float(row[0]), p_right=float(row[1])) for row in out]


def save_checkpoint(model: VitRegressor, path: str) -> None:
    """Write the self-describing binary weight container."""
    state = model.state_dict()
    header = {
        "format_version": _CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for tensor in state.values():
            arr = tensor.detach().cpu().contiguous().numpy().astype("<f4", copy=False)
            fh.write(arr.tobytes())


def read_checkpoint_config(path: str) -> VitConfig:
    """Read only the embedded VitConfig from a checkpoint file."""
    with open(path, "rb") as fh:
        header, _ = _read_header(fh, path)
    return _config_from_header(header, path)


def _read_header(fh, path: str) -> tuple[dict, int]:
    magic = fh.read(len(_CHECKPOINT_MAGIC))
    if magic != _CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path!r} is not a weight checkpoint (bad magic)")
    raw_len = fh.read(4)
    if len(raw_len) != 4:
        raise CheckpointError(f"{path!r} is truncated in the header length")
    (header_len,) = struct.unpack("<I", raw_len)
    blob = fh.read(header_len)
    if len(blob) != header_len:
        raise CheckpointError(f"{path!r} is truncated in the header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path!r} has a corrupt header: {exc}") from None
    if header.get("format_version") != _CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path!r} has format_version {header.get('format_version')!r}, "
            f"expected {_CHECKPOINT_VERSION}"
        )
    return header, header_len


def _config_from_header(header: dict, path: str) -> VitConfig:
    cfg_dict = header.get("config")
    if not isinstance(cfg_dict, dict):
        raise CheckpointError(f"{path!r} header is missing the config block")
    known = {f.name for f in fields(VitConfig)}
    unknown = set(cfg_dict) - known
    if unknown or set(cfg_dict) != known:
        raise CheckpointError(f"{path!r} header config keys do not match this format")
    try:
        return VitConfig(**cfg_dict)
    except ConfigurationError as exc:
        raise CheckpointError(f"{path!r} header config is invalid: {exc}") from None


def load_weights(config: VitConfig, path: str) -> VitRegressor:
    """Load a checkpoint into a fresh model, validating config and shapes.

    The stored config must equal the given one field for field; tensor names
    and shapes must match the model's state dict exactly; all values must be
    finite; truncated or trailing data is an error.
    """
    model = VitRegressor(config)
    state = model.state_dict()
    with open(path, "rb") as fh:
        header, _ = _read_header(fh, path)
        stored_cfg = _config_from_header(header, path)
        if stored_cfg != config:
            diffs = [
                f.name
                for f in fields(VitConfig)
                if getattr(stored_cfg, f.name) != getattr(config, f.name)
            ]
            raise CheckpointError(
                f"{path!r} was written for a different config (differs in: {', '.join(diffs)})"
            )
        entries = header.get("tensors")
        if not isinstance(entries, list):
            raise CheckpointError(f"{path!r} header is missing the tensor list")
        stored_names = [e.get("name") for e in entries]
        if stored_names != list(state.keys()):
            for got, want in zip(stored_names, state.keys()):
                if got != want:
                    raise CheckpointError(
                        f"{path!r} tensor order mismatch: found {got!r}, expected {want!r}"
                    )
            raise CheckpointError(f"{path!r} tensor list length does not match the model")
        new_state = {}
        for entry in entries:
            name = entry["name"]
            want_shape = tuple(state[name].shape)
            got_shape = tuple(entry.get("shape", ()))
            if got_shape != want_shape:
                raise CheckpointError(
                    f"{path!r} tensor {name!r}: shape {list(got_shape)} does not match "
                    f"model shape {list(want_shape)}"
                )
            count = int(np.prod(want_shape, dtype=np.int64)) if want_shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise CheckpointError(f"{path!r} is truncated in tensor {name!r}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(want_shape)
            if not np.isfinite(arr).all():
                raise CheckpointError(f"{path!r} tensor {name!r} contains non-finite values")
            new_state[name] = torch.from_numpy(arr.copy())
        if fh.read(1):
            raise CheckpointError(f"{path!r} has trailing data after the last tensor")
    model.load_state_dict(new_state)
    return model


def extract_attention(
    model: VitRegressor,
    image: torch.Tensor,
    layer: int,
    aggregation: str = "mean_heads",
    head: int | None = None,
) -> AttentionMap:
    """Extract the CLS attention row of one layer as a patch-grid map.

    aggregation is one of mean_heads (average over heads), single_head
    (requires head index), or rollout (residual-aware cumulative product of
    head-averaged attention from layer 0 up to `layer`).
    """
    cfg = model.config
    if not 0 <= layer < cfg.depth:
        raise ArgumentError(f"layer {layer} out of range for depth {cfg.depth}")
    if aggregation not in AGGREGATIONS:
        raise ArgumentError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    if aggregation == "single_head":
        if head is None or not 0 <= head < cfg.num_heads:
            raise ArgumentError(
                f"single_head needs a head index in [0, {cfg.num_heads}), got {head!r}"
            )
    if image.ndim == 3:
        image = image.unsqueeze(0)
    with torch.no_grad():
        _, attentions = model(image, collect_attention=True)
        if aggregation == "mean_heads":
            row = attentions[layer][0].mean(dim=0)[0]
        elif aggregation == "single_head":
            row = attentions[layer][0, head, 0]
        else:
            t = attentions[0].shape[-1]
            eye = torch.eye(t, dtype=attentions[0].dtype)
            result = eye
            for idx in range(layer + 1):
                a = attentions[idx][0].mean(dim=0)
                a = 0.5 * a + 0.5 * eye
                a = a / a.sum(dim=-1, keepdim=True)
                result = a @ result
            row = result[0]
    row = row.to(torch.float32)
    grid = row[1:].reshape(cfg.grid_height, cfg.grid_width).numpy().copy()
    return AttentionMap(
        grid=grid,
        layer_index=layer,
        aggregation=aggregation,
        head=head if aggregation == "single_head" else None,
        cls_weight=float(row[0]),
    )


def upsample_map(amap: AttentionMap, height: int, width: int) -> np.ndarray:
    """Bilinearly upsample an attention grid to image resolution.

    The result is rescaled so its min and max equal the grid's min and max
    exactly; a constant grid maps to a constant image.
    """
    if height < 1 or width < 1:
        raise ArgumentError(f"target size must be positive, got {height}x{width}")
    grid = np.asarray(amap.grid, dtype=np.float32)
    if grid.ndim != 2:
        raise ArgumentError(f"attention grid must be 2-D, got shape {grid.shape}")
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo < 1e-12:
        return np.full((height, width), lo, dtype=np.float32)
    t = torch.from_numpy(grid)[None, None]
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=True)[0, 0]
    out = out.numpy().astype(np.float32)
    omin, omax = float(out.min()), float(out.max())
    out = (out - omin) * ((hi - lo) / (omax - omin)) + lo
    return out.astype(np.float32)


__all__ = [
    "AGGREGATIONS",
    "AttentionMap",
    "EncoderBlock",
    "MultiHeadSelfAttention",
    "ScorePrediction",
    "VitConfig",
    "VitRegressor",
    "extract_attention",
    "init_weights",
    "load_weights",
    "predict",
    "read_checkpoint_config",
    "save_checkpoint",
    "upsample_map",
]
