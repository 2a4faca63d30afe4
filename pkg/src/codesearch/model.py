"""Dual-mode transformer encoder.

One model serves two roles: *fast* mode maps a single NL or PL sequence to a
unit-norm embedding for dense retrieval, *slow* mode maps a concatenated
NL-PL sequence to a match probability through a small MLP head. The
transformer trunk can be shared between the two roles (single set of weights,
head exclusive) or duplicated (separate fast and slow towers).

Sequences are always padded to a fixed per-mode length so that the forward
pass of a given sequence is bit-identical regardless of batch composition;
attention masks remove padded keys exactly (-inf before the softmax).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import CLS_ID, PAD_ID, RESERVED_TOKENS, SEP_ID, Mode

MODEL_MAGIC = b"CSMD"
MODEL_FORMAT_VERSION = 1

VARIANT_FAST_ONLY = "fast_only"
VARIANT_SHARED = "shared"
VARIANT_SEPARATE = "separate"
_VARIANTS = (VARIANT_FAST_ONLY, VARIANT_SHARED, VARIANT_SEPARATE)

_MODE_IDS = {Mode.NL: 0, Mode.PL: 1, Mode.PAIR: 2}


class ModelError(Exception):
    """Raised for invalid model configuration or usage."""


class ModelFormatError(ModelError):
    """Raised when a model file cannot be read back."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the encoder.

    ``temperature`` is the contrastive softmax temperature; it lives with the
    model because retrieval scores are defined relative to it.
    """

    vocab_size: int
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    ff_dim: int = 256
    head_hidden: int = 64
    temperature: float = 0.07
    max_nl_len: int = 64
    max_pl_len: int = 192
    max_pair_len: int = 256
    max_positions: int = 0  # 0 -> derived from the sequence limits
    mode_embeddings: bool = True
    dropout: float = 0.1

    def __post_init__(self):
        if self.max_positions == 0:
            object.__setattr__(self, "max_positions", self._min_positions())
        self.validate()

    def _min_positions(self) -> int:
        return max(self.max_nl_len + 2, self.max_pl_len + 2, self.max_pair_len)

    def validate(self) -> None:
        if self.hidden_dim % self.num_heads != 0:
            raise ModelError("hidden_dim must be divisible by num_heads")
        if self.temperature <= 0:
            raise ModelError("temperature must be positive")
        if self.vocab_size < len(RESERVED_TOKENS):
            raise ModelError("vocab_size too small for reserved tokens")
        if self.max_pair_len < 4:
            raise ModelError("max_pair_len must fit CLS + NL + SEP + PL")
        if self.max_positions < self._min_positions():
            raise ModelError(
                f"max_positions {self.max_positions} < required {self._min_positions()}"
            )

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def padded_len(self, mode: Mode) -> int:
        if mode is Mode.NL:
            return self.max_nl_len + 1
        if mode is Mode.PL:
            return self.max_pl_len + 1
        return self.max_pair_len


class TransformerLayer(nn.Module):
    """Post-layer-norm transformer block with explicit Q/K/V/O projections."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden_dim
        self.num_heads = config.num_heads
        self.head_dim = d // config.num_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.o_proj = nn.Linear(d, d)
        self.attn_norm = nn.LayerNorm(d)
        self.ff_in = nn.Linear(d, config.ff_dim)
        self.ff_out = nn.Linear(config.ff_dim, d)
        self.ff_norm = nn.LayerNorm(d)
        self.dropout = nn.Dropout(config.dropout)

    def forward(
        self, x: torch.Tensor, key_mask: torch.Tensor, collect_attn: list | None = None
    ) -> torch.Tensor:
        bsz, seq_len, d = x.shape
        shape = (bsz, seq_len, self.num_heads, self.head_dim)
        q = self.q_proj(x).view(shape).transpose(1, 2)
        k = self.k_proj(x).view(shape).transpose(1, 2)
        v = self.v_proj(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        if collect_attn is not None:
            collect_attn.append(attn.detach())
        attn = self.dropout(attn)
        context = (attn @ v).transpose(1, 2).reshape(bsz, seq_len, d)
        x = self.attn_norm(x + self.dropout(self.o_proj(context)))
        x = self.ff_norm(x + self.dropout(self.ff_out(F.gelu(self.ff_in(x)))))
        return x


class TransformerTrunk(nn.Module):
    """Embeddings plus transformer stack; returns the CLS hidden state."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_positions, d)
        self.mode_emb = nn.Embedding(3, d)
        self.emb_norm = nn.LayerNorm(d)
        self.emb_dropout = nn.Dropout(config.dropout)
        self.layers = nn.ModuleList(
            TransformerLayer(config) for _ in range(config.num_layers)
        )

    def forward(
        self,
        ids: torch.Tensor,
        lengths: torch.Tensor,
        mode: Mode,
        collect_attn: list | None = None,
    ) -> torch.Tensor:
        seq_len = ids.shape[1]
        positions = torch.arange(seq_len, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(positions)[None, :, :]
        if self.config.mode_embeddings:
            mode_id = torch.tensor(_MODE_IDS[mode], device=ids.device)
            x = x + self.mode_emb(mode_id)[None, None, :]
        x = self.emb_dropout(self.emb_norm(x))
        key_mask = positions[None, :] < lengths[:, None]
        for layer in self.layers:
            x = layer(x, key_mask, collect_attn)
        return x[:, 0]


class ClassifierHead(nn.Module):
    """Two affine layers with tanh between, producing a scalar match logit."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.dense = nn.Linear(config.hidden_dim, config.head_hidden)
        self.out = nn.Linear(config.head_hidden, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(torch.tanh(self.dense(x))).squeeze(-1)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class SearchModel(nn.Module):
    """The full search model: fast trunk, optional slow trunk, classifier head.

    Variants:
      * ``fast_only``  - one trunk, no classifier head (retrieval only).
      * ``shared``     - one trunk serves both modes; only the head is
        exclusive to the classifier.
      * ``separate``   - independent fast and slow trunks plus the head.
    """

    def __init__(
        self,
        config: ModelConfig,
        variant: str = VARIANT_SHARED,
        seed: int | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if variant not in _VARIANTS:
            raise ModelError(f"unknown variant {variant!r}")
        self.config = config
        self.variant = variant
        if seed is not None:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self._build()
        else:
            self._build()
        if dtype != torch.float32:
            self.to(dtype)

    def _build(self) -> None:
        self.fast_trunk = TransformerTrunk(self.config)
        if self.variant == VARIANT_SEPARATE:
            self.slow_trunk = TransformerTrunk(self.config)
        else:
            self.slow_trunk = None
        self.head = None if self.variant == VARIANT_FAST_ONLY else ClassifierHead(self.config)
        self.apply(_init_weights)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def has_classifier(self) -> bool:
        return self.head is not None

    @property
    def is_shared(self) -> bool:
        return self.variant == VARIANT_SHARED

    def config_hash(self) -> str:
        return self.config.config_hash()

    def param_counts(self) -> tuple[int, int]:
        """(trunk parameters, classifier-head parameters)."""
        head_params = sum(p.numel() for p in self.head.parameters()) if self.head else 0
        total = sum(p.numel() for p in self.parameters())
        return total - head_params, head_params

    def _classifier_trunk(self) -> TransformerTrunk:
        if self.variant == VARIANT_FAST_ONLY:
            raise ModelError("this model has no classifier (fast_only variant)")
        return self.slow_trunk if self.variant == VARIANT_SEPARATE else self.fast_trunk

    # -- sequence preparation --------------------------------------------------

    def _pad_single(self, seqs: Sequence[Sequence[int]], mode: Mode) -> tuple[torch.Tensor, torch.Tensor]:
        limit = self.config.max_nl_len if mode is Mode.NL else self.config.max_pl_len
        padded_len = self.config.padded_len(mode)
        ids = torch.full((len(seqs), padded_len), PAD_ID, dtype=torch.long)
        lengths = torch.zeros(len(seqs), dtype=torch.long)
        for row, seq in enumerate(seqs):
            if len(seq) == 0:
                raise ValueError("cannot encode an empty token sequence")
            if len(seq) > limit:
                raise ValueError(
                    f"sequence of length {len(seq)} exceeds {mode.value} limit {limit}"
                )
            ids[row, 0] = CLS_ID
            ids[row, 1 : 1 + len(seq)] = torch.as_tensor(seq, dtype=torch.long)
            lengths[row] = 1 + len(seq)
        return ids, lengths

    def pair_sequence(self, nl_tokens: Sequence[int], pl_tokens: Sequence[int]) -> list[int]:
        """CLS + NL + SEP + PL, truncated to the pair-length budget."""
        nl = list(nl_tokens)[: self.config.max_nl_len]
        budget = self.config.max_pair_len - 2 - len(nl)
        if budget < 1:
            raise ValueError("pair budget leaves no room for PL tokens")
        pl = list(pl_tokens)[:budget]
        if not nl or not pl:
            raise ValueError("cannot build a pair sequence from empty tokens")
        return [CLS_ID] + nl + [SEP_ID] + pl

    def _pad_pairs(
        self, nl_tokens: Sequence[int], pl_seqs: Sequence[Sequence[int]]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        padded_len = self.config.max_pair_len
        ids = torch.full((len(pl_seqs), padded_len), PAD_ID, dtype=torch.long)
        lengths = torch.zeros(len(pl_seqs), dtype=torch.long)
        for row, pl in enumerate(pl_seqs):
            seq = self.pair_sequence(nl_tokens, pl)
            ids[row, : len(seq)] = torch.as_tensor(seq, dtype=torch.long)
            lengths[row] = len(seq)
        return ids, lengths

    # -- differentiable paths (used by training) -------------------------------

    def embed(self, seqs: Sequence[Sequence[int]], mode: Mode) -> torch.Tensor:
        """L2-normalized CLS embeddings; keeps the autograd graph."""
        if mode not in (Mode.NL, Mode.PL):
            raise ValueError("embed expects NL or PL mode")
        ids, lengths = self._pad_single(seqs, mode)
        cls = self.fast_trunk(ids, lengths, mode)
        return F.normalize(cls, p=2, dim=-1, eps=1e-12)

    def pair_logits(
        self, nl_tokens: Sequence[int], pl_seqs: Sequence[Sequence[int]]
    ) -> torch.Tensor:
        """Match logits for one NL query against a list of PL candidates."""
        trunk = self._classifier_trunk()
        ids, lengths = self._pad_pairs(nl_tokens, pl_seqs)
        cls = trunk(ids, lengths, Mode.PAIR)
        return self.head(cls)

    def pair_logits_batch(
        self, pairs: Sequence[tuple[Sequence[int], Sequence[int]]]
    ) -> torch.Tensor:
        """Match logits for a batch of independent (NL, PL) pairs."""
        trunk = self._classifier_trunk()
        padded_len = self.config.max_pair_len
        ids = torch.full((len(pairs), padded_len), PAD_ID, dtype=torch.long)
        lengths = torch.zeros(len(pairs), dtype=torch.long)
        for row, (nl, pl) in enumerate(pairs):
            seq = self.pair_sequence(nl, pl)
            ids[row, : len(seq)] = torch.as_tensor(seq, dtype=torch.long)
            lengths[row] = len(seq)
        cls = trunk(ids, lengths, Mode.PAIR)
        return self.head(cls)

    # -- inference API ---------------------------------------------------------

    def encode_batch(self, seqs: Sequence[Sequence[int]], mode: Mode) -> torch.Tensor:
        """Deterministic inference embeddings (no dropout, no grad)."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                return self.embed(seqs, mode)
        finally:
            if was_training:
                self.train()

    def encode(self, tokens: Sequence[int], mode: Mode) -> torch.Tensor:
        return self.encode_batch([tokens], mode)[0]

    def classify_batch(
        self, nl_tokens: Sequence[int], pl_seqs: Sequence[Sequence[int]]
    ) -> torch.Tensor:
        """Match probabilities, clamped strictly inside (0, 1)."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                logits = self.pair_logits(nl_tokens, pl_seqs)
                # Sigmoid in float64: float32 saturates to 1.0 for logits
                # beyond ~17, which would collapse distinct high-confidence
                # scores into ties that the id tie-break then orders
                # arbitrarily.  float64 keeps them distinct up to ~36.
                probs = torch.sigmoid(logits.to(torch.float64))
                eps = torch.finfo(probs.dtype).eps
                return probs.clamp(eps, 1.0 - eps)
        finally:
            if was_training:
                self.train()

    def classify(self, nl_tokens: Sequence[int], pl_tokens: Sequence[int]) -> float:
        return float(self.classify_batch(nl_tokens, [pl_tokens])[0])

    def attention_maps(self, seqs: Sequence[Sequence[int]], mode: Mode) -> list[torch.Tensor]:
        """Per-layer attention distributions for inspection/testing."""
        ids, lengths = self._pad_single(seqs, mode)
        maps: list[torch.Tensor] = []
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                self.fast_trunk(ids, lengths, mode, collect_attn=maps)
        finally:
            if was_training:
                self.train()
        return maps

    # -- gradient access --------------------------------------------------------

    def gradients(self) -> dict[str, torch.Tensor]:
        """Current gradient per parameter; zeros for parameters off the path."""
        grads = {}
        for name, param in self.named_parameters():
            grads[name] = (
                param.grad.detach().clone()
                if param.grad is not None
                else torch.zeros_like(param)
            )
        return grads

    # -- persistence -------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Binary checkpoint: magic, version, config JSON + hash, then every
        parameter tensor in sorted-name order as little-endian float32."""
        header = {"config": asdict(self.config), "variant": self.variant}
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        state = self.state_dict()
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(struct.pack("<I", MODEL_FORMAT_VERSION))
        buf.write(struct.pack("<I", len(header_bytes)))
        buf.write(header_bytes)
        buf.write(hashlib.sha256(header_bytes).digest())
        names = sorted(state.keys())
        buf.write(struct.pack("<I", len(names)))
        for name in names:
            tensor = state[name].detach().to(torch.float32).contiguous()
            name_bytes = name.encode("utf-8")
            buf.write(struct.pack("<I", len(name_bytes)))
            buf.write(name_bytes)
            buf.write(struct.pack("<I", tensor.dim()))
            for dim in tensor.shape:
                buf.write(struct.pack("<Q", dim))
            buf.write(tensor.numpy().astype("<f4").tobytes())
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "SearchModel":
        raw = Path(path).read_bytes()
        view = io.BytesIO(raw)

        def read(n: int, what: str) -> bytes:
            data = view.read(n)
            if len(data) != n:
                raise ModelFormatError(f"truncated model file while reading {what}")
            return data

        if read(4, "magic") != MODEL_MAGIC:
            raise ModelFormatError(
                f"not a {MODEL_MAGIC.decode()} model file: bad magic bytes"
            )
        (version,) = struct.unpack("<I", read(4, "version"))
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        (header_len,) = struct.unpack("<I", read(4, "header length"))
        header_bytes = read(header_len, "config header")
        stored_hash = read(32, "config hash")
        actual_hash = hashlib.sha256(header_bytes).digest()
        if stored_hash != actual_hash:
            raise ModelFormatError(
                "config hash mismatch: stored "
                f"{stored_hash.hex()} != computed {actual_hash.hex()}"
            )
        header = json.loads(header_bytes)
        config = ModelConfig(**header["config"])
        model = cls(config, variant=header["variant"])
        state = model.state_dict()
        (n_tensors,) = struct.unpack("<I", read(4, "tensor count"))
        if n_tensors != len(state):
            raise ModelFormatError(
                f"tensor count {n_tensors} does not match architecture ({len(state)})"
            )
        loaded = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", read(4, "name length"))
            name = read(name_len, "tensor name").decode("utf-8")
            if name not in state:
                raise ModelFormatError(f"unexpected tensor {name!r} in model file")
            (ndim,) = struct.unpack("<I", read(4, "tensor rank"))
            shape = tuple(
                struct.unpack("<Q", read(8, "tensor dim"))[0] for _ in range(ndim)
            )
            if shape != tuple(state[name].shape):
                raise ModelFormatError(
                    f"shape mismatch for {name!r}: file {shape}, model {tuple(state[name].shape)}"
                )
            numel = math.prod(shape)
            data = read(4 * numel, f"tensor {name!r} data")
            array = torch.frombuffer(bytearray(data), dtype=torch.float32).reshape(shape)
            loaded[name] = array
        if view.read(1):
            raise ModelFormatError("trailing bytes after final tensor")
        model.load_state_dict(loaded)
        model.eval()
        return model
