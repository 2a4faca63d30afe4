"""Training objectives and optimizer loop.

Implements the contrastive retrieval objective over in-batch negatives, the
pairwise binary cross-entropy objective for the match classifier, and their
weighted joint form used to train the shared-trunk variant. The loop is a
single-threaded Adam with constant learning rate, periodic dev-set MRR
evaluation, best-checkpoint retention, and early stopping.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch

from .corpus import DatasetSplit, Mode, TrainBatch, make_batches
from .model import ModelError, SearchModel

LOSS_FAST_ONLY = "fast_only"
LOSS_SLOW_ONLY = "slow_only"
LOSS_JOINT = "joint"
_LOSS_MODES = (LOSS_FAST_ONLY, LOSS_SLOW_ONLY, LOSS_JOINT)


class TrainingError(Exception):
    """Raised for invalid training configuration."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 30
    eval_every: int = 0  # batches between dev evals; 0 -> once per epoch
    early_stop_patience: int = 3
    loss_mode: str = LOSS_JOINT
    w_nce: float = 0.5
    w_ce: float = 0.5
    seed: int = 0
    dev_eval_k: int = 100  # rerank depth for cascade dev MRR
    grad_clip: float = 1.0  # global-norm clip; 0 disables
    symmetric_nce: bool = False  # optional PL->NL term, off to match the one-way objective
    bce_all_negatives: bool = False  # optional all-pairs negatives, off by default

    def validate(self) -> None:
        if self.batch_size < 2:
            raise TrainingError("batch_size must be >= 2")
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be non-negative")
        if self.loss_mode not in _LOSS_MODES:
            raise TrainingError(f"unknown loss_mode {self.loss_mode!r}")
        if self.loss_mode == LOSS_JOINT and not math.isclose(
            self.w_nce + self.w_ce, 1.0, rel_tol=0, abs_tol=1e-9
        ):
            raise TrainingError("joint loss weights must sum to 1")


def info_nce_loss(
    nl_embeddings: torch.Tensor,
    pl_embeddings: torch.Tensor,
    temperature: float,
    symmetric: bool = False,
) -> torch.Tensor:
    """Contrastive loss over in-batch negatives, NL -> PL direction.

    loss = mean_i -log( exp(x_i . y_i / t) / sum_j exp(x_i . y_j / t) ),
    computed via logsumexp (row-max subtraction) for stability. Rows are
    expected to be unit-norm so the inner product is a cosine.
    """
    if nl_embeddings.shape != pl_embeddings.shape:
        raise ValueError("embedding matrices must have matching shapes")
    batch = nl_embeddings.shape[0]
    if batch < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    sims = nl_embeddings @ pl_embeddings.T / temperature
    positives = sims.diagonal()
    loss = (torch.logsumexp(sims, dim=1) - positives).mean()
    if symmetric:
        loss_rev = (torch.logsumexp(sims.T, dim=1) - positives).mean()
        loss = (loss + loss_rev) / 2
    return loss


def bce_loss(positive_logits: torch.Tensor, negative_logits: torch.Tensor) -> torch.Tensor:
    """Pairwise match/mismatch cross-entropy, computed in log space.

    loss = mean_i [ -log p(pos_i) - log(1 - p(neg_i)) ] with p = sigmoid(logit),
    i.e. softplus(-pos) + softplus(neg) per example.
    """
    if positive_logits.shape != negative_logits.shape:
        raise ValueError("positive and negative logits must have matching shapes")
    pos_term = torch.nn.functional.softplus(-positive_logits)
    neg_term = torch.nn.functional.softplus(negative_logits)
    return (pos_term + neg_term).mean()


def batch_losses(
    model: SearchModel, batch: TrainBatch, config: TrainConfig
) -> dict[str, torch.Tensor]:
    """Forward losses for one batch under the configured loss mode.

    The joint mode re-runs the classifier from raw token inputs rather than
    reusing the fast-stage representations.
    """
    terms: dict[str, torch.Tensor] = {}
    nl_seqs = [p.nl_tokens for p in batch.pairs]
    pl_seqs = [p.pl_tokens for p in batch.pairs]
    if config.loss_mode in (LOSS_FAST_ONLY, LOSS_JOINT):
        nl_emb = model.embed(nl_seqs, Mode.NL)
        pl_emb = model.embed(pl_seqs, Mode.PL)
        terms["nce"] = info_nce_loss(
            nl_emb, pl_emb, model.config.temperature, symmetric=config.symmetric_nce
        )
    if config.loss_mode in (LOSS_SLOW_ONLY, LOSS_JOINT):
        if not model.has_classifier:
            raise ModelError("classifier losses need a model with a head")
        if config.loss_mode == LOSS_JOINT and not model.is_shared:
            raise ModelError("joint training requires the shared-trunk variant")
        pos_pairs = [(nl_seqs[i], pl_seqs[i]) for i in range(len(batch.pairs))]
        if config.bce_all_negatives:
            neg_pairs = [
                (nl_seqs[i], pl_seqs[j])
                for i in range(len(batch.pairs))
                for j in range(len(batch.pairs))
                if j != i
            ]
            pos_logits = model.pair_logits_batch(pos_pairs)
            neg_logits = model.pair_logits_batch(neg_pairs)
            pos_term = torch.nn.functional.softplus(-pos_logits).mean()
            neg_term = torch.nn.functional.softplus(neg_logits).mean()
            terms["ce"] = pos_term + neg_term
        else:
            neg_pairs = [
                (nl_seqs[i], pl_seqs[j]) for i, j in enumerate(batch.negative_assignment)
            ]
            logits = model.pair_logits_batch(pos_pairs + neg_pairs)
            n = len(batch.pairs)
            terms["ce"] = bce_loss(logits[:n], logits[n:])
    if config.loss_mode == LOSS_FAST_ONLY:
        terms["total"] = terms["nce"]
    elif config.loss_mode == LOSS_SLOW_ONLY:
        terms["total"] = terms["ce"]
    else:
        terms["total"] = config.w_nce * terms["nce"] + config.w_ce * terms["ce"]
    return terms


class Adam:
    """Plain Adam with bias correction, tracked per named parameter."""

    def __init__(
        self,
        params: dict[str, torch.nn.Parameter],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in params.items()}

    @torch.no_grad()
    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1 - self.beta1**t
        bc2 = 1 - self.beta2**t
        for name, param in self.params.items():
            if param.grad is None:
                continue
            grad = param.grad
            m = self.m[name]
            v = self.v[name]
            m.mul_(self.beta1).add_(grad, alpha=1 - self.beta1)
            v.mul_(self.beta2).addcmul_(grad, grad, value=1 - self.beta2)
            step = (m / bc1) / ((v / bc2).sqrt() + self.eps)
            param.add_(step, alpha=-self.lr)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None


@dataclass
class TrainResult:
    model: SearchModel
    history: list[dict] = field(default_factory=list)
    best_dev_mrr: float = 0.0
    steps: int = 0
    stopped_early: bool = False
    aborted: bool = False


def _dev_eval(
    model: SearchModel, dataset: DatasetSplit, config: TrainConfig
) -> dict[str, float]:
    """Dev MRR: fast stage always; cascade (K=dev_eval_k) when a head exists."""
    from .cascade import CandidateStore, CascadeConfig
    from .evaluation import evaluate
    from .index import build_index

    store = CandidateStore.from_pairs(dataset.candidates)
    index = build_index(model, dataset.candidates, batch_size=64)
    metrics: dict[str, float] = {}
    fast_report = evaluate(
        model, index, store, dataset.dev, CascadeConfig(mode="fast"), ks=(1, 10)
    )
    metrics["dev_mrr_fast"] = fast_report.mrr
    if config.loss_mode in (LOSS_SLOW_ONLY, LOSS_JOINT) and model.has_classifier:
        cascade_report = evaluate(
            model,
            index,
            store,
            dataset.dev,
            CascadeConfig(mode="cascade", k=config.dev_eval_k),
            ks=(1, 10),
        )
        metrics["dev_mrr_cascade"] = cascade_report.mrr
    return metrics


def _early_stop_metric(metrics: dict[str, float], loss_mode: str) -> float:
    if loss_mode == LOSS_FAST_ONLY:
        return metrics["dev_mrr_fast"]
    return metrics.get("dev_mrr_cascade", metrics["dev_mrr_fast"])


def train(
    model: SearchModel,
    dataset: DatasetSplit,
    config: TrainConfig,
    log_path: str | Path | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run the optimization loop.

    Keeps the checkpoint with the best dev MRR, stops after
    ``early_stop_patience`` evaluations without improvement, and aborts on
    non-finite losses while retaining the last good checkpoint. Deterministic
    under ``config.seed``.
    """
    config.validate()
    if not dataset.train or not dataset.dev:
        raise TrainingError("training needs non-empty train and dev splits")
    torch.manual_seed(config.seed)
    named = dict(model.named_parameters())
    optimizer = Adam(
        named,
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
    result = TrainResult(model=model)
    best_state: dict | None = None
    evals_since_best = 0
    start = time.perf_counter()
    log_handle = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(record: dict) -> None:
        result.history.append(record)
        if log_handle:
            log_handle.write(json.dumps(record) + "\n")
            log_handle.flush()
        if progress:
            progress(record)

    def run_eval() -> bool:
        """Returns True when training should stop."""
        nonlocal best_state, evals_since_best
        metrics = _dev_eval(model, dataset, config)
        metric = _early_stop_metric(metrics, config.loss_mode)
        improved = metric > result.best_dev_mrr
        if improved or best_state is None:
            result.best_dev_mrr = max(result.best_dev_mrr, metric)
            best_state = copy.deepcopy(model.state_dict())
            evals_since_best = 0
        else:
            evals_since_best += 1
        emit(
            {
                "step": result.steps,
                "wall_s": round(time.perf_counter() - start, 3),
                **{k: round(v, 6) for k, v in metrics.items()},
            }
        )
        return evals_since_best >= config.early_stop_patience

    try:
        stop = False
        for epoch in range(config.max_epochs):
            if stop:
                break
            model.train()
            for batch in make_batches(dataset.train, config.batch_size, config.seed + epoch):
                terms = batch_losses(model, batch, config)
                loss = terms["total"]
                if not torch.isfinite(loss):
                    result.aborted = True
                    emit({"step": result.steps, "event": "abort", "reason": "non-finite loss"})
                    stop = True
                    break
                optimizer.zero_grad()
                loss.backward()
                if config.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                result.steps += 1
                record = {
                    "step": result.steps,
                    "epoch": epoch,
                    "loss": round(loss.detach().item(), 6),
                    "wall_s": round(time.perf_counter() - start, 3),
                }
                for key in ("nce", "ce"):
                    if key in terms:
                        record[f"loss_{key}"] = round(terms[key].detach().item(), 6)
                emit(record)
                if config.eval_every > 0 and result.steps % config.eval_every == 0:
                    if run_eval():
                        result.stopped_early = True
                        stop = True
                        break
                    model.train()
            if stop:
                break
            if config.eval_every == 0:
                if run_eval():
                    result.stopped_early = True
                    break
    finally:
        if best_state is not None:
            model.load_state_dict(best_state)
        model.eval()
        if log_handle:
            log_handle.close()
    return result


# --- gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    tolerance: float

    @property
    def max_relative_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.per_tensor.values())


def grad_check(
    model: SearchModel,
    batch: TrainBatch,
    config: TrainConfig,
    epsilon: float = 1e-4,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The model must be float64 and small (every parameter element is
    perturbed twice). Relative error uses a small denominator floor so that
    near-zero gradient entries are compared absolutely.
    """
    for param in model.parameters():
        if param.dtype != torch.float64:
            raise TrainingError("grad_check requires a float64 model")
    model.eval()  # dropout off; the check needs a deterministic function

    def loss_value() -> torch.Tensor:
        return batch_losses(model, batch, config)["total"]

    for param in model.parameters():
        param.grad = None
    loss_value().backward()
    analytic = model.gradients()

    per_tensor: dict[str, float] = {}
    floor = 1e-2
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.view(-1)
            fd = torch.zeros_like(flat)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + epsilon
                up = loss_value().item()
                flat[idx] = original - epsilon
                down = loss_value().item()
                flat[idx] = original
                fd[idx] = (up - down) / (2 * epsilon)
            ana = analytic[name].view(-1)
            denom = torch.maximum(
                torch.maximum(ana.abs(), fd.abs()), torch.full_like(fd, floor)
            )
            per_tensor[name] = float(((ana - fd).abs() / denom).max()) if flat.numel() else 0.0
    return GradCheckReport(per_tensor=per_tensor, tolerance=tolerance)


def train_config_from_dict(data: dict) -> TrainConfig:
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise TrainingError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**data)


def train_config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)
