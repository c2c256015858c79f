from __future__ import annotations

import logging
from collections import Counter

import numpy as np
import torch

from ..errors import DataError, NumericalError
from ..pose_data import PoseSequence, SyntheticCorpus, fit_normalization, normalize
from .artifact import CodebookArtifact
from .config import CodebookConfig, ReplacementPolicy
from .losses import codebook_loss, pool_embeddings, supcon_loss, total_loss
from .model import CodebookModel
from .replacement import EncoderBuffer, replace_dead_entries

log = logging.getLogger(__name__)


def window_label(labels: np.ndarray) -> int:
    """Most frequent label in a window; ties go to the label that starts first."""
    counts = Counter(labels.tolist())
    best = max(counts.values())
    for lab in labels.tolist():
        if counts[lab] == best:
            return int(lab)
    raise AssertionError("unreachable")


def extract_windows(seqs: list[np.ndarray], window: int, stride: int | None = None,
                    frame_labels: list[np.ndarray] | None = None):
    """Cut (U, J, D) arrays into (n, window, J*D) training windows.

    Returns ``(windows, labels)``; ``labels`` is None unless per-frame labels are given.
    """
    stride = window if stride is None else stride
    xs, ys = [], []
    for k, frames in enumerate(seqs):
        U = frames.shape[0]
        for start in range(0, U - window + 1, stride):
            xs.append(frames[start:start + window].reshape(window, -1))
            if frame_labels is not None:
                ys.append(window_label(frame_labels[k][start:start + window]))
    if not xs:
        raise DataError(f"no sequence is long enough for a {window}-frame window")
    X = np.stack(xs).astype(np.float32)
    y = np.asarray(ys, dtype=np.int64) if frame_labels is not None else None
    return X, y


def set_determinism(enabled: bool = True):
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


@torch.no_grad()
def reconstruction_mse(model: CodebookModel, X: torch.Tensor, batch: int = 1024) -> float:
    """Eval-mode MSE when every window is decoded from its hard-assigned entry."""
    model.eval()
    total, n = 0.0, 0
    for s in range(0, X.shape[0], batch):
        xb = X[s:s + batch]
        _, t = model.quantize(model.encode(xb))
        poses, _ = model.decode(t)
        total += float(((poses - xb) ** 2).sum())
        n += xb.numel()
    return total / max(n, 1)


@torch.no_grad()
def assign_tokens(model: CodebookModel, X: torch.Tensor, batch: int = 1024) -> np.ndarray:
    model.eval()
    out = [model.quantize(model.encode(X[s:s + batch]))[0] for s in range(0, X.shape[0], batch)]
    return torch.cat(out).numpy()


def fit_codebook(X: np.ndarray, cfg: CodebookConfig, labels: np.ndarray | None = None,
                 deterministic: bool = True, callback=None) -> tuple[CodebookModel, list[dict]]:
    """Minibatch training of the encoder/NSVQ/decoder on prepared windows.

    ``X`` has shape (n, window, J*D). With ``labels`` and a positive
    contrastive weight the supervised contrastive term is added on the
    mean-pooled encoder output.
    """
    cfg.validate()
    set_determinism(deterministic)
    torch.manual_seed(cfg.seed)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    gen = torch.Generator().manual_seed(cfg.seed)
    policy: ReplacementPolicy = cfg.replacement

    Xt = torch.from_numpy(np.ascontiguousarray(X, dtype=np.float32))
    yt = torch.from_numpy(labels) if labels is not None else None
    use_con = yt is not None and cfg.contrastive_weight > 0

    model = CodebookModel(Xt.shape[2], cfg)
    model.set_pose_stats(Xt)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, factor=cfg.plateau_factor, patience=cfg.plateau_patience)
    buffer = EncoderBuffer(policy.buffer_size, cfg.token_dim)
    counters = model.counters
    history = []

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = torch.randperm(Xt.shape[0], generator=gen)
        sums = {"loss": 0.0, "codebook": 0.0, "supcon": 0.0}
        n_batches = 0
        for s in range(0, len(perm), cfg.batch_size):
            bi = perm[s:s + cfg.batch_size]
            xb = Xt[bi]
            out = model(xb)
            l_cb = codebook_loss(out["poses"], xb, out["counters"], counters, cfg.counter_weight)
            l_con = None
            if use_con and len(bi) >= 2:
                l_con = supcon_loss(pool_embeddings(out["z"]), yt[bi], cfg.temperature)
            loss = total_loss(l_cb, l_con, cfg.contrastive_weight)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}",
                    {"epoch": epoch, "batch": n_batches, "codebook_loss": float(l_cb.detach()),
                     "supcon_loss": None if l_con is None else float(l_con.detach()),
                     "lr": opt.param_groups[0]["lr"], "history": history[-5:]},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            model.codebook.record(out["idx"])
            buffer.push(out["z"].reshape(len(bi), -1))
            sums["loss"] += float(loss.detach())
            sums["codebook"] += float(l_cb.detach())
            sums["supcon"] += 0.0 if l_con is None else float(l_con.detach())
            n_batches += 1

        epoch_loss = sums["loss"] / n_batches
        sched.step(epoch_loss)
        lr = opt.param_groups[0]["lr"]
        used = int((model.codebook.usage > 0).sum())
        replaced = 0
        # never replace after the last epoch: new entries would go untrained
        if epoch < cfg.epochs and lr >= policy.stop_lr and policy.due(epoch):
            report = replace_dead_entries(model.codebook, policy, buffer, rng)
            replaced = len(report)
            if replaced:
                _reset_adam_rows(opt, model.codebook.entries, [d for d, _, _ in report.replaced])
        else:
            model.codebook.reset_usage()
        row = {"epoch": epoch, "loss": epoch_loss, "codebook_loss": sums["codebook"] / n_batches,
               "supcon_loss": sums["supcon"] / n_batches, "lr": lr, "used_entries": used, "replaced": replaced}
        history.append(row)
        if callback is not None:
            callback(row)
        log.debug("codebook epoch %d: %s", epoch, row)

    model.eval()
    history.append({"final_reconstruction_mse": reconstruction_mse(model, Xt)})
    return model, history


def _reset_adam_rows(opt: torch.optim.Optimizer, param: torch.nn.Parameter, rows: list[int]):
    state = opt.state.get(param)
    if not state:
        return
    idx = torch.as_tensor(rows, dtype=torch.long)
    for key in ("exp_avg", "exp_avg_sq"):
        if key in state:
            state[key][idx] = 0.0


def corpus_training_data(corpus: SyntheticCorpus, cfg: CodebookConfig, split: str = "train",
                         use_labels: bool = False):
    """Normalize the training split with global params and cut it into windows."""
    records = corpus.split(split) or corpus.records
    norm = fit_normalization(r.pose for r in records)
    frames = [normalize(r.pose, norm)[0].frames for r in records]
    labels = None
    if use_labels:
        L = corpus.config.primitive_length
        labels = [r.frame_labels(L)[: len(r.pose)] for r in records]
    X, y = extract_windows(frames, cfg.window, cfg.stride, labels)
    return X, y, norm


def train_codebook(corpus: SyntheticCorpus, cfg: CodebookConfig, policy: ReplacementPolicy | None = None,
                   use_labels: bool = False, deterministic: bool = True, callback=None) -> CodebookArtifact:
    if policy is not None:
        cfg.replacement = policy
    X, y, norm = corpus_training_data(corpus, cfg, use_labels=use_labels)
    model, history = fit_codebook(X, cfg, y, deterministic=deterministic, callback=callback)
    skeleton = corpus.records[0].pose.skeleton
    return CodebookArtifact(cfg, skeleton, norm, model, cfg.seed, history)


def train_codebook_on_sequences(seqs: list[PoseSequence], cfg: CodebookConfig, deterministic: bool = True,
                                callback=None) -> CodebookArtifact:
    """Same as :func:`train_codebook` for unlabeled sequences outside a corpus."""
    norm = fit_normalization(seqs)
    X, _ = extract_windows([normalize(s, norm)[0].frames for s in seqs], cfg.window, cfg.stride)
    model, history = fit_codebook(X, cfg, None, deterministic=deterministic, callback=callback)
    return CodebookArtifact(cfg, seqs[0].skeleton, norm, model, cfg.seed, history)


def utilization_of(model: CodebookModel, X: np.ndarray) -> float:
    tokens = assign_tokens(model, torch.from_numpy(np.ascontiguousarray(X, dtype=np.float32)))
    return len(np.unique(tokens)) / model.cfg.vocab_size

