"""Teacher pretraining and student distillation loops."""

import copy
import logging
from pathlib import Path

import numpy as np
import torch

from .corpus import Dataset
from .losses import LossReport, TrainConfig, student_losses, teacher_elbo
from .nets import NetConfig, Student, Teacher

log = logging.getLogger("cavwtrain")


def _tensors(dataset: Dataset):
    return (
        torch.from_numpy(dataset.features),
        torch.from_numpy(dataset.power),
        torch.from_numpy(dataset.labels),
    )


def _split(n, val_fraction, generator):
    perm = torch.randperm(n, generator=generator)
    n_val = max(1, int(round(n * val_fraction))) if val_fraction > 0 else 0
    return perm[n_val:], perm[:n_val]


def _atomic_save(state, path):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)


def net_config(dataset: Dataset, cfg: TrainConfig, widths=(256, 128)):
    return NetConfig(
        freq_bins=dataset.freq_bins,
        latent_dim=cfg.latent_dim,
        class_count=dataset.n_classes,
        widths=tuple(widths),
    )


def train_teacher(dataset: Dataset, cfg: TrainConfig, widths=(256, 128), checkpoint=None):
    """Maximize the conditional variational bound; keeps the best-validation
    weights. Returns (teacher, history dict)."""
    torch.manual_seed(cfg.seed)
    net = Teacher(net_config(dataset, cfg, widths))
    feat, power, labels = _tensors(dataset)
    gen = torch.Generator().manual_seed(cfg.seed)
    train_idx, val_idx = _split(len(feat), cfg.val_fraction, gen)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    history = {"elbo": [], "val_elbo": []}
    best_val, best_state = -float("inf"), None
    for epoch in range(cfg.epochs):
        order = train_idx[torch.randperm(len(train_idx), generator=gen)]
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            elbo, _ = teacher_elbo(net, feat[idx], power[idx], labels[idx], generator=gen)
            loss = -elbo
            if not torch.isfinite(loss):
                raise FloatingPointError(f"teacher loss non-finite at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            history["elbo"].append(float(elbo.detach()))
        with torch.no_grad():
            val, _ = teacher_elbo(net, feat[val_idx], power[val_idx], labels[val_idx],
                                  noise_eps=torch.zeros(1))  # mean latent for validation
        history["val_elbo"].append(float(val))
        if float(val) > best_val:
            best_val, best_state = float(val), copy.deepcopy(net.state_dict())
        log.info("teacher epoch %d: val elbo %.2f", epoch, float(val))
    if best_state is not None:
        net.load_state_dict(best_state)
    if checkpoint:
        _atomic_save({"config": net.cfg, "state": net.state_dict()}, checkpoint)
    return net, history


def train_student(dataset: Dataset, teacher: Teacher, cfg: TrainConfig,
                  checkpoint=None) -> tuple:
    """Distill the unified-encoder student against the frozen teacher with the
    full weighted criterion. Returns (student, LossReport, history)."""
    if teacher.cfg.latent_dim != cfg.latent_dim:
        raise ValueError(
            f"teacher latent_dim {teacher.cfg.latent_dim} != student {cfg.latent_dim}; "
            "the latent distillation term requires equal dimensionality"
        )
    torch.manual_seed(cfg.seed + 1)
    net = Student(teacher.cfg)
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    feat, power, labels = _tensors(dataset)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    train_idx, val_idx = _split(len(feat), cfg.val_fraction, gen)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    report = LossReport()
    history = {"val_total": []}
    best_val, best_state = -float("inf"), None
    for epoch in range(cfg.epochs):
        order = train_idx[torch.randperm(len(train_idx), generator=gen)]
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            total, terms = student_losses(
                (feat[idx], power[idx], labels[idx]), teacher, net, cfg, generator=gen
            )
            opt.zero_grad(set_to_none=True)
            (-total).backward()
            opt.step()
            report.append(terms)
        with torch.no_grad():
            val, _ = student_losses(
                (feat[val_idx], power[val_idx], labels[val_idx]), teacher, net, cfg,
                generator=torch.Generator().manual_seed(12345),
            )
        history["val_total"].append(float(val))
        if float(val) > best_val:
            best_val, best_state = float(val), copy.deepcopy(net.state_dict())
        log.info("student epoch %d: val criterion %.2f", epoch, float(val))
    if best_state is not None:
        net.load_state_dict(best_state)
    if checkpoint:
        _atomic_save({"config": net.cfg, "state": net.state_dict()}, checkpoint)
    return net, report, history


def load_teacher(path) -> Teacher:
    blob = torch.load(path, weights_only=False)
    net = Teacher(blob["config"])
    net.load_state_dict(blob["state"])
    return net


def load_student(path) -> Student:
    blob = torch.load(path, weights_only=False)
    net = Student(blob["config"])
    net.load_state_dict(blob["state"])
    return net


def classifier_accuracy(student: Student, dataset: Dataset, indices=None) -> float:
    feat, _, labels = _tensors(dataset)
    if indices is not None:
        feat, labels = feat[indices], labels[indices]
    with torch.no_grad():
        logits = student.classify(feat)
    return float((logits.argmax(-1) == labels.argmax(-1)).float().mean())
