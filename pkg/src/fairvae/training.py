"""Optimization: Adam, the training loop for every method, self-training.

Method ladder:

plain    one encoder, task loss only (attribute labels never touched, so
         results are invariant to the masking ratio by construction);
adv      adversarial learning: a reversed discriminator on the single shared
         representation, plus the task loss;
dadv     decomposed adversarial learning: dual encoders, attribute predictor,
         reversed discriminator, orthogonality and task losses;
fairvae  dadv fused with the semi-supervised VAE objective on both labeled
         and unlabeled batches;
adv_st / dadv_st
         two-round self-training: fit an attribute predictor on the labeled
         subset, adopt confident pseudo-labels, retrain the base method.

Model selection: the restored checkpoint maximizes validation accuracy minus
the validation demographic-parity gap, compared over the second half of the
epochs only. The burn-in matters: an undertrained epoch shows a deceptively
small parity gap simply because its predictions are still uncommitted, and
without it the criterion reliably picks transients over converged models.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import metrics as MX
from . import models as M
from . import objectives as O
from .data import Batch, DatasetSplit, batches, single_stream_batches

METHODS = ("plain", "adv", "adv_st", "dadv", "dadv_st", "fairvae")


class NonFiniteGradient(RuntimeError):
    """A gradient turned NaN/Inf; the step is aborted with context."""


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        ad.zero_grads(self.params)

    def step(self, context: str = ""):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(
                    f"non-finite gradient for {p.name}"
                    + (f" ({context})" if context else "")
                )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class MethodSpec:
    """One training configuration of the ladder."""

    backbone: str = "dnn"
    method: str = "fairvae"
    grl_lambda: float = 0.4
    label_ratio: float = 0.2
    seed: int = 0
    st_threshold: float = 0.9
    epochs: int = 50
    batch_size: int = 128
    lr: float = 0.01
    hidden_dim: int = 256
    latent_dim: int = 32
    fm_factors: int = 16
    dropout_rate: float = 0.2
    head_hidden: int = 0
    objective: O.ObjectiveConfig = field(default_factory=O.ObjectiveConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method.endswith("_st") and not 0.5 < self.st_threshold < 1.0:
            raise ValueError(
                f"self-training threshold must lie in (0.5, 1), got {self.st_threshold}"
            )


@dataclass
class TrainReport:
    method: str
    backbone: str
    seed: int
    epoch_losses: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    selected_epoch: int = -1
    epoch_seconds: list = field(default_factory=list)
    shadow_reads_during_training: int = 0
    pseudo_label_accuracy: float | None = None
    pseudo_label_count: int | None = None


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def _build_bundle(spec: MethodSpec, input_dim: int) -> M.ModelBundle:
    base = spec.method.removesuffix("_st")
    cfg = M.BundleConfig(
        input_dim=input_dim,
        backbone=spec.backbone,
        hidden_dim=spec.hidden_dim,
        fm_factors=spec.fm_factors,
        latent_dim=spec.latent_dim,
        grl_lambda=0.0 if base == "plain" else spec.grl_lambda,
        dropout_rate=spec.dropout_rate,
        head_hidden=spec.head_hidden,
        with_bias_aware=base in ("dadv", "fairvae"),
        with_discriminator=base != "plain",
        with_vae=base == "fairvae",
        seed=spec.seed,
    )
    return M.ModelBundle(cfg)


def predict_probs(bundle: M.ModelBundle, x) -> np.ndarray:
    return M.predict_test(bundle, x).value


def predict_labels(bundle: M.ModelBundle, x) -> np.ndarray:
    return predict_probs(bundle, x).argmax(axis=1)


def _supervised_step(bundle, lab: Batch, unl: Batch, decomposed: bool,
                     rng_drop) -> tuple[ad.Node, O.LossBreakdown]:
    """adv / dadv per-step loss: adversarial terms on the labeled batch only,
    task (and orthogonality for dadv) on both batches."""
    parts = []
    br = O.LossBreakdown()
    r_f, r_b, r = M.encode(bundle, lab.x, training=True, rng=rng_drop)
    z_hat, z_tilde, y_hat = M.predict_heads(bundle, r_f, r_b, r)
    task_l = O.task_loss(O.one_hot(lab.y, 2), y_hat)
    adv_l = O.adversarial_loss(O.one_hot(lab.z, 2), z_tilde)
    parts += [task_l, adv_l]
    br.task += float(task_l.value)
    br.adversarial += float(adv_l.value)
    if decomposed:
        attr_l = O.attribute_prediction_loss(O.one_hot(lab.z, 2), z_hat)
        orth_l = O.orthogonality_loss(r_f, r_b)
        parts += [attr_l, orth_l]
        br.attr_pred += float(attr_l.value)
        br.orthogonality += float(orth_l.value)
    if len(unl):
        r_fu, r_bu, ru = M.encode(bundle, unl.x, training=True, rng=rng_drop)
        y_hat_u = ad.softmax(M.task_logits(bundle, ru))
        task_u = O.task_loss(O.one_hot(unl.y, 2), y_hat_u)
        parts.append(task_u)
        br.task += float(task_u.value)
        if decomposed:
            orth_u = O.orthogonality_loss(r_fu, r_bu)
            parts.append(orth_u)
            br.orthogonality += float(orth_u.value)
    total = parts[0]
    for node in parts[1:]:
        total = ad.add(total, node)
    br.total = float(total.value)
    return total, br


def _validation_criterion(bundle, split: DatasetSplit) -> dict:
    """Accuracy minus demographic-parity gap on the validation split."""
    labels = predict_labels(bundle, split.val_x)
    acc = MX.accuracy(split.val_y, labels)
    if len(np.unique(split.val_z)) == 2:
        dp = MX.demographic_parity_gap(labels, split.val_z)
    else:
        dp = 0.0
    return {"accuracy": acc, "dp_gap": dp, "criterion": acc - dp}


def train(spec: MethodSpec, split: DatasetSplit, epochs: int | None = None,
          log_writer=None) -> tuple[M.ModelBundle, TrainReport]:
    """Train one method on one split; returns the best-validation-epoch model."""
    if spec.method.endswith("_st"):
        return self_train(spec, split, epochs)
    epochs = spec.epochs if epochs is None else epochs
    bundle = _build_bundle(spec, split.feature_dim)
    opt = Adam(bundle.trainable_parameters(), lr=spec.lr)
    rng_drop = _stream(spec.seed, 11)
    rng_eps = _stream(spec.seed, 12)
    report = TrainReport(method=spec.method, backbone=spec.backbone,
                         seed=spec.seed)
    shadow_before = split.shadow_reads
    burn_in = epochs // 2  # compare converged checkpoints only
    best_criterion = -np.inf
    best_state = None
    obj_cfg = replace(spec.objective, attr_classes=2)
    step_index = 0
    if spec.method == "plain":
        x_all, y_all = split.all_train_xy()

    for epoch in range(epochs):
        t0 = time.perf_counter()
        agg: dict[str, float] = {}
        steps = 0
        if spec.method == "plain":
            stream = ((b, None) for b in single_stream_batches(
                x_all, y_all, spec.batch_size, spec.seed, epoch))
        else:
            stream = batches(split, spec.batch_size, spec.seed, epoch)
        for lab, unl in stream:
            if spec.method == "plain":
                _, _, r = M.encode(bundle, lab.x, training=True, rng=rng_drop)
                y_hat = ad.softmax(M.task_logits(bundle, r))
                total = O.task_loss(O.one_hot(lab.y, 2), y_hat)
                br = O.LossBreakdown(task=float(total.value),
                                     total=float(total.value))
            elif spec.method in ("adv", "dadv"):
                total, br = _supervised_step(bundle, lab, unl,
                                             spec.method == "dadv", rng_drop)
            else:  # fairvae
                eps_l = rng_eps.standard_normal((len(lab), spec.latent_dim))
                eps_u = rng_eps.standard_normal((len(unl), spec.latent_dim)) \
                    if len(unl) else None
                total, br = O.joint_loss(lab, unl, bundle, obj_cfg,
                                         eps_l, eps_u, training=True,
                                         rng=rng_drop)
            opt.zero_grad()
            ad.backward(total)
            opt.step(context=f"method={spec.method} epoch={epoch} step={steps}")
            for key, value in br.as_dict().items():
                agg[key] = agg.get(key, 0.0) + value
            if log_writer is not None:
                log_writer({"step": step_index, "epoch": epoch,
                            "lambda": spec.grl_lambda, "lr": spec.lr,
                            **br.as_dict()})
            steps += 1
            step_index += 1
        report.epoch_losses.append({k: v / steps for k, v in agg.items()})
        val = _validation_criterion(bundle, split)
        report.val_history.append(val)
        report.epoch_seconds.append(time.perf_counter() - t0)
        if epoch >= burn_in and val["criterion"] > best_criterion:
            best_criterion = val["criterion"]
            best_state = bundle.state_arrays()
            report.selected_epoch = epoch
    if best_state is not None:
        bundle.load_state_arrays(best_state)
    report.shadow_reads_during_training = split.shadow_reads - shadow_before
    return bundle, report


def _train_attribute_predictor(spec: MethodSpec, split: DatasetSplit,
                               epochs: int) -> M.ModelBundle:
    """Round one of self-training: fit the attribute predictor on labeled data."""
    probe_spec = replace(spec, method="dadv")
    bundle = _build_bundle(probe_spec, split.feature_dim)
    attr_params = [p for p in bundle.trainable_parameters()
                   if p.name.startswith(("bias_aware", "attr_head"))]
    opt = Adam(attr_params, lr=spec.lr)
    rng_drop = _stream(spec.seed, 13)
    best_acc, best_state = -np.inf, None
    for epoch in range(epochs):
        for lab, _ in batches(split, spec.batch_size, spec.seed + 7919, epoch):
            r_b = ad.dropout(bundle.bias_aware.forward(lab.x),
                             spec.dropout_rate, training=True, rng=rng_drop)
            z_hat = bundle.attr_head(r_b)
            loss = O.attribute_prediction_loss(O.one_hot(lab.z, 2), z_hat)
            opt.zero_grad()
            ad.backward(loss)
            opt.step(context=f"attribute predictor epoch={epoch}")
        val_pred = bundle.attr_head(
            bundle.bias_aware.forward(split.val_x)).value.argmax(axis=1)
        acc = MX.accuracy(split.val_z, val_pred)
        if acc > best_acc:
            best_acc, best_state = acc, bundle.state_arrays()
    if best_state is not None:
        bundle.load_state_arrays(best_state)
    return bundle


def self_train(spec: MethodSpec, split: DatasetSplit,
               epochs: int | None = None) -> tuple[M.ModelBundle, TrainReport]:
    """Two rounds: pseudo-label confident unlabeled samples, retrain the base
    method treating them as attribute-labeled."""
    if not spec.method.endswith("_st"):
        raise ValueError(f"self_train expects an _st method, got {spec.method!r}")
    epochs = spec.epochs if epochs is None else epochs
    base_method = spec.method.removesuffix("_st")

    predictor = _train_attribute_predictor(spec, split, epochs)
    if split.n_unlabeled:
        probs = predictor.attr_head(
            predictor.bias_aware.forward(split.unl_x)).value
        confident = probs.max(axis=1) >= spec.st_threshold
        pseudo = probs.argmax(axis=1)
    else:
        confident = np.zeros(0, dtype=bool)
        pseudo = np.zeros(0, dtype=int)

    if confident.any():
        aug_split = split.with_pseudo_labels(confident, pseudo[confident])
    else:
        warnings.warn(
            f"no unlabeled sample cleared the confidence threshold "
            f"{spec.st_threshold}; self-training falls back to the base method",
            stacklevel=2,
        )
        aug_split = split

    bundle, report = train(replace(spec, method=base_method), aug_split, epochs)
    report.method = spec.method
    # diagnostic only, computed after the optimization phase
    if confident.any():
        shadow = split.shadow_unlabeled_attributes()
        report.pseudo_label_accuracy = MX.accuracy(shadow[confident],
                                                   pseudo[confident])
    report.pseudo_label_count = int(confident.sum())
    return bundle, report
