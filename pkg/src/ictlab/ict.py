"""Interpolation Consistency Training.

One training step draws a labeled batch and two unlabeled batches, asks the
teacher for fake labels on both unlabeled batches, and pulls the student's
prediction at the interpolated input toward the same interpolation of the
fake labels. The total loss is ``L_S + w(t) * L_US``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .data import Dataset, batches, cycle_batches
from .evaluate import error_rate
from .nn import LossSpec, Network, ShapeError, as_matrix, backward, forward, forward_logits, mlp, mse
from .optim import EmaTeacher, NonFiniteGradientError, SgdState, ema_update, sgd_step

VANILLA = "vanilla"
MIXUP = "mixup"
MEAN_TEACHER = "mean_teacher"
STUDENT = "student"

METHODS = ("ict", "supervised", "supervised_mixup", "ict_no_teacher")


class NumericalError(FloatingPointError):
    """A loss term became NaN or infinite."""

    def __init__(self, term: str, step: int, value: float):
        super().__init__(f"{term} is non-finite ({value}) at step {step}")
        self.term = term
        self.step = step


@dataclass
class IctConfig:
    beta_alpha: float = 1.0
    w_max: float = 1.0
    ramp_fraction: float = 0.25
    ema_decay: float = 0.999
    labeled_batch: int = 100
    unlabeled_batch: int = 100
    total_epochs: int = 100
    # caps the run at this many updates; epochs are then derived from it
    total_steps: int | None = None
    supervised_mode: str = MIXUP
    teacher_mode: str = MEAN_TEACHER
    # False trains on L_S only; L_US is still computed and logged
    consistency: bool = True
    ema_after_step: bool = False
    pairing: str = "independent"  # or "shuffled": u_k is a permutation of u_j
    lr: float = 0.1
    momentum: float = 0.9
    l2: float = 1e-4
    hidden: tuple[int, ...] = (20, 20, 20)
    eval_network: str = "teacher"
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        problems = []
        if not self.beta_alpha > 0:
            problems.append("beta_alpha must be > 0")
        if not self.w_max >= 0:
            problems.append("w_max must be >= 0")
        if not 0 < self.ramp_fraction <= 1:
            problems.append("ramp_fraction must lie in (0, 1]")
        if not 0 <= self.ema_decay <= 1:
            problems.append("ema_decay must lie in [0, 1]")
        if self.labeled_batch < 1 or self.unlabeled_batch < 1:
            problems.append("batch sizes must be >= 1")
        if self.total_epochs < 0:
            problems.append("total_epochs must be >= 0")
        if self.total_steps is not None and self.total_steps < 0:
            problems.append("total_steps must be >= 0")
        if self.supervised_mode not in (VANILLA, MIXUP):
            problems.append(f"supervised_mode must be {VANILLA!r} or {MIXUP!r}")
        if self.teacher_mode not in (MEAN_TEACHER, STUDENT):
            problems.append(f"teacher_mode must be {MEAN_TEACHER!r} or {STUDENT!r}")
        if self.pairing not in ("independent", "shuffled"):
            problems.append("pairing must be 'independent' or 'shuffled'")
        if self.eval_network not in ("teacher", "student"):
            problems.append("eval_network must be 'teacher' or 'student'")
        if not 0 <= self.momentum < 1:
            problems.append("momentum must lie in [0, 1)")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if not self.l2 >= 0:
            problems.append("l2 must be >= 0")
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> IctConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def method_config(method: str, **overrides) -> IctConfig:
    """Config preset for one of ``METHODS``, with keyword overrides."""
    presets = {
        "ict": {},
        "supervised": {"consistency": False, "supervised_mode": VANILLA},
        "supervised_mixup": {"consistency": False, "supervised_mode": MIXUP},
        "ict_no_teacher": {"teacher_mode": STUDENT},
    }
    if method not in presets:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return IctConfig(**{**presets[method], **overrides})


# -- building blocks ----------------------------------------------------

def mix(a, b, lam: float) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot mix shapes {a.shape} and {b.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return a.copy()
    if lam == 0.0:
        return b.copy()
    return lam * a + (1.0 - lam) * b


def sample_lambda(beta_alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) draw as x / (x + y) with x, y ~ Gamma(alpha, 1)."""
    if not beta_alpha > 0:
        raise ValueError("beta_alpha must be > 0")
    x = rng.gamma(beta_alpha)
    y = rng.gamma(beta_alpha)
    s = x + y
    if s == 0.0:  # both draws underflowed; only reachable for tiny alpha
        return 0.5
    return float(x / s)


def ramp_w(t: float, ramp_steps: float, w_max: float) -> float:
    if ramp_steps <= 0:
        raise ValueError("ramp_steps must be positive")
    phase = 1.0 - min(t / ramp_steps, 1.0)
    return w_max * math.exp(-5.0 * phase * phase)


def fake_labels(net: Network, u) -> np.ndarray:
    """Predictions used as constant regression targets."""
    u = as_matrix(u)
    if u.shape[0] == 0:
        raise ValueError("no unlabeled rows")
    out = forward(net, u)
    out.flags.writeable = False
    return out


def ict_consistency_loss(student: Network, teacher: Network, u_j, u_k, lam: float, on_logits: bool = False) -> float:
    """MSE between the student at ``mix(u_j, u_k)`` and the mixed teacher outputs.

    ``on_logits`` compares pre-softmax outputs instead of probabilities.
    """
    u_j, u_k = as_matrix(u_j), as_matrix(u_k)
    if u_j.shape != u_k.shape:
        raise ShapeError(f"u_j shape {u_j.shape} != u_k shape {u_k.shape}")
    f = forward_logits if on_logits else forward
    target = mix(f(teacher, u_j), f(teacher, u_k), lam)
    return mse(f(student, mix(u_j, u_k, lam)), target)


# -- training -----------------------------------------------------------

@dataclass
class TraceRecord:
    step: int
    lr: float
    w: float
    loss_s: float
    loss_us: float
    loss: float
    val_error: float | None = None

    def as_dict(self) -> dict:
        return {
            "step": self.step, "lr": self.lr, "w": self.w, "L_S": self.loss_s,
            "L_US": self.loss_us, "L": self.loss, "val_error": self.val_error,
        }


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    current_w: float = 0.0
    current_lr: float = 0.0
    total_steps: int = 0
    ramp_steps: float = 1.0
    rngs: dict = field(default_factory=dict)
    loss_trace: list[TraceRecord] = field(default_factory=list)


@dataclass
class StepBatch:
    x: np.ndarray
    y: np.ndarray  # one-hot or soft targets
    u_j: np.ndarray
    u_k: np.ndarray


def make_rngs(seed: int) -> dict:
    """Independent generators per purpose, so skipping one never shifts another."""
    names = ("init", "unlabeled_k", "lam", "lam_sup")
    children = np.random.SeedSequence(seed).spawn(len(names))
    rngs = {name: np.random.default_rng(ss) for name, ss in zip(names, children)}
    # integer sub-seeds for the (seed, epoch)-keyed batch shufflers
    rngs["batch_seeds"] = [int(s) for s in np.random.SeedSequence(seed).generate_state(3)]
    return rngs


def train_step(
    student: Network,
    teacher: EmaTeacher,
    batch: StepBatch,
    config: IctConfig,
    state: TrainState,
    sgd: SgdState,
) -> tuple[float, float, float]:
    """One iteration of the training loop. Mutates the networks and state."""
    t = state.step
    rngs = state.rngs

    # supervised term
    x, y = batch.x, batch.y
    if config.supervised_mode == MIXUP:
        lam_sup = sample_lambda(config.beta_alpha, rngs["lam_sup"])
        perm = rngs["lam_sup"].permutation(x.shape[0])
        x, y = mix(x, x[perm], lam_sup), mix(y, y[perm], lam_sup)
    loss_s, grads = backward(student, x, LossSpec("ce", y))

    # consistency term
    source = teacher.net if config.teacher_mode == MEAN_TEACHER else student
    y_j = fake_labels(source, batch.u_j)
    y_k = fake_labels(source, batch.u_k)
    lam = sample_lambda(config.beta_alpha, rngs["lam"])
    u_m = mix(batch.u_j, batch.u_k, lam)
    y_m = mix(y_j, y_k, lam)
    if config.consistency:
        w = ramp_w(t, state.ramp_steps, config.w_max)
        loss_us, grads_us = backward(student, u_m, LossSpec("mse", y_m))
    else:
        w = 0.0
        loss_us = mse(forward(student, u_m), y_m)

    loss = loss_s + w * loss_us
    for term, value in (("L_S", loss_s), ("L_US", loss_us)):
        if not math.isfinite(value):
            raise NumericalError(term, t + 1, value)
    if config.consistency:
        grads = grads.combine(grads_us, w)

    try:
        if config.ema_after_step:
            lr = sgd_step(student, grads, sgd)
            ema_update(teacher, student)
        else:
            ema_update(teacher, student)
            lr = sgd_step(student, grads, sgd)
    except NonFiniteGradientError as exc:
        raise NumericalError(f"gradient of layer {exc.layer} {exc.which}", t + 1, float("nan")) from exc

    state.step += 1
    state.current_w = w
    state.current_lr = lr
    state.loss_trace.append(TraceRecord(state.step, lr, w, loss_s, loss_us, loss))
    return loss_s, loss_us, loss


@dataclass
class TrainResult:
    student: Network
    teacher: Network
    state: TrainState
    config: IctConfig
    history: list[dict] = field(default_factory=list)
    best: dict = field(default_factory=dict)

    def eval_net(self, which: str | None = None) -> Network:
        which = which or effective_eval_network(self.config)
        return self.teacher if which == "teacher" else self.student


def effective_eval_network(config: IctConfig) -> str:
    if config.teacher_mode == STUDENT:
        return "student"
    return config.eval_network


def steps_per_epoch(n_unlabeled: int, config: IctConfig) -> int:
    return math.ceil(n_unlabeled / config.unlabeled_batch)


def train(
    config: IctConfig,
    labeled: Dataset,
    unlabeled: Dataset,
    validation: Dataset | None = None,
    init: Network | None = None,
    on_step: Callable[[int, Network, Network], None] | None = None,
) -> TrainResult:
    """Run the full loop; deterministic given ``config.seed``.

    An epoch is one pass over the unlabeled pool. Labeled batches cycle
    independently. The best-validation networks are kept in ``result.best``.
    """
    if labeled is None or labeled.labels is None or len(labeled) == 0:
        raise ValueError("training needs a non-empty labeled set")
    if unlabeled.dim != labeled.dim:
        raise ShapeError("labeled and unlabeled inputs have different widths")

    rngs = make_rngs(config.seed)
    student = init.copy() if init is not None else mlp(
        [labeled.dim, *config.hidden, labeled.class_count], rng=rngs["init"]
    )
    if student.num_classes != labeled.class_count:
        raise ShapeError("network output width does not match the class count")
    teacher = EmaTeacher.from_student(student, config.ema_decay)

    spe = steps_per_epoch(len(unlabeled), config)
    total = config.total_epochs * spe
    epochs = config.total_epochs
    if config.total_steps is not None:
        total = config.total_steps
        epochs = math.ceil(total / spe)

    state = TrainState(total_steps=total, ramp_steps=max(config.ramp_fraction * total, 1.0), rngs=rngs)
    sgd = SgdState.for_network(
        student, base_lr=config.lr, momentum=config.momentum, l2=config.l2, total_steps=max(total, 1)
    )
    result = TrainResult(student, teacher.net, state, config)
    eval_which = effective_eval_network(config)

    y_lab = labeled.one_hot()
    seed_l, seed_j, seed_k = rngs["batch_seeds"]
    lab_iter = cycle_batches(labeled, config.labeled_batch, seed_l)
    for epoch in range(epochs):
        it_j = batches(unlabeled, config.unlabeled_batch, seed_j, epoch)
        it_k = batches(unlabeled, config.unlabeled_batch, seed_k, epoch)
        for idx_j, idx_k in zip(it_j, it_k):
            if state.step >= total:
                break
            idx_l = next(lab_iter)
            u_j = unlabeled.inputs[idx_j]
            if config.pairing == "shuffled":
                u_k = u_j[rngs["unlabeled_k"].permutation(len(idx_j))]
            else:
                u_k = unlabeled.inputs[idx_k]
            batch = StepBatch(labeled.inputs[idx_l], y_lab[idx_l], u_j, u_k)
            train_step(student, teacher, batch, config, state, sgd)
            if on_step is not None:
                on_step(state.step, student, teacher.net)
        state.epoch = epoch + 1
        if validation is not None:
            val = error_rate(result.eval_net(eval_which), validation)
            state.loss_trace[-1].val_error = val
            result.history.append({"epoch": state.epoch, "step": state.step, "val_error": val})
            if not result.best or val < result.best["val_error"]:
                result.best = {
                    "epoch": state.epoch, "step": state.step, "val_error": val,
                    "student": student.copy(), "teacher": teacher.net.copy(),
                }
    return result
