"""Alternating adversarial training: discriminators first, then the
coarse generator against frozen discriminators, then the fine generator
on a fresh batch, then one joint step updating all six networks.

Freezing is literal: a network that is not being updated in a phase runs
in inference mode and nothing about it changes, bit for bit (parameters,
optimizer moments, and running statistics). In the joint step every
gradient is computed against the phase's starting weights and all Adam
updates are applied together at the end.

Batch-norm statistics update only in training mode; inference uses the
running statistics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_archive, save_archive
from .discriminators import (
    DISCRIMINATOR_NAMES,
    LEVEL_ASSIGNMENT,
    DiscriminatorBank,
    DiscriminatorConfig,
    default_discriminator_configs,
)
from .errors import CheckpointError, DivergenceError, InputError
from .generators import (
    CoarseGenerator,
    FineGenerator,
    GeneratorConfig,
    check_handoff,
)
from .objective import (
    ObjectiveConfig,
    TRAINING_LOG_COLUMNS,
    recon_l2,
    recon_l2_grad,
    squared_error_to_target,
    total_generator_objective,
)
from .optim import Adam
from .resample import build_pyramid, downsample2, lanczos_resize, lanczos_resize_adjoint

GENERATOR_NAMES = ("g_coarse", "g_fine")
NET_NAMES = GENERATOR_NAMES + DISCRIMINATOR_NAMES


@dataclass(frozen=True)
class TrainingSchedule:
    epochs: int = 100
    batch_size: int = 4
    d_steps_per_cycle: int = 2
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    joint_every_cycle: bool = True
    checkpoint_every: int = 0   # cycles between checkpoints; 0 = final only

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.d_steps_per_cycle < 1:
            raise InputError("schedule counts must be positive")


class TrainingState:
    """Everything a run owns: the six networks, their optimizers, cycle
    and epoch counters, and the batch-sampling random stream."""

    def __init__(self, g_coarse, g_fine, bank, schedule, objective_config,
                 rng, dtype=np.float32, cycle=0, epoch=0):
        self.g_coarse = g_coarse
        self.g_fine = g_fine
        self.bank = bank
        self.schedule = schedule
        self.objective_config = objective_config
        self.rng = rng
        self.dtype = dtype
        self.cycle = cycle
        self.epoch = epoch
        self.opts = {
            name: Adam(net.parameters(), schedule.learning_rate,
                       schedule.beta1, schedule.beta2, schedule.adam_eps)
            for name, net in self.named_nets()
        }

    @classmethod
    def initialize(cls, coarse_cfg: GeneratorConfig, fine_cfg: GeneratorConfig,
                   d_configs=None, schedule=None, objective_config=None,
                   dtype=np.float32):
        schedule = schedule or TrainingSchedule()
        objective_config = objective_config or ObjectiveConfig()
        check_handoff(coarse_cfg, fine_cfg)
        seeds = np.random.SeedSequence(schedule.seed).spawn(4)
        g_coarse = CoarseGenerator(coarse_cfg, seeds[0], dtype)
        g_fine = FineGenerator(fine_cfg, seeds[1], dtype)
        if d_configs is None:
            d_configs = default_discriminator_configs(fine_cfg.input_size)
        bank = DiscriminatorBank(d_configs, seeds[2], dtype)
        rng = np.random.default_rng(seeds[3])
        return cls(g_coarse, g_fine, bank, schedule, objective_config, rng,
                   dtype)

    def named_nets(self):
        nets = {"g_coarse": self.g_coarse, "g_fine": self.g_fine}
        nets.update(self.bank.members)
        return [(name, nets[name]) for name in NET_NAMES]


def toy_training_state(fine_size=64, base_channels=4, schedule=None,
                       objective_config=None, dtype=np.float32):
    """Desk-scale state: generators at (fine_size, fine_size/2), tiny
    discriminators on the matching pyramid."""
    from .generators import toy_generator_configs

    coarse_cfg, fine_cfg = toy_generator_configs(fine_size, base_channels)
    d_configs = default_discriminator_configs(fine_size, base_channels)
    return TrainingState.initialize(coarse_cfg, fine_cfg, d_configs,
                                    schedule, objective_config, dtype)


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------


def _check_batch(batch):
    fundus, angio = batch
    if fundus.shape[0] == 0 or angio.shape[0] == 0:
        raise InputError("empty batch")
    if fundus.shape[0] != angio.shape[0] or fundus.shape[1:3] != angio.shape[1:3]:
        raise InputError(
            f"misaligned batch: fundus {fundus.shape}, angio {angio.shape}"
        )
    return fundus, angio


def _fake_images(coarse_angio, fine_angio):
    """Each discriminator's generated input at its own scale."""
    return {
        "d1_fine": fine_angio,
        "d2_fine": downsample2(fine_angio),
        "d1_coarse": coarse_angio,
        "d2_coarse": downsample2(coarse_angio),
    }


def _group_of(name):
    return "fine" if name.endswith("_fine") else "coarse"


def _discriminator_step(state: TrainingState, batch):
    """One update of all four discriminators on real and generated pairs;
    the generators stay frozen (inference mode, untouched)."""
    fundus, angio = _check_batch(batch)
    fp = build_pyramid(fundus)
    ap = build_pyramid(angio)
    coarse_out = state.g_coarse.forward(fp.levels[1], training=False)
    fine_out = state.g_fine.forward(fundus, coarse_out.feature, training=False)
    fakes = _fake_images(coarse_out.angiogram, fine_out)
    ocfg = state.objective_config
    losses = {"fine": 0.0, "coarse": 0.0}
    for name, disc in state.bank.items():
        state.opts[name].zero_grad()
        level = LEVEL_ASSIGNMENT[name]
        m_real = disc.forward(fp.levels[level], ap.levels[level], training=True)
        value, grad = squared_error_to_target(m_real, ocfg.real_target)
        disc.backward(grad, accum=True)
        loss = value
        m_fake = disc.forward(fp.levels[level], fakes[name], training=True)
        value, grad = squared_error_to_target(m_fake, ocfg.fake_target_d)
        disc.backward(grad, accum=True)
        losses[_group_of(name)] += loss + value
    for name in DISCRIMINATOR_NAMES:
        state.opts[name].step()
    return losses["fine"], losses["coarse"]


def _adversarial_pull(state, disc_name, fundus_level, fake_image, out_hw,
                      training, accum):
    """Generator-side adversarial term through one (frozen or live)
    discriminator; returns (loss value, grad wrt the generator output)."""
    disc = state.bank[disc_name]
    m = disc.forward(fundus_level, fake_image, training=training)
    value, gmap = squared_error_to_target(
        m, state.objective_config.fake_target_g
    )
    _, g_img = disc.backward(gmap, accum=False)
    if fake_image.shape[1:3] != tuple(out_hw):
        g_img = lanczos_resize_adjoint(g_img, out_hw)
    return value, g_img, m


def _coarse_step(state: TrainingState, batch):
    """Update g_coarse; discriminators frozen."""
    fundus, angio = _check_batch(batch)
    fp = build_pyramid(fundus)
    ap = build_pyramid(angio)
    ocfg = state.objective_config
    out = state.g_coarse.forward(fp.levels[1], training=True)
    hw = out.angiogram.shape[1:3]
    adv = 0.0
    g_out = np.zeros_like(out.angiogram)
    value, grad, _ = _adversarial_pull(
        state, "d1_coarse", fp.levels[1], out.angiogram, hw, False, False)
    adv += value
    g_out += grad
    value, grad, _ = _adversarial_pull(
        state, "d2_coarse", fp.levels[2], downsample2(out.angiogram), hw,
        False, False)
    adv += value
    g_out += grad
    l2 = recon_l2(out.angiogram, ap.levels[1])
    g_out += ocfg.lambda_weight * recon_l2_grad(out.angiogram, ap.levels[1])
    state.opts["g_coarse"].zero_grad()
    state.g_coarse.backward(g_out, g_feature=None, accum=True)
    state.opts["g_coarse"].step()
    return adv, l2


def _fine_step(state: TrainingState, batch):
    """Update g_fine; coarse generator and discriminators frozen."""
    fundus, angio = _check_batch(batch)
    fp = build_pyramid(fundus)
    ap = build_pyramid(angio)
    ocfg = state.objective_config
    coarse_out = state.g_coarse.forward(fp.levels[1], training=False)
    fine_out = state.g_fine.forward(fundus, coarse_out.feature, training=True)
    hw = fine_out.shape[1:3]
    adv = 0.0
    g_out = np.zeros_like(fine_out)
    value, grad, _ = _adversarial_pull(
        state, "d1_fine", fp.levels[0], fine_out, hw, False, False)
    adv += value
    g_out += grad
    value, grad, _ = _adversarial_pull(
        state, "d2_fine", fp.levels[1], downsample2(fine_out), hw, False, False)
    adv += value
    g_out += grad
    l2 = recon_l2(fine_out, ap.levels[0])
    g_out += ocfg.lambda_weight * recon_l2_grad(fine_out, ap.levels[0])
    state.opts["g_fine"].zero_grad()
    state.g_fine.backward(g_out, accum=True)
    state.opts["g_fine"].step()
    return adv, l2


def _joint_gradients(state: TrainingState, batch):
    """Accumulate the joint step's gradients for all six networks without
    applying updates; returns the loss pieces."""
    fundus, angio = _check_batch(batch)
    fp = build_pyramid(fundus)
    ap = build_pyramid(angio)
    ocfg = state.objective_config
    for name in NET_NAMES:
        state.opts[name].zero_grad()

    coarse_out = state.g_coarse.forward(fp.levels[1], training=True)
    fine_out = state.g_fine.forward(fundus, coarse_out.feature, training=True)
    fakes = _fake_images(coarse_out.angiogram, fine_out)

    d_losses = {"fine": 0.0, "coarse": 0.0}
    adv = {"fine": 0.0, "coarse": 0.0}
    g_pull = {}
    for name, disc in state.bank.items():
        level = LEVEL_ASSIGNMENT[name]
        m_real = disc.forward(fp.levels[level], ap.levels[level], training=True)
        value, grad = squared_error_to_target(m_real, ocfg.real_target)
        disc.backward(grad, accum=True)
        d_losses[_group_of(name)] += value
        # one fake forward serves both sides: the discriminator's own
        # fake term and the generator's adversarial pull
        m_fake = disc.forward(fp.levels[level], fakes[name], training=True)
        value, grad = squared_error_to_target(m_fake, ocfg.fake_target_d)
        disc.backward(grad, accum=True)
        d_losses[_group_of(name)] += value
        value, grad = squared_error_to_target(m_fake, ocfg.fake_target_g)
        adv[_group_of(name)] += value
        _, g_img = disc.backward(grad, accum=False)
        g_pull[name] = g_img

    fine_hw = fine_out.shape[1:3]
    coarse_hw = coarse_out.angiogram.shape[1:3]
    l2_fine = recon_l2(fine_out, ap.levels[0])
    l2_coarse = recon_l2(coarse_out.angiogram, ap.levels[1])
    g_fine_out = (
        g_pull["d1_fine"]
        + lanczos_resize_adjoint(g_pull["d2_fine"], fine_hw)
        + ocfg.lambda_weight * recon_l2_grad(fine_out, ap.levels[0])
    )
    g_coarse_out = (
        g_pull["d1_coarse"]
        + lanczos_resize_adjoint(g_pull["d2_coarse"], coarse_hw)
        + ocfg.lambda_weight * recon_l2_grad(coarse_out.angiogram, ap.levels[1])
    )
    _, g_feature = state.g_fine.backward(g_fine_out, accum=True)
    state.g_coarse.backward(g_coarse_out, g_feature=g_feature, accum=True)
    return {
        "d_fine_loss": d_losses["fine"],
        "d_coarse_loss": d_losses["coarse"],
        "g_fine_adv": adv["fine"],
        "g_coarse_adv": adv["coarse"],
        "l2_fine": l2_fine,
        "l2_coarse": l2_coarse,
    }


def _joint_step(state: TrainingState, batch):
    """One simultaneous update of all six networks: gradients are computed
    against the phase's starting weights, then every Adam step applies."""
    losses = _joint_gradients(state, batch)
    for name in NET_NAMES:
        state.opts[name].step()
    return losses


def train_cycle(state: TrainingState, d_batches, gc_batch, gf_batch,
                joint_batch, run_individual=True, run_joint=True):
    """One full cycle in the published order; returns the advanced state
    and the cycle's loss row."""
    row = dict.fromkeys(TRAINING_LOG_COLUMNS, float("nan"))
    row["cycle"] = state.cycle
    if run_individual:
        for batch in d_batches:
            d_fine, d_coarse = _discriminator_step(state, batch)
        row["d_fine_loss"], row["d_coarse_loss"] = d_fine, d_coarse
        row["g_coarse_adv"], row["l2_coarse"] = _coarse_step(state, gc_batch)
        row["g_fine_adv"], row["l2_fine"] = _fine_step(state, gf_batch)
    if run_joint:
        joint = _joint_step(state, joint_batch)
        if not run_individual:
            row.update(joint)
    row["total"] = total_generator_objective(
        row["g_fine_adv"], row["g_coarse_adv"], row["l2_fine"],
        row["l2_coarse"], state.objective_config,
    )
    values = [row[c] for c in TRAINING_LOG_COLUMNS if c != "cycle"]
    if not all(math.isfinite(v) for v in values):
        raise DivergenceError(
            f"non-finite loss at cycle {state.cycle}: {row}", cycle=state.cycle
        )
    state.cycle += 1
    return state, row


# ---------------------------------------------------------------------------
# fit / infer
# ---------------------------------------------------------------------------


def _draw_batch(state, fundus_all, angio_all):
    idx = state.rng.choice(fundus_all.shape[0], size=state.schedule.batch_size,
                           replace=False)
    return fundus_all[idx], angio_all[idx]


def fit(state: TrainingState, fundus_all, angio_all, out_dir,
        log_name="training_log.csv"):
    """Run schedule.epochs * (n // batch_size) cycles from the state's
    current position; writes the CSV loss log and checkpoints under
    out_dir. Returns the final checkpoint path."""
    fundus_all = np.ascontiguousarray(fundus_all, dtype=state.dtype)
    angio_all = np.ascontiguousarray(angio_all, dtype=state.dtype)
    n = fundus_all.shape[0]
    if n == 0:
        raise InputError("empty dataset")
    sched = state.schedule
    if sched.batch_size > n:
        raise InputError(
            f"batch size {sched.batch_size} exceeds dataset size {n}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cycles_per_epoch = n // sched.batch_size
    total_cycles = sched.epochs * cycles_per_epoch
    joint_only_from = math.ceil(0.9 * sched.epochs)

    log_path = out_dir / log_name
    fresh_log = state.cycle == 0 or not log_path.exists()
    with open(log_path, "a" if not fresh_log else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fresh_log:
            writer.writerow(TRAINING_LOG_COLUMNS)
        while state.cycle < total_cycles:
            epoch = state.cycle // cycles_per_epoch
            state.epoch = epoch
            if sched.joint_every_cycle:
                run_individual, run_joint = True, True
            else:
                joint_only = epoch >= joint_only_from
                run_individual, run_joint = not joint_only, joint_only
            d_batches = [
                _draw_batch(state, fundus_all, angio_all)
                for _ in range(sched.d_steps_per_cycle if run_individual else 0)
            ]
            gc_batch = _draw_batch(state, fundus_all, angio_all) \
                if run_individual else None
            gf_batch = _draw_batch(state, fundus_all, angio_all) \
                if run_individual else None
            joint_batch = _draw_batch(state, fundus_all, angio_all) \
                if run_joint else None
            _, row = train_cycle(state, d_batches, gc_batch, gf_batch,
                                 joint_batch, run_individual, run_joint)
            writer.writerow(
                [row["cycle"]] + [
                    f"{row[c]:.8e}" for c in TRAINING_LOG_COLUMNS[1:]
                ]
            )
            if sched.checkpoint_every and \
                    state.cycle % sched.checkpoint_every == 0 and \
                    state.cycle < total_cycles:
                save_training_state(
                    state, out_dir / f"checkpoint_{state.cycle:06d}.ckpt"
                )
    state.epoch = sched.epochs
    final = out_dir / "checkpoint_final.ckpt"
    save_training_state(state, final)
    return final


def infer(fundus, g_coarse: CoarseGenerator, g_fine: FineGenerator):
    """Full pipeline: halve the fundus, run the coarse generator, hand its
    feature to the fine generator. Inference mode throughout."""
    single = fundus.ndim == 3
    x = fundus[None] if single else fundus
    x = np.ascontiguousarray(x, dtype=g_fine.dtype)
    size = g_coarse.config.input_size
    half = lanczos_resize(x, (size, size))
    coarse_out = g_coarse.forward(half, training=False)
    out = g_fine.forward(x, coarse_out.feature, training=False)
    return out[0] if single else out


def infer_from_state(fundus, state: TrainingState):
    return infer(fundus, state.g_coarse, state.g_fine)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

CHECKPOINT_KIND = "angiosynth-checkpoint"


def save_training_state(state: TrainingState, path):
    arrays = []
    for net_name, net in state.named_nets():
        for pname, p in net.named_parameters():
            arrays.append((f"param/{net_name}/{pname}", p.data))
        for bname, b in net.named_buffers():
            arrays.append((f"buffer/{net_name}/{bname}", b.data))
        for key, arr in state.opts[net_name].state_arrays():
            arrays.append((f"adam/{net_name}/{key}", arr))
    d_cfgs = {
        name: asdict(state.bank[name].config) for name in DISCRIMINATOR_NAMES
    }
    meta = {
        "kind": CHECKPOINT_KIND,
        "cycle": state.cycle,
        "epoch": state.epoch,
        "dtype": np.dtype(state.dtype).str,
        "adam_t": {name: state.opts[name].t for name in NET_NAMES},
        "rng_state": state.rng.bit_generator.state,
        "configs": {
            "g_coarse": asdict(state.g_coarse.config),
            "g_fine": asdict(state.g_fine.config),
            "discriminators": d_cfgs,
        },
        "schedule": asdict(state.schedule),
        "objective": asdict(state.objective_config),
    }
    return save_archive(path, arrays, meta)


def load_training_state(path) -> TrainingState:
    arrays, meta = load_archive(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a training checkpoint")
    cfgs = meta["configs"]

    def gen_cfg(d):
        d = dict(d)
        d["encoder_strides"] = tuple(d["encoder_strides"])
        return GeneratorConfig(**d)

    coarse_cfg = gen_cfg(cfgs["g_coarse"])
    fine_cfg = gen_cfg(cfgs["g_fine"])
    d_configs = {
        name: DiscriminatorConfig(**cfg)
        for name, cfg in cfgs["discriminators"].items()
    }
    schedule = TrainingSchedule(**meta["schedule"])
    objective = ObjectiveConfig(**meta["objective"])
    dtype = np.dtype(meta["dtype"])
    state = TrainingState.initialize(
        coarse_cfg, fine_cfg, d_configs, schedule, objective, dtype
    )
    state.cycle = meta["cycle"]
    state.epoch = meta["epoch"]
    for net_name, net in state.named_nets():
        for pname, p in net.named_parameters():
            key = f"param/{net_name}/{pname}"
            if key not in arrays:
                raise CheckpointError(f"checkpoint missing array {key}")
            if arrays[key].shape != p.data.shape:
                raise CheckpointError(
                    f"{key}: shape {arrays[key].shape} != {p.data.shape}"
                )
            p.data[...] = arrays[key]
        for bname, b in net.named_buffers():
            key = f"buffer/{net_name}/{bname}"
            if key not in arrays:
                raise CheckpointError(f"checkpoint missing array {key}")
            b.data[...] = arrays[key]
        prefix = f"adam/{net_name}/"
        opt_arrays = {
            k[len(prefix):]: v for k, v in arrays.items()
            if k.startswith(prefix)
        }
        try:
            state.opts[net_name].load_state_arrays(
                opt_arrays, meta["adam_t"][net_name]
            )
        except KeyError as exc:
            raise CheckpointError(
                f"checkpoint missing optimizer state for {net_name}"
            ) from exc
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state.rng = rng
    return state
