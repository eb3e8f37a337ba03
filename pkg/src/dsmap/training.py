"""Bidirectional training: pipeline intermediates, the loss report, and the
alternating discriminator / generator updates."""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import ImageFolder, schedule_indices
from .losses import (
    LossWeights,
    loss_adv_d,
    loss_adv_g,
    loss_cycle,
    loss_dic,
    loss_dsc,
    loss_image_recon,
    loss_style,
    total_losses,
)
from .model import DSMAP, ContentCode, Domain, ModelConfig, sample_style

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 1
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weight_decay: float = 1e-4
    checkpoint_every: int = 1000
    seed: int = 0
    # re-encode the translated image without gradient (ablation of the content constraint)
    detach_dic: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if self.steps < 1:
            raise ValueError("train.steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("train.batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("train.learning_rate must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("train.checkpoint_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepOutputs:
    c_A: ContentCode
    c_B: ContentCode
    h_A: ContentCode
    h_B: ContentCode
    c_AA: ContentCode
    c_BB: ContentCode
    c_AB: ContentCode
    c_BA: ContentCode
    s_A_enc: torch.Tensor
    s_B_enc: torch.Tensor
    s_A_prior: torch.Tensor
    s_B_prior: torch.Tensor
    x_AB: torch.Tensor
    x_BA: torch.Tensor
    x_AA: torch.Tensor
    x_BB: torch.Tensor
    x_ABA: torch.Tensor
    x_BAB: torch.Tensor
    # re-encodings of the translated images
    c_AB_rec: ContentCode
    c_BA_rec: ContentCode
    s_A_rec: torch.Tensor
    s_B_rec: torch.Tensor

    def check_finite(self):
        for f in fields(self):
            v = getattr(self, f.name)
            t = v.data if isinstance(v, ContentCode) else v
            if not torch.isfinite(t).all():
                raise NonFiniteError(f"non-finite values in {f.name}")


def prior_styles(batch: int, style_dim: int, seed: int, step: int):
    """Prior style codes for one step, a pure function of (seed, step)."""
    seeds = np.random.SeedSequence([seed, step]).generate_state(2)
    return (sample_style(batch, int(seeds[0]), style_dim),
            sample_style(batch, int(seeds[1]), style_dim))


def forward_all(x_A, x_B, model: DSMAP, styles, detach_dic: bool = False) -> StepOutputs:
    if x_A.shape[0] != x_B.shape[0]:
        raise ValueError(f"batch mismatch: {x_A.shape[0]} vs {x_B.shape[0]}")
    A, B = Domain.A, Domain.B
    s_A_prior, s_B_prior = styles
    h_A, c_A = model.encode_content(x_A, A)
    h_B, c_B = model.encode_content(x_B, B)
    s_A = model.encode_style(x_A, A)
    s_B = model.encode_style(x_B, B)

    c_AA, c_BB = model.map_content(c_A, A), model.map_content(c_B, B)
    c_AB, c_BA = model.map_content(c_A, B), model.map_content(c_B, A)

    x_AA = model.generate(c_AA, s_A, A)
    x_BB = model.generate(c_BB, s_B, B)
    x_AB = model.generate(c_AB, s_B_prior, B)
    x_BA = model.generate(c_BA, s_A_prior, A)

    for name, y in (("x_AB", x_AB), ("x_BA", x_BA)):
        if not torch.isfinite(y).all():
            raise NonFiniteError(f"non-finite values in {name}")
    _, c_AB_rec = model.encode_content(x_AB.detach() if detach_dic else x_AB, B)
    _, c_BA_rec = model.encode_content(x_BA.detach() if detach_dic else x_BA, A)
    s_B_rec = model.encode_style(x_AB, B)
    s_A_rec = model.encode_style(x_BA, A)

    if detach_dic:
        _, c_AB_cyc = model.encode_content(x_AB, B)
        _, c_BA_cyc = model.encode_content(x_BA, A)
    else:
        c_AB_cyc, c_BA_cyc = c_AB_rec, c_BA_rec
    x_ABA = model.generate(model.map_content(c_AB_cyc, A), s_A, A)
    x_BAB = model.generate(model.map_content(c_BA_cyc, B), s_B, B)

    out = StepOutputs(c_A=c_A, c_B=c_B, h_A=h_A, h_B=h_B, c_AA=c_AA, c_BB=c_BB, c_AB=c_AB, c_BA=c_BA,
                      s_A_enc=s_A, s_B_enc=s_B, s_A_prior=s_A_prior, s_B_prior=s_B_prior,
                      x_AB=x_AB, x_BA=x_BA, x_AA=x_AA, x_BB=x_BB, x_ABA=x_ABA, x_BAB=x_BAB,
                      c_AB_rec=c_AB_rec, c_BA_rec=c_BA_rec, s_A_rec=s_A_rec, s_B_rec=s_B_rec)
    out.check_finite()
    return out


def generator_terms(out: StepOutputs, x_A, x_B) -> dict[str, torch.Tensor]:
    """Per-direction reconstruction terms (everything but the adversarial ones)."""
    return {
        "cc_A": loss_cycle(x_A, out.x_ABA),
        "cc_B": loss_cycle(x_B, out.x_BAB),
        "x_A": loss_image_recon(x_A, out.x_AA),
        "x_B": loss_image_recon(x_B, out.x_BB),
        "dsc_A": loss_dsc(out.h_A, out.c_AA),
        "dsc_B": loss_dsc(out.h_B, out.c_BB),
        "dic_A": loss_dic(out.c_A, out.c_AB_rec),
        "dic_B": loss_dic(out.c_B, out.c_BA_rec),
        "s_A": loss_style(out.s_A_prior, out.s_A_rec),
        "s_B": loss_style(out.s_B_prior, out.s_B_rec),
    }


REPORT_KEYS = (
    "step",
    "cc_A", "cc_B", "x_A", "x_B", "dsc_A", "dsc_B", "dic_A", "dic_B", "s_A", "s_B",
    "adv_g_A", "adv_g_B", "adv_d_A", "adv_d_B",
    "cc", "x", "dsc", "dic", "s", "adv_g", "adv_d",
    "L_G_total", "L_D",
)


def build_report(step: int, per_direction: dict[str, float], w: LossWeights) -> dict:
    report = {"step": int(step)}
    report.update({k: float(per_direction[k]) for k in REPORT_KEYS[1:15]})
    for term in ("cc", "x", "dsc", "dic", "s", "adv_g", "adv_d"):
        report[term] = report[f"{term}_A"] + report[f"{term}_B"]
    report["L_G_total"], report["L_D"] = total_losses(report, w)
    return report


class TrainState:
    """Model plus the two optimizers and the completed-step counter."""

    def __init__(self, model: DSMAP, cfg: TrainConfig, step: int = 0):
        self.model = model
        self.cfg = cfg
        self.step = step
        kw = dict(lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2),
                  weight_decay=cfg.weight_decay)
        self.opt_gen = torch.optim.Adam(model.generator_parameters(), **kw)
        self.opt_dis = torch.optim.Adam(model.discriminator_parameters(), **kw)

    @classmethod
    def create(cls, model_cfg: ModelConfig, cfg: TrainConfig) -> "TrainState":
        return cls(DSMAP(model_cfg), cfg)

    def arrays(self) -> dict[str, np.ndarray]:
        names = {p: n for n, p in self.model.named_parameters()}
        arrays = ckpt.model_arrays(self.model)
        arrays.update(ckpt.optimizer_arrays(self.opt_gen, names, "optim.gen"))
        arrays.update(ckpt.optimizer_arrays(self.opt_dis, names, "optim.dis"))
        return arrays

    def save(self, path):
        manifest = {"model_config": self.model.cfg.to_dict(), "train_config": self.cfg.to_dict(),
                    "step": self.step, "seed": self.cfg.seed}
        ckpt.write_archive(path, manifest, self.arrays())

    @classmethod
    def load(cls, path, cfg: Optional[TrainConfig] = None) -> "TrainState":
        manifest, arrays = ckpt.read_archive(path)
        model = DSMAP(ModelConfig(**manifest["model_config"]))
        load_model_arrays(model, arrays)
        if cfg is None:
            cfg = TrainConfig(**manifest["train_config"])
        state = cls(model, cfg, step=int(manifest["step"]))
        names = {p: n for n, p in model.named_parameters()}
        ckpt.load_optimizer_arrays(state.opt_gen, names, "optim.gen", arrays)
        ckpt.load_optimizer_arrays(state.opt_dis, names, "optim.dis", arrays)
        return state


def load_model_arrays(model: DSMAP, arrays: dict):
    own = model.state_dict()
    missing = [k for k in own if k not in arrays]
    if missing:
        raise ckpt.CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
    model.load_state_dict({k: torch.from_numpy(arrays[k].copy()) for k in own})


def load_model(path) -> DSMAP:
    manifest, arrays = ckpt.read_archive(path)
    model = DSMAP(ModelConfig(**manifest["model_config"]))
    load_model_arrays(model, arrays)
    return model.eval()


def _dump_and_raise(state: TrainState, msg: str, dump_dir):
    if dump_dir is not None:
        path = Path(dump_dir) / f"crash_step_{state.step + 1:06d}.ckpt"
        state.save(path)
        msg += f" (state dumped to {path})"
    raise NonFiniteError(msg)


def discriminator_update(out: StepOutputs, x_A, x_B, state: TrainState, w: LossWeights,
                         step: int = 0, dump_dir=None):
    """Step D_A and D_B on detached fakes; no other parameter receives gradient."""
    model = state.model
    state.opt_dis.zero_grad(set_to_none=True)
    adv_d_A = loss_adv_d(model.discriminate(x_A, Domain.A), model.discriminate(out.x_BA.detach(), Domain.A))
    adv_d_B = loss_adv_d(model.discriminate(x_B, Domain.B), model.discriminate(out.x_AB.detach(), Domain.B))
    d_total = w.lambda_adv * (adv_d_A + adv_d_B)
    if not torch.isfinite(d_total):
        _dump_and_raise(state, f"step {step}: non-finite discriminator loss", dump_dir)
    d_total.backward()
    state.opt_dis.step()
    return adv_d_A.detach(), adv_d_B.detach()


def generator_update(out: StepOutputs, x_A, x_B, state: TrainState, w: LossWeights,
                     step: int = 0, dump_dir=None) -> dict[str, torch.Tensor]:
    """Step encoders, projector, mappings and generators on the weighted generator total."""
    model = state.model
    state.opt_gen.zero_grad(set_to_none=True)
    terms = generator_terms(out, x_A, x_B)
    terms["adv_g_A"] = loss_adv_g(model.discriminate(out.x_BA, Domain.A))
    terms["adv_g_B"] = loss_adv_g(model.discriminate(out.x_AB, Domain.B))
    components = {t: terms[f"{t}_A"] + terms[f"{t}_B"] for t in ("cc", "x", "dsc", "dic", "s", "adv_g")}
    components["adv_d"] = 0.0
    g_total, _ = total_losses(components, w)
    if not torch.isfinite(g_total):
        _dump_and_raise(state, f"step {step}: non-finite generator loss", dump_dir)
    g_total.backward()
    state.opt_gen.step()
    # the backward pass also filled D gradients; drop them
    state.opt_dis.zero_grad(set_to_none=True)
    return terms


def _flushing_subnormals() -> bool:
    tiny = torch.tensor([1e-30], dtype=torch.float32)
    return (tiny * 1e-10).item() == 0.0  # 1e-40 is subnormal in float32


@contextlib.contextmanager
def flush_subnormals():
    """Flush subnormal floats to zero inside the block, then restore the previous mode."""
    previous = _flushing_subnormals()
    torch.set_flush_denormal(True)
    try:
        yield
    finally:
        torch.set_flush_denormal(previous)


def train_step(x_A, x_B, state: TrainState, cfg: Optional[TrainConfig] = None,
               step: Optional[int] = None, dump_dir=None) -> dict:
    """One discriminator update followed by one generator update.

    ``step`` is the 1-based index of the step being taken; prior style codes are
    derived from it so a resumed run sees the same randomness.

    Runs with subnormal floats flushed to zero: weights of dead units decay
    geometrically under weight decay into the subnormal range, where CPU
    arithmetic is slow. The previous floating-point mode is restored on return.
    """
    with flush_subnormals():
        return _train_step(x_A, x_B, state, cfg, step, dump_dir)


def _train_step(x_A, x_B, state: TrainState, cfg, step, dump_dir) -> dict:
    cfg = cfg or state.cfg
    step = state.step + 1 if step is None else step
    model = state.model
    w = cfg.loss_weights
    model.train()
    try:
        styles = prior_styles(x_A.shape[0], model.cfg.style_dim, cfg.seed, step)
        try:
            out = forward_all(x_A, x_B, model, styles, detach_dic=cfg.detach_dic)
        except NonFiniteError as exc:
            _dump_and_raise(state, f"step {step}: {exc}", dump_dir)

        adv_d_A, adv_d_B = discriminator_update(out, x_A, x_B, state, w, step, dump_dir)
        terms = generator_update(out, x_A, x_B, state, w, step, dump_dir)
    finally:
        model.eval()

    values = {k: v.item() for k, v in terms.items()}
    values["adv_d_A"], values["adv_d_B"] = adv_d_A.item(), adv_d_B.item()
    state.step = step
    return build_report(step, values, w)


def format_record(report: dict) -> str:
    return json.dumps({k: report[k] for k in REPORT_KEYS})


class TrainingData:
    """Deterministic per-step batches from the two training folders."""

    def __init__(self, folder_A: ImageFolder, folder_B: ImageFolder, spec=None):
        self.folders = {Domain.A: folder_A, Domain.B: folder_B}
        self.spec = spec

    def batch(self, domain: Domain, step: int, batch_size: int, seed: int) -> torch.Tensor:
        from .data import assemble

        folder = self.folders[domain]
        stream = 0 if domain is Domain.A else 1
        idx = schedule_indices(len(folder), step, batch_size, seed, stream)
        if self.spec is None:
            return folder.tensor(idx)
        rng = np.random.default_rng([seed, stream, step, 7])
        return assemble(folder, idx, self.spec, rng)


def _truncate_log(path: Path, last_step: int):
    if not path.exists():
        return
    keep = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["step"] <= last_step]
    path.write_text("".join(ln + "\n" for ln in keep))


def fit(data: TrainingData, state: TrainState, out_dir=None, cfg: Optional[TrainConfig] = None,
        progress_every: int = 0) -> list[dict]:
    """Train from ``state.step`` up to ``cfg.steps``.

    With ``out_dir`` set, appends one JSON line per step to ``metrics.jsonl``
    and writes ``step_XXXXXX.ckpt`` every ``checkpoint_every`` steps and at the end.
    """
    cfg = cfg or state.cfg
    records = []
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.jsonl"
        _truncate_log(log_path, state.step)
    fh = open(log_path, "a") if log_path else None
    try:
        while state.step < cfg.steps:
            step = state.step + 1
            x_A = data.batch(Domain.A, step, cfg.batch_size, cfg.seed)
            x_B = data.batch(Domain.B, step, cfg.batch_size, cfg.seed)
            report = train_step(x_A, x_B, state, cfg, step, dump_dir=out_dir)
            records.append(report)
            if fh:
                fh.write(format_record(report) + "\n")
                fh.flush()
            if progress_every and step % progress_every == 0:
                log.info("step %d  L_G %.4f  L_D %.4f  cc %.4f  x %.4f", step, report["L_G_total"],
                         report["L_D"], report["cc"], report["x"])
            if out_dir is not None and (step % cfg.checkpoint_every == 0 or step == cfg.steps):
                state.save(out_dir / f"step_{step:06d}.ckpt")
    finally:
        if fh:
            fh.close()
    return records


def read_metrics(path) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln]


def moving_average(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        raise ValueError("not enough values for the window")
    c = np.cumsum(np.insert(values, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def is_finite_report(report: dict) -> bool:
    return all(math.isfinite(v) for v in report.values())
