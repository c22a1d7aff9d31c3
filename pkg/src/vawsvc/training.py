"""VAE + Wasserstein objectives and the two-stage training schedule.

Stage 1 (``vae_warmup_epochs``) fits encoder and decoder on KL plus
reconstruction only; the critic is left untouched. The reconstruction term
of the objective is the unit-variance Gaussian NLL summed over bins,
i.e. ``sp_dim / 2`` times the per-bin MSE that ``reconstruction_loss``
reports; with the plain mean the summed KL wins and the posterior
collapses. Stage 2 adds the
adversarial term: batches are consumed in order, every batch drives one
critic update (followed by weight clipping) and every
``critic_steps_per_gen_step``-th batch additionally drives one
encoder/decoder update on ``kl + recon + alpha * generator_loss``.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .errors import ConfigurationError, DivergenceError, ShapeError
from .features import CorpusScaler, F0Stats, NormalizedTrack, f0_stats_from_arrays
from .model import LatentCode, ModelCheckpoint, ModelConfig, VAWGAN, sample_latent

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    alpha: float = 50.0
    vae_warmup_epochs: int = 15
    total_epochs: int = 60
    learning_rate: float = 1e-4
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    batch_size: int = 256
    critic_steps_per_gen_step: int = 5
    weight_clip: float = 0.01
    seed: int = 0
    checkpoint_every: int = 5
    # multiplier turning the per-bin MSE into the objective's reconstruction
    # term; None means the unit-variance Gaussian NLL per frame, sp_dim / 2
    reconstruction_weight: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.vae_warmup_epochs <= self.total_epochs:
            raise ConfigurationError("need 0 <= vae_warmup_epochs <= total_epochs")
        if self.batch_size < 1 or self.critic_steps_per_gen_step < 1:
            raise ConfigurationError("batch_size and critic_steps_per_gen_step must be positive")
        if not self.weight_clip > 0:
            raise ConfigurationError("weight_clip must be positive")
        if self.reconstruction_weight is not None and not self.reconstruction_weight > 0:
            raise ConfigurationError("reconstruction_weight must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainingConfig":
        return cls(**d)


@dataclass
class LossReport:
    kl: float
    reconstruction: float
    wgan_critic: Optional[float]
    wgan_generator: Optional[float]
    total: float
    step: int
    epoch: int = 0
    stage: str = "vae"


# ---------------------------------------------------------------------------
# objectives


def kl_loss(code: LatentCode) -> torch.Tensor:
    """KL(q(z|x) || N(0, I)) for a diagonal Gaussian, summed over latent
    dimensions and averaged over frames."""
    m, lv = code.mean, code.log_var
    # expm1 keeps exp(lv) - 1 - lv non-negative when lv is tiny
    per_frame = 0.5 * (m * m + torch.expm1(lv) - lv).sum(dim=1)
    return per_frame.mean()


def reconstruction_loss(x, x_hat) -> torch.Tensor:
    """Unit-variance Gaussian negative log-likelihood up to constants: MSE."""
    x = torch.as_tensor(x)
    x_hat = torch.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return ((x - x_hat) ** 2).mean()


def wasserstein_estimate(real_scores, fake_scores) -> torch.Tensor:
    real_scores = torch.as_tensor(real_scores)
    fake_scores = torch.as_tensor(fake_scores)
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("Wasserstein estimate needs non-empty real and fake batches")
    return real_scores.mean() - fake_scores.mean()


def wgan_losses(real, fake, critic):
    """Return ``(critic_loss, generator_loss)``.

    ``critic`` is a VAWGAN (its ``discriminate`` is used) or any callable
    mapping frames to scores. The critic minimizes ``-J`` where
    ``J = mean(D(real)) - mean(D(fake))``; the generator minimizes
    ``-mean(D(fake))``.
    """
    score = critic.discriminate if hasattr(critic, "discriminate") else critic
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("wgan_losses needs non-empty real and fake batches")
    fake_scores = score(fake)
    j = wasserstein_estimate(score(real), fake_scores)
    return -j, -fake_scores.mean()


def total_objective(kl, recon, wgan_gen, alpha: float):
    """Encoder/decoder loss: the negated VAW-GAN objective."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return kl + recon + alpha * wgan_gen


def clip_weights(module: torch.nn.Module, bound: float) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.clamp_(-bound, bound)


# ---------------------------------------------------------------------------
# training


@dataclass
class FrameData:
    frames: torch.Tensor
    f0_cond: torch.Tensor
    singers: torch.Tensor

    def __len__(self):
        return self.frames.shape[0]


def stack_tracks(dataset: Sequence[NormalizedTrack]) -> FrameData:
    frames = np.concatenate([t.log_sp_norm for t in dataset]).astype(np.float32)
    f0 = np.concatenate([t.f0_scaled for t in dataset]).astype(np.float32)
    singers = np.concatenate([np.full(t.n_frames, t.singer_id, dtype=np.int64) for t in dataset])
    return FrameData(torch.from_numpy(frames), torch.from_numpy(f0), torch.from_numpy(singers))


def per_singer_f0_stats(dataset: Sequence[NormalizedTrack]) -> Dict[int, F0Stats]:
    by_singer: Dict[int, list] = {}
    for t in dataset:
        by_singer.setdefault(int(t.singer_id), []).append(t.f0_hz)
    return {s: f0_stats_from_arrays(arrs) for s, arrs in sorted(by_singer.items())}


class Trainer:
    """Stateful two-stage trainer; ``train()`` is the one-call wrapper.

    ``step_callback(stage, trainer)`` is invoked after every optimizer
    update with stage ``"vae"``, ``"critic"`` or ``"generator"``.
    """

    def __init__(
        self,
        dataset: Sequence[NormalizedTrack],
        config: TrainingConfig,
        model_config: ModelConfig,
        scaler: CorpusScaler,
        *,
        singers: Optional[Dict[str, int]] = None,
        checkpoint_dir=None,
        log_path=None,
        step_callback: Optional[Callable] = None,
    ):
        self.config = config
        self.model_config = model_config
        self.scaler = scaler
        self.singers = dict(singers or {})
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.log_path = Path(log_path) if log_path else None
        self.step_callback = step_callback
        self._validate(dataset)

        self.data = stack_tracks(dataset)
        self.f0_stats = per_singer_f0_stats(dataset)
        self.meta = {
            "sample_rate_hz": int(dataset[0].sample_rate_hz),
            "frame_shift_us": int(dataset[0].frame_shift_us),
            "training": config.to_dict(),
        }

        self.recon_weight = (
            0.5 * model_config.sp_dim if config.reconstruction_weight is None else config.reconstruction_weight
        )
        self.model = VAWGAN(model_config, seed=config.seed)
        frames64 = self.data.frames.double()
        self.model.set_spectral_stats(frames64.mean(0), frames64.std(0, unbiased=False).clamp_min(1e-3))
        self.gen = torch.Generator().manual_seed(config.seed + 1)
        opt_kw = dict(lr=config.learning_rate, alpha=config.rmsprop_decay, eps=config.rmsprop_eps, momentum=0.0)
        self.opt_g = torch.optim.RMSprop(self.model.generator_parameters(), **opt_kw)
        self.opt_c = torch.optim.RMSprop(self.model.critic.parameters(), **opt_kw)
        self.step = 0
        self.epoch = 0
        self.history: List[LossReport] = []
        self.initial_reconstruction = self.evaluate_reconstruction()

    def _validate(self, dataset):
        if not dataset:
            raise ConfigurationError("empty training set")
        singers = {t.singer_id for t in dataset}
        if None in singers:
            raise ConfigurationError("every training track needs a singer index")
        if len(singers) < 2:
            raise ConfigurationError("training needs at least two singers")
        if max(singers) >= self.model_config.n_singers or min(singers) < 0:
            raise ConfigurationError(
                f"singer indices {sorted(singers)} do not fit n_singers={self.model_config.n_singers}"
            )
        dims = {t.log_sp_norm.shape[1] for t in dataset}
        if dims != {self.model_config.sp_dim}:
            raise ConfigurationError(f"frame dimension {dims} != model sp_dim {self.model_config.sp_dim}")
        rates = {(t.sample_rate_hz, t.frame_shift_us) for t in dataset}
        if len(rates) != 1:
            raise ConfigurationError(f"mixed sample rates / frame shifts in training data: {rates}")

    # -- helpers ---------------------------------------------------------

    def checkpoint(self) -> ModelCheckpoint:
        return ModelCheckpoint.from_model(
            self.model,
            f0_stats_per_singer=dict(self.f0_stats),
            scaler=self.scaler,
            training_step=self.step,
            seed=self.config.seed,
            singers=self.singers,
            meta=dict(self.meta, epoch=self.epoch),
        )

    @torch.no_grad()
    def evaluate_reconstruction(self, batch_size: int = 2048) -> float:
        """Frame-averaged reconstruction MSE using posterior means."""
        total, n = 0.0, len(self.data)
        for start in range(0, n, batch_size):
            sl = slice(start, start + batch_size)
            x = self.data.frames[sl]
            code = self.model.encode(x)
            x_hat = self.model.decode(code.mean, self.data.singers[sl], self.data.f0_cond[sl])
            total += float(((x - x_hat) ** 2).mean()) * x.shape[0]
        return total / n

    def _noise(self, like):
        return torch.randn(like.shape, generator=self.gen, dtype=like.dtype)

    def _reconstruct(self, x, s, f):
        code = self.model.encode(x)
        z = sample_latent(code, self._noise(code.mean))
        return code, self.model.decode(z, s, f)

    def _check(self, *values):
        if not all(math.isfinite(float(v.detach() if torch.is_tensor(v) else v)) for v in values):
            last_good = getattr(self, "_last_good", None)
            if last_good is not None and self.checkpoint_dir is not None:
                last_good.save(self.checkpoint_dir / "last_good.vawc")
            raise DivergenceError(
                f"non-finite loss at epoch {self.epoch}, step {self.step}", last_good=last_good
            )

    def _notify(self, stage):
        self.step += 1
        if self.step_callback is not None:
            self.step_callback(stage, self)

    # -- updates ---------------------------------------------------------

    def vae_step(self, x, s, f):
        code, x_hat = self._reconstruct(x, s, f)
        kl = kl_loss(code)
        rec = reconstruction_loss(x, x_hat)
        loss = total_objective(kl, self.recon_weight * rec, 0.0, 0.0)
        self._check(loss)
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        self._notify("vae")
        return kl.item(), rec.item()

    def critic_step(self, x, s, f):
        with torch.no_grad():
            _, fake = self._reconstruct(x, s, f)
        critic_loss, _ = wgan_losses(x, fake, self.model)
        self._check(critic_loss)
        self.opt_c.zero_grad(set_to_none=True)
        critic_loss.backward()
        self.opt_c.step()
        clip_weights(self.model.critic, self.config.weight_clip)
        self._notify("critic")
        return -critic_loss.item()

    def generator_step(self, x, s, f):
        critic_params = list(self.model.critic.parameters())
        for p in critic_params:
            p.requires_grad_(False)
        try:
            code, x_hat = self._reconstruct(x, s, f)
            kl = kl_loss(code)
            rec = reconstruction_loss(x, x_hat)
            gen = -self.model.discriminate(x_hat).mean()
            loss = total_objective(kl, self.recon_weight * rec, gen, self.config.alpha)
            self._check(loss)
            self.opt_g.zero_grad(set_to_none=True)
            loss.backward()
            self.opt_g.step()
        finally:
            for p in critic_params:
                p.requires_grad_(True)
        self._notify("generator")
        return kl.item(), rec.item(), gen.item()

    def run_epoch(self) -> LossReport:
        self.epoch += 1
        cfg = self.config
        adversarial = self.epoch > cfg.vae_warmup_epochs
        stage = "vawgan" if adversarial else "vae"
        n = len(self.data)
        perm = torch.randperm(n, generator=self.gen)
        kls, recs, js, gens = [], [], [], []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            x, s, f = self.data.frames[idx], self.data.singers[idx], self.data.f0_cond[idx]
            if not adversarial:
                kl, rec = self.vae_step(x, s, f)
                kls.append(kl)
                recs.append(rec)
                continue
            js.append(self.critic_step(x, s, f))
            if b % cfg.critic_steps_per_gen_step == cfg.critic_steps_per_gen_step - 1:
                kl, rec, gen = self.generator_step(x, s, f)
                kls.append(kl)
                recs.append(rec)
                gens.append(gen)
        kl_m = float(np.mean(kls)) if kls else 0.0
        rec_m = float(np.mean(recs)) if recs else 0.0
        j_m = float(np.mean(js)) if js else None
        gen_m = float(np.mean(gens)) if gens else None
        total = kl_m + self.recon_weight * rec_m + (cfg.alpha * gen_m if gen_m is not None else 0.0)
        report = LossReport(kl_m, rec_m, j_m, gen_m, total, self.step, self.epoch, stage)
        self.history.append(report)
        return report

    def _log(self, record: dict):
        line = json.dumps(record, sort_keys=True)
        log.info(line)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(line + "\n")

    def run(self) -> ModelCheckpoint:
        cfg = self.config
        self._last_good = self.checkpoint()
        self._log({"event": "start", "seed": cfg.seed, "frames": len(self.data), "epochs": cfg.total_epochs})
        while self.epoch < cfg.total_epochs:
            t0 = time.perf_counter()
            rep = self.run_epoch()
            self._log({
                "event": "epoch", "epoch": rep.epoch, "stage": rep.stage, "kl": rep.kl,
                "reconstruction": rep.reconstruction, "wgan": rep.wgan_critic,
                "generator": rep.wgan_generator, "step": rep.step,
                "seconds": round(time.perf_counter() - t0, 3),
            })
            self._last_good = self.checkpoint()
            if self.checkpoint_dir is not None and cfg.checkpoint_every and rep.epoch % cfg.checkpoint_every == 0:
                self._last_good.save(self.checkpoint_dir / f"epoch{rep.epoch:03d}.vawc")
        final = self._last_good
        if self.checkpoint_dir is not None:
            final.save(self.checkpoint_dir / "final.vawc")
        self._log({"event": "done", "step": self.step})
        return final


def train(
    dataset: Sequence[NormalizedTrack],
    config: TrainingConfig,
    model_config: ModelConfig,
    scaler: CorpusScaler,
    **kwargs,
) -> ModelCheckpoint:
    return Trainer(dataset, config, model_config, scaler, **kwargs).run()
