"""Conditional Wasserstein GAN training loop with weight clipping.

One iteration = ``n_critic`` critic updates followed by one generator
update.  The critic schedule follows the published recipe: 5 critic steps
per generator step for the first 300 epochs, 1 afterwards, where an epoch
is one pass over the training-city list (iterations // n_cities).

Determinism: all stochastic choices (city selection, noise, walk sampling,
Gumbel draws) are driven by two seeded generators whose states are saved in
checkpoints, so a reloaded run reproduces the loss trajectory exactly.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .core import City, ODNetwork
from .critic import TcnConfig, TcnCritic
from .exceptions import DataFormatError, DegenerateNetworkError, TrainingDivergedError
from .gravity import GravityDecoder, GravityParams, split_embedding
from .mgat import EncoderConfig, MultiViewEncoder, city_tensors
from .walker import flow_feature_norm, sample_walks, sample_walks_st, stack_walks

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_SKIPS = 100
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 1000
    n_critic: int = 5
    n_critic_late: int = 1
    critic_phase_epochs: int = 300
    clip: float = 0.01
    lr_g: float = 5e-5
    lr_d: float = 5e-5
    lr_gravity: Optional[float] = None  # defaults to lr_g
    walks_per_batch: int = 128
    walk_len: int = 16
    seed: int = 0
    checkpoint_interval: int = 0  # 0: only write the final checkpoint
    convergence_window: int = 100
    convergence_tol: float = 0.0  # 0: run to max iterations
    noise_dim: int = 60
    embed_dim: int = 64
    heads: int = 8
    gat_layers: int = 3
    tau: float = 0.66
    tcn_channels: int = 64
    tcn_kernel: int = 3
    tcn_levels: int = 4
    init_log_g: float = 0.0
    init_lambda1: float = 1.0
    init_lambda2: float = 1.0
    init_lambda3: float = 1.0

    def __post_init__(self):
        if self.clip <= 0:
            raise DataFormatError("clip threshold must be positive")
        if self.n_critic < 1 or self.n_critic_late < 1:
            raise DataFormatError("n_critic must be at least 1")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in mapping.items() if k in names})


def n_critic_for_iteration(iteration: int, n_cities: int, cfg: TrainConfig) -> int:
    """Critic steps for a (0-based) iteration; epoch = one pass over the cities."""
    epoch = iteration // max(n_cities, 1)
    return cfg.n_critic if epoch < cfg.critic_phase_epochs else cfg.n_critic_late


class FlowGenerator(nn.Module):
    """Encoder + gravity decoder: (attributes, topology, noise) -> OD matrix."""

    def __init__(self, enc_cfg: EncoderConfig, gravity_init: GravityParams | None = None):
        super().__init__()
        self.encoder = MultiViewEncoder(enc_cfg)
        self.decoder = GravityDecoder(gravity_init)

    def forward(self, features, adjacencies, noise) -> torch.Tensor:
        embeddings = self.encoder(torch.cat([features, noise], dim=1), adjacencies)
        return self.decoder(split_embedding(embeddings))

    def masses(self, features, adjacencies, noise) -> torch.Tensor:
        embeddings = self.encoder(torch.cat([features, noise], dim=1), adjacencies)
        return split_embedding(embeddings).mass


@dataclass(eq=False)
class CityBundle:
    """Per-city tensors precomputed once for the training loop."""

    city: City
    features: torch.Tensor
    adjacencies: dict[str, torch.Tensor]
    real_net: Optional[ODNetwork]
    flow_norm: Optional[float]

    @classmethod
    def from_city(cls, city: City) -> "CityBundle":
        features, adjs = city_tensors(city)
        norm = flow_feature_norm(city.od) if city.od is not None else None
        return cls(
            city=city, features=features, adjacencies=adjs, real_net=city.od, flow_norm=norm
        )


class OdgnTrainer:
    """Owns the generator, critic, optimizers and RNG streams for one run."""

    def __init__(self, cities: Sequence[City], cfg: TrainConfig):
        if not cities:
            raise DataFormatError("need at least one training city")
        missing = [i for i, c in enumerate(cities) if c.od is None]
        if missing:
            raise DataFormatError(f"training cities without an OD network: {missing}")
        dims = {c.attr_dim for c in cities}
        if len(dims) != 1:
            raise DataFormatError(f"cities disagree on attribute dimension: {sorted(dims)}")
        self.cfg = cfg
        self.attr_dim = cities[0].attr_dim
        self.bundles = [CityBundle.from_city(c) for c in cities]

        enc_cfg = EncoderConfig(
            attr_dim=self.attr_dim,
            noise_dim=cfg.noise_dim,
            embed_dim=cfg.embed_dim,
            heads=cfg.heads,
            layers=cfg.gat_layers,
        )
        gravity_init = GravityParams(
            log_g=cfg.init_log_g,
            lambda1=cfg.init_lambda1,
            lambda2=cfg.init_lambda2,
            lambda3=cfg.init_lambda3,
        )
        torch.manual_seed(cfg.seed)  # module weight init
        self.generator = FlowGenerator(enc_cfg, gravity_init)
        tcn_cfg = TcnConfig(
            in_dim=self.attr_dim + 1,
            seq_len=cfg.walk_len,
            channels=cfg.tcn_channels,
            kernel_size=cfg.tcn_kernel,
            dilations=tuple(2**i for i in range(cfg.tcn_levels)),
            init_range=cfg.clip,
        )
        self.critic = TcnCritic(tcn_cfg)

        lr_gravity = cfg.lr_g if cfg.lr_gravity is None else cfg.lr_gravity
        self.opt_g = torch.optim.RMSprop(
            [
                {"params": self.generator.encoder.parameters(), "lr": cfg.lr_g},
                {"params": self.generator.decoder.parameters(), "lr": lr_gravity},
            ]
        )
        self.opt_d = torch.optim.RMSprop(self.critic.parameters(), lr=cfg.lr_d)

        self.torch_gen = torch.Generator().manual_seed(cfg.seed)
        self.np_rng = np.random.default_rng(cfg.seed)
        self.iteration = 0
        self.loss_history: list[tuple[int, float, float, float]] = []
        self.consecutive_skips = 0

    # ---------------------------------------------------------------- steps

    def _pick_bundle(self) -> CityBundle:
        k = int(torch.randint(len(self.bundles), (1,), generator=self.torch_gen))
        return self.bundles[k]

    def _draw_noise(self, n_regions: int) -> torch.Tensor:
        return torch.randn(n_regions, self.cfg.noise_dim, generator=self.torch_gen)

    def _generate(self, bundle: CityBundle, grad: bool) -> torch.Tensor:
        noise = self._draw_noise(bundle.city.n_regions)
        if grad:
            return self.generator(bundle.features, bundle.adjacencies, noise)
        with torch.no_grad():
            return self.generator(bundle.features, bundle.adjacencies, noise)

    def _note_skip(self, what: str, err: Exception) -> None:
        self.consecutive_skips += 1
        log.warning("skipping %s (degenerate generated network: %s)", what, err)
        if self.consecutive_skips > MAX_CONSECUTIVE_SKIPS:
            raise TrainingDivergedError(
                f"{self.consecutive_skips} consecutive degenerate generations"
            )

    def critic_step(self) -> Optional[float]:
        """One critic update on a randomly selected training city; returns the loss."""
        cfg = self.cfg
        bundle = self._pick_bundle()
        fake = self._generate(bundle, grad=False)
        try:
            fake_walks = sample_walks(
                ODNetwork(flows=fake.numpy().astype(float)),
                bundle.city,
                cfg.walks_per_batch,
                cfg.walk_len,
                rng=self.np_rng,
                flow_norm=bundle.flow_norm,
                real=False,
            )
        except DegenerateNetworkError as err:
            self._note_skip("critic step", err)
            return None
        real_walks = sample_walks(
            bundle.real_net,
            bundle.city,
            cfg.walks_per_batch,
            cfg.walk_len,
            rng=self.np_rng,
            flow_norm=bundle.flow_norm,
            real=True,
        )
        loss = self.critic(stack_walks(fake_walks)).mean() - self.critic(
            stack_walks(real_walks)
        ).mean()
        self.opt_d.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_d.step()
        with torch.no_grad():
            for p in self.critic.parameters():
                p.clamp_(-cfg.clip, cfg.clip)
        self.consecutive_skips = 0
        return float(loss)

    def generator_step(self) -> Optional[float]:
        """One generator update through straight-through walks; returns the loss."""
        cfg = self.cfg
        bundle = self._pick_bundle()
        fake = self._generate(bundle, grad=True)
        try:
            batch = sample_walks_st(
                fake,
                bundle.features,
                cfg.walks_per_batch,
                cfg.walk_len,
                generator=self.torch_gen,
                tau=cfg.tau,
                flow_norm=bundle.flow_norm,
            )
        except DegenerateNetworkError as err:
            self._note_skip("generator step", err)
            return None
        loss = -self.critic(batch.features).mean()
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        self.consecutive_skips = 0
        return float(loss)

    # ----------------------------------------------------------------- loop

    def _check_finite(self, name: str, value: Optional[float]) -> None:
        if value is not None and not np.isfinite(value):
            raise TrainingDivergedError(
                f"non-finite {name} at iteration {self.iteration}; "
                f"parameter norms: {json.dumps(self.parameter_norms())}"
            )

    def parameter_norms(self) -> dict[str, float]:
        return {
            "encoder": float(
                torch.sqrt(sum(p.pow(2).sum() for p in self.generator.encoder.parameters()))
            ),
            "gravity": float(
                torch.sqrt(sum(p.pow(2).sum() for p in self.generator.decoder.parameters()))
            ),
            "critic": float(
                torch.sqrt(sum(p.pow(2).sum() for p in self.critic.parameters()))
            ),
        }

    def run(
        self,
        log_path: Union[str, Path, None] = None,
        checkpoint_path: Union[str, Path, None] = None,
    ) -> None:
        """Iterate to cfg.iters (or convergence), logging one CSV row per iteration."""
        cfg = self.cfg
        writer = None
        if log_path is not None:
            log_path = Path(log_path)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            fresh = self.iteration == 0 or not log_path.exists()
            writer = open(log_path, "w" if fresh else "a")
            if fresh:
                writer.write("iter,loss_g,loss_d,wall_ms\n")
        try:
            while self.iteration < cfg.iters:
                started = time.perf_counter()
                n_c = n_critic_for_iteration(self.iteration, len(self.bundles), cfg)
                critic_losses = []
                for _ in range(n_c):
                    value = self.critic_step()
                    self._check_finite("critic loss", value)
                    if value is not None:
                        critic_losses.append(value)
                loss_g = self.generator_step()
                self._check_finite("generator loss", loss_g)
                loss_d = float(np.mean(critic_losses)) if critic_losses else float("nan")
                loss_g = float("nan") if loss_g is None else loss_g
                wall_ms = (time.perf_counter() - started) * 1000.0
                self.iteration += 1
                self.loss_history.append((self.iteration, loss_g, loss_d, wall_ms))
                if writer is not None:
                    writer.write(f"{self.iteration},{loss_g:.10g},{loss_d:.10g},{wall_ms:.3f}\n")
                    writer.flush()
                if (
                    checkpoint_path is not None
                    and cfg.checkpoint_interval > 0
                    and self.iteration % cfg.checkpoint_interval == 0
                ):
                    self.save_checkpoint(checkpoint_path)
                if self._converged():
                    log.info("converged at iteration %d", self.iteration)
                    break
            if checkpoint_path is not None:
                self.save_checkpoint(checkpoint_path)
        finally:
            if writer is not None:
                writer.close()

    def _converged(self) -> bool:
        cfg = self.cfg
        if cfg.convergence_tol <= 0 or len(self.loss_history) < cfg.convergence_window:
            return False
        tail = self.loss_history[-cfg.convergence_window :]
        g = np.array([row[1] for row in tail])
        d = np.array([row[2] for row in tail])
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(d))):
            return False
        return float(g.std()) < cfg.convergence_tol and float(d.std()) < cfg.convergence_tol

    # ----------------------------------------------------------- generation

    def bundle_for(self, city: City) -> CityBundle:
        if city.attr_dim != self.attr_dim:
            raise DataFormatError(
                f"city attribute dim {city.attr_dim} != model attribute dim {self.attr_dim}"
            )
        return CityBundle.from_city(city)

    def generate(self, city: City, noise: torch.Tensor | None = None) -> ODNetwork:
        """Generate an OD network for a (possibly unseen) city."""
        bundle = self.bundle_for(city)
        if noise is None:
            noise = self._draw_noise(city.n_regions)
        with torch.no_grad():
            flows = self.generator(bundle.features, bundle.adjacencies, noise)
        return ODNetwork(flows=flows.numpy().astype(float))

    def region_masses(self, city: City, noise: torch.Tensor | None = None) -> np.ndarray:
        """Learned per-region masses for a city (explainability probe)."""
        bundle = self.bundle_for(city)
        if noise is None:
            noise = self._draw_noise(city.n_regions)
        with torch.no_grad():
            mass = self.generator.masses(bundle.features, bundle.adjacencies, noise)
        return mass.numpy().astype(float)

    # --------------------------------------------------------- checkpointing

    def save_checkpoint(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.cfg),
            "attr_dim": self.attr_dim,
            "iteration": self.iteration,
            "generator": self.generator.state_dict(),
            "critic": self.critic.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "torch_rng": self.torch_gen.get_state(),
            "np_rng": self.np_rng.bit_generator.state,
            "loss_history": self.loss_history,
            "consecutive_skips": self.consecutive_skips,
        }
        torch.save(payload, path)
        sidecar = {
            "iteration": self.iteration,
            "config": asdict(self.cfg),
            "loss_history": [list(row) for row in self.loss_history],
            "snapshots": {
                "gravity": asdict(self.generator.decoder.as_params()),
                "parameter_norms": self.parameter_norms(),
            },
        }
        path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path], cities: Sequence[City]) -> "OdgnTrainer":
        payload = torch.load(Path(path), weights_only=False)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise DataFormatError(f"unsupported checkpoint format: {payload.get('format')}")
        cfg = TrainConfig.from_mapping(payload["config"])
        trainer = cls(cities, cfg)
        if trainer.attr_dim != payload["attr_dim"]:
            raise DataFormatError(
                f"checkpoint attribute dim {payload['attr_dim']} != cities' {trainer.attr_dim}"
            )
        trainer.generator.load_state_dict(payload["generator"])
        trainer.critic.load_state_dict(payload["critic"])
        trainer.opt_g.load_state_dict(payload["opt_g"])
        trainer.opt_d.load_state_dict(payload["opt_d"])
        trainer.torch_gen.set_state(payload["torch_rng"])
        trainer.np_rng.bit_generator.state = payload["np_rng"]
        trainer.iteration = payload["iteration"]
        trainer.loss_history = [tuple(row) for row in payload["loss_history"]]
        trainer.consecutive_skips = payload["consecutive_skips"]
        return trainer


def train(cities: Sequence[City], cfg: TrainConfig, **run_kwargs) -> OdgnTrainer:
    """Build a trainer, run it to completion and return it."""
    trainer = OdgnTrainer(cities, cfg)
    trainer.run(**run_kwargs)
    return trainer


def load_generator(path: Union[str, Path]) -> tuple[FlowGenerator, TrainConfig, int]:
    """Load just the trained generator from a checkpoint (for generation)."""
    payload = torch.load(Path(path), weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"unsupported checkpoint format: {payload.get('format')}")
    cfg = TrainConfig.from_mapping(payload["config"])
    enc_cfg = EncoderConfig(
        attr_dim=payload["attr_dim"],
        noise_dim=cfg.noise_dim,
        embed_dim=cfg.embed_dim,
        heads=cfg.heads,
        layers=cfg.gat_layers,
    )
    generator = FlowGenerator(enc_cfg)
    generator.load_state_dict(payload["generator"])
    generator.eval()
    return generator, cfg, payload["attr_dim"]


def generate_od_samples(
    generator: FlowGenerator,
    cfg: TrainConfig,
    city: City,
    n_samples: int,
    seed: int,
) -> list[ODNetwork]:
    """Draw n_samples noise tensors and decode one OD network per draw."""
    if city.attr_dim != generator.encoder.cfg.attr_dim:
        raise DataFormatError(
            f"city attribute dim {city.attr_dim} != checkpoint attribute dim "
            f"{generator.encoder.cfg.attr_dim}"
        )
    bundle = CityBundle.from_city(city)
    gen = torch.Generator().manual_seed(seed)
    nets = []
    for _ in range(n_samples):
        noise = torch.randn(city.n_regions, cfg.noise_dim, generator=gen)
        with torch.no_grad():
            flows = generator(bundle.features, bundle.adjacencies, noise)
        nets.append(ODNetwork(flows=flows.numpy().astype(float)))
    return nets
