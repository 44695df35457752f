"""
Conditional scenario generator trained as a Wasserstein GAN with gradient penalty.

Generator: a conditioning stack (strided convs + dense) encodes the backward
variations; its output, the analysis vector and the latent vector feed a
simulator stack (dense + transpose convs) that emits A x Wf forward
variations. Discriminator: strided convs with spectrally normalized kernels
over the full A x W window, the analysis vector appended before the final
dense critic layer.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    NonFiniteError,
    TrainingDivergedError,
)
from app.db.models import Checkpoint, GanHyperParams, MarketWindow, ScenarioSet
from app.engine import ops
from app.engine.graph import Graph, Tensor, input_gradient
from app.engine.optim import AdamState, adam_step
from app.engine.spectral import (
    SpectralState,
    kernel_matrix,
    power_iteration,
    spectral_normalize_tensor,
)
from app.services.market_data import denormalize_path

logger = logging.getLogger(__name__)

TCONV_STRIDE = 2
NORM_EPS = 1e-12
SAMPLE_BATCH = 64

ParamShapes = Dict[str, Tuple[int, ...]]


# ---------------------------------------------------------------------------
# Architecture
# ---------------------------------------------------------------------------


def conv_lengths(length: int, layers: int, kernel_size: int, stride: int) -> List[int]:
    """Sequence lengths after each strided conv (ceil division)."""
    lengths = []
    for _ in range(layers):
        length = ops.same_padding(length, kernel_size, stride)[0]
        lengths.append(length)
    return lengths


def generator_shapes(hp: GanHyperParams) -> ParamShapes:
    a, c, k = hp.assets, hp.cond_channels, hp.kernel_size
    shapes: ParamShapes = {}
    in_channels = a
    for i in range(hp.cond_layers):
        shapes[f"g.cond.conv{i}.w"] = (c, in_channels, k)
        shapes[f"g.cond.conv{i}.b"] = (c,)
        in_channels = c
    cond_length = conv_lengths(hp.wb, hp.cond_layers, k, hp.stride)[-1]
    shapes["g.cond.dense.w"] = (a, c * cond_length)
    shapes["g.cond.dense.b"] = (a,)
    sim_in = a + a + hp.latent_size
    shapes["g.sim.dense.w"] = (hp.wf * a, sim_in)
    shapes["g.sim.dense.b"] = (hp.wf * a,)
    channels = hp.simulator_channels
    for j in range(hp.tconv_layers):
        shapes[f"g.sim.tconv{j}.w"] = (channels, channels // 2, k)
        shapes[f"g.sim.tconv{j}.b"] = (channels // 2,)
        channels //= 2
    return shapes


def discriminator_shapes(hp: GanHyperParams) -> ParamShapes:
    a, k = hp.assets, hp.kernel_size
    shapes: ParamShapes = {}
    for i in range(hp.disc_layers):
        shapes[f"d.conv{i}.w"] = (a * 2 ** (i + 1), a * 2**i, k)
        shapes[f"d.conv{i}.b"] = (a * 2 ** (i + 1),)
    final_length = conv_lengths(hp.window, hp.disc_layers, k, hp.stride)[-1]
    features = a * 2**hp.disc_layers * final_length + a
    shapes["d.dense.w"] = (1, features)
    shapes["d.dense.b"] = (1,)
    return shapes


def _fan_in(shape: Tuple[int, ...], name: str) -> int:
    if ".tconv" in name:
        return shape[0] * shape[2]
    return int(np.prod(shape[1:]))


def _init_params(shapes: ParamShapes, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = ops.uniform_init(shape, _fan_in(shape, name), rng)
    return params


def _as_batch(array: np.ndarray, ndim: int, what: str) -> Tuple[np.ndarray, bool]:
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == ndim - 1:
        return array[None], True
    if array.ndim != ndim:
        raise DimensionError(f"{what} has shape {array.shape}")
    return array, False


@dataclass
class Generator:
    hp: GanHyperParams
    params: Dict[str, np.ndarray]
    adam: AdamState

    def graph_forward(
        self,
        p: Dict[str, Tensor],
        backward: Tensor,
        analysis: Tensor,
        latent: Tensor,
    ) -> Tensor:
        hp = self.hp
        n = backward.shape[0]
        if backward.shape[1:] != (hp.assets, hp.wb):
            raise DimensionError(
                f"backward variations {backward.shape[1:]} != ({hp.assets}, {hp.wb})"
            )
        if analysis.shape != (n, hp.assets) or latent.shape != (n, hp.latent_size):
            raise DimensionError(
                f"analysis {analysis.shape} / latent {latent.shape} do not match a batch of {n}"
            )

        h = backward
        for i in range(hp.cond_layers):
            h = ops.conv1d(h, p[f"g.cond.conv{i}.w"], p[f"g.cond.conv{i}.b"], hp.stride)
            h = ops.relu(h)
        h = ops.reshape(h, (n, h.value[0].size))
        cond = ops.relu(ops.dense(h, p["g.cond.dense.w"], p["g.cond.dense.b"]))

        s = ops.concat([cond, analysis, latent], axis=1)
        s = ops.relu(ops.dense(s, p["g.sim.dense.w"], p["g.sim.dense.b"]))
        s = ops.reshape(s, (n, hp.simulator_channels, hp.simulator_length))
        for j in range(hp.tconv_layers):
            s = ops.transpose_conv1d(s, p[f"g.sim.tconv{j}.w"], p[f"g.sim.tconv{j}.b"], TCONV_STRIDE)
            if j < hp.tconv_layers - 1:
                s = ops.relu(s)
        return s

    def forward(self, backward: np.ndarray, analysis: np.ndarray, latent: np.ndarray) -> np.ndarray:
        """Forward variations for one conditioning window (A x Wb) or a batch of them."""
        backward, single = _as_batch(backward, 3, "backward variations")
        analysis, _ = _as_batch(analysis, 2, "analysis vector")
        latent, _ = _as_batch(latent, 2, "latent vector")
        graph = Graph()
        with graph.paused():
            p = {name: graph.constant(value) for name, value in self.params.items()}
            out = self.graph_forward(
                p, graph.constant(backward), graph.constant(analysis), graph.constant(latent)
            ).value
        return out[0] if single else out


@dataclass
class Discriminator:
    hp: GanHyperParams
    params: Dict[str, np.ndarray]
    spectral: Dict[str, SpectralState]
    adam: AdamState

    @property
    def kernel_names(self) -> List[str]:
        return [f"d.conv{i}.w" for i in range(self.hp.disc_layers)]

    def update_spectral(self, iterations: Optional[int] = None) -> None:
        """Advance every kernel's power iteration."""
        iterations = self.hp.sn_iterations if iterations is None else iterations
        for name in self.kernel_names:
            power_iteration(kernel_matrix(self.params[name]), self.spectral[name], iterations)

    def refresh_spectral(self) -> None:
        """Iterate every kernel's estimate to convergence (sn_tol, capped at sn_max_iterations)."""
        for name in self.kernel_names:
            power_iteration(
                kernel_matrix(self.params[name]),
                self.spectral[name],
                iterations=0,
                tol=self.hp.sn_tol,
                max_iterations=self.hp.sn_max_iterations,
            )

    def normalized_kernels(self) -> Dict[str, np.ndarray]:
        """Kernels divided by their current singular value estimate."""
        graph = Graph()
        with graph.paused():
            return {
                name: spectral_normalize_tensor(graph.constant(self.params[name]), self.spectral[name]).value
                for name in self.kernel_names
            }

    def graph_critic(self, p: Dict[str, Tensor], x: Tensor, analysis: Tensor) -> Tensor:
        hp = self.hp
        n = x.shape[0]
        if x.shape[1:] != (hp.assets, hp.window):
            raise DimensionError(f"critic input {x.shape[1:]} != ({hp.assets}, {hp.window})")
        h = x
        for i, name in enumerate(self.kernel_names):
            kernel = spectral_normalize_tensor(p[name], self.spectral[name])
            h = ops.conv1d(h, kernel, p[f"d.conv{i}.b"], hp.stride)
            h = ops.leaky_relu(h, hp.leaky_slope)
        h = ops.reshape(h, (n, h.value[0].size))
        h = ops.concat([h, analysis], axis=1)
        out = ops.dense(h, p["d.dense.w"], p["d.dense.b"])
        return ops.reshape(out, (n,))

    def critic(self, x: np.ndarray, analysis: np.ndarray) -> np.ndarray:
        """Critic values of full windows (A x W or N x A x W)."""
        x, single = _as_batch(x, 3, "critic input")
        analysis, _ = _as_batch(analysis, 2, "analysis vector")
        graph = Graph()
        with graph.paused():
            p = {name: graph.constant(value) for name, value in self.params.items()}
            out = self.graph_critic(p, graph.constant(x), graph.constant(analysis)).value
        return out[0] if single else out


def _adam_for(hp: GanHyperParams) -> AdamState:
    return AdamState(lr=hp.learning_rate, beta1=hp.beta1, beta2=hp.beta2, eps=hp.adam_eps)


def build_networks(hp: GanHyperParams, seed: int) -> Tuple[Generator, Discriminator]:
    """Freshly initialized networks; the same seed gives identical parameters."""
    hp.check()
    rng = np.random.default_rng(seed)
    generator = Generator(hp, _init_params(generator_shapes(hp), rng), _adam_for(hp))
    d_params = _init_params(discriminator_shapes(hp), rng)
    spectral = {
        f"d.conv{i}.w": SpectralState.initial(d_params[f"d.conv{i}.w"].shape[0], rng)
        for i in range(hp.disc_layers)
    }
    discriminator = Discriminator(hp, d_params, spectral, _adam_for(hp))
    discriminator.update_spectral(hp.sn_warmup)
    discriminator.refresh_spectral()
    return generator, discriminator


def generator_forward(
    generator: Generator, backward: np.ndarray, analysis: np.ndarray, latent: np.ndarray
) -> np.ndarray:
    return generator.forward(backward, analysis, latent)


# ---------------------------------------------------------------------------
# Training steps
# ---------------------------------------------------------------------------


def interpolate(real: np.ndarray, fake: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Per-sample eps * real + (1 - eps) * fake."""
    eps = np.asarray(eps, dtype=np.float64).reshape((-1,) + (1,) * (np.ndim(real) - 1))
    return eps * real + (1.0 - eps) * fake


@dataclass
class CriticResult:
    wasserstein: float
    gp: float
    loss: float
    grads: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def critic_objective(
    discriminator: Discriminator,
    real: np.ndarray,
    fake: np.ndarray,
    analysis: np.ndarray,
    eps: np.ndarray,
    param_names: Optional[Sequence[str]] = None,
) -> CriticResult:
    """
    D(fake) - D(real) + gp_weight * (||grad D(x_hat)|| - 1)^2, batch means,
    with gradients for the discriminator parameters.
    """
    hp = discriminator.hp
    if real.shape != fake.shape:
        raise DimensionError(f"real {real.shape} and fake {fake.shape} batches differ")
    n = real.shape[0]
    graph = Graph(higher_order=True)
    names = list(param_names) if param_names is not None else list(discriminator.params)
    p = {
        name: graph.variable(value) if name in names else graph.constant(value)
        for name, value in discriminator.params.items()
    }
    analysis_t = graph.constant(analysis)
    x_hat = graph.variable(interpolate(real, fake, eps))

    d_real = ops.mean(discriminator.graph_critic(p, graph.constant(real), analysis_t))
    d_fake = ops.mean(discriminator.graph_critic(p, graph.constant(fake), analysis_t))
    d_hat = discriminator.graph_critic(p, x_hat, analysis_t)

    grad_x = input_gradient(ops.total(d_hat), x_hat)
    squared = ops.sum_to(ops.square(grad_x), (n, 1, 1))
    norms = ops.sqrt(ops.add(squared, graph.constant(np.full((n, 1, 1), NORM_EPS))))
    gap = ops.sub(norms, graph.constant(np.ones((n, 1, 1))))
    gp = ops.mean(ops.square(gap))

    loss = ops.add(ops.sub(d_fake, d_real), ops.scale(gp, hp.gp_weight))
    grads = graph.gradients(loss, [p[name] for name in names])
    return CriticResult(
        wasserstein=d_real.item() - d_fake.item(),
        gp=gp.item(),
        loss=loss.item(),
        grads={name: g.value for name, g in zip(names, grads)},
    )


def critic_step(
    discriminator: Discriminator,
    real: np.ndarray,
    fake: np.ndarray,
    analysis: np.ndarray,
    rng: np.random.Generator,
) -> CriticResult:
    """
    Spectral update, penalized critic objective, one Adam step on D.

    The singular vector estimates are re-converged on the updated kernels, so
    every normalized kernel has top singular value 1 between steps.
    """
    eps = rng.uniform(size=real.shape[0])
    discriminator.update_spectral()
    result = critic_objective(discriminator, real, fake, analysis, eps)
    discriminator.params = adam_step(discriminator.params, result.grads, discriminator.adam)
    discriminator.refresh_spectral()
    return result


@dataclass
class GeneratorResult:
    loss: float
    grads: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def generator_objective(
    generator: Generator,
    discriminator: Discriminator,
    backward: np.ndarray,
    analysis: np.ndarray,
    latent: np.ndarray,
) -> GeneratorResult:
    """-mean D(backward ++ G(backward, analysis, latent)) and its G gradients."""
    graph = Graph()
    g = {name: graph.variable(value) for name, value in generator.params.items()}
    d = {name: graph.constant(value) for name, value in discriminator.params.items()}
    backward_t = graph.constant(backward)
    analysis_t = graph.constant(analysis)
    fake_forward = generator.graph_forward(g, backward_t, analysis_t, graph.constant(latent))
    fake = ops.concat([backward_t, fake_forward], axis=2)
    loss = ops.scale(ops.mean(discriminator.graph_critic(d, fake, analysis_t)), -1.0)
    names = list(generator.params)
    grads = graph.gradients(loss, [g[name] for name in names])
    return GeneratorResult(loss=loss.item(), grads={n: t.value for n, t in zip(names, grads)})


def generator_step(
    generator: Generator,
    discriminator: Discriminator,
    backward: np.ndarray,
    analysis: np.ndarray,
    rng: np.random.Generator,
) -> GeneratorResult:
    """Fresh latents per sample, one Adam step on G."""
    latent = rng.standard_normal((backward.shape[0], generator.hp.latent_size))
    result = generator_objective(generator, discriminator, backward, analysis, latent)
    generator.params = adam_step(generator.params, result.grads, generator.adam)
    return result


# ---------------------------------------------------------------------------
# Diversity
# ---------------------------------------------------------------------------


def variation_diversity(variations: np.ndarray) -> float:
    """
    Mean pairwise Euclidean distance between n variation matrices (n x A x Wf),
    divided by sqrt(A * Wf).

    The result is a per-element RMS distance: two scenarios differing by a
    constant c in every entry score exactly c whatever the shape, which a
    division by A * Wf would shrink to c / sqrt(A * Wf).
    """
    variations = np.asarray(variations, dtype=np.float64)
    n = variations.shape[0]
    if n < 2:
        raise ContractError(f"diversity needs at least 2 scenarios, got {n}")
    flat = variations.reshape(n, -1)
    total = 0.0
    for i in range(n - 1):
        total += float(np.linalg.norm(flat[i + 1 :] - flat[i], axis=1).sum())
    pairs = n * (n - 1) / 2
    return total / pairs / math.sqrt(flat.shape[1])


def path_diversity(scenarios: ScenarioSet) -> float:
    """Diversity of the paths relative to the anchor, comparable across sources."""
    return variation_diversity(scenarios.paths / scenarios.anchor[None, :, None])


def diversity_score(scenarios: ScenarioSet) -> float:
    """
    Mean pairwise distance between the scenarios' normalized variations.

    Sets without variations (historical ones) use paths relative to the anchor.
    """
    if scenarios.variations is not None:
        return variation_diversity(scenarios.variations)
    return path_diversity(scenarios)


# ---------------------------------------------------------------------------
# Checkpoint mapping
# ---------------------------------------------------------------------------


def to_checkpoint(
    generator: Generator,
    discriminator: Discriminator,
    tickers: Sequence[str],
    seed: int,
    step: int,
) -> Checkpoint:
    arrays: Dict[str, np.ndarray] = {}
    arrays.update(generator.params)
    arrays.update(discriminator.params)
    for prefix, adam in (("adam.g", generator.adam), ("adam.d", discriminator.adam)):
        for name, value in adam.m.items():
            arrays[f"{prefix}.m.{name}"] = value
        for name, value in adam.v.items():
            arrays[f"{prefix}.v.{name}"] = value
    for name, state in discriminator.spectral.items():
        arrays[f"sn.{name}.u"] = state.u
    extra = {
        "adam.g.step": str(generator.adam.step),
        "adam.d.step": str(discriminator.adam.step),
    }
    for name, state in discriminator.spectral.items():
        extra[f"sn.{name}.iterations"] = str(state.iterations)
    return Checkpoint(
        hp=generator.hp,
        tickers=tuple(tickers),
        arrays={name: np.array(value, dtype=np.float64) for name, value in arrays.items()},
        seed=seed,
        step=step,
        extra=extra,
    )


def networks_from_checkpoint(ckpt: Checkpoint) -> Tuple[Generator, Discriminator]:
    hp = ckpt.hp
    hp.check()
    arrays = ckpt.arrays

    def pick(shapes: ParamShapes) -> Dict[str, np.ndarray]:
        params = {}
        for name, shape in shapes.items():
            if name not in arrays:
                raise ConfigError(f"Checkpoint is missing parameter {name}")
            if arrays[name].shape != shape:
                raise ConfigError(
                    f"Checkpoint parameter {name} has shape {arrays[name].shape}, expected {shape}"
                )
            params[name] = np.array(arrays[name], dtype=np.float64)
        return params

    def restore_adam(prefix: str) -> AdamState:
        adam = _adam_for(hp)
        adam.step = int(ckpt.extra.get(f"{prefix}.step", "0"))
        for name, value in arrays.items():
            if name.startswith(f"{prefix}.m."):
                adam.m[name[len(prefix) + 3 :]] = np.array(value)
            elif name.startswith(f"{prefix}.v."):
                adam.v[name[len(prefix) + 3 :]] = np.array(value)
        return adam

    generator = Generator(hp, pick(generator_shapes(hp)), restore_adam("adam.g"))
    d_params = pick(discriminator_shapes(hp))
    spectral = {}
    for i in range(hp.disc_layers):
        name = f"d.conv{i}.w"
        key = f"sn.{name}.u"
        if key not in arrays:
            raise ConfigError(f"Checkpoint is missing spectral state {key}")
        spectral[name] = SpectralState(
            u=np.array(arrays[key]),
            iterations=int(ckpt.extra.get(f"sn.{name}.iterations", "0")),
        )
    discriminator = Discriminator(hp, d_params, spectral, restore_adam("adam.d"))
    return generator, discriminator


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    log: List[Dict[str, float]]
    collapsed: bool
    final_diversity: Optional[float]


class GanTrainer:
    """
    WGAN-GP loop: n_critic critic steps, then one generator step.

    Randomness for step k comes from default_rng([seed, k]), so resuming
    from a checkpoint reproduces an uninterrupted run.
    """

    def __init__(
        self,
        dataset: Sequence[MarketWindow],
        hp: GanHyperParams,
        seed: int,
        tickers: Sequence[str] = (),
        resume: Optional[Checkpoint] = None,
    ):
        if not dataset:
            raise ConfigError("Training dataset is empty")
        hp.check()
        for window in dataset:
            if window.backward.shape != (hp.assets, hp.wb) or window.forward.shape != (hp.assets, hp.wf):
                raise ConfigError(
                    f"Window shapes {window.backward.shape}/{window.forward.shape} do not match "
                    f"assets={hp.assets}, wb={hp.wb}, wf={hp.wf}"
                )
        self.hp = hp
        self.seed = seed
        self.tickers = tuple(tickers) or tuple(dataset[0].tickers)
        self.backward = np.stack([w.backward for w in dataset])
        self.forward = np.stack([w.forward for w in dataset])
        self.analysis = np.stack([w.analysis for w in dataset])

        if resume is not None:
            schedule = {"training_steps", "log_every", "checkpoint_every"}
            if resume.hp.model_dump(exclude=schedule) != hp.model_dump(exclude=schedule):
                raise ConfigError("Checkpoint hyperparameters differ from the requested ones")
            if resume.seed != seed:
                raise ConfigError(f"Checkpoint seed {resume.seed} differs from {seed}")
            self.generator, self.discriminator = networks_from_checkpoint(
                Checkpoint(hp, resume.tickers, resume.arrays, resume.seed, resume.step,
                           resume.format_version, resume.extra)
            )
            self.step = resume.step
            logger.info(f"Resuming training from step {self.step}")
        else:
            self.generator, self.discriminator = build_networks(hp, seed)
            self.step = 0
        self.log: List[Dict[str, float]] = []
        self.last_diversity: Optional[float] = None

    def _batch(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.backward.shape[0], size=self.hp.batch_size)

    def train_step(self) -> Dict[str, float]:
        hp = self.hp
        rng = np.random.default_rng([self.seed, self.step])
        components = {"critic_loss": math.nan, "gp": math.nan, "generator_loss": math.nan}
        try:
            for _ in range(hp.n_critic):
                idx = self._batch(rng)
                backward, analysis = self.backward[idx], self.analysis[idx]
                real = np.concatenate([backward, self.forward[idx]], axis=2)
                latent = rng.standard_normal((idx.size, hp.latent_size))
                fake_forward = self.generator.forward(backward, analysis, latent)
                fake = np.concatenate([backward, fake_forward], axis=2)
                critic = critic_step(self.discriminator, real, fake, analysis, rng)
                components.update(critic_loss=critic.loss, gp=critic.gp, wasserstein=critic.wasserstein)

            idx = self._batch(rng)
            gen = generator_step(
                self.generator, self.discriminator, self.backward[idx], self.analysis[idx], rng
            )
            components["generator_loss"] = gen.loss
        except NonFiniteError as exc:
            raise TrainingDivergedError(str(exc), self.step, components) from exc

        if not all(math.isfinite(v) for v in components.values()):
            raise TrainingDivergedError("Non-finite loss", self.step, components)
        self.step += 1
        return components

    def diversity(self) -> float:
        """Diversity of generated variations for the first training window."""
        rng = np.random.default_rng([self.seed, self.step, 1])
        k = max(self.hp.diversity_samples, 2)
        backward = np.repeat(self.backward[:1], k, axis=0)
        analysis = np.repeat(self.analysis[:1], k, axis=0)
        latent = rng.standard_normal((k, self.hp.latent_size))
        return variation_diversity(self.generator.forward(backward, analysis, latent))

    def checkpoint(self) -> Checkpoint:
        return to_checkpoint(self.generator, self.discriminator, self.tickers, self.seed, self.step)

    def run(
        self,
        on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
        on_log: Optional[Callable[[Dict[str, float]], None]] = None,
    ) -> TrainingResult:
        hp = self.hp
        logger.info(
            f"Training for {hp.training_steps - self.step} steps "
            f"(assets={hp.assets}, batch={hp.batch_size}, n_critic={hp.n_critic}, seed={self.seed})"
        )
        while self.step < hp.training_steps:
            components = self.train_step()
            if self.step % hp.log_every == 0 or self.step == hp.training_steps:
                self.last_diversity = self.diversity()
                row = {
                    "step": self.step,
                    "critic_loss": components["critic_loss"],
                    "gp": components["gp"],
                    "generator_loss": components["generator_loss"],
                    "diversity": self.last_diversity,
                }
                self.log.append(row)
                if on_log is not None:
                    on_log(row)
                logger.info(
                    f"step {self.step}: critic={row['critic_loss']:.5f} gp={row['gp']:.5f} "
                    f"generator={row['generator_loss']:.5f} diversity={row['diversity']:.5f}"
                )
            if on_checkpoint is not None and hp.checkpoint_every and self.step % hp.checkpoint_every == 0:
                on_checkpoint(self.checkpoint())

        final_diversity = self.last_diversity if self.last_diversity is not None else self.diversity()
        collapsed = final_diversity < hp.collapse_threshold
        if collapsed:
            logger.warning(
                f"Generator looks mode collapsed: diversity {final_diversity:.3g} < "
                f"{hp.collapse_threshold:.3g}"
            )
        return TrainingResult(self.checkpoint(), list(self.log), collapsed, final_diversity)


def train(
    dataset: Sequence[MarketWindow],
    hp: GanHyperParams,
    seed: int,
    tickers: Sequence[str] = (),
    resume: Optional[Checkpoint] = None,
    on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
) -> TrainingResult:
    return GanTrainer(dataset, hp, seed, tickers, resume).run(on_checkpoint)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


class ScenarioGenerator:
    """Samples forward scenarios from a trained generator."""

    def __init__(self, generator: Generator, tickers: Sequence[str] = ()):
        self.generator = generator
        self.tickers = tuple(tickers)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ScenarioGenerator":
        generator, _ = networks_from_checkpoint(ckpt)
        return cls(generator, ckpt.tickers)

    def _check_window(self, window: MarketWindow) -> None:
        hp = self.generator.hp
        if window.n_assets != hp.assets:
            raise ConfigError(
                f"Model was trained on {hp.assets} assets, window has {window.n_assets}"
            )
        if self.tickers and window.tickers and tuple(window.tickers) != self.tickers:
            raise ConfigError(
                f"Model tickers {self.tickers} do not match window tickers {tuple(window.tickers)}"
            )
        if window.backward.shape[1] != hp.wb:
            raise ConfigError(f"Window has {window.backward.shape[1]} backward days, model needs {hp.wb}")

    def latents(self, n: int, seed: int, start: int = 0) -> np.ndarray:
        """Draw i uses default_rng([seed, i]) so any subset is reproducible on its own."""
        size = self.generator.hp.latent_size
        return np.stack(
            [np.random.default_rng([seed, i]).standard_normal(size) for i in range(start, start + n)]
        )

    def sample_variations(self, window: MarketWindow, n: int, seed: int) -> np.ndarray:
        self._check_window(window)
        if n < 1:
            raise ContractError(f"need at least one scenario, got {n}")
        chunks = []
        for start in range(0, n, SAMPLE_BATCH):
            count = min(SAMPLE_BATCH, n - start)
            latent = self.latents(count, seed, start)
            backward = np.repeat(window.backward[None], count, axis=0)
            analysis = np.repeat(window.analysis[None], count, axis=0)
            chunks.append(self.generator.forward(backward, analysis, latent))
        return np.concatenate(chunks, axis=0)

    def sample(self, window: MarketWindow, n: int = 250, seed: int = 0) -> ScenarioSet:
        variations = self.sample_variations(window, n, seed)
        paths = denormalize_path(variations, window)
        return ScenarioSet(
            anchor=window.anchor_raw,
            paths=paths,
            source="gan",
            tickers=tuple(window.tickers) or self.tickers,
            variations=variations,
        )


def generate_scenarios(ckpt: Checkpoint, window: MarketWindow, n: int = 250, seed: int = 0) -> ScenarioSet:
    return ScenarioGenerator.from_checkpoint(ckpt).sample(window, n, seed)
