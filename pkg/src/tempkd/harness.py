"""Experiment orchestration: seeded runs, the per-batch control loop, metrics.

Every stochastic draw flows from one root seed split into independent
named streams, so the student path (data, init, batch order) consumes the
same draws whether or not the agent machinery is active. That is what
makes the fixed-temperature baseline and a forced-default controller run
bit-identical.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import (
    ReplayBuffer,
    act_batch,
    compute_advantages,
    make_actor,
    make_critic,
    ppo_update,
)
from .config import AblationFlags, ExperimentConfig
from .data import DatasetSplits, InstanceSet, load_dataset
from .distill import evaluate_model, student_update_step, train_teacher
from .explore import exploration_step, mixup_pairs, rank_by_entropy, select_bands
from .nn import Mlp, SgdMomentum, softmax_with_temperature
from .rewards import (
    Corrector,
    EpisodeHistory,
    StateUpdater,
    calibrate_rewards,
    corrector_train_step,
    make_estimator,
    measure_batch_reward,
    update_states,
    warmup_scale,
)
from .state import build_state_batch

STREAMS = (
    "data",
    "teacher_init",
    "teacher_batches",
    "student_init",
    "student_batches",
    "agent_init",
    "agent_actions",
    "explore",
)


def split_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Spawn one independent generator per named consumer from a root seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    temperature_mean: float
    temperature_min: float
    temperature_max: float
    reward_raw_mean: float
    reward_shaped_mean: float
    corrector_loss: float
    actor_loss: float
    critic_loss: float
    clip_fraction: float
    wall_seconds: float


# wall_seconds stays out of the persisted schema so equal-seed runs stay
# byte-identical on disk.
CSV_COLUMNS = [f for f in EpochMetrics.__dataclass_fields__ if f != "wall_seconds"]


def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    return format(value, ".6g")


def emit_metrics(metrics: list[EpochMetrics], path) -> None:
    """Write metrics.csv: a header row plus one row per epoch."""
    lines = [",".join(CSV_COLUMNS)]
    for row in metrics:
        values = asdict(row)
        lines.append(",".join(_fmt(values[c]) for c in CSV_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def save_mlp(path, model: Mlp) -> None:
    arrays = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_mlp(path) -> Mlp:
    with np.load(path) as bundle:
        n = len(bundle.files) // 2
        return Mlp.from_params(
            [bundle[f"w{i}"] for i in range(n)],
            [bundle[f"b{i}"] for i in range(n)],
        )


@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: list[EpochMetrics]
    summary: dict


@dataclass
class _BatchStats:
    loss: float
    temperatures: np.ndarray
    raw_reward: float = 0.0
    shaped_reward: float = 0.0
    corrector_loss: float = 0.0
    actor_loss: float = 0.0
    critic_loss: float = 0.0
    clip_fraction: float = 0.0


class _Runner:
    def __init__(self, config: ExperimentConfig):
        self.cfg = config
        self.out_dir = Path(config.out_dir) if config.out_dir else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            # fail on unwritable output before any training happens
            (self.out_dir / "config.json").write_text(config.model_dump_json(indent=2) + "\n")
        self.rngs = split_rngs(config.seed)
        self.data: DatasetSplits = load_dataset(
            config.dataset, config.reward.probe_size, config.val_fraction, self.rngs["data"])
        self.num_classes = self.data.train.num_classes
        self.warnings: list[str] = []

        if config.teacher_path:
            self.teacher = load_mlp(config.teacher_path)
        else:
            self.teacher = train_teacher(
                self.data.train.features,
                self.data.train.labels,
                config.teacher_layers,
                self.num_classes,
                epochs=config.teacher_epochs,
                lr=config.kd.teacher_lr,
                batch_size=config.kd.batch_size,
                rng=self.rngs["teacher_init"],
            )
        _, self.teacher_accuracy = evaluate_model(
            self.teacher, self.data.train.features, self.data.train.labels)

        dim = self.data.train.features.shape[1]
        self.student = Mlp([dim, *config.student_layers, self.num_classes], self.rngs["student_init"])
        self.student_opt = SgdMomentum(self.student.params(), config.kd.student_lr)
        _, untrained_accuracy = evaluate_model(
            self.student, self.data.train.features, self.data.train.labels)
        if self.teacher_accuracy <= untrained_accuracy:
            self.warnings.append(
                f"teacher accuracy {self.teacher_accuracy:.4f} does not exceed "
                f"the untrained student's {untrained_accuracy:.4f}")

        self.uses_agent = config.controller == "rlkd"
        if self.uses_agent:
            agent_rng = self.rngs["agent_init"]
            self.actor = make_actor(agent_rng)
            self.critic = make_critic(agent_rng)
            self.actor_opt = SgdMomentum(self.actor.params(), config.ppo.actor_lr)
            self.critic_opt = SgdMomentum(self.critic.params(), config.ppo.critic_lr)
            self.corrector = Corrector(agent_rng)
            self.corrector_opt = SgdMomentum(self.corrector.params(), config.reward.corrector_lr)
            self.updater = StateUpdater(agent_rng)
            self.updater_opt = SgdMomentum(self.updater.params(), config.reward.updater_lr)
            self.estimator = make_estimator(agent_rng)
            self.estimator_opt = SgdMomentum(self.estimator.params(), config.reward.updater_lr)
            self.history = EpisodeHistory(config.reward.history_window)

        # the teacher is frozen, so its logits on the fixed train set never change
        self.train_teacher_logits = self.teacher.forward(self.data.train.features)
        self.epoch = 0
        self.last_ranking = None

    # -- per-batch machinery -------------------------------------------------

    def _agent_learning_cycle(self, instances: InstanceSet, teacher_logits, *, shadow: bool) -> _BatchStats:
        """One full control cycle for a batch episode.

        With ``shadow=True`` the student update runs on a throwaway copy of
        the student and its optimizer, so only the agent-side models learn.
        """
        cfg = self.cfg
        events = []
        targets = instances.target_distributions()
        student_logits = self.student.forward(instances.features)
        states = build_state_batch(
            softmax_with_temperature(teacher_logits, 1.0),
            softmax_with_temperature(student_logits, 1.0),
            include_uncertainty=not cfg.ablations.uncertainty_off,
        )
        assert np.all((states >= 0.0) & (states <= 1.0)), "state observation left [0, 1]"
        decision = act_batch(states, self.actor, self.critic, self.rngs["agent_actions"], cfg.ppo.sigma_floor)
        if cfg.force_default_temperature:
            temperatures = np.full(len(instances), cfg.kd.default_temperature)
        else:
            temperatures = decision.temperature
        assert np.all((temperatures > 0.0) & (temperatures < 10.0)), "temperature left (0, 10)"

        if shadow:
            target_student = self.student.copy()
            target_opt = self.student_opt.copy()
        else:
            target_student = self.student
            target_opt = self.student_opt
        before = target_student.copy()
        loss, stepped = student_update_step(
            target_student, target_opt, instances.features, targets,
            teacher_logits, temperatures, cfg.kd)
        events.append("student_update")
        if not stepped:
            self.warnings.append(f"student step skipped at epoch {self.epoch} (non-finite loss/gradient)")

        raw_reward = measure_batch_reward(
            before, target_student, self.data.probe.features, self.data.probe.labels)
        shaped_reward = warmup_scale(raw_reward, self.epoch, cfg.reward.warmup_n)
        events.append("reward")

        buffer = ReplayBuffer.from_decision(states, decision)
        corrector_loss = 0.0
        if cfg.ablations.calibration_off:
            # without redistribution, split the shaped reward evenly
            buffer.set_rewards(np.full(len(buffer), shaped_reward / len(buffer)))
        else:
            self.history.append(states, decision.raw_action, shaped_reward)
            corrector_loss, _ = corrector_train_step(
                self.history.episodes, self.corrector, self.corrector_opt, cfg.reward)
            batch = calibrate_rewards(
                states, decision.raw_action, shaped_reward, self.corrector, raw_reward=raw_reward)
            assert batch.telescoping_gap() == 0.0, "per-instance rewards failed to telescope"
            buffer.set_rewards(batch.per_instance_rewards)
            pooled_states, pooled_returns = self.history.pooled_states_returns()
            adjusted, _ = update_states(
                pooled_states, pooled_returns, self.updater, self.estimator,
                self.updater_opt, self.estimator_opt)
            buffer.replace_states(adjusted[-len(buffer):])
        events.append("calibration")

        compute_advantages(buffer, cfg.ppo)
        diag = ppo_update(buffer, self.actor, self.critic, self.actor_opt, self.critic_opt, cfg.ppo)
        events.append("ppo_update")
        assert events == ["student_update", "reward", "calibration", "ppo_update"]
        return _BatchStats(
            loss=loss,
            temperatures=temperatures,
            raw_reward=raw_reward,
            shaped_reward=shaped_reward,
            corrector_loss=corrector_loss,
            actor_loss=diag.actor_loss,
            critic_loss=diag.critic_loss,
            clip_fraction=diag.clip_fraction,
        )

    def _fixed_batch(self, instances: InstanceSet, teacher_logits) -> _BatchStats:
        temperatures = np.full(len(instances), self.cfg.kd.default_temperature)
        loss, stepped = student_update_step(
            self.student, self.student_opt, instances.features,
            instances.target_distributions(), teacher_logits, temperatures, self.cfg.kd)
        if not stepped:
            self.warnings.append(f"student step skipped at epoch {self.epoch} (non-finite loss/gradient)")
        return _BatchStats(loss=loss, temperatures=temperatures)

    # -- epoch loop ------------------------------------------------------------

    def _prepare_exploration(self) -> tuple[InstanceSet | None, np.ndarray | None]:
        cfg = self.cfg
        active = (
            self.uses_agent
            and not cfg.ablations.exploration_off
            and cfg.exploration.extra_steps_per_batch > 0
            and self.epoch < cfg.phase_epochs
        )
        if not active:
            return None, None
        self.last_ranking = rank_by_entropy(self.data.train.features, self.student, epoch=self.epoch)
        high_idx, low_idx = select_bands(self.last_ranking, cfg.exploration)
        mixed, mixed_teacher_logits = mixup_pairs(
            self.data.train.subset(high_idx), self.data.train.subset(low_idx),
            cfg.exploration.lambda_mix, self.teacher)
        return mixed, mixed_teacher_logits

    def _run_epoch(self) -> EpochMetrics:
        cfg = self.cfg
        start = time.perf_counter()
        mixed, mixed_teacher_logits = self._prepare_exploration()
        n = len(self.data.train)
        order = self.rngs["student_batches"].permutation(n)
        batch_size = cfg.kd.batch_size
        stats: list[_BatchStats] = []
        # partial trailing batches are dropped so every episode has full length
        for start_idx in range(0, n - batch_size + 1, batch_size):
            idx = order[start_idx:start_idx + batch_size]
            instances = self.data.train.subset(idx)
            teacher_logits = self.train_teacher_logits[idx]
            if self.uses_agent:
                stats.append(self._agent_learning_cycle(instances, teacher_logits, shadow=False))
                exploration_step(
                    mixed,
                    epoch=self.epoch,
                    phase_epochs=cfg.phase_epochs,
                    config=cfg.exploration,
                    batch_size=batch_size,
                    rng=self.rngs["explore"],
                    agent_cycle=lambda subset, picked: self._agent_learning_cycle(
                        subset, mixed_teacher_logits[picked], shadow=True),
                )
            else:
                stats.append(self._fixed_batch(instances, teacher_logits))
        if not stats:
            raise RuntimeError(f"training set of {n} instances yields no full batch of {batch_size}")

        train_loss = float(np.mean([s.loss for s in stats]))
        _, train_accuracy = evaluate_model(self.student, self.data.train.features, self.data.train.labels)
        val_loss, val_accuracy = evaluate_model(self.student, self.data.val.features, self.data.val.labels)
        temps = np.concatenate([s.temperatures for s in stats])
        return EpochMetrics(
            epoch=self.epoch,
            train_loss=train_loss,
            train_accuracy=train_accuracy,
            val_loss=val_loss,
            val_accuracy=val_accuracy,
            temperature_mean=float(temps.mean()),
            temperature_min=float(temps.min()),
            temperature_max=float(temps.max()),
            reward_raw_mean=float(np.mean([s.raw_reward for s in stats])),
            reward_shaped_mean=float(np.mean([s.shaped_reward for s in stats])),
            corrector_loss=float(np.mean([s.corrector_loss for s in stats])),
            actor_loss=float(np.mean([s.actor_loss for s in stats])),
            critic_loss=float(np.mean([s.critic_loss for s in stats])),
            clip_fraction=float(np.mean([s.clip_fraction for s in stats])),
            wall_seconds=time.perf_counter() - start,
        )

    def run(self) -> RunResult:
        started = time.perf_counter()
        metrics: list[EpochMetrics] = []
        try:
            for self.epoch in range(self.cfg.epochs):
                metrics.append(self._run_epoch())
                if self.out_dir is not None:
                    emit_metrics(metrics, self.out_dir / "metrics.csv")
        except Exception:
            if self.out_dir is not None:
                emit_metrics(metrics, self.out_dir / "metrics.csv")
            raise
        self._persist()
        summary = {
            "controller": self.cfg.controller,
            "seed": self.cfg.seed,
            "epochs": self.cfg.epochs,
            "teacher_train_accuracy": self.teacher_accuracy,
            "final_train_loss": metrics[-1].train_loss,
            "final_train_accuracy": metrics[-1].train_accuracy,
            "final_val_loss": metrics[-1].val_loss,
            "final_val_accuracy": metrics[-1].val_accuracy,
            "wall_seconds": time.perf_counter() - started,
            "skipped_steps": self.student_opt.skipped,
            "warnings": self.warnings,
            "out_dir": str(self.out_dir) if self.out_dir else None,
        }
        return RunResult(config=self.cfg, metrics=metrics, summary=summary)

    def _persist(self) -> None:
        if self.out_dir is None:
            return
        save_mlp(self.out_dir / "teacher.npz", self.teacher)
        save_mlp(self.out_dir / "student.npz", self.student)
        if self.uses_agent:
            save_mlp(self.out_dir / "actor.npz", self.actor)
            save_mlp(self.out_dir / "critic.npz", self.critic)
        if self.last_ranking is None:
            self.last_ranking = rank_by_entropy(self.data.train.features, self.student, epoch=self.epoch)
        lines = ["rank,dataset_index,entropy"]
        for rank, (index, entropy) in enumerate(zip(self.last_ranking.order, self.last_ranking.entropies)):
            lines.append(f"{rank},{index},{_fmt(float(entropy))}")
        (self.out_dir / "ranking.csv").write_text("\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Run the full pipeline for one configuration and persist its artifacts."""
    return _Runner(config).run()


def train_teacher_only(config: ExperimentConfig) -> dict:
    """Train and persist just the teacher for later reuse via ``teacher_path``."""
    rngs = split_rngs(config.seed)
    data = load_dataset(config.dataset, config.reward.probe_size, config.val_fraction, rngs["data"])
    teacher = train_teacher(
        data.train.features,
        data.train.labels,
        config.teacher_layers,
        data.train.num_classes,
        epochs=config.teacher_epochs,
        lr=config.kd.teacher_lr,
        batch_size=config.kd.batch_size,
        rng=rngs["teacher_init"],
    )
    _, accuracy = evaluate_model(teacher, data.train.features, data.train.labels)
    path = None
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "teacher.npz"
        save_mlp(path, teacher)
    return {
        "train_accuracy": accuracy,
        "parameter_count": teacher.parameter_count,
        "path": str(path) if path else None,
    }


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def compare_controllers(config: ExperimentConfig, seeds: list[int]) -> dict:
    """Run fixed and rlkd controllers on the same seeds and tabulate accuracy."""
    if not seeds:
        raise ValueError("need at least one seed")
    rows = []
    for seed in seeds:
        accs = {}
        for controller in ("fixed", "rlkd"):
            run_cfg = config.model_copy(deep=True)
            run_cfg.controller = controller
            run_cfg.seed = seed
            run_cfg.out_dir = str(Path(config.out_dir) / f"{controller}-seed{seed}") if config.out_dir else None
            accs[controller] = run_experiment(run_cfg).summary["final_val_accuracy"]
        rows.append({
            "seed": seed,
            "fixed_val_accuracy": accs["fixed"],
            "rlkd_val_accuracy": accs["rlkd"],
            "delta": accs["rlkd"] - accs["fixed"],
        })
    fixed_mean, fixed_std = _mean_std([r["fixed_val_accuracy"] for r in rows])
    rlkd_mean, rlkd_std = _mean_std([r["rlkd_val_accuracy"] for r in rows])
    result = {
        "rows": rows,
        "fixed_mean": fixed_mean,
        "fixed_std": fixed_std,
        "rlkd_mean": rlkd_mean,
        "rlkd_std": rlkd_std,
        "delta": rlkd_mean - fixed_mean,
    }
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["seed,fixed_val_accuracy,rlkd_val_accuracy,delta"]
        for r in rows:
            lines.append(f"{r['seed']},{_fmt(r['fixed_val_accuracy'])},"
                         f"{_fmt(r['rlkd_val_accuracy'])},{_fmt(r['delta'])}")
        (out / "compare.csv").write_text("\n".join(lines) + "\n")
    return result


ABLATION_VARIANTS = {
    "full": AblationFlags(),
    "no_uncertainty": AblationFlags(uncertainty_off=True),
    "no_calibration": AblationFlags(calibration_off=True),
    "no_exploration": AblationFlags(exploration_off=True),
}


def run_ablations(config: ExperimentConfig, seeds: list[int]) -> dict:
    """Run the rlkd controller with each ablation toggle and tabulate accuracy."""
    if not seeds:
        raise ValueError("need at least one seed")
    rows = []
    for name, flags in ABLATION_VARIANTS.items():
        accs = []
        for seed in seeds:
            run_cfg = config.model_copy(deep=True)
            run_cfg.controller = "rlkd"
            run_cfg.ablations = flags.model_copy()
            run_cfg.seed = seed
            run_cfg.out_dir = str(Path(config.out_dir) / f"{name}-seed{seed}") if config.out_dir else None
            accs.append(run_experiment(run_cfg).summary["final_val_accuracy"])
        mean, std = _mean_std(accs)
        rows.append({
            "variant": name,
            "seeds": list(seeds),
            "mean_val_accuracy": mean,
            "std_val_accuracy": std,
        })
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["variant,mean_val_accuracy,std_val_accuracy"]
        for r in rows:
            lines.append(f"{r['variant']},{_fmt(r['mean_val_accuracy'])},{_fmt(r['std_val_accuracy'])}")
        (out / "ablate.csv").write_text("\n".join(lines) + "\n")
    return {"rows": rows}
