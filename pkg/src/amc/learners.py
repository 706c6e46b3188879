"""The three few-shot learners: multi-task baseline, prototypical network,
and the MAML-style learner with a generated prediction head.

All three share the character encoder. Meta-training walks the training
tasks in a seeded order; model selection keeps the epoch with the best
averaged accuracy on the development tasks' test instances.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import random
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .benchmark import BenchmarkSplit, ID_LABELS, Instance, Task
from .encoder import (
    ENCODER_LAYERS,
    EncoderConfig,
    N_ENCODER_LAYERS,
    Vocabulary,
    encode_scene,
    init_encoder_params,
)
from .errors import MissingClassInSupport, ZeroVector
from .evaluation import Prediction, instance_accuracy
from .optim import AdamState, Params, accumulate, adam_step, sgd_step

log = logging.getLogger(__name__)

METHODS = ("mtl", "proto", "leopard")

# Logit handed to classes that cannot be scored (no support / zero vector).
# Sits below any reachable cosine or generated-head logit.
_UNSCORED_LOGIT = -30.0


@dataclass
class TrainConfig:
    method: str = "proto"
    seed: int = 0
    d_model: int = 64
    window: int = 256
    max_len: int = 2000
    lr: float = 2e-5
    inner_lr: float = 1e-2
    inner_steps: int = 5
    nu: int = 1
    temperature: float = 0.1
    epochs: int = 20
    early_stop_metric: str = "dev_accuracy"
    batch_scenes: int = 8
    accumulate_batches: int = 8
    support_batches: int = 5
    head_dim: int = 32
    mlp_hidden: int = 32
    first_order: bool = True
    init_ckpt: str = ""

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.d_model, self.window, self.max_len)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Parse a ``key = value`` config file."""
        values: dict[str, object] = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults = cls()
        with open(path, encoding="utf-8") as f:
            for raw in f:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, val = line.partition("=")
                key, val = key.strip(), val.strip()
                if key not in types:
                    raise ValueError(f"unknown config key {key!r}")
                current = getattr(defaults, key)
                if isinstance(current, bool):
                    values[key] = val.lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    values[key] = int(val)
                elif isinstance(current, float):
                    values[key] = float(val)
                else:
                    values[key] = val
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0 <= self.nu <= N_ENCODER_LAYERS:
            raise ValueError(f"nu must be within 0..{N_ENCODER_LAYERS}")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Episode:
    task_ref: str
    support: list[tuple[Instance, "object"]]
    query: list[tuple[Instance, "object"]]


@dataclass
class LeopardConfig:
    nu: int = 1
    inner_steps: int = 5
    inner_lr: float = 1e-2
    outer_lr: float = 1e-5
    head_dim: int = 32
    first_order: bool = True


def _derived_rng(seed: int, *parts) -> random.Random:
    digest = hashlib.sha256("|".join([str(seed), *map(str, parts)]).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _train_scene_groups(task: Task) -> list[tuple[object, list[Instance]]]:
    """Training instances grouped by scene, in scene order."""
    groups: "OrderedDict[int, list[Instance]]" = OrderedDict()
    for inst in task.train_instances:
        groups.setdefault(inst.scene_index, []).append(inst)
    return [(task.scene_at(idx), insts) for idx, insts in groups.items()]


def _test_scene_groups(task: Task) -> list[tuple[object, list[Instance]]]:
    groups: "OrderedDict[int, list[Instance]]" = OrderedDict()
    for inst in task.test_instances:
        groups.setdefault(inst.scene_index, []).append(inst)
    return [(task.scene_at(idx), insts) for idx, insts in groups.items()]


def _mean_loss(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.scale(total, 1.0 / len(losses))


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


class _EncoderMixin:
    """Shared scene-embedding plumbing for the three learners."""

    vocab: Vocabulary
    cfg: TrainConfig

    def _embed_scene(self, scene, params: Params) -> dict[str, Tensor]:
        enc = encode_scene(scene, self.vocab, params, self.cfg.encoder_config())
        return {pid: ce.e for pid, ce in enc.items()}

    def _snapshot(self, params: Params) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in zip(params.names(), params.tensors())}

    def _restore(self, params: Params, snap: dict[str, np.ndarray]) -> None:
        for n in params.names():
            params[n].data = snap[n].copy()

    def load_encoder_from(self, arrays: dict[str, np.ndarray]) -> None:
        """Warm-start the encoder from another run's checkpoint arrays."""
        for name in ENCODER_LAYERS:
            if name in arrays:
                self.params[name].data = np.ascontiguousarray(arrays[name], dtype=np.float64)


def sample_support_scenes(
    task: Task,
    rng: random.Random,
    max_scenes: int,
    required: list[str] | None = None,
    exclude: set[int] | None = None,
    attempts: int = 20,
) -> list[int]:
    """Sample support scene indices until every required class is covered.

    Raises MissingClassInSupport after ``attempts`` failed draws, or right
    away when the candidate pool cannot cover the classes at all.
    """
    pool = [idx for idx, _ in _train_groups_index(task) if not exclude or idx not in exclude]
    if not pool:
        raise MissingClassInSupport(f"{task.movie_id}: no support scenes available")
    required = list(required if required is not None else task.characters)
    covered_by_pool = _classes_in(task, pool)
    missing_everywhere = [c for c in required if c not in covered_by_pool]
    if missing_everywhere:
        raise MissingClassInSupport(
            f"{task.movie_id}: classes {missing_everywhere} absent from support pool"
        )
    n = min(max_scenes, len(pool))
    for _ in range(attempts):
        chosen = sorted(rng.sample(pool, n))
        if all(c in _classes_in(task, chosen) for c in required):
            return chosen
    raise MissingClassInSupport(
        f"{task.movie_id}: could not cover all classes in {attempts} draws"
    )


def _train_groups_index(task: Task) -> list[tuple[int, list[Instance]]]:
    groups: "OrderedDict[int, list[Instance]]" = OrderedDict()
    for inst in task.train_instances:
        groups.setdefault(inst.scene_index, []).append(inst)
    return list(groups.items())


def _classes_in(task: Task, scene_indices) -> set[str]:
    chosen = set(scene_indices)
    return {
        inst.answer for inst in task.train_instances if inst.scene_index in chosen
    }


# --- multi-task baseline --------------------------------------------------


class MtlLearner(_EncoderMixin):
    """Shared encoder with one linear prediction head per task.

    Training pools the training instances of all tasks (development and
    test tasks included, each through its own head) and early-stops on the
    averaged accuracy over the development tasks' test instances.
    """

    method = "mtl"

    def __init__(self, vocab: Vocabulary, cfg: TrainConfig, tasks: list[Task]):
        self.vocab = vocab
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.params = init_encoder_params(len(vocab), cfg.encoder_config(), rng)
        self._tasks = {t.movie_id: t for t in tasks}
        d = cfg.d_model
        for task in tasks:
            n = len(task.characters)
            self.params[f"head/{task.movie_id}/w"] = Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(d), size=(n, d)), requires_grad=True
            )
            self.params[f"head/{task.movie_id}/b"] = Tensor(np.zeros(n), requires_grad=True)

    def head_logits(self, e: Tensor, movie_id: str) -> Tensor:
        w = self.params[f"head/{movie_id}/w"]
        b = self.params[f"head/{movie_id}/b"]
        return ad.add(ad.matmul(w, e), b)

    def train(self, bench: BenchmarkSplit) -> list[dict]:
        cfg = self.cfg
        rng = _derived_rng(cfg.seed, "mtl")
        pool = [
            (task, scene, insts)
            for task in bench.all_tasks()
            for scene, insts in _train_scene_groups(task)
        ]
        trainable = self.params.tensors()
        state = AdamState(trainable)
        history: list[dict] = []
        best_acc, best_snap = -1.0, None
        for epoch in range(cfg.epochs):
            rng.shuffle(pool)
            epoch_losses: list[float] = []
            acc_grads, pending = None, 0
            for batch in _chunks(pool, cfg.batch_scenes):
                with Tape() as tape:
                    losses = []
                    for task, scene, insts in batch:
                        embs = self._embed_scene(scene, self.params)
                        for inst in insts:
                            if inst.masked_id not in embs:
                                continue
                            logits = self.head_logits(embs[inst.masked_id], task.movie_id)
                            label = task.characters.index(inst.answer)
                            losses.append(ad.cross_entropy(logits, label))
                    if not losses:
                        continue
                    loss = _mean_loss(losses)
                # Heads of tasks outside this batch are legitimately off-path.
                grads = tape.gradients(loss, trainable, warn=False)
                epoch_losses.append(loss.item())
                acc_grads = accumulate(acc_grads, grads)
                pending += 1
                if pending == cfg.accumulate_batches:
                    adam_step(trainable, [g / pending for g in acc_grads], state, cfg.lr)
                    acc_grads, pending = None, 0
            if pending:
                adam_step(trainable, [g / pending for g in acc_grads], state, cfg.lr)
            dev_acc = self._dev_accuracy(bench)
            history.append({
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else 0.0,
                "dev_accuracy": dev_acc,
            })
            if dev_acc > best_acc:
                best_acc, best_snap = dev_acc, self._snapshot(self.params)
        if best_snap is not None:
            self._restore(self.params, best_snap)
        return history

    def _dev_accuracy(self, bench: BenchmarkSplit) -> float:
        return _mean_dev_accuracy(self, bench)

    def evaluate_task(self, task: Task) -> tuple[list[Prediction], Fraction]:
        if f"head/{task.movie_id}/w" not in self.params:
            raise KeyError(f"no trained head for task {task.movie_id}")
        preds: list[Prediction] = []
        for scene, insts in _test_scene_groups(task):
            embs = self._embed_scene(scene, self.params)
            for inst in insts:
                if inst.masked_id in embs:
                    logits = self.head_logits(embs[inst.masked_id], task.movie_id).data
                else:
                    logits = np.zeros(len(task.characters))
                preds.append(_prediction(task, inst, logits))
        return preds, instance_accuracy(preds)

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in zip(self.params.names(), self.params.tensors())}


def _prediction(task: Task, inst: Instance, logits: np.ndarray) -> Prediction:
    best = int(np.argmax(logits))
    return Prediction(
        movie_id=inst.movie_id,
        scene_index=inst.scene_index,
        masked_id=inst.masked_id,
        gold=inst.answer,
        predicted=task.characters[best],
        logits={c: float(v) for c, v in zip(task.characters, logits)},
    )


# --- prototypical network --------------------------------------------------


class ProtoLearner(_EncoderMixin):
    """Metric learner: class prototypes are mean support embeddings and
    queries score by cosine similarity.

    Support embeddings are computed off-tape (the support branch stays
    frozen); only the query branch is differentiated during meta-training.
    """

    method = "proto"

    def __init__(self, vocab: Vocabulary, cfg: TrainConfig):
        self.vocab = vocab
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.params = init_encoder_params(len(vocab), cfg.encoder_config(), rng)

    def prototypes_from_scenes(
        self, task: Task, scene_indices: list[int], strict: bool = True
    ) -> dict[str, np.ndarray]:
        vectors: dict[str, list[np.ndarray]] = {c: [] for c in task.characters}
        chosen = set(scene_indices)
        for scene, insts in _train_scene_groups(task):
            if scene.scene_index not in chosen:
                continue
            embs = self._embed_scene(scene, self.params)
            for inst in insts:
                if inst.masked_id in embs:
                    vectors[inst.answer].append(embs[inst.masked_id].data)
        missing = [c for c, vs in vectors.items() if not vs]
        if missing and strict:
            raise MissingClassInSupport(f"{task.movie_id}: no support for {missing}")
        return {
            c: np.mean(np.stack(vs), axis=0) for c, vs in vectors.items() if vs
        }

    def prototypes(
        self, task: Task, rng: random.Random | None = None, strict: bool = True,
        exclude: set[int] | None = None,
    ) -> dict[str, np.ndarray]:
        """Prototypes from up to support_batches * batch_scenes sampled scenes.

        Without an rng, uses the task's full training split.
        """
        if rng is None:
            indices = [idx for idx, _ in _train_groups_index(task)]
            if exclude:
                indices = [i for i in indices if i not in exclude]
        else:
            indices = sample_support_scenes(
                task, rng, self.cfg.support_batches * self.cfg.batch_scenes,
                exclude=exclude,
            )
        return self.prototypes_from_scenes(task, indices, strict=strict)

    def score(self, e: Tensor, prototypes: dict[str, np.ndarray], characters: list[str]) -> Tensor:
        """Cosine logits against each character's prototype, in task order."""
        if not prototypes:
            raise MissingClassInSupport("no prototypes to score against")
        parts = []
        for c in characters:
            proto = prototypes.get(c)
            if proto is None:
                parts.append(Tensor(np.array([_UNSCORED_LOGIT])))
                continue
            try:
                parts.append(ad.reshape(ad.cosine(e, Tensor(proto)), (1,)))
            except ZeroVector:
                parts.append(Tensor(np.array([0.0])))
        return ad.concat(parts, axis=0)

    def train(self, bench: BenchmarkSplit) -> list[dict]:
        cfg = self.cfg
        trainable = self.params.tensors()
        state = AdamState(trainable)
        history: list[dict] = []
        best_acc, best_snap = -1.0, None
        for epoch in range(cfg.epochs):
            order = list(bench.train_tasks)
            _derived_rng(cfg.seed, "proto-order", epoch).shuffle(order)
            epoch_losses: list[float] = []
            acc_grads, pending = None, 0
            for task in order:
                rng = _derived_rng(cfg.seed, "proto-episode", epoch, task.movie_id)
                loss_grads = self._episode(task, rng)
                if loss_grads is None:
                    continue
                loss_val, grads = loss_grads
                epoch_losses.append(loss_val)
                acc_grads = accumulate(acc_grads, grads)
                pending += 1
                if pending == cfg.accumulate_batches:
                    adam_step(trainable, [g / pending for g in acc_grads], state, cfg.lr)
                    acc_grads, pending = None, 0
            if pending:
                adam_step(trainable, [g / pending for g in acc_grads], state, cfg.lr)
            dev_acc = self._dev_accuracy(bench)
            history.append({
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else 0.0,
                "dev_accuracy": dev_acc,
            })
            if dev_acc > best_acc:
                best_acc, best_snap = dev_acc, self._snapshot(self.params)
        if best_snap is not None:
            self._restore(self.params, best_snap)
        return history

    def _episode(self, task: Task, rng: random.Random):
        groups = _train_groups_index(task)
        if len(groups) < 2:
            return None
        indices = [idx for idx, _ in groups]
        n_query = min(self.cfg.batch_scenes, max(1, len(indices) // 2))
        query_idx = set(rng.sample(indices, n_query))
        try:
            protos = self.prototypes(task, rng, strict=True, exclude=query_idx)
        except MissingClassInSupport:
            log.debug("episode skipped for %s: class missing in support", task.movie_id)
            return None
        losses = []
        with Tape() as tape:
            for scene, insts in _train_scene_groups(task):
                if scene.scene_index not in query_idx:
                    continue
                embs = self._embed_scene(scene, self.params)
                for inst in insts:
                    if inst.masked_id not in embs:
                        continue
                    logits = self.score(embs[inst.masked_id], protos, task.characters)
                    logits = ad.scale(logits, 1.0 / self.cfg.temperature)
                    losses.append(ad.cross_entropy(logits, task.characters.index(inst.answer)))
            if not losses:
                return None
            loss = _mean_loss(losses)
        grads = tape.gradients(loss, self.params.tensors())
        return loss.item(), grads

    def _dev_accuracy(self, bench: BenchmarkSplit) -> float:
        return _mean_dev_accuracy(self, bench)

    def evaluate_task(self, task: Task) -> tuple[list[Prediction], Fraction]:
        protos = self.prototypes(task, rng=None, strict=False)
        preds: list[Prediction] = []
        for scene, insts in _test_scene_groups(task):
            embs = self._embed_scene(scene, self.params)
            for inst in insts:
                if inst.masked_id in embs:
                    logits = self.score(embs[inst.masked_id], protos, task.characters).data
                else:
                    logits = np.zeros(len(task.characters))
                preds.append(_prediction(task, inst, logits))
        return preds, instance_accuracy(preds)

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in zip(self.params.names(), self.params.tensors())}


# --- LEOPARD ----------------------------------------------------------------


class LeopardLearner(_EncoderMixin):
    """MAML-style learner whose per-task linear head is generated from
    support embeddings, then adapted with a few inner gradient steps.

    Parameters split into a task-agnostic set (encoder layers up to nu plus
    the head generator) updated in the outer loop, and a task-specific set
    (remaining encoder layers, the instance projection, and the generated
    head) adapted per task from a fixed initialization.
    """

    method = "leopard"

    def __init__(self, vocab: Vocabulary, cfg: TrainConfig):
        cfg.validate()
        if not cfg.first_order:
            raise NotImplementedError(
                "second-order outer gradients are not supported; set first_order = true"
            )
        self.vocab = vocab
        self.cfg = cfg
        self.leopard_cfg = LeopardConfig(
            nu=cfg.nu,
            inner_steps=cfg.inner_steps,
            inner_lr=cfg.inner_lr,
            outer_lr=cfg.lr,
            head_dim=cfg.head_dim,
            first_order=cfg.first_order,
        )
        rng = np.random.default_rng(cfg.seed)
        self.params = init_encoder_params(len(vocab), cfg.encoder_config(), rng)
        d, hid, l = cfg.d_model, cfg.mlp_hidden, cfg.head_dim
        s = 1.0 / np.sqrt(d)
        sh = 1.0 / np.sqrt(hid)
        # g_psi: two-layer tanh MLP emitting one head row plus its bias.
        self.params["gen/w1"] = Tensor(rng.normal(0, s, (d, hid)), requires_grad=True)
        self.params["gen/b1"] = Tensor(np.zeros(hid), requires_grad=True)
        self.params["gen/w2"] = Tensor(rng.normal(0, sh, (hid, l + 1)), requires_grad=True)
        self.params["gen/b2"] = Tensor(np.zeros(l + 1), requires_grad=True)
        # h_phi: projection of the instance embedding into the head space.
        self.params["map/w1"] = Tensor(rng.normal(0, s, (d, hid)), requires_grad=True)
        self.params["map/b1"] = Tensor(np.zeros(hid), requires_grad=True)
        self.params["map/w2"] = Tensor(rng.normal(0, sh, (hid, l)), requires_grad=True)
        self.params["map/b2"] = Tensor(np.zeros(l), requires_grad=True)
        # Task-specific tensors are never touched by the outer optimizer.
        for name in self.phi_names():
            self.params[name].requires_grad = False

    def theta_names(self) -> list[str]:
        enc = [n for n, layer in ENCODER_LAYERS.items() if layer <= self.leopard_cfg.nu]
        return enc + ["gen/w1", "gen/b1", "gen/w2", "gen/b2"]

    def phi_names(self) -> list[str]:
        enc = [n for n, layer in ENCODER_LAYERS.items() if layer > self.leopard_cfg.nu]
        return enc + ["map/w1", "map/b1", "map/w2", "map/b2"]

    def _mlp(self, prefix: str, x: Tensor, env: Params) -> Tensor:
        hidden = ad.tanh(ad.add(ad.matmul(x, env[f"{prefix}/w1"]), env[f"{prefix}/b1"]))
        return ad.add(ad.matmul(hidden, env[f"{prefix}/w2"]), env[f"{prefix}/b2"])

    def generate_head(
        self, task: Task, support: list[tuple[Instance, object]], env: Params
    ) -> tuple[Tensor, Tensor]:
        """Mean of g_psi over each class's support embeddings, stacked in
        task character order. Classes without support get an unscored row."""
        by_scene: "OrderedDict[int, list[Instance]]" = OrderedDict()
        scenes = {}
        for inst, scene in support:
            by_scene.setdefault(inst.scene_index, []).append(inst)
            scenes[inst.scene_index] = scene
        outputs: dict[str, list[Tensor]] = {c: [] for c in task.characters}
        for scene_index, insts in by_scene.items():
            embs = self._embed_scene(scenes[scene_index], env)
            for inst in insts:
                if inst.masked_id in embs:
                    outputs[inst.answer].append(self._mlp("gen", embs[inst.masked_id], env))
        l = self.leopard_cfg.head_dim
        rows, biases = [], []
        for c in task.characters:
            outs = outputs[c]
            if not outs:
                rows.append(Tensor(np.zeros(l)))
                biases.append(Tensor(np.array([_UNSCORED_LOGIT])))
                continue
            mean_out = ad.mean(ad.stack_rows(outs), axis=0)
            rows.append(ad.narrow(mean_out, 0, 0, l))
            biases.append(ad.narrow(mean_out, 0, l, 1))
        return ad.stack_rows(rows), ad.concat(biases, axis=0)

    def head_logits(self, e: Tensor, head: tuple[Tensor, Tensor], env: Params) -> Tensor:
        w, b = head
        return ad.add(ad.matmul(w, self._mlp("map", e, env)), b)

    def predict_probs(self, e: Tensor, head: tuple[Tensor, Tensor], env: Params) -> Tensor:
        return ad.softmax(self.head_logits(e, head, env))

    def _adapted_env(self, head_w: np.ndarray, head_b: np.ndarray) -> Params:
        """Fresh trainable copies of the task-specific parameters."""
        adapted = OrderedDict()
        for name in self.phi_names():
            adapted[name] = Tensor(self.params[name].data.copy(), requires_grad=True)
        adapted["task/head_w"] = Tensor(head_w.copy(), requires_grad=True)
        adapted["task/head_b"] = Tensor(head_b.copy(), requires_grad=True)
        return Params(adapted)

    def _theta_env(self, live: bool) -> Params:
        env = OrderedDict()
        for name in self.theta_names():
            t = self.params[name]
            env[name] = t if live else Tensor(t.data, requires_grad=False)
        return Params(env)

    def _inner_adapt(
        self, task: Task, support: list[tuple[Instance, object]], adapted: Params
    ) -> list[float]:
        """G SGD steps on the task-specific parameters; returns loss trace."""
        theta = self._theta_env(live=False)
        tensors = adapted.tensors()
        trace: list[float] = []
        for _ in range(self.leopard_cfg.inner_steps):
            with Tape() as tape:
                loss = self._support_loss(task, support, theta.merged(adapted))
            grads = tape.gradients(loss, tensors)
            sgd_step(tensors, grads, self.leopard_cfg.inner_lr)
            trace.append(loss.item())
        return trace

    def _support_loss(self, task: Task, pairs, env: Params) -> Tensor:
        head = (env["task/head_w"], env["task/head_b"])
        by_scene: "OrderedDict[int, list[Instance]]" = OrderedDict()
        scenes = {}
        for inst, scene in pairs:
            by_scene.setdefault(inst.scene_index, []).append(inst)
            scenes[inst.scene_index] = scene
        losses = []
        for scene_index, insts in by_scene.items():
            embs = self._embed_scene(scenes[scene_index], env)
            for inst in insts:
                if inst.masked_id not in embs:
                    continue
                logits = self.head_logits(embs[inst.masked_id], head, env)
                losses.append(ad.cross_entropy(logits, task.characters.index(inst.answer)))
        if not losses:
            raise MissingClassInSupport(f"{task.movie_id}: empty support loss")
        return _mean_loss(losses)

    def _sample_episode(self, task: Task, rng: random.Random):
        groups = _train_groups_index(task)
        if len(groups) < 2:
            return None
        indices = [idx for idx, _ in groups]
        n_query = min(self.cfg.batch_scenes, max(1, len(indices) // 2))
        query_idx = set(rng.sample(indices, n_query))
        try:
            support_idx = sample_support_scenes(
                task, rng, self.cfg.support_batches * self.cfg.batch_scenes,
                exclude=query_idx,
            )
        except MissingClassInSupport:
            return None
        support = [
            (inst, task.scene_at(idx))
            for idx, insts in groups if idx in set(support_idx)
            for inst in insts
        ]
        query = [
            (inst, task.scene_at(idx))
            for idx, insts in groups if idx in query_idx
            for inst in insts
        ]
        return Episode(task.movie_id, support, query)

    def train(self, bench: BenchmarkSplit) -> list[dict]:
        cfg = self.cfg
        theta = self._theta_env(live=True)
        trainable = theta.tensors()
        state = AdamState(trainable)
        history: list[dict] = []
        best_acc, best_snap = -1.0, None
        for epoch in range(cfg.epochs):
            order = list(bench.train_tasks)
            _derived_rng(cfg.seed, "leopard-order", epoch).shuffle(order)
            epoch_losses: list[float] = []
            for task in order:
                rng = _derived_rng(cfg.seed, "leopard-episode", epoch, task.movie_id)
                episode = self._sample_episode(task, rng)
                if episode is None:
                    continue
                loss_val = self._outer_step(task, episode, theta, trainable, state)
                if loss_val is not None:
                    epoch_losses.append(loss_val)
            dev_acc = self._dev_accuracy(bench)
            history.append({
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else 0.0,
                "dev_accuracy": dev_acc,
            })
            if dev_acc > best_acc:
                best_acc, best_snap = dev_acc, self._snapshot(self.params)
        if best_snap is not None:
            self._restore(self.params, best_snap)
        return history

    def _outer_step(self, task, episode, theta: Params, trainable, state) -> float | None:
        """One first-order episode: generate, adapt a clone, differentiate
        the query loss through the generated (pre-adaptation) head."""
        with Tape() as tape:
            phi_const = Params(OrderedDict(
                (n, Tensor(self.params[n].data, requires_grad=False))
                for n in self.phi_names()
            ))
            gen_env = theta.merged(phi_const)
            w0, b0 = self.generate_head(task, episode.support, gen_env)

            adapted = self._adapted_env(w0.data, b0.data)
            self._inner_adapt(task, episode.support, adapted)

            adapted_const = OrderedDict()
            for name in self.phi_names():
                adapted_const[name] = Tensor(adapted[name].data, requires_grad=False)
            query_env = theta.merged(Params(adapted_const))
            # Re-attach the generation path: adapted head = generated head
            # plus a constant adaptation delta.
            head_w = ad.add(w0, Tensor(adapted["task/head_w"].data - w0.data))
            head_b = ad.add(b0, Tensor(adapted["task/head_b"].data - b0.data))

            losses = []
            by_scene: "OrderedDict[int, list[Instance]]" = OrderedDict()
            scenes = {}
            for inst, scene in episode.query:
                by_scene.setdefault(inst.scene_index, []).append(inst)
                scenes[inst.scene_index] = scene
            for scene_index, insts in by_scene.items():
                embs = self._embed_scene(scenes[scene_index], query_env)
                for inst in insts:
                    if inst.masked_id not in embs:
                        continue
                    logits = self.head_logits(embs[inst.masked_id], (head_w, head_b), query_env)
                    losses.append(ad.cross_entropy(logits, task.characters.index(inst.answer)))
            if not losses:
                return None
            loss = _mean_loss(losses)
        grads = tape.gradients(loss, trainable)
        adam_step(trainable, grads, state, self.leopard_cfg.outer_lr)
        return loss.item()

    def _dev_accuracy(self, bench: BenchmarkSplit) -> float:
        return _mean_dev_accuracy(self, bench)

    def evaluate_task(self, task: Task) -> tuple[list[Prediction], Fraction]:
        """Few-shot adaptation on the task's training split, then prediction.

        Only cloned parameters are adapted; the master parameters are not
        touched.
        """
        rng = _derived_rng(self.cfg.seed, "leopard-eval", task.movie_id)
        groups = _train_groups_index(task)
        support: list[tuple[Instance, object]] = []
        try:
            support_idx = set(sample_support_scenes(
                task, rng, self.cfg.support_batches * self.cfg.batch_scenes
            ))
        except MissingClassInSupport:
            support_idx = {idx for idx, _ in groups}
        for idx, insts in groups:
            if idx in support_idx:
                support.extend((inst, task.scene_at(idx)) for inst in insts)

        theta = self._theta_env(live=False)
        phi_const = Params(OrderedDict(
            (n, Tensor(self.params[n].data, requires_grad=False)) for n in self.phi_names()
        ))
        w0, b0 = self.generate_head(task, support, theta.merged(phi_const))
        adapted = self._adapted_env(w0.data, b0.data)
        if support and self.leopard_cfg.inner_steps > 0:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._inner_adapt(task, support, adapted)
        env = theta.merged(adapted)
        head = (adapted["task/head_w"], adapted["task/head_b"])

        preds: list[Prediction] = []
        for scene, insts in _test_scene_groups(task):
            embs = self._embed_scene(scene, env)
            for inst in insts:
                if inst.masked_id in embs:
                    logits = self.head_logits(embs[inst.masked_id], head, env).data
                else:
                    logits = np.zeros(len(task.characters))
                preds.append(_prediction(task, inst, logits))
        return preds, instance_accuracy(preds)

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in zip(self.params.names(), self.params.tensors())}


def _mean_dev_accuracy(learner, bench: BenchmarkSplit) -> float:
    accs = []
    for task in bench.dev_tasks:
        if not task.test_instances:
            continue
        _, acc = learner.evaluate_task(task)
        accs.append(float(acc))
    return float(np.mean(accs)) if accs else 0.0


def build_learner(
    method: str, vocab: Vocabulary, cfg: TrainConfig, bench: BenchmarkSplit | None = None
):
    if method == "mtl":
        if bench is None:
            raise ValueError("mtl needs the benchmark to size its heads")
        return MtlLearner(vocab, cfg, bench.all_tasks())
    if method == "proto":
        return ProtoLearner(vocab, cfg)
    if method == "leopard":
        return LeopardLearner(vocab, cfg)
    raise ValueError(f"unknown method {method!r}")


def few_shot_evaluate(learner, task: Task) -> tuple[list[Prediction], Fraction]:
    """Predict every test instance of a task using only its train split."""
    return learner.evaluate_task(task)
