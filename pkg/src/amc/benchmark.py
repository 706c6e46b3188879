"""Benchmark construction: movies in, few-shot guessing tasks out.

Each movie becomes one task. Its top speakers (at most 5, ranked by
dialogue utterance count) are the class labels; every scene is anonymized
by replacing those speakers with P0..P4 IDs drawn independently per scene;
the first 3/5 of the scenes provide training instances and the rest test
instances. Movies are then partitioned into meta-train/dev/test task sets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import NoDialogue
from .parser import Scene, Utterance

log = logging.getLogger(__name__)

ID_LABELS = ("P0", "P1", "P2", "P3", "P4")
_ID_RE = re.compile(r"^P[0-4]$")


@dataclass(frozen=True)
class AnonymizedScene:
    movie_id: str
    scene_index: int
    heading: str
    utterances: tuple[Utterance, ...]  # candidate speakers replaced by ID labels
    id_map: dict[str, str]  # ID label -> canonical character name
    candidates: tuple[str, ...]  # the movie's main characters (guessing options)

    def n_speakers(self) -> int:
        return len(self.id_map)


@dataclass(frozen=True)
class Instance:
    movie_id: str
    scene_index: int
    masked_id: str
    answer: str


@dataclass
class Task:
    movie_id: str
    genres: list[str]
    characters: list[str]
    scenes: list[AnonymizedScene]
    train_instances: list[Instance]
    test_instances: list[Instance]

    def scene_at(self, scene_index: int) -> AnonymizedScene:
        return self._index()[scene_index]

    def _index(self) -> dict[int, AnonymizedScene]:
        if not hasattr(self, "_scene_map"):
            self._scene_map = {s.scene_index: s for s in self.scenes}
        return self._scene_map


@dataclass
class BenchmarkSplit:
    train_tasks: list[Task]
    dev_tasks: list[Task]
    test_tasks: list[Task]
    seed: int
    stats: dict = field(default_factory=dict)

    def tasks_for(self, split: str) -> list[Task]:
        return {"train": self.train_tasks, "dev": self.dev_tasks, "test": self.test_tasks}[split]

    def all_tasks(self) -> list[Task]:
        return self.train_tasks + self.dev_tasks + self.test_tasks


def select_main_characters(movie: list[Scene], k: int = 5) -> list[str]:
    """Speakers ranked by dialogue utterance count, truncated to k.

    Ties break by earliest first appearance, then lexicographically.
    """
    counts: dict[str, int] = {}
    first_seen: dict[str, tuple[int, int]] = {}
    for scene in movie:
        for pos, ut in enumerate(scene.utterances):
            if ut.is_background:
                continue
            counts[ut.speaker] = counts.get(ut.speaker, 0) + 1
            first_seen.setdefault(ut.speaker, (scene.index, pos))
    if not counts:
        raise NoDialogue("movie has no non-background utterances")
    ranked = sorted(counts, key=lambda name: (-counts[name], first_seen[name], name))
    return ranked[:k]


def _scene_rng(seed: int, movie_id: str, scene_index: int) -> random.Random:
    """Deterministic per-scene stream, independent of processing order."""
    digest = hashlib.sha256(f"{seed}|{movie_id}|{scene_index}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def anonymize_scene(
    scene: Scene, candidates: list[str], rng: random.Random, movie_id: str = ""
) -> AnonymizedScene:
    """Replace candidate speakers with ID labels drawn uniformly.

    The labels form a uniform random injection of the candidates present in
    the scene into {P0..P4}; non-candidate speakers keep their real names.
    The scene keeps the full candidate list as its guessing options, so a
    guesser picks among the movie's main characters whether or not they all
    speak here.
    """
    present = [c for c in candidates if any(
        not ut.is_background and ut.speaker == c for ut in scene.utterances
    )]
    slots = rng.sample(range(len(ID_LABELS)), len(present))
    name_to_id = {name: ID_LABELS[slot] for name, slot in zip(present, slots)}
    id_map = {pid: name for name, pid in name_to_id.items()}
    utterances = tuple(
        Utterance(name_to_id.get(ut.speaker, ut.speaker), ut.text, ut.is_background)
        for ut in scene.utterances
    )
    return AnonymizedScene(
        movie_id=movie_id,
        scene_index=scene.index,
        heading=scene.heading,
        utterances=utterances,
        id_map=id_map,
        candidates=tuple(candidates),
    )


def split_train_test(
    scenes: list[AnonymizedScene], train_frac: Fraction = Fraction(3, 5)
) -> tuple[list[AnonymizedScene], list[AnonymizedScene]]:
    """First floor(train_frac * T) scenes (at least 1) train, rest test."""
    if not scenes:
        raise ValueError("no scenes to split")
    t = len(scenes)
    n_train = int(train_frac * t)  # Fraction * int floors via int()
    n_train = max(1, min(n_train, t))
    return scenes[:n_train], scenes[n_train:]


def build_instances(scene: AnonymizedScene) -> list[Instance]:
    """One instance per masked ID in the scene, in P0..P4 order."""
    return [
        Instance(scene.movie_id, scene.scene_index, pid, scene.id_map[pid])
        for pid in ID_LABELS
        if pid in scene.id_map
    ]


def build_task(
    movie_id: str,
    scenes: list[Scene],
    genres: list[str],
    seed: int,
    train_frac: Fraction = Fraction(3, 5),
    k: int = 5,
) -> Task:
    characters = select_main_characters(scenes, k=k)
    anonymized = [
        anonymize_scene(sc, characters, _scene_rng(seed, movie_id, sc.index), movie_id)
        for sc in scenes
    ]
    train_scenes, test_scenes = split_train_test(anonymized, train_frac)
    train_instances = [inst for sc in train_scenes for inst in build_instances(sc)]
    test_instances = [inst for sc in test_scenes for inst in build_instances(sc)]
    return Task(
        movie_id=movie_id,
        genres=list(genres),
        characters=characters,
        scenes=anonymized,
        train_instances=train_instances,
        test_instances=test_instances,
    )


def build_benchmark(
    movies: list[tuple[str, list[str], list[Scene]]],
    split_spec: tuple[int, int, int],
    seed: int,
    train_frac: Fraction = Fraction(3, 5),
) -> BenchmarkSplit:
    """Shuffle movies by seed, partition, and build one task per movie.

    ``movies`` holds (movie_id, genres, scenes) triples. Movies without any
    dialogue are skipped with a warning before partitioning.
    """
    train_n, dev_n, test_n = split_spec
    usable = []
    for movie_id, genres, scenes in sorted(movies, key=lambda m: m[0]):
        if any(not ut.is_background for sc in scenes for ut in sc.utterances):
            usable.append((movie_id, genres, scenes))
        else:
            log.warning("skipping %s: no dialogue", movie_id)
    if train_n + dev_n + test_n > len(usable):
        raise ValueError(
            f"split {split_spec} needs {train_n + dev_n + test_n} movies, "
            f"corpus has {len(usable)} with dialogue"
        )
    order = list(range(len(usable)))
    random.Random(seed).shuffle(order)
    shuffled = [usable[i] for i in order]

    def tasks_of(chunk):
        return [
            build_task(mid, scenes, genres, seed, train_frac)
            for mid, genres, scenes in chunk
        ]

    train_tasks = tasks_of(shuffled[:train_n])
    dev_tasks = tasks_of(shuffled[train_n : train_n + dev_n])
    test_tasks = tasks_of(shuffled[train_n + dev_n : train_n + dev_n + test_n])
    bench = BenchmarkSplit(train_tasks, dev_tasks, test_tasks, seed)
    bench.stats = benchmark_stats(bench, split_spec)
    return bench


def benchmark_stats(bench: BenchmarkSplit, split_spec: tuple[int, int, int]) -> dict:
    def split_stats(tasks: list[Task]) -> dict:
        n_train_scenes = sum(
            len({i.scene_index for i in t.train_instances}) for t in tasks
        )
        n_test_scenes = sum(
            len({i.scene_index for i in t.test_instances}) for t in tasks
        )
        n_chars = sum(len(t.characters) for t in tasks)
        n_train = sum(len(t.train_instances) for t in tasks)
        n_test = sum(len(t.test_instances) for t in tasks)
        return {
            "movies": len(tasks),
            "characters": n_chars,
            "scenes": sum(len(t.scenes) for t in tasks),
            "train_scenes": n_train_scenes,
            "train_instances": n_train,
            "test_scenes": n_test_scenes,
            "test_instances": n_test,
            "mean_train_instances_per_character": (n_train / n_chars) if n_chars else 0.0,
        }

    return {
        "split_spec": list(split_spec),
        "train": split_stats(bench.train_tasks),
        "dev": split_stats(bench.dev_tasks),
        "test": split_stats(bench.test_tasks),
    }


# --- serialization -------------------------------------------------------

def _scene_to_json(scene: AnonymizedScene) -> dict:
    return {
        "movie_id": scene.movie_id,
        "scene_index": scene.scene_index,
        "heading": scene.heading,
        "utterances": [
            {"speaker": u.speaker, "text": u.text, "is_background": u.is_background}
            for u in scene.utterances
        ],
        "id_map": dict(sorted(scene.id_map.items())),
        "candidates": list(scene.candidates),
    }


def _scene_from_json(obj: dict) -> AnonymizedScene:
    return AnonymizedScene(
        movie_id=obj["movie_id"],
        scene_index=obj["scene_index"],
        heading=obj["heading"],
        utterances=tuple(
            Utterance(u["speaker"], u["text"], u["is_background"]) for u in obj["utterances"]
        ),
        id_map=dict(obj["id_map"]),
        candidates=tuple(obj["candidates"]),
    )


def task_to_json(task: Task) -> dict:
    return {
        "movie_id": task.movie_id,
        "genres": task.genres,
        "characters": task.characters,
        "scenes": [_scene_to_json(s) for s in task.scenes],
        "train_instances": [
            {"scene_index": i.scene_index, "masked_id": i.masked_id, "answer": i.answer}
            for i in task.train_instances
        ],
        "test_instances": [
            {"scene_index": i.scene_index, "masked_id": i.masked_id, "answer": i.answer}
            for i in task.test_instances
        ],
    }


def task_from_json(obj: dict) -> Task:
    mid = obj["movie_id"]
    return Task(
        movie_id=mid,
        genres=list(obj["genres"]),
        characters=list(obj["characters"]),
        scenes=[_scene_from_json(s) for s in obj["scenes"]],
        train_instances=[
            Instance(mid, i["scene_index"], i["masked_id"], i["answer"])
            for i in obj["train_instances"]
        ],
        test_instances=[
            Instance(mid, i["scene_index"], i["masked_id"], i["answer"])
            for i in obj["test_instances"]
        ],
    )


def write_benchmark(bench: BenchmarkSplit, out_dir, genres: dict[str, list[str]] | None = None) -> None:
    """Write manifest.json, {train,dev,test}/tasks.jsonl and genres.tsv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "seed": bench.seed,
        "split_spec": bench.stats.get("split_spec"),
        "stats": bench.stats,
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    for split in ("train", "dev", "test"):
        sub = out / split
        sub.mkdir(exist_ok=True)
        with open(sub / "tasks.jsonl", "w", encoding="utf-8", newline="\n") as f:
            for task in bench.tasks_for(split):
                f.write(json.dumps(task_to_json(task), sort_keys=True))
                f.write("\n")
    rows = genres if genres is not None else {
        t.movie_id: t.genres for t in bench.all_tasks()
    }
    with open(out / "genres.tsv", "w", encoding="utf-8", newline="\n") as f:
        for movie_id in sorted(rows):
            f.write(f"{movie_id}\t{','.join(rows[movie_id])}\n")


def load_benchmark(bench_dir) -> BenchmarkSplit:
    root = Path(bench_dir)
    with open(root / "manifest.json", encoding="utf-8") as f:
        manifest = json.load(f)
    splits = {}
    for split in ("train", "dev", "test"):
        tasks = []
        with open(root / split / "tasks.jsonl", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    tasks.append(task_from_json(json.loads(line)))
        splits[split] = tasks
    bench = BenchmarkSplit(splits["train"], splits["dev"], splits["test"], manifest["seed"])
    bench.stats = manifest.get("stats", {})
    return bench


def load_genres(path) -> dict[str, list[str]]:
    genres: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            movie_id, _, tags = line.partition("\t")
            genres[movie_id] = [g for g in tags.split(",") if g]
    return genres
