"""Instance-level scoring, trivial baselines, and report decompositions."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .benchmark import Task
from .errors import EmptySet


@dataclass(frozen=True)
class Prediction:
    movie_id: str
    scene_index: int
    masked_id: str
    gold: str
    predicted: str
    logits: dict[str, float] = field(default_factory=dict)


def instance_accuracy(predictions: list[Prediction]) -> Fraction:
    """Exact fraction of predictions whose label matches the gold answer."""
    if not predictions:
        raise EmptySet("no predictions to score")
    correct = sum(1 for p in predictions if p.predicted == p.gold)
    return Fraction(correct, len(predictions))


def random_baseline(tasks: list[Task], seed: int, trials: int = 100) -> Fraction:
    """Uniform guessing among each scene's candidate set, averaged over trials."""
    rng = random.Random(seed)
    total = 0
    correct = 0
    for _ in range(trials):
        for task in tasks:
            for inst in task.test_instances:
                scene = task.scene_at(inst.scene_index)
                total += 1
                if rng.choice(scene.candidates) == inst.answer:
                    correct += 1
    if total == 0:
        raise EmptySet("no test instances")
    return Fraction(correct, total)


def majority_baseline(tasks: list[Task]) -> Fraction:
    """Predict each task's most frequent training character for every test instance.

    Count ties break by position in the task's character list.
    """
    total = 0
    correct = 0
    for task in tasks:
        counts = {c: 0 for c in task.characters}
        for inst in task.train_instances:
            counts[inst.answer] += 1
        majority = max(task.characters, key=lambda c: (counts[c], -task.characters.index(c)))
        for inst in task.test_instances:
            total += 1
            if inst.answer == majority:
                correct += 1
    if total == 0:
        raise EmptySet("no test instances")
    return Fraction(correct, total)


@dataclass
class EvalReport:
    key: str  # "genre" or "n_speakers"
    overall: Fraction
    cells: dict[str, tuple[int, int]]  # row label -> (correct, total)

    def cell_accuracy(self, label: str) -> Fraction:
        num, den = self.cells[label]
        return Fraction(num, den) if den else Fraction(0)


def decompose(predictions: list[Prediction], key: str, tasks: list[Task]) -> EvalReport:
    """Accuracy broken down by genre or by the scene's speaker count.

    Multi-genre movies contribute their instances to every genre row, so
    genre rows overlap; speaker-count rows partition the instances.
    """
    if key not in ("genre", "n_speakers"):
        raise ValueError(f"unknown decomposition key {key!r}")
    by_movie = {t.movie_id: t for t in tasks}
    cells: dict[str, list[int]] = {}

    def bump(label: str, ok: bool) -> None:
        cell = cells.setdefault(label, [0, 0])
        cell[0] += int(ok)
        cell[1] += 1

    for p in predictions:
        ok = p.predicted == p.gold
        task = by_movie.get(p.movie_id)
        if key == "genre":
            genres = task.genres if task and task.genres else []
            for label in genres or ["unknown"]:
                bump(label, ok)
        else:
            if task is None:
                bump("unknown", ok)
            else:
                bump(str(task.scene_at(p.scene_index).n_speakers()), ok)

    overall = instance_accuracy(predictions)
    return EvalReport(key, overall, {k: (v[0], v[1]) for k, v in sorted(cells.items())})


def percent(frac: Fraction) -> str:
    """One-decimal percent, the format used in the result tables."""
    return f"{float(frac) * 100:.1f}"


def report_to_json(reports: list[EvalReport], extra: dict | None = None) -> dict:
    out = dict(extra or {})
    for rep in reports:
        out[f"by_{rep.key}"] = {
            label: {
                "correct": num,
                "total": den,
                "accuracy": float(Fraction(num, den)) if den else None,
            }
            for label, (num, den) in rep.cells.items()
        }
    if reports:
        out["overall_accuracy"] = float(reports[0].overall)
    return out


def format_report(reports: list[EvalReport], title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    if reports:
        lines.append(f"Overall accuracy: {percent(reports[0].overall)}")
    for rep in reports:
        lines.append("")
        header = "Genre" if rep.key == "genre" else "#Speakers"
        lines.append(f"{header:<20} {'Acc':>6} {'N':>7}")
        for label, (num, den) in rep.cells.items():
            acc = percent(Fraction(num, den)) if den else "-"
            lines.append(f"{label:<20} {acc:>6} {den:>7}")
    return "\n".join(lines)


def dump_predictions(path, predictions: list[Prediction]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in predictions:
            f.write(json.dumps({
                "movie_id": p.movie_id,
                "scene_index": p.scene_index,
                "masked_id": p.masked_id,
                "gold": p.gold,
                "predicted": p.predicted,
                "logits": p.logits,
            }, sort_keys=True))
            f.write("\n")


def load_predictions(path) -> list[Prediction]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                out.append(Prediction(
                    obj["movie_id"], obj["scene_index"], obj["masked_id"],
                    obj["gold"], obj["predicted"], obj.get("logits", {}),
                ))
    return out
