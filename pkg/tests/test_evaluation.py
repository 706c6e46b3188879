import random
from fractions import Fraction

import pytest

from amc.benchmark import build_task
from amc.errors import EmptySet
from amc.evaluation import (
    EvalReport,
    Prediction,
    decompose,
    dump_predictions,
    format_report,
    instance_accuracy,
    load_predictions,
    majority_baseline,
    percent,
    random_baseline,
    report_to_json,
)
from amc.parser import Scene, Utterance
from amc.synthetic import generate_benchmark


def pred(gold, predicted, movie="m", scene=0, pid="P0"):
    return Prediction(movie, scene, pid, gold, predicted)


# --- instance_accuracy --------------------------------------------------------


def test_accuracy_three_of_four():
    preds = [pred("A", "A"), pred("A", "A"), pred("B", "B"), pred("B", "A")]
    assert instance_accuracy(preds) == Fraction(3, 4)


def test_accuracy_all_correct():
    assert instance_accuracy([pred("A", "A")] * 5) == 1


def test_accuracy_empty_raises():
    with pytest.raises(EmptySet):
        instance_accuracy([])


def test_accuracy_fixture_of_fifty_matches_hand_count():
    rng = random.Random(4)
    golds = [rng.choice("ABC") for _ in range(50)]
    guesses = [rng.choice("ABC") for _ in range(50)]
    preds = [pred(g, p, scene=i) for i, (g, p) in enumerate(zip(golds, guesses))]
    by_hand = sum(1 for g, p in zip(golds, guesses) if g == p)
    assert instance_accuracy(preds) == Fraction(by_hand, 50)


# --- baselines -----------------------------------------------------------------


def speaking_scene(index, speakers):
    return Scene(f"INT. {index}", index, [Utterance(s, "some words here", False) for s in speakers])


def four_candidate_task(n_scenes=50):
    chars = ["A", "B", "C", "D"]
    scenes = [speaking_scene(i, chars) for i in range(n_scenes)]
    return build_task("m4", scenes, [], seed=0)


def test_random_baseline_quarter():
    task = four_candidate_task()
    acc = random_baseline([task], seed=9, trials=100)
    # 50 scenes x 4 instances x 100 trials = 20000 draws among 4 candidates
    assert abs(float(acc) - 0.25) <= 0.01


def test_random_baseline_single_candidate():
    scenes = [speaking_scene(i, ["SOLO"]) for i in range(10)]
    task = build_task("m1", scenes, [], seed=0)
    assert random_baseline([task], seed=0, trials=3) == 1


def test_majority_baseline_brute_force(fixture_benchmark):
    tasks = fixture_benchmark.dev_tasks + fixture_benchmark.test_tasks
    acc = majority_baseline(tasks)
    correct = 0
    total = 0
    for task in tasks:
        counts = {c: 0 for c in task.characters}
        for inst in task.train_instances:
            counts[inst.answer] += 1
        best_count = max(counts.values())
        majority = next(c for c in task.characters if counts[c] == best_count)
        for inst in task.test_instances:
            total += 1
            correct += int(inst.answer == majority)
    assert acc == Fraction(correct, total)


def test_majority_baseline_uniform_five_classes():
    chars = list("ABCDE")
    scenes = [speaking_scene(i, chars) for i in range(20)]
    task = build_task("m5", scenes, [], seed=0)
    assert majority_baseline([task]) == Fraction(1, 5)


def test_majority_deterministic_no_seed(fixture_benchmark):
    tasks = fixture_benchmark.test_tasks
    assert majority_baseline(tasks) == majority_baseline(list(tasks))


# --- decompose -------------------------------------------------------------------


def bench_tasks():
    bench = generate_benchmark(n_train=2, n_dev=1, n_test=3, seed=13, n_scenes=8,
                               second_family_prob=0.0)
    return bench.test_tasks


def perfect_predictions(tasks):
    preds = []
    for task in tasks:
        for inst in task.test_instances:
            preds.append(Prediction(inst.movie_id, inst.scene_index, inst.masked_id,
                                    inst.answer, inst.answer))
    return preds


def test_decompose_speakers_partition(fixture_benchmark):
    tasks = fixture_benchmark.test_tasks
    preds = perfect_predictions(tasks)
    # flip some to wrong so the cells are non-trivial
    preds = [
        Prediction(p.movie_id, p.scene_index, p.masked_id, p.gold,
                   p.gold if i % 3 else "WRONG")
        for i, p in enumerate(preds)
    ]
    report = decompose(preds, "n_speakers", tasks)
    assert sum(num for num, _ in report.cells.values()) == sum(
        1 for p in preds if p.predicted == p.gold
    )
    assert sum(den for _, den in report.cells.values()) == len(preds)


def test_decompose_only_two_speaker_scenes(fixture_benchmark):
    tasks = fixture_benchmark.test_tasks
    preds = [
        p for p in perfect_predictions(tasks)
        if tasks[0].movie_id == p.movie_id
        and next(t for t in tasks if t.movie_id == p.movie_id).scene_at(p.scene_index).n_speakers() == 2
    ]
    if preds:
        report = decompose(preds, "n_speakers", tasks)
        assert set(report.cells) == {"2"}


def test_decompose_multi_genre_counts_both_rows():
    tasks = bench_tasks()
    multi = next(t for t in tasks if len(t.genres) == 2)
    preds = perfect_predictions([multi])
    report = decompose(preds, "genre", [multi])
    assert set(report.cells) == set(multi.genres)
    for g in multi.genres:
        assert report.cells[g] == (len(preds), len(preds))
    assert report.overall == 1


def test_decompose_unknown_genre():
    tasks = bench_tasks()
    preds = perfect_predictions(tasks[:1])
    stripped = [Prediction("not_in_tasks", p.scene_index, p.masked_id, p.gold, p.predicted)
                for p in preds]
    report = decompose(stripped, "genre", tasks)
    assert set(report.cells) == {"unknown"}


def test_decompose_bad_key():
    with pytest.raises(ValueError):
        decompose(perfect_predictions(bench_tasks()), "runtime", bench_tasks())


# --- formatting and io -------------------------------------------------------------


def test_percent_format():
    assert percent(Fraction(428, 1000)) == "42.8"
    assert percent(Fraction(1, 3)) == "33.3"


def test_report_json_and_table():
    tasks = bench_tasks()
    preds = perfect_predictions(tasks)
    reports = [decompose(preds, "genre", tasks), decompose(preds, "n_speakers", tasks)]
    payload = report_to_json(reports, {"split": "test"})
    assert payload["overall_accuracy"] == 1.0
    assert payload["split"] == "test"
    assert "by_genre" in payload and "by_n_speakers" in payload
    table = format_report(reports, title="test split")
    assert "Overall accuracy: 100.0" in table
    assert "#Speakers" in table


def test_predictions_jsonl_roundtrip(tmp_path):
    preds = [
        Prediction("m", 3, "P1", "A", "B", {"A": 0.2, "B": 0.7}),
        Prediction("m", 4, "P0", "A", "A", {"A": 0.9, "B": 0.1}),
    ]
    dump_predictions(tmp_path / "p.jsonl", preds)
    assert load_predictions(tmp_path / "p.jsonl") == preds
