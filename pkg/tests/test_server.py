import json
import threading

import pytest
import requests

from amc.benchmark import build_benchmark, write_benchmark
from amc.evaluation import Prediction, instance_accuracy
from amc.parser import parse_movie
from amc.server import create_server
from amc import fixtures_data as fx


@pytest.fixture(scope="module")
def game(tmp_path_factory):
    root = tmp_path_factory.mktemp("game")
    genres = fx.fixture_genres()
    movies = [
        (mid, genres.get(mid, []), parse_movie(fx.fixture_text(mid)))
        for mid in ("paper_hearts", "midnight_diner")
    ]
    bench = build_benchmark(movies, (0, 1, 1), seed=3)
    write_benchmark(bench, root / "bench")
    server = create_server(root / "bench", port=0, data_dir=root / "data")
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base, server
    server.shutdown()
    server.server_close()


def start_session(base, movies=None, rater="tester"):
    payload = {"rater_id": rater}
    if movies:
        payload["movie_ids"] = movies
    r = requests.post(f"{base}/api/session", json=payload)
    assert r.status_code == 200, r.text
    return r.json()["session_id"]


def test_unknown_session_404(game):
    base, _ = game
    assert requests.get(f"{base}/api/session/nope/next").status_code == 404


def test_unknown_movie_400(game):
    base, _ = game
    r = requests.post(f"{base}/api/session", json={"rater_id": "x", "movie_ids": ["missing"]})
    assert r.status_code == 400


def all_keys(obj):
    keys = set()
    if isinstance(obj, dict):
        for k, v in obj.items():
            keys.add(k)
            keys |= all_keys(v)
    elif isinstance(obj, list):
        for v in obj:
            keys |= all_keys(v)
    return keys


def test_next_has_no_gold_labels(game):
    base, _ = game
    sid = start_session(base)
    r = requests.get(f"{base}/api/session/{sid}/next").json()
    assert r["done"] is False
    assert not {"id_map", "answer", "revealed", "correct"} & all_keys(r)
    scene = r["scene"]
    assert scene["slots"] and scene["candidates"]
    assert all(u["speaker"].startswith("P") or u["is_background"] or
               u["speaker"] not in scene["candidates"] for u in scene["utterances"])


def play_through(base, sid, flag_every_other=False, sabotage=None):
    """Answer every scene with the true mapping (from golden benchmark files)."""
    answered = 0
    records = []
    while True:
        nxt = requests.get(f"{base}/api/session/{sid}/next").json()
        if nxt["done"]:
            break
        scene = nxt["scene"]
        assignments = {}
        remaining = [c for c in scene["candidates"]]
        guess_r = None
        # guess: assign each slot greedily; we will learn correctness after submit
        for slot in scene["slots"]:
            assignments[slot] = remaining.pop(0)
        if sabotage:
            sabotage(assignments, scene)
        needs = flag_every_other and (answered % 2 == 1)
        guess_r = requests.post(
            f"{base}/api/session/{sid}/guess",
            json={"scene_index": scene["scene_index"], "assignments": assignments,
                  "needs_history": needs},
        )
        assert guess_r.status_code == 200, guess_r.text
        result = guess_r.json()
        records.append((scene, assignments, result))
        answered += 1
    return records


def test_full_session_report_matches_instance_accuracy(game):
    base, server = game
    sid = start_session(base)
    records = play_through(base, sid, flag_every_other=True)
    assert records

    preds = []
    for scene, assignments, result in records:
        for pid, info in result["results"].items():
            preds.append(Prediction(scene["movie_id"], scene["scene_index"], pid,
                                    info["answer"], assignments[pid]))
    expected = float(instance_accuracy(preds))

    report = requests.get(f"{base}/api/session/{sid}/report").json()
    assert report["overall_accuracy"] == pytest.approx(expected)
    assert report["n_instances"] == len(preds)
    assert report["answered"] == len(records) == report["total"]
    flagged = sum(1 for i in range(len(records)) if i % 2 == 1)
    assert report["needs_history_fraction"] == pytest.approx(flagged / len(records))
    per_scene = report["per_scene"]
    assert len(per_scene) == len(records)
    done = requests.get(f"{base}/api/session/{sid}/next").json()
    assert done["done"] is True


def test_all_correct_session_accuracy_one(game):
    base, _ = game
    sid = start_session(base, movies=["paper_hearts"])
    # first pass to discover the answers, on a throwaway session
    probe = start_session(base, movies=["paper_hearts"])
    answer_key = {}
    for scene, _, result in play_through(base, probe):
        answer_key[scene["scene_index"]] = {pid: info["answer"] for pid, info in result["results"].items()}

    while True:
        nxt = requests.get(f"{base}/api/session/{sid}/next").json()
        if nxt["done"]:
            break
        scene = nxt["scene"]
        r = requests.post(
            f"{base}/api/session/{sid}/guess",
            json={"scene_index": scene["scene_index"],
                  "assignments": answer_key[scene["scene_index"]],
                  "needs_history": False},
        )
        assert r.status_code == 200
        assert all(v["correct"] for v in r.json()["results"].values())
    report = requests.get(f"{base}/api/session/{sid}/report").json()
    assert report["overall_accuracy"] == 1.0


def test_duplicate_guess_409_preserves_original(game):
    base, _ = game
    sid = start_session(base)
    nxt = requests.get(f"{base}/api/session/{sid}/next").json()
    scene = nxt["scene"]
    assignments = {slot: scene["candidates"][i] for i, slot in enumerate(scene["slots"])}
    first = requests.post(f"{base}/api/session/{sid}/guess",
                          json={"scene_index": scene["scene_index"],
                                "assignments": assignments, "needs_history": False})
    assert first.status_code == 200
    # different assignment, same scene
    flipped = {slot: scene["candidates"][-(i + 1)] for i, slot in enumerate(scene["slots"])}
    second = requests.post(f"{base}/api/session/{sid}/guess",
                           json={"scene_index": scene["scene_index"],
                                 "assignments": flipped, "needs_history": True})
    assert second.status_code == 409
    history = requests.get(f"{base}/api/session/{sid}/history").json()["scenes"]
    assert history[0]["assignments"] == assignments


def test_non_candidate_assignment_400(game):
    base, _ = game
    sid = start_session(base)
    scene = requests.get(f"{base}/api/session/{sid}/next").json()["scene"]
    bad = {slot: "NOT A CANDIDATE" for slot in scene["slots"]}
    r = requests.post(f"{base}/api/session/{sid}/guess",
                      json={"scene_index": scene["scene_index"], "assignments": bad,
                            "needs_history": False})
    assert r.status_code == 400


def test_incomplete_or_non_injective_assignment_400(game):
    base, _ = game
    sid = start_session(base)
    scene = requests.get(f"{base}/api/session/{sid}/next").json()["scene"]
    if len(scene["slots"]) >= 2:
        dupes = {slot: scene["candidates"][0] for slot in scene["slots"]}
        r = requests.post(f"{base}/api/session/{sid}/guess",
                          json={"scene_index": scene["scene_index"], "assignments": dupes,
                                "needs_history": False})
        assert r.status_code == 400
    r = requests.post(f"{base}/api/session/{sid}/guess",
                      json={"scene_index": scene["scene_index"], "assignments": {},
                            "needs_history": False})
    assert r.status_code == 400


def test_future_scene_guess_400(game):
    base, _ = game
    sid = start_session(base)
    queue = game[1].game_service.get(sid).queue
    if len(queue) >= 2:
        later = queue[1]
        scene = game[1].game_service.scene_payload(later)
        assignments = {slot: scene["candidates"][i] for i, slot in enumerate(scene["slots"])}
        r = requests.post(f"{base}/api/session/{sid}/guess",
                          json={"scene_index": later[1], "movie_id": later[0],
                                "assignments": assignments, "needs_history": False})
        assert r.status_code == 400


def test_session_log_replay(game, tmp_path):
    base, server = game
    sid = start_session(base)
    records = play_through(base, sid)
    service = server.game_service
    from amc.server import GameService

    replayed = GameService.__new__(GameService)
    replayed.tasks = service.tasks
    replayed.default_movies = service.default_movies
    replayed.data_dir = service.data_dir
    replayed.sessions_dir = service.sessions_dir
    replayed.sessions = {}
    import threading as _t

    replayed._registry_lock = _t.Lock()
    replayed._replay_logs()
    session = replayed.sessions[sid]
    assert len(session.guesses) == len(records)
    assert replayed.report_payload(session) == service.report_payload(service.get(sid))


def test_report_before_any_guess(game):
    base, _ = game
    sid = start_session(base)
    report = requests.get(f"{base}/api/session/{sid}/report").json()
    assert report["answered"] == 0
    assert report["overall_accuracy"] is None
