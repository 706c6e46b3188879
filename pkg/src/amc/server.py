"""Human-study guessing game served over HTTP.

Raters walk a queue of anonymized scenes one at a time, assign each P-ID to
a candidate name, flag whether earlier scenes were needed, and get a
per-session report. Sessions persist as append-only JSONL event logs so a
crashed server replays them on restart. Gold labels never leave the server
before the guess for that scene is submitted.
"""

from __future__ import annotations

import json
import mimetypes
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .benchmark import AnonymizedScene, BenchmarkSplit, Task, load_benchmark
from .evaluation import Prediction, instance_accuracy

_SESSION_RE = re.compile(r"^/api/session/([A-Za-z0-9-]+)(/next|/guess|/report|/history)?$")


@dataclass
class GuessRecord:
    scene_key: tuple[str, int]
    assignments: dict[str, str]
    needs_history: bool
    correct: dict[str, bool]
    timestamp: float


@dataclass
class Session:
    session_id: str
    rater_id: str
    movie_ids: list[str]
    queue: list[tuple[str, int]] = field(default_factory=list)
    guesses: dict[tuple[str, int], GuessRecord] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def cursor(self) -> int:
        return len(self.guesses)

    def current_scene_key(self) -> tuple[str, int] | None:
        pos = self.cursor()
        return self.queue[pos] if pos < len(self.queue) else None


class GameService:
    """Session bookkeeping over one loaded benchmark."""

    def __init__(self, bench: BenchmarkSplit, data_dir: Path, movies: list[str] | None = None):
        self.tasks: dict[str, Task] = {t.movie_id: t for t in bench.all_tasks()}
        self.default_movies = list(movies) if movies else sorted(self.tasks)
        for mid in self.default_movies:
            if mid not in self.tasks:
                raise KeyError(f"movie {mid!r} not in the benchmark")
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        self._replay_logs()

    # -- session lifecycle --

    def create_session(self, rater_id: str, movie_ids: list[str] | None) -> Session:
        movie_ids = list(movie_ids) if movie_ids else list(self.default_movies)
        for mid in movie_ids:
            if mid not in self.tasks:
                raise KeyError(f"movie {mid!r} not in the benchmark")
        session = Session(uuid.uuid4().hex, rater_id, movie_ids)
        session.queue = [
            (mid, scene.scene_index)
            for mid in movie_ids
            for scene in self.tasks[mid].scenes
            if scene.id_map
        ]
        with self._registry_lock:
            self.sessions[session.session_id] = session
        self._append_event(session.session_id, {
            "type": "created",
            "rater_id": rater_id,
            "movie_ids": movie_ids,
            "ts": time.time(),
        })
        return session

    def get(self, session_id: str) -> Session | None:
        with self._registry_lock:
            return self.sessions.get(session_id)

    # -- gameplay --

    def scene_payload(self, key: tuple[str, int]) -> dict:
        """Scene as shown to the rater: no id_map, candidates unordered."""
        movie_id, scene_index = key
        scene = self.tasks[movie_id].scene_at(scene_index)
        return {
            "movie_id": movie_id,
            "scene_index": scene_index,
            "heading": scene.heading,
            "utterances": [
                {"speaker": u.speaker, "text": u.text, "is_background": u.is_background}
                for u in scene.utterances
            ],
            "candidates": sorted(scene.candidates),
            "slots": sorted(scene.id_map),
        }

    def next_payload(self, session: Session) -> dict:
        key = session.current_scene_key()
        if key is None:
            return {"done": True, "progress": {"answered": len(session.queue), "total": len(session.queue)}}
        payload = self.scene_payload(key)
        return {
            "done": False,
            "scene": payload,
            "progress": {"answered": session.cursor(), "total": len(session.queue)},
        }

    def submit_guess(
        self, session: Session, scene_index: int, assignments: dict[str, str],
        needs_history: bool, movie_id: str | None = None,
    ) -> dict:
        with session.lock:
            def matches(key):
                return key[1] == scene_index and (movie_id is None or key[0] == movie_id)

            current = session.current_scene_key()
            if current is not None and matches(current):
                target = current
            elif any(matches(k) for k in session.guesses):
                raise ApiError(409, f"scene {scene_index} was already answered")
            elif any(matches(k) for k in session.queue):
                raise ApiError(400, f"scene {scene_index} is not the current scene")
            else:
                raise ApiError(400, f"scene {scene_index} is not in this session")

            scene = self.tasks[target[0]].scene_at(target[1])
            self._validate_assignments(scene, assignments)
            correct = {pid: assignments[pid] == scene.id_map[pid] for pid in scene.id_map}
            record = GuessRecord(target, dict(assignments), bool(needs_history), correct, time.time())
            session.guesses[target] = record
            self._append_event(session.session_id, {
                "type": "guess",
                "movie_id": target[0],
                "scene_index": target[1],
                "assignments": record.assignments,
                "needs_history": record.needs_history,
                "correct": record.correct,
                "ts": record.timestamp,
            })
            return {
                "results": {
                    pid: {"correct": record.correct[pid], "answer": scene.id_map[pid]}
                    for pid in scene.id_map
                },
                "scene_accuracy": sum(record.correct.values()) / len(record.correct),
            }

    @staticmethod
    def _validate_assignments(scene: AnonymizedScene, assignments: dict[str, str]) -> None:
        slots = set(scene.id_map)
        if set(assignments) != slots:
            raise ApiError(400, f"assignments must cover exactly the slots {sorted(slots)}")
        for pid, name in assignments.items():
            if name not in scene.candidates:
                raise ApiError(400, f"{name!r} is not a candidate for this scene")
        if len(set(assignments.values())) != len(assignments):
            raise ApiError(400, "assignments must map each slot to a distinct candidate")

    def report_payload(self, session: Session) -> dict:
        """Accuracy overall and per scene; shares the evaluation code path."""
        predictions = []
        per_scene = []
        flagged = 0
        for key in session.queue:
            record = session.guesses.get(key)
            if record is None:
                continue
            scene = self.tasks[key[0]].scene_at(key[1])
            for pid in scene.id_map:
                predictions.append(Prediction(
                    movie_id=key[0], scene_index=key[1], masked_id=pid,
                    gold=scene.id_map[pid], predicted=record.assignments[pid],
                ))
            per_scene.append({
                "movie_id": key[0],
                "scene_index": key[1],
                "accuracy": sum(record.correct.values()) / len(record.correct),
                "needs_history": record.needs_history,
            })
            flagged += int(record.needs_history)
        overall = float(instance_accuracy(predictions)) if predictions else None
        return {
            "rater_id": session.rater_id,
            "answered": len(per_scene),
            "total": len(session.queue),
            "n_instances": len(predictions),
            "overall_accuracy": overall,
            "per_scene": per_scene,
            "needs_history_fraction": (flagged / len(per_scene)) if per_scene else None,
        }

    def history_payload(self, session: Session) -> dict:
        """Previously answered scenes, re-readable with revealed answers."""
        scenes = []
        for key in session.queue:
            record = session.guesses.get(key)
            if record is None:
                break
            payload = self.scene_payload(key)
            scene = self.tasks[key[0]].scene_at(key[1])
            payload["revealed"] = {pid: scene.id_map[pid] for pid in scene.id_map}
            payload["assignments"] = record.assignments
            scenes.append(payload)
        return {"scenes": scenes}

    # -- persistence --

    def _append_event(self, session_id: str, event: dict) -> None:
        path = self.sessions_dir / f"{session_id}.jsonl"
        with open(path, "a", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(event, sort_keys=True))
            f.write("\n")

    def _replay_logs(self) -> None:
        for path in sorted(self.sessions_dir.glob("*.jsonl")):
            session: Session | None = None
            try:
                with open(path, encoding="utf-8") as f:
                    for line in f:
                        if not line.strip():
                            continue
                        event = json.loads(line)
                        if event["type"] == "created":
                            session = Session(path.stem, event["rater_id"], event["movie_ids"])
                            session.queue = [
                                (mid, scene.scene_index)
                                for mid in event["movie_ids"]
                                for scene in self.tasks[mid].scenes
                                if scene.id_map
                            ]
                        elif event["type"] == "guess" and session is not None:
                            key = (event["movie_id"], event["scene_index"])
                            session.guesses[key] = GuessRecord(
                                key, event["assignments"], event["needs_history"],
                                {k: bool(v) for k, v in event["correct"].items()},
                                event["ts"],
                            )
            except (KeyError, json.JSONDecodeError):
                continue
            if session is not None:
                self.sessions[session.session_id] = session


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def make_handler(service: GameService, ui_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b"{}"
            try:
                obj = json.loads(raw.decode("utf-8"))
            except json.JSONDecodeError as exc:
                raise ApiError(400, f"invalid JSON body: {exc}") from exc
            if not isinstance(obj, dict):
                raise ApiError(400, "JSON body must be an object")
            return obj

        def _session_or_404(self, session_id: str):
            session = service.get(session_id)
            if session is None:
                raise ApiError(404, f"unknown session {session_id!r}")
            return session

        def do_GET(self):
            try:
                match = _SESSION_RE.match(self.path.split("?", 1)[0])
                if match:
                    session = self._session_or_404(match.group(1))
                    action = match.group(2)
                    if action == "/next":
                        return self._send_json(200, service.next_payload(session))
                    if action == "/report":
                        return self._send_json(200, service.report_payload(session))
                    if action == "/history":
                        return self._send_json(200, service.history_payload(session))
                    raise ApiError(404, "unknown endpoint")
                if self.path == "/api/movies":
                    return self._send_json(200, {"movies": service.default_movies})
                return self._serve_static()
            except ApiError as exc:
                self._send_json(exc.status, {"error": exc.message})
            except Exception as exc:  # pragma: no cover
                self._send_json(500, {"error": str(exc)})

        def do_POST(self):
            try:
                path = self.path.split("?", 1)[0]
                if path == "/api/session":
                    body = self._read_json()
                    rater_id = str(body.get("rater_id") or "anonymous")
                    movie_ids = body.get("movie_ids")
                    try:
                        session = service.create_session(rater_id, movie_ids)
                    except KeyError as exc:
                        raise ApiError(400, str(exc)) from exc
                    return self._send_json(200, {"session_id": session.session_id})
                match = _SESSION_RE.match(path)
                if match and match.group(2) == "/guess":
                    session = self._session_or_404(match.group(1))
                    body = self._read_json()
                    if "scene_index" not in body or "assignments" not in body:
                        raise ApiError(400, "guess needs scene_index and assignments")
                    assignments = body["assignments"]
                    if not isinstance(assignments, dict):
                        raise ApiError(400, "assignments must be an object")
                    result = service.submit_guess(
                        session,
                        int(body["scene_index"]),
                        {str(k): str(v) for k, v in assignments.items()},
                        bool(body.get("needs_history", False)),
                        body.get("movie_id"),
                    )
                    return self._send_json(200, result)
                raise ApiError(404, "unknown endpoint")
            except ApiError as exc:
                self._send_json(exc.status, {"error": exc.message})
            except Exception as exc:  # pragma: no cover
                self._send_json(500, {"error": str(exc)})

        def _serve_static(self):
            if ui_dir is None:
                raise ApiError(404, "no UI bundle configured; API only")
            rel = self.path.split("?", 1)[0].lstrip("/") or "index.html"
            target = (ui_dir / rel).resolve()
            if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
                raise ApiError(404, f"no such file {rel!r}")
            body = target.read_bytes()
            ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def create_server(
    benchmark_dir, port: int = 0, movies: list[str] | None = None,
    ui_dir=None, data_dir=None,
) -> ThreadingHTTPServer:
    bench = load_benchmark(benchmark_dir)
    if data_dir is None:
        data_dir = Path(os.environ.get("AMC_DATA_DIR", "amc_data"))
    service = GameService(bench, Path(data_dir), movies)
    handler = make_handler(service, Path(ui_dir) if ui_dir else None)
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    server.game_service = service  # handy for tests
    return server
