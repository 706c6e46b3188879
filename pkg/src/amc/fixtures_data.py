"""Access to the bundled hand-labeled fixture corpus."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path


def fixtures_dir() -> Path:
    return Path(resources.files("amc") / "fixtures")


def fixture_ids() -> list[str]:
    return sorted(p.stem for p in fixtures_dir().glob("*.txt"))


def fixture_text(movie_id: str) -> str:
    return (fixtures_dir() / f"{movie_id}.txt").read_text(encoding="utf-8")


def fixture_labels() -> dict:
    with open(fixtures_dir() / "labels.json", encoding="utf-8") as f:
        return json.load(f)


def fixture_genres() -> dict[str, list[str]]:
    genres: dict[str, list[str]] = {}
    with open(fixtures_dir() / "genres.tsv", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.strip():
                movie_id, _, tags = line.partition("\t")
                genres[movie_id] = tags.split(",")
    return genres
