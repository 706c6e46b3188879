"""Synthetic meta-benchmark with a planted speaker-marker signal.

Each movie assigns every character a distinct style family (an archetype).
A character's utterances carry one or two marker tokens drawn from their
family's vocabulary, buried in filler words, and the drawn members differ
from scene to scene. Guessing a masked speaker therefore requires spotting
the marker tokens and knowing which family they belong to in this movie.
A model that has learned across tasks that family members are equivalent
can recognize a character from family members never seen in this movie's
few training scenes; a model that only fits this task's training instances
keys on the specific members it saw.

Development and test movies reuse family members observed in the training
movies, so their vocabulary is in-domain while the family-to-character
mapping stays task-specific.
"""

from __future__ import annotations

import random

from .benchmark import BenchmarkSplit, benchmark_stats, build_task
from .parser import BACKGROUND, Scene, Utterance

_FIRST = [
    "AVERY", "BLAKE", "CARSON", "DELLA", "EZRA", "FARROW", "GRETA", "HOLT",
    "IMANI", "JONAS", "KIRA", "LENNOX", "MIRA", "NADIR", "OPAL", "PERRY",
    "QUINN", "RENATA", "SABLE", "TOBIN", "UMA", "VANCE", "WREN", "XIOMARA",
    "YUSUF", "ZELDA",
]

_FILLER = (
    "the and then well look just really maybe still about over under again "
    "tonight tomorrow never always nothing something someone nobody road "
    "house water light door hand voice plan truth story city river mountain "
    "morning evening trouble answer question reason moment minute"
).split()

_PLACES = ["KITCHEN", "HARBOR", "OFFICE", "ROOFTOP", "GARDEN", "STATION", "CELLAR", "MARKET"]


def marker_families(n_families: int = 10, members: int = 12) -> list[list[str]]:
    """Family f's member tokens are mk<f>x<m>."""
    return [
        [f"mk{f:02d}x{m:02d}" for m in range(members)]
        for f in range(n_families)
    ]


def _utterance_text(rng: random.Random, extras: list[str], filler_range: tuple[int, int]) -> str:
    words = [rng.choice(_FILLER) for _ in range(rng.randint(*filler_range))]
    for tok in extras:
        words.insert(rng.randint(0, len(words)), tok)
    return " ".join(words)


def generate_movie(
    movie_id: str,
    rng: random.Random,
    families: list[list[str]],
    n_scenes: int = 12,
    n_chars: tuple[int, int] = (4, 5),
    marker_prob: float = 0.95,
    lead_prob: float = 0.85,
    other_prob: float = 0.4,
    filler_range: tuple[int, int] = (4, 8),
    member_shift: bool = True,
    second_family_prob: float = 0.0,
    bimodal_chars: int = 0,
) -> tuple[str, list[str], list[Scene]]:
    """One synthetic movie: (movie_id, genres, scenes).

    Character 0 speaks in most scenes (a majority class). Each speaking
    turn carries one member of the speaker's family; with ``member_shift``
    the movie's opening 3/5 draws from one half of the family vocabulary
    and the rest from the other half, mimicking a character whose wording
    drifts over the story. Telling the later scenes apart then requires
    knowing the family, not just the members seen early on. With
    ``bimodal_chars`` > 0, that many non-lead characters also own a
    secondary family used for ``second_family_prob`` of their turns,
    making those characters' style two-moded. The first ``n_chars``
    scenes force one character each so everyone speaks inside the
    training prefix.
    """
    n = rng.randint(*n_chars)
    names = rng.sample(_FIRST, n)
    n_bimodal = min(bimodal_chars, n - 1)
    take = min(n + n_bimodal, len(families))
    assigned = rng.sample(range(len(families)), take)
    train_prefix = max(1, (3 * n_scenes) // 5)

    def halves_of(f: int):
        members = list(families[f])
        rng.shuffle(members)
        half = max(1, len(members) // 2)
        if member_shift:
            return members[:half], members[half:] or members[:half]
        return members, members

    char_halves = {}
    char_second = {}
    for i, name in enumerate(names):
        char_halves[name] = halves_of(assigned[i])
        # Non-lead characters starting at index 1 become bimodal.
        if 1 <= i <= n_bimodal and n + i - 1 < take:
            char_second[name] = halves_of(assigned[n + i - 1])
    genres = rng.sample(["Action", "Comedy", "Drama", "Sci-Fi", "Thriller"], rng.randint(1, 2))
    scenes = []
    for s in range(n_scenes):
        speakers = [
            name
            for i, name in enumerate(names)
            if rng.random() < (lead_prob if i == 0 else other_prob)
        ]
        if s < n and names[s] not in speakers:
            speakers.append(names[s])
        if not speakers:
            speakers = [names[0]]
        rng.shuffle(speakers)
        utterances = [Utterance(BACKGROUND, _utterance_text(rng, [], filler_range), True)]
        half_idx = 0 if s < train_prefix else 1
        for name in speakers:
            for _ in range(rng.randint(1, 2)):
                source = char_halves[name]
                if name in char_second and rng.random() < second_family_prob:
                    source = char_second[name]
                extras = [rng.choice(source[half_idx])] if rng.random() < marker_prob else []
                utterances.append(Utterance(name, _utterance_text(rng, extras, filler_range), False))
        scenes.append(Scene(f"INT. {rng.choice(_PLACES)} - DAY", s, utterances))
    return movie_id, genres, scenes


def generate_benchmark(
    n_train: int = 60,
    n_dev: int = 10,
    n_test: int = 10,
    seed: int = 7,
    n_scenes: int = 12,
    n_families: int = 10,
    family_members: int = 12,
    **movie_kwargs,
) -> BenchmarkSplit:
    """A full synthetic benchmark split with shared marker families.

    Dev/test movies only draw family members that occur in at least one
    training movie, so the meta-training vocabulary covers them.
    """
    rng = random.Random(seed)
    families = marker_families(n_families, family_members)
    used: set[str] = set()
    train_movies = []
    for i in range(n_train):
        movie = generate_movie(f"syn_train_{i:03d}", rng, families, n_scenes=n_scenes, **movie_kwargs)
        train_movies.append(movie)
        for scene in movie[2]:
            for ut in scene.utterances:
                used.update(w for w in ut.text.split() if w.startswith("mk"))
    seen_families = [
        [tok for tok in family if tok in used] or family[:1]
        for family in families
    ]
    dev_movies = [
        generate_movie(f"syn_dev_{i:03d}", rng, seen_families, n_scenes=n_scenes, **movie_kwargs)
        for i in range(n_dev)
    ]
    test_movies = [
        generate_movie(f"syn_test_{i:03d}", rng, seen_families, n_scenes=n_scenes, **movie_kwargs)
        for i in range(n_test)
    ]

    def tasks_of(chunk):
        return [build_task(mid, scenes, genres, seed) for mid, genres, scenes in chunk]

    bench = BenchmarkSplit(tasks_of(train_movies), tasks_of(dev_movies), tasks_of(test_movies), seed)
    bench.stats = benchmark_stats(bench, (n_train, n_dev, n_test))
    return bench
