"""Few-shot character-guessing toolkit: screenplay parsing, benchmark
construction, three meta-learners on a built-in autodiff core, and the
human-study guessing game server."""

__version__ = "0.1.0"
