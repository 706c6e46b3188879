import numpy as np
import pytest

from amc import fixtures_data as fx
from amc import parser
from amc.autodiff import Tape, Tensor
from amc.benchmark import build_benchmark

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_movies():
    """(movie_id, genres, scenes) for the bundled hand-labeled corpus."""
    genres = fx.fixture_genres()
    movies = []
    for mid in fx.fixture_ids():
        scenes = parser.parse_movie(fx.fixture_text(mid))
        movies.append((mid, genres.get(mid, []), scenes))
    return movies


@pytest.fixture(scope="session")
def fixture_benchmark(fixture_movies):
    return build_benchmark(fixture_movies, (8, 2, 2), seed=1234)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_op_gradients(build_loss, params: list[Tensor], tol: float = 1e-3) -> float:
    """Compare tape gradients of build_loss() against central differences.

    build_loss must re-run the forward pass from the current param values
    and return the scalar loss Tensor recorded on a fresh tape.
    """
    with Tape() as tape:
        loss = build_loss()
    grads = tape.gradients(loss, params)

    worst = 0.0
    for p, g in zip(params, grads):
        def scalar():
            with Tape():
                return float(build_loss().data)
        num = numeric_grad(scalar, p.data)
        worst = max(worst, max_rel_err(g, num))
    assert worst < tol, f"gradient mismatch: max rel err {worst}"
    return worst
