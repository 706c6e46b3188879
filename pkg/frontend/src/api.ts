// Typed client for the guessing-game HTTP API.

export type UtteranceView = {
  speaker: string;
  text: string;
  is_background: boolean;
};

export type SceneView = {
  movie_id: string;
  scene_index: number;
  heading: string;
  utterances: UtteranceView[];
  candidates: string[];
  slots: string[];
};

export type NextResponse = {
  done: boolean;
  scene?: SceneView;
  progress: { answered: number; total: number };
};

export type GuessResult = {
  results: Record<string, { correct: boolean; answer: string }>;
  scene_accuracy: number;
};

export type SceneReport = {
  movie_id: string;
  scene_index: number;
  accuracy: number;
  needs_history: boolean;
};

export type Report = {
  rater_id: string;
  answered: number;
  total: number;
  n_instances: number;
  overall_accuracy: number | null;
  per_scene: SceneReport[];
  needs_history_fraction: number | null;
};

export type HistoryScene = SceneView & {
  revealed: Record<string, string>;
  assignments: Record<string, string>;
};

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(
  fetchImpl: typeof fetch,
  base: string,
  path: string,
  init?: RequestInit
): Promise<T> {
  const response = await fetchImpl(`${base}${path}`, init);
  const body = (await response.json()) as T & { error?: string };
  if (!response.ok) {
    throw new ApiError(response.status, body.error ?? `HTTP ${response.status}`);
  }
  return body;
}

export class GameClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: typeof fetch = fetch
  ) {}

  createSession(raterId: string, movieIds?: string[]): Promise<{ session_id: string }> {
    const payload: Record<string, unknown> = { rater_id: raterId };
    if (movieIds && movieIds.length > 0) {
      payload.movie_ids = movieIds;
    }
    return request(this.fetchImpl, this.base, "/api/session", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  next(sessionId: string): Promise<NextResponse> {
    return request(this.fetchImpl, this.base, `/api/session/${sessionId}/next`);
  }

  guess(
    sessionId: string,
    sceneIndex: number,
    assignments: Record<string, string>,
    needsHistory: boolean,
    movieId?: string
  ): Promise<GuessResult> {
    return request(this.fetchImpl, this.base, `/api/session/${sessionId}/guess`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        scene_index: sceneIndex,
        assignments,
        needs_history: needsHistory,
        movie_id: movieId,
      }),
    });
  }

  report(sessionId: string): Promise<Report> {
    return request(this.fetchImpl, this.base, `/api/session/${sessionId}/report`);
  }

  history(sessionId: string): Promise<{ scenes: HistoryScene[] }> {
    return request(this.fetchImpl, this.base, `/api/session/${sessionId}/history`);
  }

  movies(): Promise<{ movies: string[] }> {
    return request(this.fetchImpl, this.base, "/api/movies");
  }
}
